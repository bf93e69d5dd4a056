//! Desk-scale musculoskeletal hand simulator with a from-scratch PPO trainer,
//! staged behaviour-prior / fine-tune / assistive-glove pipeline and the
//! evaluation metrics used to compare healthy, weakened and assisted hands.

pub mod biomech;
pub mod env;
pub mod error;
pub mod eval;
pub mod exoglove;
pub mod par;
pub mod pipeline;
pub mod rl;
pub mod trajio;
pub mod world;

pub use error::{Error, Result};
