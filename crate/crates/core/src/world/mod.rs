//! Rigid objects, penalty contacts and the coupled contact solve.

mod contact;
mod coupling;
mod object;

pub use contact::{
    contact_forces, contact_response, detect_contacts, detect_table_contacts, support_points, ContactParams,
    ContactPoint, ContactResponse, ContactSite, Sphere,
};
pub(crate) use contact::closest_surface;
pub use coupling::{resolve_contacts, HandBodies, HandContact, ResolvedForces};
pub use object::{object_step, orientation_angle, rotation_vector, AppliedForce, ObjectSpec, RigidObject, Shape};
