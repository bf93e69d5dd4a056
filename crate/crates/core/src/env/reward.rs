use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::biomech::{keypoint_index, KP_WRIST, NUM_FINGERS};
use crate::error::{Error, Result};
use crate::world::orientation_angle;

/// Keypoints compared by the demonstration reward: wrist, then the five
/// fingertips thumb to pinky.
pub const REWARD_KEYPOINTS: [usize; 6] = [
    KP_WRIST,
    keypoint_index(0, 3),
    keypoint_index(1, 3),
    keypoint_index(2, 3),
    keypoint_index(3, 3),
    keypoint_index(4, 3),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub lambda1: f64,
    pub lambda2: f64,
    /// 1/m.
    pub alpha1: f64,
    /// 1/m.
    pub alpha2: f64,
    /// 1/rad.
    pub beta: f64,
    /// Weights in [`REWARD_KEYPOINTS`] order.
    pub keypoint_weights: Vec<f64>,
    /// Success radius for the object position (m).
    pub pos_tol: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            lambda1: 1.0,
            lambda2: 1.0,
            alpha1: 5.0,
            alpha2: 10.0,
            beta: 0.5,
            keypoint_weights: vec![1.0, 2.0, 1.0, 1.0, 1.0, 1.0],
            pos_tol: 0.025,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let scalars = [self.lambda1, self.lambda2, self.alpha1, self.alpha2, self.beta, self.pos_tol];
        if !scalars.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::config("reward weights must be positive"));
        }
        if self.keypoint_weights.len() != REWARD_KEYPOINTS.len() {
            return Err(Error::config(format!(
                "expected {} keypoint weights, got {}",
                REWARD_KEYPOINTS.len(),
                self.keypoint_weights.len()
            )));
        }
        if !self.keypoint_weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(Error::config("keypoint weights must be positive"));
        }
        Ok(())
    }
}

/// Weighted mean distance between the selected keypoints (m).
pub fn demo_error(keypoints: &[Vector3<f64>; 6], reference: &[Vector3<f64>; 6], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..REWARD_KEYPOINTS.len() {
        num += weights[k] * (keypoints[k] - reference[k]).norm();
        den += weights[k];
    }
    num / den
}

/// `-lambda2 * alpha2 * sum_k w_k |p_k - q_k| / sum_k w_k`.
pub fn reward_demo(keypoints: &[Vector3<f64>; 6], reference: &[Vector3<f64>; 6], params: &RewardParams) -> f64 {
    -params.lambda2 * params.alpha2 * demo_error(keypoints, reference, &params.keypoint_weights)
}

/// `lambda1 * exp(-alpha1 |dp| - beta * dtheta)`.
pub fn reward_obj(
    pos: &Vector3<f64>,
    quat: &UnitQuaternion<f64>,
    ref_pos: &Vector3<f64>,
    ref_quat: &UnitQuaternion<f64>,
    params: &RewardParams,
) -> f64 {
    let dp = (pos - ref_pos).norm();
    let dth = orientation_angle(quat.as_ref(), ref_quat.as_ref());
    params.lambda1 * (-params.alpha1 * dp - params.beta * dth).exp()
}

/// Sinusoidal step encoding: `sin(t / 10000^(2i/d))`, `cos(...)` interleaved.
pub fn positional_encoding(t: usize, d_pe: usize) -> Result<Vec<f64>> {
    if d_pe % 2 != 0 {
        return Err(Error::config(format!("positional encoding size must be even, got {d_pe}")));
    }
    let mut out = vec![0.0; d_pe];
    for i in 0..d_pe / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / d_pe as f64);
        let x = t as f64 / freq;
        out[2 * i] = x.sin();
        out[2 * i + 1] = x.cos();
    }
    Ok(out)
}

pub(crate) fn select_keypoints(all: &[Vector3<f64>]) -> [Vector3<f64>; 6] {
    debug_assert!(NUM_FINGERS + 1 == REWARD_KEYPOINTS.len());
    REWARD_KEYPOINTS.map(|k| all[k])
}
