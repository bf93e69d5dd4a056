//! Tendon-driven hand: kinematic tree, muscle activation, torque generation,
//! per-joint dynamics and strength scaling.

mod dynamics;
mod kinematics;
mod model;
mod muscle;

pub use dynamics::{dynamics_step, MAX_DT};
pub use kinematics::{
    base_point_velocity, chain_joints, euler_from_matrix, euler_rates_to_omega, euler_xyz, fit_pose,
    forward_kinematics, point_jacobian, rest_keypoints, HandPose, PoseFit,
};
pub use model::{
    keypoint_index, ContactSphere, Finger, HandModel, HandState, Joint, Muscle, MuscleRole, WeaknessProfile,
    BASE_DOF, FINGER_NAMES, KP_MIDDLE_PIP, KP_WRIST, NUM_FINGERS, NUM_KEYPOINTS,
};
pub use muscle::{activation_step, apply_weakness, muscle_torques};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes keypoints as CSV rows `x,y,z` (21 rows).
pub fn write_keypoints_csv(path: &Path, keypoints: &[nalgebra::Vector3<f64>]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "x,y,z").expect("write to vec");
    for p in keypoints {
        writeln!(out, "{},{},{}", p.x, p.y, p.z).expect("write to vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_keypoints_csv(path: &Path) -> Result<Vec<nalgebra::Vector3<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(row, line)| {
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(format!("row {row}: {e}")))?;
            if v.len() != 3 {
                return Err(parse_err(format!("row {row}: expected 3 columns")));
            }
            Ok(nalgebra::Vector3::new(v[0], v[1], v[2]))
        })
        .collect()
}
