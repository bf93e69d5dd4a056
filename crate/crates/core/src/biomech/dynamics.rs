use super::model::{HandModel, HandState};
use crate::error::{Error, Result};

pub const MAX_DT: f64 = 0.02;

/// Per-joint decoupled dynamics `I qdd = tau - d qd`, semi-implicit Euler
/// with the damping term taken at the new velocity (dissipative for any dt).
/// Joints are clamped to their limits and lose their velocity there. The
/// kinematic base is left untouched.
pub fn dynamics_step(
    model: &HandModel,
    state: &HandState,
    joint_torques: &[f64],
    external_torques: &[f64],
    dt: f64,
) -> Result<HandState> {
    let n = model.num_joints();
    if joint_torques.len() != n || external_torques.len() != n || state.q.len() != n {
        return Err(Error::config(format!(
            "dynamics_step expects {n} joints, got torques {}/{} and state {}",
            joint_torques.len(),
            external_torques.len(),
            state.q.len()
        )));
    }
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::usage(format!("dt must be in (0, {MAX_DT}], got {dt}")));
    }
    if let Some(j) = (0..n).find(|&j| !joint_torques[j].is_finite() || !external_torques[j].is_finite()) {
        return Err(Error::numerical(format!(
            "non-finite torque on joint {}",
            model.joints[j].name
        )));
    }

    let mut next = state.clone();
    for (j, joint) in model.joints.iter().enumerate() {
        let tau = joint_torques[j] + external_torques[j];
        let mut v = (state.qd[j] + dt * tau / joint.inertia) / (1.0 + dt * joint.damping / joint.inertia);
        let mut q = state.q[j] + dt * v;
        if q >= joint.upper {
            q = joint.upper;
            v = 0.0;
        } else if q <= joint.lower {
            q = joint.lower;
            v = 0.0;
        }
        next.q[j] = q;
        next.qd[j] = v;
    }
    Ok(next)
}
