use super::model::{HandModel, WeaknessProfile};
use crate::error::{Error, Result};

/// First-order activation lag: `da/dt = (u - a) / tau`, with the activation
/// time constant when rising and the deactivation constant when falling.
/// Explicit Euler, excitations and result clamped to [0, 1].
pub fn activation_step(
    model: &HandModel,
    activation: &[f64],
    excitation: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    let m = model.num_muscles();
    if activation.len() != m || excitation.len() != m {
        return Err(Error::config(format!(
            "activation/excitation lengths {}/{} do not match {m} muscles",
            activation.len(),
            excitation.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::usage(format!("activation step needs dt > 0, got {dt}")));
    }
    Ok(activation
        .iter()
        .zip(excitation)
        .zip(&model.muscles)
        .map(|((&a, &u), muscle)| {
            let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
            let tau = if u >= a { muscle.tau_act } else { muscle.tau_deact };
            (a + dt * (u - a) / tau).clamp(0.0, 1.0)
        })
        .collect())
}

/// Joint torques `tau_j = sum_m r_jm * a_m * f_max_m * scale_m` (N·m).
pub fn muscle_torques(
    model: &HandModel,
    activation: &[f64],
    weakness: &WeaknessProfile,
) -> Result<Vec<f64>> {
    let m = model.num_muscles();
    if activation.len() != m || weakness.scale.len() != m {
        return Err(Error::config(format!(
            "activation/weakness lengths {}/{} do not match {m} muscles",
            activation.len(),
            weakness.scale.len()
        )));
    }
    let mut tau = vec![0.0; model.num_joints()];
    for ((muscle, &a), &s) in model.muscles.iter().zip(activation).zip(&weakness.scale) {
        let force = a * muscle.f_max * s;
        if force == 0.0 {
            continue;
        }
        for (t, &r) in tau.iter_mut().zip(&muscle.moment_arms) {
            *t += r * force;
        }
    }
    Ok(tau)
}

/// Copy of `model` with every muscle's maximum force scaled by its factor.
pub fn apply_weakness(model: &HandModel, profile: &WeaknessProfile) -> Result<HandModel> {
    profile.validate(model.num_muscles())?;
    let mut weak = model.clone();
    for (muscle, &s) in weak.muscles.iter_mut().zip(&profile.scale) {
        muscle.f_max *= s;
    }
    Ok(weak)
}
