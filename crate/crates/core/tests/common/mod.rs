//! Randomized physics checks shared by the physics tests and the acceptance
//! harness. Each returns the first violation found.
#![allow(dead_code)]

pub mod oracles;

use exohand::biomech::*;
use exohand::world::*;
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

fn random_state(model: &HandModel, rng: &mut ChaCha8Rng) -> HandState {
    let mut s = HandState::rest(model);
    for (q, j) in s.q.iter_mut().zip(&model.joints) {
        *q = rng.random_range(j.lower..=j.upper);
    }
    for k in 0..3 {
        s.base_pose[k] = rng.random_range(-0.5..0.5);
        s.base_pose[k + 3] = rng.random_range(-3.0..3.0);
    }
    s
}

pub fn activation_bounds(seed: u64, cases: usize) -> Check {
    let model = HandModel::desk_preset();
    let m = model.num_muscles();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let mut a: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..=1.0)).collect();
        let dt = rng.random_range(1e-4..=MAX_DT);
        for _ in 0..20 {
            let u: Vec<f64> = (0..m)
                .map(|_| match rng.random_range(0..10) {
                    0 => f64::NAN,
                    1 => f64::INFINITY,
                    _ => rng.random_range(-2.0..3.0),
                })
                .collect();
            a = activation_step(&model, &a, &u, dt).map_err(|e| e.to_string())?;
            if let Some(x) = a.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(format!("activation {x} left [0, 1]"));
            }
        }
    }
    Ok(())
}

pub fn torque_linearity(seed: u64, cases: usize) -> Check {
    let model = HandModel::desk_preset();
    let m = model.num_muscles();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let w = WeaknessProfile {
            scale: (0..m).map(|_| rng.random_range(0.05..=1.0)).collect(),
        };
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..0.5)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..0.5)).collect();
        let c = rng.random_range(0.0..2.0);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
        let ta = muscle_torques(&model, &a, &w).map_err(|e| e.to_string())?;
        let tb = muscle_torques(&model, &b, &w).map_err(|e| e.to_string())?;
        let ts = muscle_torques(&model, &sum, &w).map_err(|e| e.to_string())?;
        let tc = muscle_torques(&model, &scaled, &w).map_err(|e| e.to_string())?;
        for j in 0..ta.len() {
            let scale = 1.0 + ta[j].abs() + tb[j].abs();
            if (ts[j] - ta[j] - tb[j]).abs() > 1e-12 * scale || (tc[j] - c * ta[j]).abs() > 1e-12 * scale {
                return Err(format!("joint {j} torque is not linear in activation"));
            }
        }
    }
    Ok(())
}

pub fn energy_dissipation(seed: u64, cases: usize) -> Check {
    let model = HandModel::desk_preset();
    let n = model.num_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = vec![0.0; n];
    for _ in 0..cases {
        let mut s = random_state(&model, &mut rng);
        for v in s.qd.iter_mut() {
            *v = rng.random_range(-5.0..5.0);
        }
        let dt = rng.random_range(1e-4..=MAX_DT);
        let mut e = s.kinetic_energy(&model);
        for _ in 0..200 {
            s = dynamics_step(&model, &s, &zero, &zero, dt).map_err(|e| e.to_string())?;
            let e2 = s.kinetic_energy(&model);
            if e2 > e * (1.0 + 1e-12) {
                return Err(format!("kinetic energy rose from {e} to {e2}"));
            }
            e = e2;
        }
    }
    Ok(())
}

pub fn bone_lengths(seed: u64, cases: usize) -> Check {
    let model = HandModel::desk_preset();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let s = random_state(&model, &mut rng);
        let kp = forward_kinematics(&model, &s).keypoints;
        for (f, finger) in model.fingers.iter().enumerate() {
            let base = Vector3::from(finger.base).norm();
            let mut pairs = vec![(KP_WRIST, keypoint_index(f, 0), base)];
            for (k, len) in finger.bones.iter().enumerate() {
                pairs.push((keypoint_index(f, k), keypoint_index(f, k + 1), *len));
            }
            for (a, b, len) in pairs {
                let d = (kp[a] - kp[b]).norm();
                if ((d - len) / len).abs() > 1e-12 {
                    return Err(format!("segment {a}-{b}: {d} vs {len}"));
                }
            }
        }
    }
    Ok(())
}

pub fn contact_cone(seed: u64, cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = ObjectSpec::presets();
    for i in 0..cases {
        let spec = &objects[i % objects.len()];
        let q = UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0);
        let obj = spec.build(Vector3::zeros(), q).map_err(|e| e.to_string())?;
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let sphere = Sphere {
            center: dir.normalize() * rng.random_range(0.02..0.09),
            radius: 0.009,
            velocity: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            site: ContactSite::Fingertip(1),
        };
        let contacts = detect_contacts(&[sphere], &obj).map_err(|e| e.to_string())?;
        let params = ContactParams::fingertip_default();
        for (c, f) in contacts.iter().zip(contact_forces(&contacts, &params)) {
            let fn_ = f.dot(&c.normal);
            let ft = (f - fn_ * c.normal).norm();
            if fn_ < -1e-9 || ft > params.friction * fn_ + 1e-9 {
                return Err(format!("force {f:?} outside the friction cone of {:?}", c.normal));
            }
        }
    }
    Ok(())
}

/// Forces from the coupled solve: the object receives exactly the negated
/// hand force, and both bodies' post-step velocities satisfy the linearized
/// contact law the solve used.
pub fn action_reaction(seed: u64, cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.002;
    for _ in 0..cases {
        let obj = ObjectSpec::sugar_box()
            .build(Vector3::new(0.0, 0.0, 0.2), UnitQuaternion::identity())
            .map_err(|e| e.to_string())?;
        let contact = ContactPoint {
            position: Vector3::new(0.022, rng.random_range(-0.04..0.04), 0.2 + rng.random_range(-0.08..0.08)),
            normal: Vector3::x(),
            depth: rng.random_range(1e-4..3e-3),
            rel_velocity: Vector3::new(rng.random_range(-0.1..0.0), rng.random_range(-0.05..0.05), 0.0),
            site: ContactSite::Fingertip(2),
        };
        let col = Vector3::new(rng.random_range(-0.08..-0.02), rng.random_range(-0.02..0.02), 0.01);
        let hc = HandContact {
            contact,
            jacobian: vec![(3, col)],
            base_velocity: Vector3::zeros(),
        };
        let inertia = vec![1e-3; 5];
        let damping = vec![0.02; 5];
        let mut qd = vec![0.0; 5];
        qd[3] = rng.random_range(0.0..2.0);
        let mut torque = vec![0.0; 5];
        torque[3] = rng.random_range(0.0..0.2);
        let hand = HandBodies {
            inertia: &inertia,
            damping: &damping,
            qd: &qd,
            torque: &torque,
        };
        let params = ContactParams::fingertip_default();
        let res = resolve_contacts(hand, &obj, Vector3::zeros(), dt, &[hc.clone()], &params, &[], &params)
            .map_err(|e| e.to_string())?;
        let f = res.hand[0];
        let tau_c = col.dot(&f);
        let v_new = (qd[3] + dt * (torque[3] + tau_c) / inertia[3]) / (1.0 + dt * damping[3] / inertia[3]);
        let next = object_step(
            &obj,
            &[AppliedForce {
                point: contact.position,
                force: -f,
            }],
            Vector3::zeros(),
            dt,
        )
        .map_err(|e| e.to_string())?;
        let dp = obj.mass * (next.linvel - obj.linvel);
        if (dp + dt * f).norm() > 1e-9 * (1.0 + dt * f.norm()) {
            return Err(format!("object momentum change {dp:?} is not -dt f"));
        }
        let v_obj = next.linvel + next.angvel.cross(&(contact.position - obj.position));
        let v_rel = col * v_new - v_obj;
        let resp = contact_response(&contact, &params);
        let predicted = resp.force + (dt * resp.d_force_d_disp + resp.d_force_d_vel) * v_rel - resp.d_force_d_vel * contact.rel_velocity;
        if (predicted - f).norm() > 1e-9 * (1.0 + f.norm()) {
            return Err(format!("hand force {f:?} disagrees with the contact law {predicted:?}"));
        }
    }
    Ok(())
}

pub fn quaternion_drift(steps: usize) -> Check {
    let mut o = ObjectSpec::sugar_box()
        .build(Vector3::zeros(), UnitQuaternion::identity())
        .map_err(|e| e.to_string())?;
    o.angvel = Vector3::new(3.0, -7.0, 11.0);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        o = object_step(&o, &[], Vector3::zeros(), 0.002).map_err(|e| e.to_string())?;
        worst = worst.max((o.orientation.as_ref().norm() - 1.0).abs());
    }
    if worst < 1e-9 {
        Ok(())
    } else {
        Err(format!("quaternion norm drifted by {worst:e}"))
    }
}
