mod common;

use std::path::Path;

use exohand::biomech::*;
use exohand::eval::{pip_wrist_series, Condition, EpisodeTrace, StepRecord};
use exohand::world::*;
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

#[test]
fn activations_stay_in_unit_interval() {
    common::activation_bounds(1, 200).unwrap();
}

#[test]
fn torques_are_linear_in_activation() {
    common::torque_linearity(2, 200).unwrap();
}

#[test]
fn passive_joints_lose_energy() {
    common::energy_dissipation(3, 50).unwrap();
}

#[test]
fn bones_keep_their_length() {
    common::bone_lengths(4, 500).unwrap();
}

#[test]
fn contact_forces_stay_in_the_friction_cone() {
    common::contact_cone(5, 2000).unwrap();
}

#[test]
fn coupled_contact_is_action_reaction() {
    common::action_reaction(6, 200).unwrap();
}

#[test]
fn quaternion_norm_does_not_drift() {
    common::quaternion_drift(100_000).unwrap();
}

#[test]
fn rest_pose_matches_golden_keypoints() {
    let golden = read_keypoints_csv(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/rest_keypoints.csv")).unwrap();
    let kp = rest_keypoints(&HandModel::desk_preset());
    assert_eq!(golden.len(), NUM_KEYPOINTS);
    for (i, (a, b)) in kp.iter().zip(&golden).enumerate() {
        assert!((a - b).norm() < 1e-12, "keypoint {i}: {a:?} vs {b:?}");
    }
}

#[test]
fn rest_pip_to_wrist_distance() {
    let kp = rest_keypoints(&HandModel::desk_preset());
    let trace = EpisodeTrace {
        seed: 0,
        condition: Condition::Healthy,
        steps: vec![StepRecord {
            t: 0.0,
            obj_pos_err: 0.0,
            obj_ang_err: 0.0,
            demo_err: 0.0,
            reward: 0.0,
            keypoints: kp.iter().map(|p| [p.x, p.y, p.z]).collect(),
            success: true,
        }],
    };
    let d = pip_wrist_series(&trace);
    assert!((d[0] - 0.145).abs() < 1e-12, "{}", d[0]);
}

#[test]
fn keypoint_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kp.csv");
    let kp = rest_keypoints(&HandModel::desk_preset());
    write_keypoints_csv(&path, &kp).unwrap();
    assert_eq!(read_keypoints_csv(&path).unwrap(), kp.to_vec());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn activation_step_is_bounded(a in 0.0f64..=1.0, u in -5.0f64..5.0, dt in 1e-5f64..MAX_DT) {
        let model = HandModel::desk_preset();
        let m = model.num_muscles();
        let next = activation_step(&model, &vec![a; m], &vec![u; m], dt).unwrap();
        for x in next {
            prop_assert!((0.0..=1.0).contains(&x));
            // Moves toward the clamped excitation without overshoot.
            let target = u.clamp(0.0, 1.0);
            prop_assert!((x - target).abs() <= (a - target).abs() + 1e-15);
        }
    }

    #[test]
    fn weakness_scales_torque(f in 0.05f64..=1.0, a in 0.0f64..=1.0) {
        let model = HandModel::desk_preset();
        let m = model.num_muscles();
        let full = muscle_torques(&model, &vec![a; m], &WeaknessProfile::identity(m)).unwrap();
        let weak = muscle_torques(&model, &vec![a; m], &WeaknessProfile::uniform(m, f)).unwrap();
        for (w, t) in weak.iter().zip(&full) {
            prop_assert!((w - f * t).abs() <= 1e-12 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn joints_stay_within_limits(seed in 0u64..1000, torque in -2.0f64..2.0) {
        let model = HandModel::desk_preset();
        let n = model.num_joints();
        let mut s = HandState::rest(&model);
        let tau: Vec<f64> = (0..n).map(|j| if (j as u64 + seed) % 2 == 0 { torque } else { -torque }).collect();
        for _ in 0..100 {
            s = dynamics_step(&model, &s, &tau, &vec![0.0; n], 0.005).unwrap();
        }
        for (q, j) in s.q.iter().zip(&model.joints) {
            prop_assert!(*q >= j.lower && *q <= j.upper);
        }
    }

    #[test]
    fn free_flight_conserves_momentum(vx in -1.0f64..1.0, wz in -10.0f64..10.0, steps in 1usize..200) {
        let mut o = ObjectSpec::tomato_can().build(Vector3::zeros(), UnitQuaternion::identity()).unwrap();
        o.linvel = Vector3::new(vx, 0.3, -0.2);
        o.angvel = Vector3::new(0.0, 0.0, wz);
        let p0 = o.mass * o.linvel;
        for _ in 0..steps {
            o = object_step(&o, &[], Vector3::zeros(), 0.002).unwrap();
        }
        prop_assert!((o.mass * o.linvel - p0).norm() < 1e-12);
        prop_assert!((o.orientation.as_ref().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contact_law_is_repulsive(depth in 0.0f64..0.01, vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
        let c = ContactPoint {
            position: Vector3::zeros(),
            normal: Vector3::z(),
            depth,
            rel_velocity: Vector3::new(vx, vy, 0.0),
            site: ContactSite::Table,
        };
        let p = ContactParams::table_default();
        let f = contact_response(&c, &p).force;
        prop_assert!(f.z >= 0.0);
        prop_assert!(f.xy().norm() <= p.friction * f.z + 1e-12);
        // Friction opposes sliding.
        prop_assert!(f.x * vx + f.y * vy <= 1e-15);
    }
}
