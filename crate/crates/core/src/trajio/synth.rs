use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use super::{DemoFrame, DemoTrajectory, KEYPOINT_CONVENTION};
use crate::biomech::{forward_kinematics, HandModel, HandState, NUM_FINGERS};
use crate::error::{Error, Result};
use crate::world::{closest_surface, ObjectSpec};

/// Wrist position relative to the object center for the side grasp
/// (palm facing +y, fingers along +x).
pub const GRASP_OFFSET: [f64; 3] = [-0.09, -0.048, -0.015];
/// Base roll that turns the palm toward +y.
pub const GRASP_ROLL: f64 = FRAC_PI_2;
/// Relative flexion of MCP, PIP and DIP along the finger closure path.
const CURL: [f64; 3] = [1.0, 1.0, 0.7];
const THUMB_CURL: [f64; 3] = [1.2, 0.3, 0.3];
/// Extra closure beyond first touch, as a fraction of the touch closure.
const SQUEEZE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Straight min-jerk wrist translation with partial finger closure.
    Reach,
    /// Side grasp of the object, vertical rise and hold.
    Lift,
    /// Horizontal circular arc of the wrist with finger flexion waves.
    Arc,
}

/// Parameters of [`synth_demo`]. Documented ranges are checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Seconds, in [0.2, 5].
    pub duration: f64,
    /// Frames per second, in [10, 1000].
    pub fps: f64,
    pub object: ObjectSpec,
    /// Object center on the table plane (x, y); the height follows from the shape.
    pub object_xy: [f64; 2],
    /// Rise of the object during a lift, in [0, 0.3] m.
    pub lift_height: f64,
    /// Finger closure fraction for reach and arc, in [0, 1].
    pub closure: f64,
    /// Starting wrist position for reach and arc (m).
    pub wrist_start: [f64; 3],
    /// Wrist displacement of a reach, norm at most 0.3 m.
    pub reach_offset: [f64; 3],
    /// Arc radius in [0.02, 0.3] m.
    pub arc_radius: f64,
    /// Swept arc angle, |angle| <= pi.
    pub arc_angle: f64,
    /// Wrist position relative to the resting object center for a lift.
    pub grasp_offset: [f64; 3],
    pub subject: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            duration: 1.0,
            fps: 100.0,
            object: ObjectSpec::tomato_can(),
            object_xy: [0.0, 0.0],
            lift_height: 0.15,
            closure: 0.6,
            wrist_start: [-0.25, -0.15, 0.12],
            reach_offset: [0.1, 0.05, 0.05],
            arc_radius: 0.08,
            arc_angle: 1.2,
            grasp_offset: GRASP_OFFSET,
            subject: "synthetic".into(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("duration", (0.2..=5.0).contains(&self.duration)),
            ("fps", (10.0..=1000.0).contains(&self.fps)),
            ("lift_height", (0.0..=0.3).contains(&self.lift_height)),
            ("closure", (0.0..=1.0).contains(&self.closure)),
            ("reach_offset", Vector3::from(self.reach_offset).norm() <= 0.3),
            ("arc_radius", (0.02..=0.3).contains(&self.arc_radius)),
            ("arc_angle", self.arc_angle.abs() <= PI),
            ("grasp_offset", Vector3::from(self.grasp_offset).norm() <= 0.3),
            (
                "wrist_start",
                self.wrist_start.iter().chain(&self.object_xy).all(|v| v.is_finite()),
            ),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::config(format!("synth parameter {name} out of range")));
        }
        self.object.shape.validate()
    }

    pub fn object_center(&self) -> Vector3<f64> {
        Vector3::new(self.object_xy[0], self.object_xy[1], self.object.shape.rest_height())
    }

    /// Wrist position of the side grasp around the resting object.
    pub fn grasp_wrist(&self) -> Vector3<f64> {
        self.object_center() + Vector3::from(self.grasp_offset)
    }
}

/// Quintic min-jerk blend, 0 at `s <= 0`, 1 at `s >= 1`.
fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Smooth bump on [a, b], zero outside, peak 1 at the midpoint.
fn bump(s: f64, a: f64, b: f64) -> f64 {
    if s <= a || s >= b {
        0.0
    } else {
        let x = (s - a) / (b - a);
        0.5 * (1.0 - (2.0 * PI * x).cos())
    }
}

/// Joint angles for a finger (or thumb) following its curl path by `s`,
/// clamped to the joint limits.
fn curl(model: &HandModel, q: &mut [f64], finger: usize, s: f64) {
    let weights = if finger == 0 { THUMB_CURL } else { CURL };
    for (k, &j) in model.finger_joints(finger).iter().enumerate() {
        let joint = &model.joints[j];
        q[j] = (weights[k] * s).clamp(joint.lower, joint.upper);
    }
}

/// Smallest curl per finger that brings the fingertip sphere into contact
/// with the object, plus a squeeze margin; `None` if the finger never touches.
pub(crate) fn grasp_closure(
    model: &HandModel,
    base: &HandState,
    spec: &ObjectSpec,
    center: Vector3<f64>,
) -> [Option<f64>; NUM_FINGERS] {
    let obj = spec.build(center, UnitQuaternion::identity()).expect("validated object");
    let mut out = [None; NUM_FINGERS];
    for (f, slot) in out.iter_mut().enumerate() {
        let touches = |s: f64| {
            let mut st = base.clone();
            curl(model, &mut st.q, f, s);
            let tip = forward_kinematics(model, &st).fingertip(f);
            let (_, _, d) = closest_surface(&obj.shape, &obj.to_local(&tip));
            d <= model.fingertip_radius
        };
        let steps = 400;
        let s_max = 2.0;
        if let Some(k) = (0..=steps).find(|&k| touches(s_max * k as f64 / steps as f64)) {
            let (mut lo, mut hi) = (s_max * (k.max(1) - 1) as f64 / steps as f64, s_max * k as f64 / steps as f64);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if touches(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            *slot = Some(hi * (1.0 + SQUEEZE));
        }
    }
    out
}

/// One sample of the joint-space path behind a synthetic demo.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub t: f64,
    pub state: HandState,
    pub object_pos: Vector3<f64>,
}

/// Generates a kinematically consistent demonstration by driving the hand
/// model along smooth joint and base paths.
pub fn synth_demo(kind: SynthKind, params: &SynthParams) -> Result<DemoTrajectory> {
    let model = HandModel::desk_preset();
    let frames = synth_states(kind, params)?
        .into_iter()
        .map(|s| DemoFrame {
            t: s.t,
            keypoints: forward_kinematics(&model, &s.state).keypoints,
            object_pos: s.object_pos,
            object_quat: UnitQuaternion::identity(),
        })
        .collect();
    Ok(DemoTrajectory {
        subject_id: params.subject.clone(),
        object_id: params.object.name.clone(),
        fps: params.fps,
        convention: KEYPOINT_CONVENTION.to_string(),
        frames,
    })
}

/// Joint and base path of a synthetic demo, one entry per frame.
pub fn synth_states(kind: SynthKind, params: &SynthParams) -> Result<Vec<SynthSample>> {
    params.validate()?;
    let model = HandModel::desk_preset();
    let n_frames = (params.duration * params.fps).round() as usize + 1;
    let dt = params.duration / (n_frames - 1) as f64;
    let center = params.object_center();

    let mut base = HandState::rest(&model);
    base.base_pose[3] = GRASP_ROLL;
    let closure = match kind {
        SynthKind::Lift => {
            let w = params.grasp_wrist();
            base.base_pose[..3].copy_from_slice(w.as_slice());
            let found = grasp_closure(&model, &base, &params.object, center);
            let mut c = [0.0; NUM_FINGERS];
            for f in 0..NUM_FINGERS {
                c[f] = found[f].unwrap_or(if f == 0 { 0.6 } else { 1.4 });
            }
            c
        }
        _ => [params.closure; NUM_FINGERS].map(|c| c * 1.2),
    };

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = if i + 1 == n_frames { params.duration } else { i as f64 * dt };
        let s = t / params.duration;
        let mut st = base.clone();
        let mut object_pos = center;
        match kind {
            SynthKind::Lift => {
                // Close over 2-22%, MCP overshoots then settles; lift with a
                // cosine profile from 25% to 65% and hold.
                let close = min_jerk((s - 0.02) / 0.2);
                for f in 0..NUM_FINGERS {
                    curl(&model, &mut st.q, f, closure[f] * close);
                }
                for f in 1..NUM_FINGERS {
                    let mcp = model.finger_joints(f)[0];
                    let joint = &model.joints[mcp];
                    st.q[mcp] = (st.q[mcp] + 0.35 * bump(s, 0.05, 0.3)).clamp(joint.lower, joint.upper);
                }
                let rise = if s <= 0.25 {
                    0.0
                } else if s >= 0.65 {
                    params.lift_height
                } else {
                    0.5 * params.lift_height * (1.0 - (PI * (s - 0.25) / 0.4).cos())
                };
                st.base_pose[2] += rise;
                object_pos.z += rise;
            }
            SynthKind::Reach => {
                let m = min_jerk(s);
                let start = Vector3::from(params.wrist_start);
                let w = start + m * Vector3::from(params.reach_offset);
                st.base_pose[..3].copy_from_slice(w.as_slice());
                for f in 0..NUM_FINGERS {
                    curl(&model, &mut st.q, f, closure[f] * m);
                }
                st.q[0] = 0.2 * m;
            }
            SynthKind::Arc => {
                let w = arc_wrist(params, s);
                st.base_pose[..3].copy_from_slice(w.as_slice());
                st.base_pose[5] = params.arc_angle * min_jerk(s);
                for f in 0..NUM_FINGERS {
                    let phase = 0.5 * (1.0 - (2.0 * PI * s + 0.4 * f as f64).cos());
                    curl(&model, &mut st.q, f, closure[f] * phase);
                }
            }
        }
        frames.push(SynthSample {
            t,
            state: st,
            object_pos,
        });
    }
    Ok(frames)
}

/// Wrist on a horizontal arc of the given radius that starts at
/// `wrist_start` and turns about a center at `-radius` along x.
pub fn arc_wrist(params: &SynthParams, s: f64) -> Vector3<f64> {
    let start = Vector3::from(params.wrist_start);
    let r = params.arc_radius;
    let center = start - Vector3::new(r, 0.0, 0.0);
    let th = params.arc_angle * min_jerk(s);
    center + Vector3::new(r * th.cos(), r * th.sin(), 0.0)
}
