//! Demonstration trajectories: JSON ingestion and validation, resampling onto
//! the simulator clock and analytic synthesis from the hand model.

mod synth;

pub use synth::{synth_demo, synth_states, SynthKind, SynthParams, SynthSample, GRASP_OFFSET, GRASP_ROLL};

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::biomech::NUM_KEYPOINTS;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const KEYPOINT_SCALARS: usize = 3 * NUM_KEYPOINTS;
/// Keypoint ordering written into every file.
pub const KEYPOINT_CONVENTION: &str = "wrist;thumb,index,middle,ring,pinky:mcp,pip,dip,tip";

/// One time sample: 21 world-frame keypoints and the object reference pose.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoFrame {
    pub t: f64,
    pub keypoints: [Vector3<f64>; NUM_KEYPOINTS],
    pub object_pos: Vector3<f64>,
    pub object_quat: UnitQuaternion<f64>,
}

impl DemoFrame {
    pub fn flat_keypoints(&self) -> Vec<f64> {
        self.keypoints.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoTrajectory {
    pub subject_id: String,
    pub object_id: String,
    pub fps: f64,
    pub convention: String,
    pub frames: Vec<DemoFrame>,
}

#[derive(Serialize, Deserialize)]
struct FileMeta {
    subject: String,
    object: String,
    fps: f64,
    #[serde(default = "default_convention")]
    keypoints: String,
}

fn default_convention() -> String {
    KEYPOINT_CONVENTION.to_string()
}

#[derive(Serialize, Deserialize)]
struct FileFrame {
    t: Option<f64>,
    kp: Vec<Option<f64>>,
    obj_p: Vec<Option<f64>>,
    /// `[w, x, y, z]`.
    obj_q: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DemoFile {
    schema: u32,
    meta: FileMeta,
    frames: Vec<FileFrame>,
}

impl DemoTrajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Domain checks shared by loading and environment reset.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::validation(format!(
                "trajectory needs at least 2 frames, has {}",
                self.frames.len()
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::validation(format!("fps must be positive, got {}", self.fps)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if !f.t.is_finite() {
                return Err(Error::validation(format!("frame {i}: non-finite timestamp")));
            }
            for (k, p) in f.keypoints.iter().enumerate() {
                if let Some(c) = (0..3).find(|&c| !p[c].is_finite()) {
                    return Err(Error::validation(format!(
                        "frame {i}: keypoint {k} component {c} is not finite"
                    )));
                }
            }
            if !f.object_pos.iter().all(|v| v.is_finite()) {
                return Err(Error::validation(format!("frame {i}: non-finite object position")));
            }
            let qn = f.object_quat.as_ref().norm();
            if !((qn - 1.0).abs() <= 1e-9) {
                return Err(Error::validation(format!("frame {i}: object quaternion norm {qn}")));
            }
            if i > 0 && !(f.t > self.frames[i - 1].t) {
                return Err(Error::validation(format!(
                    "frame {i}: timestamp {} not after {}",
                    f.t,
                    self.frames[i - 1].t
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let q = |v: f64| Some(v);
        let file = DemoFile {
            schema: SCHEMA_VERSION,
            meta: FileMeta {
                subject: self.subject_id.clone(),
                object: self.object_id.clone(),
                fps: self.fps,
                keypoints: self.convention.clone(),
            },
            frames: self
                .frames
                .iter()
                .map(|f| {
                    let oq = f.object_quat.as_ref();
                    FileFrame {
                        t: Some(f.t),
                        kp: f.flat_keypoints().into_iter().map(q).collect(),
                        obj_p: f.object_pos.iter().copied().map(q).collect(),
                        obj_q: vec![q(oq.w), q(oq.i), q(oq.j), q(oq.k)],
                    }
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parses and validates a trajectory document. `origin` is used in
    /// error messages only.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            msg,
        };
        let text = nonfinite_literals_to_null(text);
        let file: DemoFile = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        if file.schema != SCHEMA_VERSION {
            return Err(parse_err(format!("unsupported schema {}", file.schema)));
        }
        let mut frames = Vec::with_capacity(file.frames.len());
        for (i, ff) in file.frames.iter().enumerate() {
            let expect = |name: &str, v: &[Option<f64>], n: usize| -> Result<Vec<f64>> {
                if v.len() != n {
                    return Err(parse_err(format!("frame {i}: {name} has {} values, expected {n}", v.len())));
                }
                v.iter()
                    .enumerate()
                    .map(|(k, x)| match x {
                        Some(x) if x.is_finite() => Ok(*x),
                        _ if name == "kp" => Err(Error::validation(format!(
                            "frame {i}: keypoint {} component {} is not finite",
                            k / 3,
                            k % 3
                        ))),
                        _ => Err(Error::validation(format!("frame {i}: {name}[{k}] is not finite"))),
                    })
                    .collect()
            };
            let t = ff
                .t
                .filter(|t| t.is_finite())
                .ok_or_else(|| Error::validation(format!("frame {i}: non-finite timestamp")))?;
            let kp = expect("kp", &ff.kp, KEYPOINT_SCALARS)?;
            let p = expect("obj_p", &ff.obj_p, 3)?;
            let q = expect("obj_q", &ff.obj_q, 4)?;
            let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
            let n = quat.norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!("frame {i}: object quaternion norm {n}")));
            }
            let mut keypoints = [Vector3::zeros(); NUM_KEYPOINTS];
            for (k, kp3) in kp.chunks(3).enumerate() {
                keypoints[k] = Vector3::new(kp3[0], kp3[1], kp3[2]);
            }
            frames.push(DemoFrame {
                t,
                keypoints,
                object_pos: Vector3::new(p[0], p[1], p[2]),
                object_quat: if (n - 1.0).abs() <= 1e-12 {
                    UnitQuaternion::new_unchecked(quat)
                } else {
                    UnitQuaternion::new_normalize(quat)
                },
            });
        }
        let traj = DemoTrajectory {
            subject_id: file.meta.subject,
            object_id: file.meta.object,
            fps: file.meta.fps,
            convention: file.meta.keypoints,
            frames,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Keypoint and object traces as CSV, one row per frame.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["t".to_string()];
        for k in 0..NUM_KEYPOINTS {
            for c in ["x", "y", "z"] {
                header.push(format!("kp{k}_{c}"));
            }
        }
        header.extend(["obj_x", "obj_y", "obj_z", "obj_qw", "obj_qx", "obj_qy", "obj_qz"].map(String::from));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for f in &self.frames {
            let q = f.object_quat.as_ref();
            let mut row = vec![f.t];
            row.extend(f.flat_keypoints());
            row.extend(f.object_pos.iter());
            row.extend([q.w, q.i, q.j, q.k]);
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Interpolated frame at time `t` (clamped to the trajectory span).
    pub fn sample(&self, t: f64) -> DemoFrame {
        let frames = &self.frames;
        let last = frames.len() - 1;
        if t <= frames[0].t {
            return frames[0].clone();
        }
        if t >= frames[last].t {
            return frames[last].clone();
        }
        let hi = frames.partition_point(|f| f.t <= t);
        let (a, b) = (&frames[hi - 1], &frames[hi]);
        let s = (t - a.t) / (b.t - a.t);
        if s == 0.0 {
            return a.clone();
        }
        let mut keypoints = [Vector3::zeros(); NUM_KEYPOINTS];
        for k in 0..NUM_KEYPOINTS {
            keypoints[k] = a.keypoints[k].lerp(&b.keypoints[k], s);
        }
        DemoFrame {
            t,
            keypoints,
            object_pos: a.object_pos.lerp(&b.object_pos, s),
            object_quat: a.object_quat.slerp(&b.object_quat, s),
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Replaces bare `NaN` / `Infinity` / `-Infinity` tokens (as written by
/// common JSON encoders) with `null`, leaving string contents alone.
fn nonfinite_literals_to_null(text: &str) -> std::borrow::Cow<'_, str> {
    if !(text.contains("NaN") || text.contains("Infinity")) {
        return std::borrow::Cow::Borrowed(text);
    }
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        let token = ["-Infinity", "Infinity", "NaN"].into_iter().find(|tok| rest.starts_with(tok));
        if let Some(tok) = token {
            out.push_str("null");
            rest = &rest[tok.len()..];
        } else {
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    std::borrow::Cow::Owned(out)
}

pub fn load_demo(path: &Path) -> Result<DemoTrajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DemoTrajectory::from_json_str(&text, path)
}

pub fn save_demo(traj: &DemoTrajectory, path: &Path) -> Result<()> {
    traj.save(path)
}

/// Resamples onto a uniform grid `t0 + k dt`; the final frame is always kept
/// exactly, so the last interval may be shorter than `dt`.
pub fn resample(traj: &DemoTrajectory, dt: f64) -> Result<DemoTrajectory> {
    traj.validate()?;
    let duration = traj.duration();
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("resample dt must be positive, got {dt}")));
    }
    if dt > duration * (1.0 + 1e-12) {
        return Err(Error::config(format!(
            "resample dt {dt} exceeds trajectory duration {duration}"
        )));
    }
    let t0 = traj.frames[0].t;
    let intervals = ((duration / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut frames: Vec<DemoFrame> = (0..intervals).map(|k| traj.sample(t0 + k as f64 * dt)).collect();
    frames.push(traj.frames.last().expect("validated").clone());
    Ok(DemoTrajectory {
        subject_id: traj.subject_id.clone(),
        object_id: traj.object_id.clone(),
        fps: 1.0 / dt,
        convention: traj.convention.clone(),
        frames,
    })
}

/// Named collection of trajectories used together for prior training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoSet {
    pub trajectories: BTreeMap<String, DemoTrajectory>,
}

impl DemoSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, traj: DemoTrajectory) {
        self.trajectories.insert(name.into(), traj);
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut convention: Option<&str> = None;
        for (name, t) in &self.trajectories {
            t.validate()
                .map_err(|e| Error::validation(format!("trajectory {name}: {e}")))?;
            match convention {
                None => convention = Some(&t.convention),
                Some(c) if c != t.convention => {
                    return Err(Error::validation(format!(
                        "trajectory {name} uses keypoint convention '{}', expected '{c}'",
                        t.convention
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Loads every `*.json` file in a directory, keyed by file stem.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = DemoSet::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("demo").to_string();
            set.insert(name, load_demo(&p)?);
        }
        set.validate()?;
        Ok(set)
    }
}
