use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of hand keypoints: wrist plus MCP, PIP, DIP and tip for each finger.
pub const NUM_KEYPOINTS: usize = 21;
pub const NUM_FINGERS: usize = 5;
/// Translation plus XYZ Euler rotation of the shoulder/base.
pub const BASE_DOF: usize = 6;

pub const FINGER_NAMES: [&str; NUM_FINGERS] = ["thumb", "index", "middle", "ring", "pinky"];

/// Keypoint index of the wrist.
pub const KP_WRIST: usize = 0;

/// Keypoint index of segment `seg` (0 = MCP/CMC, 1 = PIP, 2 = DIP, 3 = tip) of finger `finger`.
pub const fn keypoint_index(finger: usize, seg: usize) -> usize {
    1 + 4 * finger + seg
}

pub const KP_MIDDLE_PIP: usize = keypoint_index(2, 1);

/// Revolute joint. Wrist joints have `finger: None` and are applied at the base
/// in declaration order; finger joints rotate the finger frame at the start of
/// bone `segment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub finger: Option<usize>,
    #[serde(default)]
    pub segment: usize,
    /// Rotation axis in the local frame the joint acts in.
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    /// kg·m²
    pub inertia: f64,
    /// N·m·s/rad
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finger {
    pub name: String,
    /// First joint position in the palm frame (m).
    pub base: [f64; 3],
    /// Fixed rotation (rotation vector, palm frame) of the finger's rest frame.
    pub base_rotation: [f64; 3],
    /// Bone lengths (m): proximal, middle, distal. Bones run along local +x.
    pub bones: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuscleRole {
    Flexor,
    Extensor,
    Adductor,
    Wrist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Muscle {
    pub name: String,
    pub role: MuscleRole,
    /// Maximum isometric force (N).
    pub f_max: f64,
    /// Signed moment arm (m) for every joint of the model.
    pub moment_arms: Vec<f64>,
    /// Activation time constant (s).
    pub tau_act: f64,
    /// Deactivation time constant (s).
    pub tau_deact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSphere {
    /// Center in the palm frame (m).
    pub center: [f64; 3],
    pub radius: f64,
}

/// Articulated, tendon-driven hand. The desk preset has 17 joints and 15
/// muscles; every size here comes from the JSON description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandModel {
    pub joints: Vec<Joint>,
    pub fingers: Vec<Finger>,
    pub muscles: Vec<Muscle>,
    pub fingertip_radius: f64,
    #[serde(default)]
    pub palm_sphere: Option<ContactSphere>,
}

impl HandModel {
    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_muscles(&self) -> usize {
        self.muscles.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn muscle_index(&self, name: &str) -> Option<usize> {
        self.muscles.iter().position(|m| m.name == name)
    }

    /// Wrist joints in application order.
    pub fn wrist_joints(&self) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&j| self.joints[j].finger.is_none())
            .collect()
    }

    /// Joints of `finger` sorted by segment, declaration order within a segment.
    pub fn finger_joints(&self, finger: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.joints.len())
            .filter(|&j| self.joints[j].finger == Some(finger))
            .collect();
        idx.sort_by_key(|&j| self.joints[j].segment);
        idx
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if n == 0 {
            return Err(Error::validation("hand model has no joints"));
        }
        if self.fingers.len() != NUM_FINGERS {
            return Err(Error::validation(format!(
                "hand model needs {NUM_FINGERS} fingers, found {}",
                self.fingers.len()
            )));
        }
        for j in &self.joints {
            let finite = j.axis.iter().all(|v| v.is_finite())
                && j.lower.is_finite()
                && j.upper.is_finite();
            if !finite {
                return Err(Error::validation(format!("joint {} has non-finite fields", j.name)));
            }
            if j.lower >= j.upper {
                return Err(Error::validation(format!(
                    "joint {} limits unordered: {} >= {}",
                    j.name, j.lower, j.upper
                )));
            }
            let norm = j.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!("joint {} axis is not unit length", j.name)));
            }
            if !(j.inertia > 0.0) || !(j.damping >= 0.0) {
                return Err(Error::validation(format!(
                    "joint {} needs inertia > 0 and damping >= 0",
                    j.name
                )));
            }
            if let Some(f) = j.finger {
                if f >= NUM_FINGERS || j.segment > 2 {
                    return Err(Error::validation(format!(
                        "joint {} refers to finger {f} segment {}",
                        j.name, j.segment
                    )));
                }
            }
        }
        for f in &self.fingers {
            if f.bones.iter().any(|&b| !(b > 0.0)) {
                return Err(Error::validation(format!("finger {} has a non-positive bone", f.name)));
            }
        }
        for m in &self.muscles {
            if m.moment_arms.len() != n {
                return Err(Error::validation(format!(
                    "muscle {} has {} moment arms for {n} joints",
                    m.name,
                    m.moment_arms.len()
                )));
            }
            if !(m.f_max > 0.0) || !(m.tau_act > 0.0) || !(m.tau_deact > 0.0) {
                return Err(Error::validation(format!(
                    "muscle {} needs positive f_max and time constants",
                    m.name
                )));
            }
            if m.moment_arms.iter().all(|&r| r == 0.0) {
                return Err(Error::validation(format!("muscle {} spans no joint", m.name)));
            }
        }
        if !(self.fingertip_radius > 0.0) {
            return Err(Error::validation("fingertip radius must be positive"));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let model: HandModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: HandModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Desk-scale hand: wrist (2 DoF) plus three joints per finger, 15 muscles
    /// (flexor and extensor per finger, thumb adductor, two wrist pairs).
    pub fn desk_preset() -> Self {
        let mut joints = vec![
            joint("wrist_flex", None, 0, [0.0, 1.0, 0.0], (-1.0, 1.0), 2.0e-3, 0.08),
            joint("wrist_dev", None, 0, [0.0, 0.0, 1.0], (-0.4, 0.35), 2.0e-3, 0.08),
        ];
        // Thumb frame: x along the metacarpal. Opposition swings it under the
        // palm, flexion curls it toward the fingers.
        let swing = 70f64.to_radians();
        let cmc_axis = [-swing.cos(), swing.sin(), 0.0];
        joints.push(joint("thumb_cmc", Some(0), 0, cmc_axis, (-0.2, 1.3), 4.0e-4, 0.05));
        joints.push(joint("thumb_mcp", Some(0), 1, [0.0, 0.0, -1.0], (-0.2, 1.0), 2.0e-4, 0.03));
        joints.push(joint("thumb_ip", Some(0), 2, [0.0, 0.0, -1.0], (-0.2, 1.3), 1.0e-4, 0.015));
        for (f, name) in FINGER_NAMES.iter().enumerate().skip(1) {
            joints.push(joint(&format!("{name}_mcp"), Some(f), 0, [0.0, 1.0, 0.0], (-0.3, 1.6), 3.0e-4, 0.04));
            joints.push(joint(&format!("{name}_pip"), Some(f), 1, [0.0, 1.0, 0.0], (0.0, 1.9), 2.0e-4, 0.03));
            joints.push(joint(&format!("{name}_dip"), Some(f), 2, [0.0, 1.0, 0.0], (0.0, 1.4), 1.0e-4, 0.015));
        }
        let fingers = vec![
            finger("thumb", [0.025, 0.012, -0.012], [0.0, 0.0, swing], [0.045, 0.032, 0.028]),
            finger("index", [0.090, 0.022, 0.0], [0.0; 3], [0.045, 0.026, 0.020]),
            finger("middle", [0.095, 0.0, 0.0], [0.0; 3], [0.050, 0.030, 0.022]),
            finger("ring", [0.090, -0.020, 0.0], [0.0; 3], [0.046, 0.028, 0.020]),
            finger("pinky", [0.080, -0.038, 0.0], [0.0; 3], [0.036, 0.021, 0.018]),
        ];

        let mut model = HandModel {
            joints,
            fingers,
            muscles: Vec::new(),
            fingertip_radius: 0.009,
            palm_sphere: Some(ContactSphere {
                center: [0.060, 0.0, 0.008],
                radius: 0.025,
            }),
        };
        let n = model.num_joints();
        let arms = |pairs: &[(&str, f64)], model: &HandModel| {
            let mut r = vec![0.0; n];
            for (name, arm) in pairs {
                r[model.joint_index(name).expect("preset joint")] = *arm;
            }
            r
        };
        let mut muscles = Vec::new();
        for name in FINGER_NAMES.iter().skip(1) {
            let flex = arms(
                &[(&format!("{name}_mcp"), 0.010), (&format!("{name}_pip"), 0.008), (&format!("{name}_dip"), 0.005)],
                &model,
            );
            muscles.push(muscle(&format!("{name}_flexor"), MuscleRole::Flexor, 30.0, flex));
            let ext = arms(
                &[(&format!("{name}_mcp"), -0.008), (&format!("{name}_pip"), -0.005), (&format!("{name}_dip"), -0.004)],
                &model,
            );
            muscles.push(muscle(&format!("{name}_extensor"), MuscleRole::Extensor, 20.0, ext));
        }
        muscles.push(muscle(
            "thumb_flexor",
            MuscleRole::Flexor,
            25.0,
            arms(&[("thumb_mcp", 0.008), ("thumb_ip", 0.006)], &model),
        ));
        muscles.push(muscle(
            "thumb_extensor",
            MuscleRole::Extensor,
            20.0,
            arms(&[("thumb_cmc", -0.008), ("thumb_mcp", -0.008), ("thumb_ip", -0.005)], &model),
        ));
        muscles.push(muscle(
            "thumb_adductor",
            MuscleRole::Adductor,
            30.0,
            arms(&[("thumb_cmc", 0.010)], &model),
        ));
        for (name, joint, arm) in [
            ("wrist_flexor", "wrist_flex", 0.015),
            ("wrist_extensor", "wrist_flex", -0.015),
            ("wrist_radial", "wrist_dev", 0.012),
            ("wrist_ulnar", "wrist_dev", -0.012),
        ] {
            muscles.push(muscle(name, MuscleRole::Wrist, 80.0, arms(&[(joint, arm)], &model)));
        }
        model.muscles = muscles;
        model
    }
}

fn joint(
    name: &str,
    finger: Option<usize>,
    segment: usize,
    axis: [f64; 3],
    limits: (f64, f64),
    inertia: f64,
    damping: f64,
) -> Joint {
    Joint {
        name: name.to_string(),
        finger,
        segment,
        axis,
        lower: limits.0,
        upper: limits.1,
        inertia,
        damping,
    }
}

fn finger(name: &str, base: [f64; 3], base_rotation: [f64; 3], bones: [f64; 3]) -> Finger {
    Finger {
        name: name.to_string(),
        base,
        base_rotation,
        bones,
    }
}

fn muscle(name: &str, role: MuscleRole, f_max: f64, moment_arms: Vec<f64>) -> Muscle {
    Muscle {
        name: name.to_string(),
        role,
        f_max,
        moment_arms,
        tau_act: 0.015,
        tau_deact: 0.050,
    }
}

/// Articulated state of the hand plus its kinematic base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub activation: Vec<f64>,
    /// Translation (m) then XYZ Euler angles (rad).
    pub base_pose: [f64; BASE_DOF],
    /// Rate of `base_pose` (m/s, rad/s).
    pub base_vel: [f64; BASE_DOF],
}

impl HandState {
    pub fn rest(model: &HandModel) -> Self {
        HandState {
            q: model
                .joints
                .iter()
                .map(|j| 0f64.clamp(j.lower, j.upper))
                .collect(),
            qd: vec![0.0; model.num_joints()],
            activation: vec![0.0; model.num_muscles()],
            base_pose: [0.0; BASE_DOF],
            base_vel: [0.0; BASE_DOF],
        }
    }

    /// Kinetic energy of the joints (J).
    pub fn kinetic_energy(&self, model: &HandModel) -> f64 {
        self.qd
            .iter()
            .zip(&model.joints)
            .map(|(v, j)| 0.5 * j.inertia * v * v)
            .sum()
    }
}

/// Per-muscle strength factors in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeaknessProfile {
    pub scale: Vec<f64>,
}

impl WeaknessProfile {
    pub fn identity(num_muscles: usize) -> Self {
        WeaknessProfile {
            scale: vec![1.0; num_muscles],
        }
    }

    pub fn uniform(num_muscles: usize, factor: f64) -> Self {
        WeaknessProfile {
            scale: vec![factor; num_muscles],
        }
    }

    /// Factor per muscle role; roles not listed keep full strength.
    pub fn by_role(model: &HandModel, factors: &[(MuscleRole, f64)]) -> Self {
        let scale = model
            .muscles
            .iter()
            .map(|m| {
                factors
                    .iter()
                    .find(|(role, _)| *role == m.role)
                    .map_or(1.0, |(_, f)| *f)
            })
            .collect();
        WeaknessProfile { scale }
    }

    pub fn is_identity(&self) -> bool {
        self.scale.iter().all(|&s| s == 1.0)
    }

    pub fn validate(&self, num_muscles: usize) -> Result<()> {
        if self.scale.len() != num_muscles {
            return Err(Error::config(format!(
                "weakness profile has {} factors for {num_muscles} muscles",
                self.scale.len()
            )));
        }
        if let Some((i, s)) = self
            .scale
            .iter()
            .enumerate()
            .find(|(_, &s)| !(s > 0.0 && s <= 1.0))
        {
            return Err(Error::validation(format!(
                "weakness factor {s} for muscle {i} outside (0, 1]"
            )));
        }
        Ok(())
    }
}
