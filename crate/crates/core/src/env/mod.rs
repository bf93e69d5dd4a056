//! The manipulation MDP: observation assembly, rewards, stepping and reset.

mod reward;

pub use reward::{demo_error, positional_encoding, reward_demo, reward_obj, RewardParams, REWARD_KEYPOINTS};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biomech::{
    activation_step, base_point_velocity, chain_joints, dynamics_step, fit_pose, forward_kinematics,
    muscle_torques, point_jacobian, HandModel, HandPose, HandState, WeaknessProfile, BASE_DOF, NUM_FINGERS,
    NUM_KEYPOINTS,
};
use crate::error::{Error, Result};
use crate::trajio::{resample, DemoFrame, DemoTrajectory};
use crate::world::{
    detect_contacts, detect_table_contacts, object_step, orientation_angle, resolve_contacts, support_points,
    AppliedForce, ContactParams, ContactSite, HandBodies, HandContact, ObjectSpec, RigidObject, Sphere,
};
use reward::select_keypoints;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    DemoOnly,
    DemoPlusObj,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub dt: f64,
    pub horizon: usize,
    pub noise_std_frac: f64,
    pub reward: RewardParams,
    pub reward_mode: RewardMode,
    pub seed: u64,
    /// Size of the step encoding in the observation (even).
    pub d_pe: usize,
    /// Half-width of the uniform joint perturbation at reset (rad).
    pub init_perturbation: f64,
    /// Largest acceptable mean keypoint error of the frame-0 fit (m).
    pub max_fit_error: f64,
    /// Object error that ends an episode early (m).
    pub runaway_distance: f64,
    /// Base rate caps: translation (m/s) and rotation (rad/s).
    pub base_max_linear: f64,
    pub base_max_angular: f64,
    pub hand_contact: ContactParams,
    pub table_contact: ContactParams,
    pub palm_contact: bool,
    /// Table plane height, `None` for no table.
    pub table_height: Option<f64>,
    pub gravity: [f64; 3],
    /// Time the object is settled on the table before the first reset (s).
    pub settle_time: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.002,
            horizon: 500,
            noise_std_frac: 0.03,
            reward: RewardParams::default(),
            reward_mode: RewardMode::DemoPlusObj,
            seed: 0,
            d_pe: 8,
            init_perturbation: 0.02,
            max_fit_error: 0.03,
            runaway_distance: 0.5,
            base_max_linear: 0.5,
            base_max_angular: 2.0,
            hand_contact: ContactParams::fingertip_default(),
            table_contact: ContactParams::table_default(),
            palm_contact: true,
            table_height: Some(0.0),
            gravity: [0.0, 0.0, -9.81],
            settle_time: 0.3,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= crate::biomech::MAX_DT) {
            return Err(Error::config(format!("dt must be in (0, 0.02], got {}", self.dt)));
        }
        if self.horizon < 1 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(self.noise_std_frac >= 0.0 && self.noise_std_frac.is_finite()) {
            return Err(Error::config("noise_std_frac must be non-negative"));
        }
        if self.d_pe % 2 != 0 {
            return Err(Error::config(format!("d_pe must be even, got {}", self.d_pe)));
        }
        if !(self.init_perturbation >= 0.0 && self.base_max_linear > 0.0 && self.base_max_angular > 0.0) {
            return Err(Error::config("invalid perturbation or base rate caps"));
        }
        self.hand_contact.validate()?;
        self.table_contact.validate()?;
        self.reward.validate()
    }
}

/// Observation sections; [`Observation::to_vec`] gives the policy input.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Joint positions (hand then base) followed by their velocities.
    pub phi: Vec<f64>,
    /// Object position, rotation vector, linear velocity.
    pub psi: Vec<f64>,
    pub tau_enc: Vec<f64>,
    /// Reference keypoints for the current step (63 scalars).
    pub theta_hat: Vec<f64>,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.phi.len() + self.psi.len() + self.tau_enc.len() + self.theta_hat.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.phi);
        out.extend_from_slice(&self.psi);
        out.extend_from_slice(&self.tau_enc);
        out.extend_from_slice(&self.theta_hat);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub success_step: bool,
    pub obj_pos_err: f64,
    pub obj_ang_err: f64,
    /// Weighted mean distance of the reward keypoints to the reference (m).
    pub demo_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One simulated hand, object and table tracking one demonstration.
#[derive(Debug, Clone)]
pub struct HandEnv {
    config: EnvConfig,
    model: HandModel,
    weakness: WeaknessProfile,
    object_spec: ObjectSpec,
    demo: DemoTrajectory,
    init_state: HandState,
    init_object: RigidObject,
    support: Vec<Vector3<f64>>,
    noise_scale: Vec<f64>,
    state: HandState,
    object: RigidObject,
    step_index: usize,
    done: bool,
    rng: ChaCha8Rng,
    pose: HandPose,
}

impl HandEnv {
    pub fn new(
        config: EnvConfig,
        model: HandModel,
        weakness: WeaknessProfile,
        object_spec: ObjectSpec,
        demo: &DemoTrajectory,
    ) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        weakness.validate(model.num_muscles())?;
        demo.validate()?;
        let demo = if (demo.fps * config.dt - 1.0).abs() < 1e-9 {
            demo.clone()
        } else {
            resample(demo, config.dt)?
        };

        let fit = fit_pose(&model, &demo.frames[0].keypoints);
        if fit.mean_error > config.max_fit_error {
            return Err(Error::config(format!(
                "hand model cannot represent the first demo pose (mean keypoint error {:.4} m)",
                fit.mean_error
            )));
        }
        let frame0 = &demo.frames[0];
        let mut object = object_spec.build(frame0.object_pos, frame0.object_quat)?;
        let support = support_points(&object.shape, 12);
        if let Some(table_z) = config.table_height {
            let g = Vector3::from(config.gravity);
            let steps = (config.settle_time / config.dt).round() as usize;
            let bodies = HandBodies {
                inertia: &[],
                damping: &[],
                qd: &[],
                torque: &[],
            };
            for _ in 0..steps {
                let tc = detect_table_contacts(&object, &support, table_z);
                let res = resolve_contacts(
                    bodies,
                    &object,
                    g,
                    config.dt,
                    &[],
                    &config.hand_contact,
                    &tc,
                    &config.table_contact,
                )?;
                let applied: Vec<_> = tc
                    .iter()
                    .zip(&res.table)
                    .map(|(c, f)| AppliedForce {
                        point: c.position,
                        force: -f,
                    })
                    .collect();
                object = object_step(&object, &applied, g, config.dt)?;
            }
            object.linvel = Vector3::zeros();
            object.angvel = Vector3::zeros();
        }

        let noise_scale = noise_ranges(&model, &config)
            .into_iter()
            .map(|r| r * config.noise_std_frac)
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let pose = forward_kinematics(&model, &fit.state);
        Ok(HandEnv {
            config,
            weakness,
            object_spec,
            demo,
            init_state: fit.state.clone(),
            init_object: object.clone(),
            support,
            noise_scale,
            state: fit.state,
            object,
            step_index: 0,
            done: false,
            rng,
            pose,
            model,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &HandModel {
        &self.model
    }

    pub fn weakness(&self) -> &WeaknessProfile {
        &self.weakness
    }

    pub fn object_spec(&self) -> &ObjectSpec {
        &self.object_spec
    }

    pub fn demo(&self) -> &DemoTrajectory {
        &self.demo
    }

    pub fn state(&self) -> &HandState {
        &self.state
    }

    pub fn object(&self) -> &RigidObject {
        &self.object
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Current world keypoints of the hand.
    pub fn keypoints(&self) -> &[Vector3<f64>; NUM_KEYPOINTS] {
        &self.pose.keypoints
    }

    pub fn num_joints_reported(&self) -> usize {
        self.model.num_joints() + BASE_DOF
    }

    pub fn obs_dim(&self) -> usize {
        2 * self.num_joints_reported() + 9 + self.config.d_pe + 3 * NUM_KEYPOINTS
    }

    pub fn action_dim(&self) -> usize {
        self.model.num_muscles() + BASE_DOF
    }

    /// Digest of the observation and action layout.
    pub fn schema_digest(&self) -> String {
        let mut names = Vec::new();
        for j in &self.model.joints {
            names.push(format!("q:{}", j.name));
        }
        for k in 0..BASE_DOF {
            names.push(format!("q:base{k}"));
        }
        for j in &self.model.joints {
            names.push(format!("qd:{}", j.name));
        }
        for k in 0..BASE_DOF {
            names.push(format!("qd:base{k}"));
        }
        names.extend(["obj_p", "obj_rotvec", "obj_v"].map(String::from));
        names.push(format!("pe:{}", self.config.d_pe));
        names.push(format!("theta_hat:{}", 3 * NUM_KEYPOINTS));
        for m in &self.model.muscles {
            names.push(format!("u:{}", m.name));
        }
        names.push(format!("base_rate:{BASE_DOF}"));
        let text = format!("obs={};act={};{}", self.obs_dim(), self.action_dim(), names.join(","));
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn frame(&self, index: usize) -> &DemoFrame {
        &self.demo.frames[index.min(self.demo.frames.len() - 1)]
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.init_state.clone();
        let h = self.config.init_perturbation;
        for (j, joint) in self.model.joints.iter().enumerate() {
            let delta = if h > 0.0 { self.rng.random_range(-h..=h) } else { 0.0 };
            state.q[j] = (state.q[j] + delta).clamp(joint.lower, joint.upper);
        }
        state.qd.iter_mut().for_each(|v| *v = 0.0);
        state.activation.iter_mut().for_each(|a| *a = 0.0);
        state.base_vel = [0.0; BASE_DOF];
        self.state = state;
        self.object = self.init_object.clone();
        self.step_index = 0;
        self.done = false;
        self.pose = forward_kinematics(&self.model, &self.state);
        self.observe()
    }

    fn observe(&mut self) -> Result<Observation> {
        let s = &self.state;
        let mut phi = Vec::with_capacity(2 * self.num_joints_reported());
        phi.extend_from_slice(&s.q);
        phi.extend_from_slice(&s.base_pose);
        phi.extend_from_slice(&s.qd);
        phi.extend_from_slice(&s.base_vel);
        let o = &self.object;
        let rv = o.rotation_vector();
        let mut psi = vec![o.position.x, o.position.y, o.position.z, rv.x, rv.y, rv.z];
        psi.extend(o.linvel.iter());
        if self.config.noise_std_frac > 0.0 {
            for (v, sigma) in phi.iter_mut().chain(psi.iter_mut()).zip(&self.noise_scale) {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *v += sigma * z;
            }
        }
        let tau_enc = positional_encoding(self.step_index, self.config.d_pe)?;
        let theta_hat = self.frame(self.step_index).flat_keypoints();
        Ok(Observation {
            phi,
            psi,
            tau_enc,
            theta_hat,
        })
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.step_with_torques(action, None)
    }

    /// Steps with additional joint torques (e.g. from an assistive device)
    /// entering the same dynamics step as the muscles.
    pub fn step_with_torques(&mut self, action: &[f64], external: Option<&[f64]>) -> Result<StepResult> {
        if self.done {
            return Err(Error::usage("step called on a finished episode; call reset first"));
        }
        let m = self.model.num_muscles();
        let n = self.model.num_joints();
        if action.len() != m + BASE_DOF {
            return Err(Error::usage(format!(
                "action has {} entries, expected {}",
                action.len(),
                m + BASE_DOF
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::numerical("non-finite action"));
        }
        if let Some(ext) = external {
            if ext.len() != n {
                return Err(Error::usage(format!("external torque has {} entries, expected {n}", ext.len())));
            }
        }
        let dt = self.config.dt;
        let excitation: Vec<f64> = action[..m].iter().map(|u| u.clamp(0.0, 1.0)).collect();
        let mut state = self.state.clone();
        state.activation = activation_step(&self.model, &state.activation, &excitation, dt)?;
        for k in 0..BASE_DOF {
            let cap = if k < 3 {
                self.config.base_max_linear
            } else {
                self.config.base_max_angular
            };
            state.base_vel[k] = action[m + k].clamp(-1.0, 1.0) * cap;
        }
        let mut torque = muscle_torques(&self.model, &state.activation, &self.weakness)?;
        if let Some(ext) = external {
            for (t, e) in torque.iter_mut().zip(ext) {
                *t += e;
            }
        }

        let (hand_contacts, table_contacts) = self.contacts(&state)?;
        let gravity = Vector3::from(self.config.gravity);
        let inertia: Vec<f64> = self.model.joints.iter().map(|j| j.inertia).collect();
        let damping: Vec<f64> = self.model.joints.iter().map(|j| j.damping).collect();
        let bodies = HandBodies {
            inertia: &inertia,
            damping: &damping,
            qd: &state.qd,
            torque: &torque,
        };
        let forces = resolve_contacts(
            bodies,
            &self.object,
            gravity,
            dt,
            &hand_contacts,
            &self.config.hand_contact,
            &table_contacts,
            &self.config.table_contact,
        )?;
        let mut contact_torque = vec![0.0; n];
        let mut applied = Vec::with_capacity(hand_contacts.len() + table_contacts.len());
        for (c, f) in hand_contacts.iter().zip(&forces.hand) {
            for (j, col) in &c.jacobian {
                contact_torque[*j] += col.dot(f);
            }
            applied.push(AppliedForce {
                point: c.contact.position,
                force: -f,
            });
        }
        for (c, f) in table_contacts.iter().zip(&forces.table) {
            applied.push(AppliedForce {
                point: c.position,
                force: -f,
            });
        }

        let mut next = dynamics_step(&self.model, &state, &torque, &contact_torque, dt)?;
        for k in 0..BASE_DOF {
            next.base_pose[k] += dt * next.base_vel[k];
        }
        let object = object_step(&self.object, &applied, gravity, dt)?;
        self.state = next;
        self.object = object;
        self.step_index += 1;
        self.pose = forward_kinematics(&self.model, &self.state);

        let frame = self.frame(self.step_index);
        let ref_kp = select_keypoints(&frame.keypoints);
        let kp = select_keypoints(&self.pose.keypoints);
        let params = &self.config.reward;
        let demo_err = demo_error(&kp, &ref_kp, &params.keypoint_weights);
        let r_demo = reward_demo(&kp, &ref_kp, params);
        let obj_pos_err = (self.object.position - frame.object_pos).norm();
        let obj_ang_err = orientation_angle(self.object.orientation.as_ref(), frame.object_quat.as_ref());
        let reward = match self.config.reward_mode {
            RewardMode::DemoOnly => r_demo,
            RewardMode::DemoPlusObj => {
                r_demo
                    + reward_obj(
                        &self.object.position,
                        &self.object.orientation,
                        &frame.object_pos,
                        &frame.object_quat,
                        params,
                    )
            }
        };
        let info = StepInfo {
            success_step: obj_pos_err <= params.pos_tol,
            obj_pos_err,
            obj_ang_err,
            demo_err,
        };
        if !(reward.is_finite() && obj_pos_err.is_finite()) {
            return Err(Error::numerical(format!("non-finite state at step {}", self.step_index)));
        }
        self.done = self.step_index >= self.config.horizon || obj_pos_err > self.config.runaway_distance;
        let obs = self.observe()?;
        Ok(StepResult {
            obs,
            reward,
            done: self.done,
            info,
        })
    }

    /// Fingertip and palm contacts at the current pose (with the new base
    /// velocity), and object–table contacts.
    fn contacts(&self, state: &HandState) -> Result<(Vec<HandContact>, Vec<crate::world::ContactPoint>)> {
        let pose = &self.pose;
        let mut spheres = Vec::with_capacity(NUM_FINGERS + 1);
        let mut chains = Vec::with_capacity(NUM_FINGERS + 1);
        for f in 0..NUM_FINGERS {
            spheres.push((pose.fingertip(f), self.model.fingertip_radius, ContactSite::Fingertip(f)));
            chains.push(Some(f));
        }
        if self.config.palm_contact {
            if let Some(palm) = &self.model.palm_sphere {
                spheres.push((pose.palm_point(&palm.center), palm.radius, ContactSite::Palm));
                chains.push(None);
            }
        }
        // Cheap broad phase against the object's bounding sphere.
        let reach = match self.object.shape {
            crate::world::Shape::Cylinder { radius, height } => (radius * radius + 0.25 * height * height).sqrt(),
            crate::world::Shape::Box { half_extents } => Vector3::from(half_extents).norm(),
        };
        let mut hand_contacts = Vec::new();
        for ((center, radius, site), chain) in spheres.into_iter().zip(chains) {
            if (center - self.object.position).norm() > reach + radius {
                continue;
            }
            let joints = chain_joints(&self.model, chain);
            let jacobian = point_jacobian(pose, &joints, &center);
            let base_velocity = base_point_velocity(state, &center);
            let mut velocity = base_velocity;
            for (j, col) in &jacobian {
                velocity += col * state.qd[*j];
            }
            let sphere = Sphere {
                center,
                radius,
                velocity,
                site,
            };
            for contact in detect_contacts(&[sphere], &self.object)? {
                hand_contacts.push(HandContact {
                    contact,
                    jacobian: jacobian.clone(),
                    base_velocity,
                });
            }
        }
        let table = match self.config.table_height {
            Some(z) => detect_table_contacts(&self.object, &self.support, z),
            None => Vec::new(),
        };
        Ok((hand_contacts, table))
    }
}

/// Documented per-dimension ranges of the noisy observation entries
/// (phi then psi).
pub fn noise_ranges(model: &HandModel, config: &EnvConfig) -> Vec<f64> {
    let mut r = Vec::new();
    r.extend(model.joints.iter().map(|j| j.upper - j.lower));
    r.extend([1.0, 1.0, 1.0, std::f64::consts::PI, std::f64::consts::PI, std::f64::consts::PI]);
    r.extend(model.joints.iter().map(|j| 10.0 * (j.upper - j.lower)));
    r.extend([2.0 * config.base_max_linear; 3]);
    r.extend([2.0 * config.base_max_angular; 3]);
    r.extend([1.0, 1.0, 1.0]);
    r.extend([std::f64::consts::PI; 3]);
    r.extend([2.0, 2.0, 2.0]);
    r
}
