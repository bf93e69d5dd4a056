use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};

use super::model::{keypoint_index, HandModel, HandState, BASE_DOF, KP_WRIST, NUM_FINGERS, NUM_KEYPOINTS};

/// Rotation `Rx(rx) * Ry(ry) * Rz(rz)` (intrinsic XYZ Euler angles).
pub fn euler_xyz(angles: [f64; 3]) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), angles[0]);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), angles[1]);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), angles[2]);
    (rx * ry * rz).into_inner()
}

/// Inverse of [`euler_xyz`], with the pitch taken in [-pi/2, pi/2].
pub fn euler_from_matrix(r: &Matrix3<f64>) -> [f64; 3] {
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    [a, b, c]
}

/// World angular velocity produced by XYZ Euler angle rates.
pub fn euler_rates_to_omega(angles: [f64; 3], rates: [f64; 3]) -> Vector3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), angles[0]);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), angles[1]);
    Vector3::x() * rates[0] + rx * Vector3::y() * rates[1] + (rx * ry) * Vector3::z() * rates[2]
}

fn axis_rotation(axis: &[f64; 3], angle: f64) -> Matrix3<f64> {
    let axis = Unit::new_unchecked(Vector3::from(*axis));
    Rotation3::from_axis_angle(&axis, angle).into_inner()
}

/// Result of forward kinematics: keypoints plus everything needed for
/// Jacobians of points attached to the hand.
#[derive(Debug, Clone)]
pub struct HandPose {
    pub keypoints: [Vector3<f64>; NUM_KEYPOINTS],
    /// World position of each joint's rotation center.
    pub joint_origin: Vec<Vector3<f64>>,
    /// World rotation axis of each joint.
    pub joint_axis: Vec<Vector3<f64>>,
    pub palm_rotation: Matrix3<f64>,
    pub wrist: Vector3<f64>,
}

impl HandPose {
    pub fn fingertip(&self, finger: usize) -> Vector3<f64> {
        self.keypoints[keypoint_index(finger, 3)]
    }

    pub fn palm_point(&self, local: &[f64; 3]) -> Vector3<f64> {
        self.wrist + self.palm_rotation * Vector3::from(*local)
    }

    /// Flattened keypoints, 63 scalars in keypoint order.
    pub fn flat_keypoints(&self) -> Vec<f64> {
        self.keypoints.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }
}

pub fn forward_kinematics(model: &HandModel, state: &HandState) -> HandPose {
    let n = model.num_joints();
    let mut joint_origin = vec![Vector3::zeros(); n];
    let mut joint_axis = vec![Vector3::zeros(); n];
    let mut keypoints = [Vector3::zeros(); NUM_KEYPOINTS];

    let bp = &state.base_pose;
    let wrist = Vector3::new(bp[0], bp[1], bp[2]);
    let mut palm = euler_xyz([bp[3], bp[4], bp[5]]);
    for j in model.wrist_joints() {
        let joint = &model.joints[j];
        joint_origin[j] = wrist;
        joint_axis[j] = palm * Vector3::from(joint.axis);
        palm *= axis_rotation(&joint.axis, state.q[j]);
    }
    keypoints[KP_WRIST] = wrist;

    for f in 0..NUM_FINGERS {
        let finger = &model.fingers[f];
        let joints = model.finger_joints(f);
        let mut rot = palm * Rotation3::from_scaled_axis(Vector3::from(finger.base_rotation)).into_inner();
        let mut p = wrist + palm * Vector3::from(finger.base);
        keypoints[keypoint_index(f, 0)] = p;
        for seg in 0..3 {
            for &j in joints.iter().filter(|&&j| model.joints[j].segment == seg) {
                let joint = &model.joints[j];
                joint_origin[j] = p;
                joint_axis[j] = rot * Vector3::from(joint.axis);
                rot *= axis_rotation(&joint.axis, state.q[j]);
            }
            p += rot * Vector3::new(finger.bones[seg], 0.0, 0.0);
            keypoints[keypoint_index(f, seg + 1)] = p;
        }
    }

    HandPose {
        keypoints,
        joint_origin,
        joint_axis,
        palm_rotation: palm,
        wrist,
    }
}

/// Joints whose motion moves a point attached to `finger` (`None` = palm).
pub fn chain_joints(model: &HandModel, finger: Option<usize>) -> Vec<usize> {
    let mut joints = model.wrist_joints();
    if let Some(f) = finger {
        joints.extend(model.finger_joints(f));
    }
    joints
}

/// Point Jacobian column for each chain joint: `axis x (point - origin)`.
pub fn point_jacobian(
    pose: &HandPose,
    chain: &[usize],
    point: &Vector3<f64>,
) -> Vec<(usize, Vector3<f64>)> {
    chain
        .iter()
        .map(|&j| (j, pose.joint_axis[j].cross(&(point - pose.joint_origin[j]))))
        .collect()
}

/// Velocity of a point rigidly attached to the base frame, caused by the
/// base translation and Euler rates.
pub fn base_point_velocity(state: &HandState, point: &Vector3<f64>) -> Vector3<f64> {
    let bp = &state.base_pose;
    let bv = &state.base_vel;
    let omega = euler_rates_to_omega([bp[3], bp[4], bp[5]], [bv[3], bv[4], bv[5]]);
    let wrist = Vector3::new(bp[0], bp[1], bp[2]);
    Vector3::new(bv[0], bv[1], bv[2]) + omega.cross(&(point - wrist))
}

/// Canonical rest keypoints: all joints at zero, base at the origin.
pub fn rest_keypoints(model: &HandModel) -> [Vector3<f64>; NUM_KEYPOINTS] {
    let mut state = HandState::rest(model);
    state.q.iter_mut().for_each(|q| *q = 0.0);
    forward_kinematics(model, &state).keypoints
}

/// Least-squares fit of base pose and joint angles to 21 keypoints.
#[derive(Debug, Clone)]
pub struct PoseFit {
    pub state: HandState,
    /// Mean keypoint distance after the fit (m).
    pub mean_error: f64,
}

/// Levenberg–Marquardt fit of the base pose and joint angles, started from a
/// Kabsch alignment of the palm keypoints.
pub fn fit_pose(model: &HandModel, target: &[Vector3<f64>; NUM_KEYPOINTS]) -> PoseFit {
    let n = model.num_joints();
    let dim = BASE_DOF + n;
    let mut state = HandState::rest(model);
    let rotation = palm_alignment(model, target);
    let euler = euler_from_matrix(&rotation);
    state.base_pose = [
        target[KP_WRIST].x,
        target[KP_WRIST].y,
        target[KP_WRIST].z,
        euler[0],
        euler[1],
        euler[2],
    ];

    let residual = |s: &HandState| -> DVector<f64> {
        let pose = forward_kinematics(model, s);
        DVector::from_iterator(
            3 * NUM_KEYPOINTS,
            pose.keypoints.iter().zip(target).flat_map(|(p, t)| {
                let d = p - t;
                [d.x, d.y, d.z]
            }),
        )
    };
    let set = |s: &mut HandState, i: usize, v: f64| {
        if i < BASE_DOF {
            s.base_pose[i] = v;
        } else {
            let j = &model.joints[i - BASE_DOF];
            s.q[i - BASE_DOF] = v.clamp(j.lower, j.upper);
        }
    };
    let get = |s: &HandState, i: usize| if i < BASE_DOF { s.base_pose[i] } else { s.q[i - BASE_DOF] };

    let mut r = residual(&state);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let h = 1e-7;
    for _ in 0..200 {
        if cost < 1e-24 {
            break;
        }
        let mut jac = DMatrix::zeros(3 * NUM_KEYPOINTS, dim);
        for i in 0..dim {
            let x0 = get(&state, i);
            let mut plus = state.clone();
            plus.base_pose = state.base_pose;
            if i < BASE_DOF {
                plus.base_pose[i] = x0 + h;
            } else {
                plus.q[i - BASE_DOF] = x0 + h;
            }
            let mut minus = state.clone();
            if i < BASE_DOF {
                minus.base_pose[i] = x0 - h;
            } else {
                minus.q[i - BASE_DOF] = x0 - h;
            }
            let col = (residual(&plus) - residual(&minus)) / (2.0 * h);
            jac.set_column(i, &col);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for i in 0..dim {
                a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&jtr);
            let mut trial = state.clone();
            for i in 0..dim {
                set(&mut trial, i, get(&state, i) - step[i]);
            }
            let tr = residual(&trial);
            let tc = tr.norm_squared();
            if tc < cost {
                state = trial;
                r = tr;
                cost = tc;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let pose = forward_kinematics(model, &state);
    let mean_error = pose
        .keypoints
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).norm())
        .sum::<f64>()
        / NUM_KEYPOINTS as f64;
    PoseFit { state, mean_error }
}

/// Rotation aligning the rest palm layout (wrist and finger bases) with the target.
fn palm_alignment(model: &HandModel, target: &[Vector3<f64>; NUM_KEYPOINTS]) -> Matrix3<f64> {
    let rest = rest_keypoints(model);
    let idx: Vec<usize> = std::iter::once(KP_WRIST)
        .chain((0..NUM_FINGERS).map(|f| keypoint_index(f, 0)))
        .collect();
    let centroid = |pts: &[Vector3<f64>; NUM_KEYPOINTS]| {
        idx.iter().map(|&i| pts[i]).sum::<Vector3<f64>>() / idx.len() as f64
    };
    let (cq, cp) = (centroid(&rest), centroid(target));
    let mut h = Matrix3::zeros();
    for &i in &idx {
        h += (rest[i] - cq) * (target[i] - cp).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    v * fix * u.transpose()
}
