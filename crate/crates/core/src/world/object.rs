use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Axis along the local z axis, centered at the body origin.
    Cylinder { radius: f64, height: f64 },
    Box { half_extents: [f64; 3] },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Cylinder { radius, height } => *radius > 0.0 && *height > 0.0,
            Shape::Box { half_extents } => half_extents.iter().all(|&h| h > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("degenerate object shape {self:?}")))
        }
    }

    /// Diagonal body-frame inertia of a solid of this shape (kg·m²).
    pub fn solid_inertia(&self, mass: f64) -> [f64; 3] {
        match *self {
            Shape::Cylinder { radius, height } => {
                let side = mass * (3.0 * radius * radius + height * height) / 12.0;
                [side, side, 0.5 * mass * radius * radius]
            }
            Shape::Box { half_extents: [a, b, c] } => [
                mass * (b * b + c * c) / 3.0,
                mass * (a * a + c * c) / 3.0,
                mass * (a * a + b * b) / 3.0,
            ],
        }
    }

    /// Distance from the body origin to the bottom when standing upright.
    pub fn rest_height(&self) -> f64 {
        match *self {
            Shape::Cylinder { height, .. } => 0.5 * height,
            Shape::Box { half_extents } => half_extents[2],
        }
    }
}

/// Named object description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: Shape,
    pub mass: f64,
}

impl ObjectSpec {
    pub fn chef_can() -> Self {
        ObjectSpec {
            name: "chef_can".into(),
            shape: Shape::Cylinder {
                radius: 0.051,
                height: 0.139,
            },
            mass: 0.4,
        }
    }

    pub fn tomato_can() -> Self {
        ObjectSpec {
            name: "tomato_can".into(),
            shape: Shape::Cylinder {
                radius: 0.037,
                height: 0.084,
            },
            mass: 0.3,
        }
    }

    pub fn sugar_box() -> Self {
        ObjectSpec {
            name: "sugar_box".into(),
            shape: Shape::Box {
                half_extents: [0.022, 0.045, 0.088],
            },
            mass: 0.5,
        }
    }

    pub fn presets() -> Vec<ObjectSpec> {
        vec![Self::chef_can(), Self::tomato_can(), Self::sugar_box()]
    }

    pub fn build(&self, position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Result<RigidObject> {
        self.shape.validate()?;
        if !(self.mass > 0.0) {
            return Err(Error::config(format!("object {} needs positive mass", self.name)));
        }
        Ok(RigidObject {
            shape: self.shape.clone(),
            mass: self.mass,
            inertia: self.shape.solid_inertia(self.mass),
            position,
            orientation,
            linvel: Vector3::zeros(),
            angvel: Vector3::zeros(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidObject {
    pub shape: Shape,
    pub mass: f64,
    /// Diagonal body-frame inertia (kg·m²).
    pub inertia: [f64; 3],
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    /// World-frame linear velocity (m/s).
    pub linvel: Vector3<f64>,
    /// World-frame angular velocity (rad/s).
    pub angvel: Vector3<f64>,
}

/// Force applied at a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedForce {
    pub point: Vector3<f64>,
    pub force: Vector3<f64>,
}

impl RigidObject {
    pub fn world_inertia(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix().into_inner();
        r * Matrix3::from_diagonal(&Vector3::from(self.inertia)) * r.transpose()
    }

    pub fn world_inertia_inv(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix().into_inner();
        let inv = Vector3::new(1.0 / self.inertia[0], 1.0 / self.inertia[1], 1.0 / self.inertia[2]);
        r * Matrix3::from_diagonal(&inv) * r.transpose()
    }

    pub fn point_velocity(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.linvel + self.angvel.cross(&(point - self.position))
    }

    pub fn to_local(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse_transform_vector(&(point - self.position))
    }

    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation.transform_vector(local)
    }

    /// Orientation as a rotation vector (axis times angle, angle in [0, pi]).
    pub fn rotation_vector(&self) -> Vector3<f64> {
        rotation_vector(&self.orientation)
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.linvel.norm_squared() + 0.5 * self.angvel.dot(&(self.world_inertia() * self.angvel))
    }
}

pub fn rotation_vector(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    // Pick the hemisphere with w >= 0 so the angle stays in [0, pi].
    let q = if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    };
    q.scaled_axis()
}

/// Newton–Euler step, semi-implicit Euler: velocities first from the summed
/// impulses and gravity, then the pose from the new velocities. The
/// orientation is advanced with the exponential map and renormalized.
pub fn object_step(
    object: &RigidObject,
    forces: &[AppliedForce],
    gravity: Vector3<f64>,
    dt: f64,
) -> Result<RigidObject> {
    if !(dt > 0.0 && dt <= crate::biomech::MAX_DT) {
        return Err(Error::usage(format!("object step needs dt in (0, 0.02], got {dt}")));
    }
    let mut total_force = object.mass * gravity;
    let mut total_torque = Vector3::zeros();
    for f in forces {
        if !(f.force.iter().all(|v| v.is_finite()) && f.point.iter().all(|v| v.is_finite())) {
            return Err(Error::numerical("non-finite force on object"));
        }
        total_force += f.force;
        total_torque += (f.point - object.position).cross(&f.force);
    }
    let inertia = object.world_inertia();
    let gyro = object.angvel.cross(&(inertia * object.angvel));
    let mut next = object.clone();
    next.linvel = object.linvel + dt * total_force / object.mass;
    next.angvel = object.angvel + dt * (object.world_inertia_inv() * (total_torque - gyro));
    next.position = object.position + dt * next.linvel;
    let spin = UnitQuaternion::from_scaled_axis(next.angvel * dt);
    next.orientation = UnitQuaternion::new_normalize((spin * object.orientation).into_inner());
    Ok(next)
}

/// Geodesic angle between two orientations, `2 acos |<q1, q2>|` in [0, pi].
/// Non-unit inputs are normalized with a warning.
pub fn orientation_angle(q1: &Quaternion<f64>, q2: &Quaternion<f64>) -> f64 {
    let normalize = |q: &Quaternion<f64>| {
        let n = q.norm();
        if (n - 1.0).abs() > 1e-9 {
            log::warn!("orientation_angle: normalizing quaternion with norm {n}");
            q / n
        } else {
            *q
        }
    };
    let (a, b) = (normalize(q1), normalize(q2));
    2.0 * a.dot(&b).abs().min(1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn can() -> RigidObject {
        ObjectSpec::tomato_can()
            .build(Vector3::new(0.0, 0.0, 1.0), UnitQuaternion::identity())
            .unwrap()
    }

    #[test]
    fn coasting_without_forces() {
        let mut o = can();
        o.linvel = Vector3::new(0.1, -0.2, 0.3);
        let next = object_step(&o, &[], Vector3::zeros(), 0.01).unwrap();
        assert!((next.position - (o.position + 0.01 * o.linvel)).norm() < 1e-15);
        assert_eq!(next.orientation, o.orientation);
    }

    #[test]
    fn free_fall_velocity() {
        let mut o = can();
        let g = Vector3::new(0.0, 0.0, -9.81);
        for _ in 0..250 {
            o = object_step(&o, &[], g, 0.002).unwrap();
        }
        assert!((o.linvel.z + 4.905).abs() < 1e-12, "{}", o.linvel.z);
    }

    #[test]
    fn off_center_force_spin_up() {
        let o = can();
        let r = Vector3::new(0.037, 0.0, 0.01);
        let f = Vector3::new(0.0, 2.0, 0.5);
        let dt = 0.002;
        let next = object_step(
            &o,
            &[AppliedForce {
                point: o.position + r,
                force: f,
            }],
            Vector3::zeros(),
            dt,
        )
        .unwrap();
        // Scalar oracle with the diagonal inertia of an upright cylinder.
        let torque = [r.y * f.z - r.z * f.y, r.z * f.x - r.x * f.z, r.x * f.y - r.y * f.x];
        for k in 0..3 {
            let expected = torque[k] / o.inertia[k] * dt;
            assert!((next.angvel[k] - expected).abs() < 1e-13);
        }
        assert!((next.linvel - f / o.mass * dt).norm() < 1e-15);
    }

    #[test]
    fn quaternion_stays_normalized() {
        let mut o = can();
        o.angvel = Vector3::new(3.0, -7.0, 11.0);
        for _ in 0..10_000 {
            o = object_step(&o, &[], Vector3::zeros(), 0.002).unwrap();
            assert!((o.orientation.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite_force() {
        let o = can();
        let bad = AppliedForce {
            point: o.position,
            force: Vector3::new(f64::NAN, 0.0, 0.0),
        };
        assert!(matches!(
            object_step(&o, &[bad], Vector3::zeros(), 0.002),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn orientation_angle_cases() {
        let id = UnitQuaternion::<f64>::identity().into_inner();
        assert_eq!(orientation_angle(&id, &id), 0.0);
        assert_eq!(orientation_angle(&id, &(-id)), 0.0);
        let quarter = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI / 2.0).into_inner();
        assert!((orientation_angle(&id, &quarter) - PI / 2.0).abs() < 1e-12);
        assert!((orientation_angle(&quarter, &id) - PI / 2.0).abs() < 1e-12);
        assert!((orientation_angle(&(id * 2.0), &quarter) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_vector_has_bounded_angle() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.5);
        let flipped = UnitQuaternion::new_unchecked(-q.into_inner());
        let a = rotation_vector(&q);
        let b = rotation_vector(&flipped);
        assert!((a - b).norm() < 1e-12);
        assert!((a - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn invalid_shapes_rejected() {
        let spec = ObjectSpec {
            name: "flat".into(),
            shape: Shape::Box {
                half_extents: [0.1, 0.0, 0.1],
            },
            mass: 1.0,
        };
        assert!(matches!(
            spec.build(Vector3::zeros(), UnitQuaternion::identity()),
            Err(Error::Config(_))
        ));
    }
}
