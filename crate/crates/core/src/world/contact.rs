use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::object::{RigidObject, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Normal stiffness (N/m).
    pub stiffness: f64,
    /// Normal damping (N·s/m).
    pub damping: f64,
    /// Coulomb friction coefficient.
    pub friction: f64,
    /// Slip speed below which friction is viscous (m/s).
    pub reg_velocity: f64,
}

impl ContactParams {
    pub fn fingertip_default() -> Self {
        ContactParams {
            stiffness: 3000.0,
            damping: 10.0,
            friction: 1.0,
            reg_velocity: 1e-4,
        }
    }

    pub fn table_default() -> Self {
        ContactParams {
            stiffness: 5000.0,
            damping: 20.0,
            friction: 0.6,
            reg_velocity: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.stiffness, self.damping, self.friction, self.reg_velocity]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::config(format!("contact parameters must be positive: {self:?}")))
        }
    }
}

/// What the object is touching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactSite {
    Fingertip(usize),
    Palm,
    Table,
}

/// A sphere attached to the hand, with the velocity of its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub velocity: Vector3<f64>,
    pub site: ContactSite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    /// Point on the object surface (world).
    pub position: Vector3<f64>,
    /// Unit normal pointing out of the object, toward the other body.
    pub normal: Vector3<f64>,
    /// Penetration depth (m), >= 0.
    pub depth: f64,
    /// Velocity of the other body relative to the object at the contact.
    pub rel_velocity: Vector3<f64>,
    pub site: ContactSite,
}

/// Closest feature of the shape surface to a local point: (surface point,
/// outward normal, signed distance; negative inside).
pub(crate) fn closest_surface(shape: &Shape, p: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, f64) {
    match *shape {
        Shape::Box { half_extents: h } => {
            let h = Vector3::from(h);
            let q = p.zip_map(&h, |v, e| v.clamp(-e, e));
            let diff = p - q;
            let d = diff.norm();
            if d > 0.0 {
                return (q, diff / d, d);
            }
            // Inside or on the surface: nearest face.
            let (axis, gap) = (0..3)
                .map(|i| (i, h[i] - p[i].abs()))
                .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
            let sign = if p[axis] >= 0.0 { 1.0 } else { -1.0 };
            let mut n = Vector3::zeros();
            n[axis] = sign;
            let mut s = *p;
            s[axis] = sign * h[axis];
            (s, n, -gap)
        }
        Shape::Cylinder { radius, height } => {
            let half = 0.5 * height;
            let rho = (p.x * p.x + p.y * p.y).sqrt();
            let u = if rho > 0.0 {
                Vector3::new(p.x / rho, p.y / rho, 0.0)
            } else {
                Vector3::x()
            };
            if rho > radius || p.z.abs() > half {
                let q = u * rho.min(radius) + Vector3::z() * p.z.clamp(-half, half);
                let diff = p - q;
                let d = diff.norm();
                return (q, diff / d, d);
            }
            let side_gap = radius - rho;
            let cap_gap = half - p.z.abs();
            if side_gap < cap_gap {
                (u * radius + Vector3::z() * p.z, u, -side_gap)
            } else {
                let sign = if p.z >= 0.0 { 1.0 } else { -1.0 };
                (Vector3::new(p.x, p.y, sign * half), Vector3::z() * sign, -cap_gap)
            }
        }
    }
}

/// Sphere–object penetration tests; one contact per penetrating sphere.
pub fn detect_contacts(spheres: &[Sphere], object: &RigidObject) -> Result<Vec<ContactPoint>> {
    object.shape.validate()?;
    let mut out = Vec::new();
    for s in spheres {
        let local = object.to_local(&s.center);
        let (surface, normal, dist) = closest_surface(&object.shape, &local);
        let depth = s.radius - dist;
        if depth <= 0.0 {
            continue;
        }
        let position = object.to_world(&surface);
        let normal = object.orientation.transform_vector(&normal);
        out.push(ContactPoint {
            position,
            normal,
            depth,
            rel_velocity: s.velocity - object.point_velocity(&position),
            site: s.site,
        });
    }
    Ok(out)
}

/// Body-frame points used for object–table contact.
pub fn support_points(shape: &Shape, rim_samples: usize) -> Vec<Vector3<f64>> {
    match *shape {
        Shape::Box { half_extents: [a, b, c] } => {
            let mut pts = Vec::with_capacity(8);
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        pts.push(Vector3::new(sx * a, sy * b, sz * c));
                    }
                }
            }
            pts
        }
        Shape::Cylinder { radius, height } => {
            let mut pts = Vec::with_capacity(2 * rim_samples);
            for z in [-0.5 * height, 0.5 * height] {
                for k in 0..rim_samples {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / rim_samples as f64;
                    pts.push(Vector3::new(radius * th.cos(), radius * th.sin(), z));
                }
            }
            pts
        }
    }
}

/// Contacts between the object's support points and a horizontal table at
/// `table_z`. The normal points out of the object into the table.
pub fn detect_table_contacts(object: &RigidObject, support: &[Vector3<f64>], table_z: f64) -> Vec<ContactPoint> {
    support
        .iter()
        .filter_map(|local| {
            let p = object.to_world(local);
            let depth = table_z - p.z;
            (depth > 0.0).then(|| ContactPoint {
                position: p,
                normal: -Vector3::z(),
                depth,
                rel_velocity: -object.point_velocity(&p),
                site: ContactSite::Table,
            })
        })
        .collect()
}

/// Force on the other body at one contact, plus its derivatives with respect
/// to the relative displacement and velocity (used by the implicit step).
#[derive(Debug, Clone, Copy)]
pub struct ContactResponse {
    pub force: Vector3<f64>,
    pub d_force_d_disp: Matrix3<f64>,
    pub d_force_d_vel: Matrix3<f64>,
}

/// Compliant normal law `f_n = max(0, k d - c v_n)` and regularized Coulomb
/// friction `f_t = -mu f_n v_t / max(|v_t|, v_reg)`.
pub fn contact_response(c: &ContactPoint, params: &ContactParams) -> ContactResponse {
    let n = c.normal;
    let vn = n.dot(&c.rel_velocity);
    let fn_ = params.stiffness * c.depth - params.damping * vn;
    if fn_ <= 0.0 {
        return ContactResponse {
            force: Vector3::zeros(),
            d_force_d_disp: Matrix3::zeros(),
            d_force_d_vel: Matrix3::zeros(),
        };
    }
    let nn = n * n.transpose();
    let tangent_proj = Matrix3::identity() - nn;
    let vt = c.rel_velocity - vn * n;
    let slip = vt.norm();
    let limit = params.friction * fn_;
    let (ft, dft) = if slip > params.reg_velocity {
        let t = vt / slip;
        (-limit * t, -(limit / slip) * (tangent_proj - t * t.transpose()))
    } else {
        let gain = limit / params.reg_velocity;
        (-gain * vt, -gain * tangent_proj)
    };
    ContactResponse {
        force: fn_ * n + ft,
        d_force_d_disp: -params.stiffness * nn,
        d_force_d_vel: -params.damping * nn + dft,
    }
}

/// Force on the other body for each contact; the object receives the negation.
pub fn contact_forces(contacts: &[ContactPoint], params: &ContactParams) -> Vec<Vector3<f64>> {
    contacts
        .iter()
        .map(|c| contact_response(c, params).force)
        .collect()
}
