use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::contact::{contact_response, ContactParams, ContactPoint, ContactResponse};
use super::object::RigidObject;
use crate::error::{Error, Result};

/// A contact between the object and a point carried by the hand.
#[derive(Debug, Clone)]
pub struct HandContact {
    pub contact: ContactPoint,
    /// `(joint, d point / d q_joint)` for every joint moving the hand point.
    pub jacobian: Vec<(usize, Vector3<f64>)>,
    /// Velocity of the hand point caused by the kinematic base.
    pub base_velocity: Vector3<f64>,
}

/// Joint-space quantities of the hand needed for the coupled step.
#[derive(Debug, Clone, Copy)]
pub struct HandBodies<'a> {
    pub inertia: &'a [f64],
    pub damping: &'a [f64],
    pub qd: &'a [f64],
    /// Muscle plus any external non-contact torque.
    pub torque: &'a [f64],
}

/// Contact forces (on the hand point / table, object gets the negation)
/// obtained from a linearly implicit Euler step of the joint + object system.
#[derive(Debug, Clone)]
pub struct ResolvedForces {
    pub hand: Vec<Vector3<f64>>,
    pub table: Vec<Vector3<f64>>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Solves `(M - dt B) u+ = M u_free + dt J^T (f0 + B b - D v0)` for the
/// post-step generalized velocities of the joints touched by contacts and of
/// the object, where `B = dt K + D` linearizes each contact law around the
/// current state. The returned forces are the linearized contact forces at
/// the new velocities; applying them explicitly through `dynamics_step` and
/// `object_step` reproduces the implicit solution.
pub fn resolve_contacts(
    hand: HandBodies<'_>,
    object: &RigidObject,
    gravity: Vector3<f64>,
    dt: f64,
    hand_contacts: &[HandContact],
    hand_params: &ContactParams,
    table_contacts: &[ContactPoint],
    table_params: &ContactParams,
) -> Result<ResolvedForces> {
    if hand_contacts.is_empty() && table_contacts.is_empty() {
        return Ok(ResolvedForces {
            hand: Vec::new(),
            table: Vec::new(),
        });
    }

    // Compact index over joints that appear in any contact Jacobian.
    let mut active: Vec<usize> = hand_contacts
        .iter()
        .flat_map(|c| c.jacobian.iter().map(|(j, _)| *j))
        .collect();
    active.sort_unstable();
    active.dedup();
    let nh = active.len();
    let dim = nh + 6;
    let slot = |j: usize| active.binary_search(&j).expect("active joint");

    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);

    for (k, &j) in active.iter().enumerate() {
        let (i_j, d_j) = (hand.inertia[j], hand.damping[j]);
        a[(k, k)] = i_j + dt * d_j;
        rhs[k] = i_j * hand.qd[j] + dt * hand.torque[j];
    }
    let inertia = object.world_inertia();
    let gyro = object.angvel.cross(&(inertia * object.angvel));
    for r in 0..3 {
        a[(nh + r, nh + r)] = object.mass;
        rhs[nh + r] = object.mass * (object.linvel[r] + dt * gravity[r]);
        for c in 0..3 {
            a[(nh + 3 + r, nh + 3 + c)] = inertia[(r, c)];
        }
    }
    let ang = inertia * object.angvel - dt * gyro;
    for r in 0..3 {
        rhs[nh + 3 + r] = ang[r];
    }

    // Dense 3 x dim contact Jacobians: v_rel = J u + b.
    let build = |jac: &[(usize, Vector3<f64>)], point: &Vector3<f64>| {
        let mut jm = DMatrix::<f64>::zeros(3, dim);
        for (j, col) in jac {
            let k = slot(*j);
            for r in 0..3 {
                jm[(r, k)] = col[r];
            }
        }
        let arm = skew(&(point - object.position));
        for r in 0..3 {
            jm[(r, nh + r)] = -1.0;
            for c in 0..3 {
                jm[(r, nh + 3 + c)] = arm[(r, c)];
            }
        }
        jm
    };

    struct Lin {
        jac: DMatrix<f64>,
        b: Vector3<f64>,
        response: ContactResponse,
        rel_velocity: Vector3<f64>,
    }
    let mut lins = Vec::with_capacity(hand_contacts.len() + table_contacts.len());
    for hc in hand_contacts {
        lins.push(Lin {
            jac: build(&hc.jacobian, &hc.contact.position),
            b: hc.base_velocity,
            response: contact_response(&hc.contact, hand_params),
            rel_velocity: hc.contact.rel_velocity,
        });
    }
    for tc in table_contacts {
        lins.push(Lin {
            jac: build(&[], &tc.position),
            b: Vector3::zeros(),
            response: contact_response(tc, table_params),
            rel_velocity: tc.rel_velocity,
        });
    }

    for lin in &lins {
        let b_mat = dt * lin.response.d_force_d_disp + lin.response.d_force_d_vel;
        if b_mat.iter().all(|&v| v == 0.0) && lin.response.force == Vector3::zeros() {
            continue;
        }
        let b_dyn = DMatrix::from_column_slice(3, 3, b_mat.as_slice());
        let jt = lin.jac.transpose();
        a -= dt * (&jt * &b_dyn * &lin.jac);
        let f_const = lin.response.force + b_mat * lin.b - lin.response.d_force_d_vel * lin.rel_velocity;
        rhs += dt * (&jt * DVector::from_column_slice(f_const.as_slice()));
    }

    let sol = match a.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("singular contact system"))?,
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite contact solution"));
    }

    let forces: Vec<Vector3<f64>> = lins
        .iter()
        .map(|lin| {
            let v_new = &lin.jac * &sol;
            let v_new = Vector3::new(v_new[0], v_new[1], v_new[2]) + lin.b;
            let b_mat = dt * lin.response.d_force_d_disp + lin.response.d_force_d_vel;
            lin.response.force + b_mat * v_new - lin.response.d_force_d_vel * lin.rel_velocity
        })
        .collect();
    let (hand_f, table_f) = forces.split_at(hand_contacts.len());
    Ok(ResolvedForces {
        hand: hand_f.to_vec(),
        table: table_f.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::contact::{detect_contacts, detect_table_contacts, support_points, ContactSite, Sphere};
    use crate::world::object::{object_step, AppliedForce, ObjectSpec};
    use nalgebra::UnitQuaternion;

    const G: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

    fn step_with_spheres(obj: &RigidObject, spheres: &[Sphere], params: &ContactParams, dt: f64) -> RigidObject {
        let contacts = detect_contacts(spheres, obj).unwrap();
        let hc: Vec<HandContact> = contacts
            .iter()
            .map(|c| HandContact {
                contact: *c,
                jacobian: Vec::new(),
                base_velocity: Vector3::zeros(),
            })
            .collect();
        let hand = HandBodies {
            inertia: &[],
            damping: &[],
            qd: &[],
            torque: &[],
        };
        let res = resolve_contacts(hand, obj, G, dt, &hc, params, &[], params).unwrap();
        let applied: Vec<AppliedForce> = contacts
            .iter()
            .zip(&res.hand)
            .map(|(c, f)| AppliedForce {
                point: c.position,
                force: -f,
            })
            .collect();
        object_step(obj, &applied, G, dt).unwrap()
    }

    #[test]
    fn pinched_object_comes_to_rest() {
        let obj0 = ObjectSpec::tomato_can()
            .build(Vector3::new(0.0, 0.0, 0.5), UnitQuaternion::identity())
            .unwrap();
        let r = 0.009;
        let squeeze = 0.0015;
        let spheres = [
            Sphere {
                center: Vector3::new(0.037 + r - squeeze, 0.0, 0.5),
                radius: r,
                velocity: Vector3::zeros(),
                site: ContactSite::Fingertip(1),
            },
            Sphere {
                center: Vector3::new(-0.037 - r + squeeze, 0.0, 0.5),
                radius: r,
                velocity: Vector3::zeros(),
                site: ContactSite::Fingertip(0),
            },
        ];
        let params = ContactParams::fingertip_default();
        let mut obj = obj0;
        for _ in 0..2000 {
            obj = step_with_spheres(&obj, &spheres, &params, 0.002);
        }
        assert!(obj.linvel.norm() < 1e-4, "linvel {}", obj.linvel.norm());
        assert!(obj.angvel.norm() < 1e-4, "angvel {}", obj.angvel.norm());
        assert!((obj.position.z - 0.5).abs() < 0.01);
    }

    #[test]
    fn can_settles_on_table() {
        let spec = ObjectSpec::tomato_can();
        let mut obj = spec.build(Vector3::new(0.0, 0.0, 0.045), UnitQuaternion::identity()).unwrap();
        let support = support_points(&obj.shape, 12);
        let params = ContactParams::table_default();
        let hand = HandBodies {
            inertia: &[],
            damping: &[],
            qd: &[],
            torque: &[],
        };
        for _ in 0..1500 {
            let tc = detect_table_contacts(&obj, &support, 0.0);
            let res = resolve_contacts(hand, &obj, G, 0.002, &[], &params, &tc, &params).unwrap();
            let applied: Vec<AppliedForce> = tc
                .iter()
                .zip(&res.table)
                .map(|(c, f)| AppliedForce {
                    point: c.position,
                    force: -f,
                })
                .collect();
            obj = object_step(&obj, &applied, G, 0.002).unwrap();
        }
        assert!(obj.linvel.norm() < 1e-6);
        let sink = 0.042 - obj.position.z;
        let expected = spec.mass * 9.81 / (12.0 * params.stiffness);
        assert!((sink - expected).abs() < 1e-6, "sink {sink} vs {expected}");
    }

    #[test]
    fn reaction_balances_hand_torques() {
        // Joint-coupled contact: one joint pushes a sphere into a box.
        let obj = ObjectSpec::sugar_box()
            .build(Vector3::new(0.0, 0.0, 0.2), UnitQuaternion::identity())
            .unwrap();
        let contact = ContactPoint {
            position: Vector3::new(0.022, 0.0, 0.2),
            normal: Vector3::x(),
            depth: 0.002,
            rel_velocity: Vector3::new(-0.05, 0.01, 0.0),
            site: ContactSite::Fingertip(2),
        };
        let hc = HandContact {
            contact,
            jacobian: vec![(3, Vector3::new(-0.05, 0.0, 0.01))],
            base_velocity: Vector3::zeros(),
        };
        let inertia = vec![1e-3; 5];
        let damping = vec![0.02; 5];
        let qd = vec![0.0, 0.0, 0.0, 1.0, 0.0];
        let torque = vec![0.0, 0.0, 0.0, 0.1, 0.0];
        let hand = HandBodies {
            inertia: &inertia,
            damping: &damping,
            qd: &qd,
            torque: &torque,
        };
        let params = ContactParams::fingertip_default();
        let dt = 0.002;
        let res = resolve_contacts(hand, &obj, Vector3::zeros(), dt, &[hc.clone()], &params, &[], &params).unwrap();
        let f = res.hand[0];
        // Joint velocity predicted by explicit integration of the resolved
        // force must satisfy the same relation the solver used.
        let tau_c = hc.jacobian[0].1.dot(&f);
        let v_new = (qd[3] + dt * (torque[3] + tau_c) / inertia[3]) / (1.0 + dt * damping[3] / inertia[3]);
        let obj_next = object_step(
            &obj,
            &[AppliedForce {
                point: contact.position,
                force: -f,
            }],
            Vector3::zeros(),
            dt,
        )
        .unwrap();
        let v_rel = hc.jacobian[0].1 * v_new - (obj_next.linvel + obj_next.angvel.cross(&(contact.position - obj.position)));
        let resp = contact_response(&contact, &params);
        let predicted = resp.force + (dt * resp.d_force_d_disp + resp.d_force_d_vel) * v_rel
            - resp.d_force_d_vel * contact.rel_velocity;
        assert!((predicted - f).norm() < 1e-9 * (1.0 + f.norm()), "{predicted:?} vs {f:?}");
    }
}
