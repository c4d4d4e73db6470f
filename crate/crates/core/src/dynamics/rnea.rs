use nalgebra::{DMatrix, DVector, Matrix6, Matrix6xX, Vector3, Vector6};

use super::spatial::{cross_force, cross_motion, join, motion_transform};
use super::RigidBodySet;
use crate::error::{Error, Result};
use crate::kinematics::{so3, KinematicTree};

/// `M(q)`, `C(q, qdot)` and `g(q)` of the Euler-Lagrange equation.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsTerms {
    pub mass_matrix: DMatrix<f64>,
    pub coriolis: DVector<f64>,
    pub gravity: DVector<f64>,
}

struct JointFrame {
    /// Parent-to-link motion transform.
    x: Matrix6<f64>,
    /// Motion subspace, 6 x dof.
    s: Matrix6xX<f64>,
}

fn block(v: &[f64], start: usize) -> Vector3<f64> {
    Vector3::new(v[start], v[start + 1], v[start + 2])
}

fn joint_frames(tree: &KinematicTree, q: &[f64]) -> Vec<JointFrame> {
    let mut out = Vec::with_capacity(tree.part_count());
    for (k, link) in tree.links().iter().enumerate() {
        let range = tree.coord_range(k);
        let r = block(q, range.start);
        let rot = so3::exp(&r);
        let jr = so3::right_jacobian(&r);
        if k == 0 {
            let pos = block(q, 3);
            let mut s = Matrix6xX::zeros(6);
            s.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr);
            s.fixed_view_mut::<3, 3>(3, 3).copy_from(&rot.transpose());
            out.push(JointFrame {
                x: motion_transform(&rot, &pos),
                s,
            });
        } else {
            let mut s = Matrix6xX::zeros(3);
            s.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr);
            out.push(JointFrame {
                x: motion_transform(&rot, &link.offset),
                s,
            });
        }
    }
    out
}

/// Velocity-product term `S_dot * qdot` of link `k`.
fn joint_bias(k: usize, q: &[f64], qdot: &[f64], start: usize) -> Vector6<f64> {
    let r = block(q, start);
    let rd = block(qdot, start);
    let ang = so3::right_jacobian_dot(&r, &rd) * rd;
    if k == 0 {
        let omega = so3::right_jacobian(&r) * rd;
        let v_body = so3::exp(&r).transpose() * block(qdot, 3);
        join(&ang, &(-omega.cross(&v_body)))
    } else {
        join(&ang, &Vector3::zeros())
    }
}

fn check_inputs(
    tree: &KinematicTree,
    bodies: &RigidBodySet,
    vectors: &[(&[f64], &str)],
) -> Result<()> {
    bodies.check(tree)?;
    for (v, what) in vectors {
        tree.check_dim(v.len(), what)?;
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite((*what).to_string()));
        }
    }
    Ok(())
}

fn rnea_unchecked(
    tree: &KinematicTree,
    bodies: &RigidBodySet,
    q: &[f64],
    qdot: &[f64],
    qddot: &[f64],
    gravity: &Vector3<f64>,
) -> DVector<f64> {
    let n = tree.part_count();
    let frames = joint_frames(tree, q);
    let mut vel = vec![Vector6::zeros(); n];
    let mut acc = vec![Vector6::zeros(); n];
    let mut force = vec![Vector6::zeros(); n];
    let base_acc = join(&Vector3::zeros(), &(-gravity));

    for (k, link) in tree.links().iter().enumerate() {
        let range = tree.coord_range(k);
        let jf = &frames[k];
        let qd = DVector::from_column_slice(&qdot[range.clone()]);
        let qdd = DVector::from_column_slice(&qddot[range.clone()]);
        let v_joint: Vector6<f64> = &jf.s * qd;
        let c_joint = joint_bias(k, q, qdot, range.start);
        let s_qdd: Vector6<f64> = &jf.s * qdd;
        match link.parent {
            None => {
                vel[k] = v_joint;
                acc[k] = jf.x * base_acc + s_qdd + c_joint;
            }
            Some(p) => {
                vel[k] = jf.x * vel[p] + v_joint;
                acc[k] = jf.x * acc[p] + s_qdd + c_joint + cross_motion(&vel[k], &v_joint);
            }
        }
        let inertia = bodies.spatial(k);
        force[k] = inertia * acc[k] + cross_force(&vel[k], &(inertia * vel[k]));
    }

    let mut tau = DVector::zeros(tree.dim());
    for k in (0..n).rev() {
        let range = tree.coord_range(k);
        let jf = &frames[k];
        let gen = jf.s.transpose() * force[k];
        tau.rows_mut(range.start, range.len()).copy_from(&gen);
        if let Some(p) = tree.links()[k].parent {
            let up = jf.x.transpose() * force[k];
            force[p] += up;
        }
    }
    tau
}

/// Generalized force `F = M(q) qddot + C(q, qdot) + g(q)` by recursive Newton-Euler.
pub fn inverse_dynamics(
    tree: &KinematicTree,
    bodies: &RigidBodySet,
    q: &[f64],
    qdot: &[f64],
    qddot: &[f64],
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>> {
    check_inputs(tree, bodies, &[(q, "q"), (qdot, "qdot"), (qddot, "qddot")])?;
    Ok(rnea_unchecked(tree, bodies, q, qdot, qddot, gravity))
}

/// Joint-space inertia matrix by the composite-rigid-body algorithm.
pub fn mass_matrix(tree: &KinematicTree, bodies: &RigidBodySet, q: &[f64]) -> Result<DMatrix<f64>> {
    check_inputs(tree, bodies, &[(q, "q")])?;
    let n = tree.part_count();
    let frames = joint_frames(tree, q);
    let mut composite: Vec<Matrix6<f64>> = (0..n).map(|k| *bodies.spatial(k)).collect();
    for k in (1..n).rev() {
        let p = tree.links()[k].parent.expect("non-root link has a parent");
        let x = &frames[k].x;
        let up = x.transpose() * composite[k] * x;
        composite[p] += up;
    }

    let dim = tree.dim();
    let mut m = DMatrix::zeros(dim, dim);
    for k in 0..n {
        let rk = tree.coord_range(k);
        let mut f: Matrix6xX<f64> = composite[k] * &frames[k].s;
        let diag = frames[k].s.transpose() * &f;
        m.view_mut((rk.start, rk.start), (rk.len(), rk.len()))
            .copy_from(&diag);
        let mut j = k;
        while let Some(p) = tree.links()[j].parent {
            f = frames[j].x.transpose() * f;
            j = p;
            let rj = tree.coord_range(j);
            let off = frames[j].s.transpose() * &f;
            m.view_mut((rj.start, rk.start), (rj.len(), rk.len()))
                .copy_from(&off);
            m.view_mut((rk.start, rj.start), (rk.len(), rj.len()))
                .copy_from(&off.transpose());
        }
    }
    Ok(m)
}

/// Coriolis/centrifugal and gravity vectors.
///
/// The gravity term is inverse dynamics at rest; the Coriolis term is inverse
/// dynamics with velocity but zero acceleration, minus the gravity term.
pub fn bias_terms(
    tree: &KinematicTree,
    bodies: &RigidBodySet,
    q: &[f64],
    qdot: &[f64],
    gravity: &Vector3<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_inputs(tree, bodies, &[(q, "q"), (qdot, "qdot")])?;
    let zeros = vec![0.0; tree.dim()];
    let g = rnea_unchecked(tree, bodies, q, &zeros, &zeros, gravity);
    let full = rnea_unchecked(tree, bodies, q, qdot, &zeros, gravity);
    Ok((full - &g, g))
}

pub fn dynamics_terms(
    tree: &KinematicTree,
    bodies: &RigidBodySet,
    q: &[f64],
    qdot: &[f64],
    gravity: &Vector3<f64>,
) -> Result<DynamicsTerms> {
    let (coriolis, gravity) = bias_terms(tree, bodies, q, qdot, gravity)?;
    Ok(DynamicsTerms {
        mass_matrix: mass_matrix(tree, bodies, q)?,
        coriolis,
        gravity,
    })
}

/// Accelerations `M^-1 (tau - C - g)` via a Cholesky solve.
pub fn forward_dynamics(
    tree: &KinematicTree,
    bodies: &RigidBodySet,
    q: &[f64],
    qdot: &[f64],
    torque: &[f64],
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>> {
    check_inputs(tree, bodies, &[(q, "q"), (qdot, "qdot"), (torque, "torque")])?;
    let m = mass_matrix(tree, bodies, q)?;
    let zeros = vec![0.0; tree.dim()];
    let bias = rnea_unchecked(tree, bodies, q, qdot, &zeros, gravity);
    let rhs = DVector::from_column_slice(torque) - bias;
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::SingularDynamics("mass matrix is not positive-definite".into()))?;
    let qddot = chol.solve(&rhs);
    if !qddot.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularDynamics("non-finite accelerations".into()));
    }
    Ok(qddot)
}

/// Kinetic energy summed over link spatial velocities.
pub fn kinetic_energy(
    tree: &KinematicTree,
    bodies: &RigidBodySet,
    q: &[f64],
    qdot: &[f64],
) -> Result<f64> {
    check_inputs(tree, bodies, &[(q, "q"), (qdot, "qdot")])?;
    let frames = joint_frames(tree, q);
    let mut vel = vec![Vector6::zeros(); tree.part_count()];
    let mut energy = 0.0;
    for (k, link) in tree.links().iter().enumerate() {
        let range = tree.coord_range(k);
        let v_joint: Vector6<f64> = &frames[k].s * DVector::from_column_slice(&qdot[range]);
        vel[k] = match link.parent {
            None => v_joint,
            Some(p) => frames[k].x * vel[p] + v_joint,
        };
        energy += 0.5 * vel[k].dot(&(bodies.spatial(k) * vel[k]));
    }
    Ok(energy)
}
