use nalgebra::{DMatrix, DVector};

use super::rnea::{inverse_dynamics, mass_matrix};
use super::Multibody;
use crate::error::{shape_err, Result};
use crate::kinematics::{finite_difference, stencil, StencilTap, Trajectory, TrajectoryDerivatives};
use crate::motion::Motion;

/// Unwrapped trajectory, its finite-difference derivatives and the
/// generalized forces that reproduce it exactly.
pub fn pseudoforce_with_derivatives(
    model: &Multibody,
    traj: &Trajectory,
) -> Result<(Trajectory, TrajectoryDerivatives, Motion)> {
    let unwrapped = traj.unwrapped(&model.tree)?;
    let deriv = finite_difference(&unwrapped)?;
    let mut force = Motion::zeros(traj.frames(), traj.dim());
    for t in 0..traj.frames() {
        let f = inverse_dynamics(
            &model.tree,
            &model.bodies,
            unwrapped.values().row(t),
            deriv.qdot.row(t),
            deriv.qddot.row(t),
            &model.gravity,
        )?;
        force.row_mut(t).copy_from_slice(f.as_slice());
    }
    Ok((unwrapped, deriv, force))
}

/// Per-frame generalized force implied by the motion.
pub fn pseudoforce(model: &Multibody, traj: &Trajectory) -> Result<Motion> {
    Ok(pseudoforce_with_derivatives(model, traj)?.2)
}

/// Euler-Lagrange residual `Z_t = M q'' + C + g - f_hat_t` for every frame.
pub fn el_residual(model: &Multibody, traj: &Trajectory, f_hat: &Motion) -> Result<Motion> {
    if f_hat.shape() != traj.values().shape() {
        return Err(shape_err(format!(
            "force sequence {:?} vs trajectory {:?}",
            f_hat.shape(),
            traj.values().shape()
        )));
    }
    pseudoforce(model, traj)?.sub(f_hat)
}

/// `sum_t ||Z_t||_1`.
pub fn deterministic_el_penalty(residuals: &Motion) -> f64 {
    residuals.as_slice().iter().map(|v| v.abs()).sum()
}

/// Mean over frames of `||M q'' + C + g - f_bar||_1`.
pub fn residual_metric(model: &Multibody, traj: &Trajectory, f_bar: &Motion) -> Result<f64> {
    let z = el_residual(model, traj, f_bar)?;
    Ok(deterministic_el_penalty(&z) / traj.frames() as f64)
}

/// Local linearization of the force at one frame.
///
/// `F_t` depends on the frames of its difference stencil; the derivative with
/// respect to frame `s` is `[s == t] dF/dq + w_vel/dt dF/dq' + w_acc/dt^2 M`.
#[derive(Clone, Debug)]
pub struct FrameJacobian {
    pub frame: usize,
    pub taps: Vec<StencilTap>,
    pub d_q: DMatrix<f64>,
    pub d_qdot: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub dt: f64,
}

impl FrameJacobian {
    /// `dF_t / dq_s` for one stencil tap.
    pub fn block(&self, tap: &StencilTap) -> DMatrix<f64> {
        let mut b = &self.d_qdot * (tap.vel / self.dt) + &self.mass * (tap.acc / (self.dt * self.dt));
        if tap.frame == self.frame {
            b += &self.d_q;
        }
        b
    }
}

fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

/// Jacobians of every frame's force with respect to the trajectory,
/// evaluated on the unwrapped trajectory.
pub fn force_jacobian(model: &Multibody, traj: &Trajectory) -> Result<Vec<FrameJacobian>> {
    let unwrapped = traj.unwrapped(&model.tree)?;
    let deriv = finite_difference(&unwrapped)?;
    let (tree, bodies, g) = (&model.tree, &model.bodies, &model.gravity);
    let frames = traj.frames();
    let dim = traj.dim();
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let q = unwrapped.values().row(t);
        let qd = deriv.qdot.row(t);
        let qdd = deriv.qddot.row(t);
        let mut d_q = DMatrix::zeros(dim, dim);
        let mut d_qdot = DMatrix::zeros(dim, dim);
        let mut work = q.to_vec();
        for j in 0..dim {
            let h = fd_step(q[j]);
            work[j] = q[j] + h;
            let plus = inverse_dynamics(tree, bodies, &work, qd, qdd, g)?;
            work[j] = q[j] - h;
            let minus = inverse_dynamics(tree, bodies, &work, qd, qdd, g)?;
            work[j] = q[j];
            d_q.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        let mut work = qd.to_vec();
        for j in 0..dim {
            let h = fd_step(qd[j]);
            work[j] = qd[j] + h;
            let plus = inverse_dynamics(tree, bodies, q, &work, qdd, g)?;
            work[j] = qd[j] - h;
            let minus = inverse_dynamics(tree, bodies, q, &work, qdd, g)?;
            work[j] = qd[j];
            d_qdot.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        out.push(FrameJacobian {
            frame: t,
            taps: stencil(t, frames),
            d_q,
            d_qdot,
            mass: mass_matrix(tree, bodies, q)?,
            dt: traj.dt(),
        });
    }
    Ok(out)
}

/// Vector-Jacobian product: `sum_t (dF_t/dq)^T upstream_t`, one row per frame.
pub fn residual_vjp(jacobians: &[FrameJacobian], upstream: &Motion) -> Result<Motion> {
    if jacobians.len() != upstream.frames() {
        return Err(shape_err(format!(
            "{} frame Jacobians for {} upstream frames",
            jacobians.len(),
            upstream.frames()
        )));
    }
    let mut grad = Motion::zeros(upstream.frames(), upstream.dim());
    for jac in jacobians {
        let u = DVector::from_column_slice(upstream.row(jac.frame));
        for tap in &jac.taps {
            let g = jac.block(tap).transpose() * &u;
            for (acc, v) in grad.row_mut(tap.frame).iter_mut().zip(g.iter()) {
                *acc += v;
            }
        }
    }
    Ok(grad)
}
