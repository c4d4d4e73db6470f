use nalgebra::DVector;

use super::rnea::forward_dynamics;
use super::Multibody;
use crate::error::{Error, Result};
use crate::kinematics::Trajectory;
use crate::motion::Motion;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    SemiImplicitEuler,
    Rk4,
}

/// Sampled output of [`simulate`].
#[derive(Clone, Debug)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub velocities: Motion,
    /// Torque applied at each sampled frame.
    pub torques: Motion,
}

/// Integrates forward dynamics and samples every `dt`.
///
/// `torque(time, q, qdot)` is evaluated at every sub-step; each frame interval
/// is split into `substeps` integration steps.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    model: &Multibody,
    q0: &[f64],
    qdot0: &[f64],
    mut torque: impl FnMut(f64, &[f64], &[f64]) -> DVector<f64>,
    dt: f64,
    frames: usize,
    substeps: usize,
    integrator: Integrator,
) -> Result<Simulation> {
    if !(dt > 0.0) || substeps == 0 {
        return Err(Error::Parameter(format!(
            "dt must be positive and substeps nonzero, got dt={dt}, substeps={substeps}"
        )));
    }
    let dim = model.dim();
    model.tree.check_dim(q0.len(), "q0")?;
    model.tree.check_dim(qdot0.len(), "qdot0")?;
    let mut q = DVector::from_column_slice(q0);
    let mut qd = DVector::from_column_slice(qdot0);
    let h = dt / substeps as f64;
    let mut values = Motion::zeros(frames, dim);
    let mut velocities = Motion::zeros(frames, dim);
    let mut torques = Motion::zeros(frames, dim);

    let mut accel = |time: f64, q: &DVector<f64>, qd: &DVector<f64>| -> Result<DVector<f64>> {
        let tau = torque(time, q.as_slice(), qd.as_slice());
        forward_dynamics(
            &model.tree,
            &model.bodies,
            q.as_slice(),
            qd.as_slice(),
            tau.as_slice(),
            &model.gravity,
        )
    };

    for f in 0..frames {
        values.row_mut(f).copy_from_slice(q.as_slice());
        velocities.row_mut(f).copy_from_slice(qd.as_slice());
        let t_frame = f as f64 * dt;
        if f + 1 == frames {
            break;
        }
        for s in 0..substeps {
            let time = t_frame + s as f64 * h;
            match integrator {
                Integrator::SemiImplicitEuler => {
                    let a = accel(time, &q, &qd)?;
                    qd += &a * h;
                    q += &qd * h;
                }
                Integrator::Rk4 => {
                    let k1v = qd.clone();
                    let k1a = accel(time, &q, &qd)?;
                    let q2 = &q + &k1v * (h / 2.0);
                    let v2 = &qd + &k1a * (h / 2.0);
                    let k2a = accel(time + h / 2.0, &q2, &v2)?;
                    let q3 = &q + &v2 * (h / 2.0);
                    let v3 = &qd + &k2a * (h / 2.0);
                    let k3a = accel(time + h / 2.0, &q3, &v3)?;
                    let q4 = &q + &v3 * h;
                    let v4 = &qd + &k3a * h;
                    let k4a = accel(time + h, &q4, &v4)?;
                    q += (k1v + &v2 * 2.0 + &v3 * 2.0 + &v4) * (h / 6.0);
                    qd += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (h / 6.0);
                }
            }
            if !q.iter().chain(qd.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("simulation state at t={time}")));
            }
        }
    }
    for f in 0..frames {
        let tau = torque(f as f64 * dt, values.row(f), velocities.row(f));
        model.tree.check_dim(tau.len(), "torque")?;
        torques.row_mut(f).copy_from_slice(tau.as_slice());
    }
    Ok(Simulation {
        trajectory: Trajectory::new(values, dt)?,
        velocities,
        torques,
    })
}
