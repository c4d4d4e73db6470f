use super::Trajectory;
use crate::error::{Error, Result};
use crate::motion::Motion;

/// Generalized velocities and accelerations, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDerivatives {
    pub qdot: Motion,
    pub qddot: Motion,
}

/// One frame's contribution to the velocity and acceleration stencils.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StencilTap {
    pub frame: usize,
    /// Velocity weight, multiplied by `1/dt`.
    pub vel: f64,
    /// Acceleration weight, multiplied by `1/dt^2`.
    pub acc: f64,
}

/// Second-order difference stencil for frame `t` of a `frames`-long sequence.
///
/// Central on interior frames, one-sided at both ends. With only three
/// frames the end accelerations fall back to the three-point stencil.
pub fn stencil(t: usize, frames: usize) -> Vec<StencilTap> {
    debug_assert!(frames >= 3 && t < frames);
    let tap = |frame, vel, acc| StencilTap { frame, vel, acc };
    let last = frames - 1;
    if t == 0 {
        if frames >= 4 {
            vec![tap(0, -1.5, 2.0), tap(1, 2.0, -5.0), tap(2, -0.5, 4.0), tap(3, 0.0, -1.0)]
        } else {
            vec![tap(0, -1.5, 1.0), tap(1, 2.0, -2.0), tap(2, -0.5, 1.0)]
        }
    } else if t == last {
        if frames >= 4 {
            vec![
                tap(last - 3, 0.0, -1.0),
                tap(last - 2, 0.5, 4.0),
                tap(last - 1, -2.0, -5.0),
                tap(last, 1.5, 2.0),
            ]
        } else {
            vec![tap(last - 2, 0.5, 1.0), tap(last - 1, -2.0, -2.0), tap(last, 1.5, 1.0)]
        }
    } else {
        vec![tap(t - 1, -0.5, 1.0), tap(t, 0.0, -2.0), tap(t + 1, 0.5, 1.0)]
    }
}

/// Finite-difference velocities and accelerations of a trajectory.
///
/// Rotation vectors must already be unwrapped (see [`Trajectory::unwrapped`])
/// when differencing a trajectory whose rotations cross the `pi` boundary.
pub fn finite_difference(traj: &Trajectory) -> Result<TrajectoryDerivatives> {
    let frames = traj.frames();
    if frames < 3 {
        return Err(Error::InsufficientFrames {
            needed: 3,
            got: frames,
        });
    }
    let dim = traj.dim();
    let (inv_dt, inv_dt2) = (1.0 / traj.dt(), 1.0 / (traj.dt() * traj.dt()));
    let q = traj.values();
    let mut qdot = Motion::zeros(frames, dim);
    let mut qddot = Motion::zeros(frames, dim);
    for t in 0..frames {
        let taps = stencil(t, frames);
        for j in 0..dim {
            let (mut v, mut a) = (0.0, 0.0);
            for tap in &taps {
                let x = q.get(tap.frame, j);
                v += tap.vel * x;
                a += tap.acc * x;
            }
            qdot.set(t, j, v * inv_dt);
            qddot.set(t, j, a * inv_dt2);
        }
    }
    Ok(TrajectoryDerivatives { qdot, qddot })
}
