//! Variance propagation through the reverse chain and its pushforward to
//! generalized forces.

use rand::Rng;

use crate::denoiser::{Denoiser, ProbabilisticDenoiser};
use crate::diffusion::{gaussian_motion, initial_state, reverse_step, MotionState, ShiftSchedule};
use crate::dynamics::{force_jacobian, Multibody};
use crate::error::{shape_err, Error, Result};
use crate::inertia::PartWeights;
use crate::kinematics::{KinematicTree, Trajectory};
use crate::motion::Motion;
use crate::training::Checkpoint;

/// Default number of auxiliary samples per reverse step.
pub const DEFAULT_SAMPLES: usize = 20;

/// Diagonal moments of the chain state at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceState {
    /// `E[x^n]`
    pub mean: Motion,
    /// `Var(x^n)`
    pub var: Motion,
    /// `Cov(x^n, x_hat)`
    pub cov: Motion,
    pub step: usize,
}

impl VarianceState {
    /// A known state: zero variance and covariance.
    pub fn certain(mean: Motion, step: usize) -> Self {
        let (t, d) = mean.shape();
        Self {
            mean,
            var: Motion::zeros(t, d),
            cov: Motion::zeros(t, d),
            step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mean.ensure_same_shape(&self.var, "variance")?;
        self.mean.ensure_same_shape(&self.cov, "covariance")?;
        if self.var.as_slice().iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Parameter("variance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `E[x^{n-1}] = A_n E[x^n] + B_n E[x_hat]`.
pub fn step_expectation(mean: &Motion, mean_xhat: &Motion, n: usize, schedule: &ShiftSchedule) -> Result<Motion> {
    check_step(n, schedule)?;
    mean.lincomb(schedule.a(n)?, mean_xhat, schedule.b(n)?)
}

fn check_step(n: usize, schedule: &ShiftSchedule) -> Result<()> {
    if n == 0 || n > schedule.steps() {
        return Err(Error::StepOutOfRange {
            step: n,
            max: schedule.steps(),
        });
    }
    Ok(())
}

/// `Var(x^{n-1}) = A^2 Var(x^n) + B^2 Var(x_hat) + Sigma_n + 2AB Cov(x^n, x_hat)`.
///
/// Negative entries, which a sampled covariance can produce, are set to zero;
/// the second value counts them.
pub fn step_variance(
    var: &Motion,
    var_xhat: &Motion,
    cov: &Motion,
    n: usize,
    schedule: &ShiftSchedule,
) -> Result<(Motion, usize)> {
    check_step(n, schedule)?;
    var.ensure_same_shape(var_xhat, "predictive variance")?;
    var.ensure_same_shape(cov, "covariance")?;
    let (a, b, sigma) = (schedule.a(n)?, schedule.b(n)?, schedule.sigma(n)?);
    let mut floored = 0;
    let mut out = Motion::zeros(var.frames(), var.dim());
    for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
        let v = a * a * var.as_slice()[i]
            + b * b * var_xhat.as_slice()[i]
            + sigma
            + 2.0 * a * b * cov.as_slice()[i];
        if v < 0.0 {
            floored += 1;
            *o = 0.0;
        } else {
            *o = v;
        }
    }
    if floored > 0 {
        log::warn!("step {n}: {floored} negative variance entries set to zero");
    }
    Ok((out, floored))
}

/// Unbiased sample covariance of paired state and prediction draws, entrywise.
pub fn mc_covariance(samples_xn: &[Motion], samples_xhat: &[Motion]) -> Result<Motion> {
    let s = samples_xn.len();
    if s < 2 {
        return Err(Error::Parameter(format!("covariance needs at least 2 samples, got {s}")));
    }
    if samples_xhat.len() != s {
        return Err(shape_err(format!("{s} state samples but {} predictions", samples_xhat.len())));
    }
    let (frames, dim) = samples_xn[0].shape();
    let inv = 1.0 / s as f64;
    let mut mean_x = Motion::zeros(frames, dim);
    let mut mean_h = Motion::zeros(frames, dim);
    for (x, h) in samples_xn.iter().zip(samples_xhat) {
        samples_xn[0].ensure_same_shape(x, "state sample")?;
        samples_xn[0].ensure_same_shape(h, "prediction sample")?;
        for i in 0..mean_x.len() {
            mean_x.as_mut_slice()[i] += x.as_slice()[i] * inv;
            mean_h.as_mut_slice()[i] += h.as_slice()[i] * inv;
        }
    }
    let mut cov = Motion::zeros(frames, dim);
    for (x, h) in samples_xn.iter().zip(samples_xhat) {
        for i in 0..cov.len() {
            cov.as_mut_slice()[i] += (x.as_slice()[i] - mean_x.as_slice()[i]) * (h.as_slice()[i] - mean_h.as_slice()[i]);
        }
    }
    Ok(cov.map(|v| v / (s - 1) as f64))
}

/// Entrywise means of the predicted means and predictive variances over `S`
/// state samples.
pub fn prediction_moments(means: &[Motion], variances: &[Motion]) -> Result<(Motion, Motion)> {
    let s = means.len();
    if s == 0 || variances.len() != s {
        return Err(shape_err("prediction moments need matching, non-empty samples"));
    }
    let (t, d) = means[0].shape();
    let inv = 1.0 / s as f64;
    let mut mean = Motion::zeros(t, d);
    let mut var = Motion::zeros(t, d);
    for (m, v) in means.iter().zip(variances) {
        means[0].ensure_same_shape(m, "prediction")?;
        means[0].ensure_same_shape(v, "predictive variance")?;
        for i in 0..mean.len() {
            mean.as_mut_slice()[i] += m.as_slice()[i] * inv;
            var.as_mut_slice()[i] += v.as_slice()[i] * inv;
        }
    }
    Ok((mean, var))
}

const SPREAD_STEP: f64 = 1e-5;

/// Diagonal of `J diag(var) J^T`, with `J` the Jacobian of the predicted mean
/// at `mean` taken by central differences. Frames more than a receptive
/// diameter apart are perturbed together.
pub fn prediction_spread<D: Denoiser + ?Sized>(
    denoiser: &D,
    mean: &Motion,
    var: &Motion,
    y: &Motion,
    n: usize,
) -> Result<Motion> {
    mean.ensure_same_shape(var, "variance")?;
    let (frames, dim) = mean.shape();
    let mut out = Motion::zeros(frames, dim);
    let (period, reach) = match denoiser.receptive_radius() {
        Some(r) if 2 * r + 1 < frames => (2 * r + 1, r),
        _ => (frames, frames),
    };
    for color in 0..period {
        let sources: Vec<usize> = (color..frames).step_by(period.max(1)).collect();
        for j in 0..dim {
            if sources.iter().all(|&s| var.get(s, j) == 0.0) {
                continue;
            }
            let mut plus = mean.clone();
            let mut minus = mean.clone();
            let steps: Vec<f64> = sources
                .iter()
                .map(|&s| {
                    let h = SPREAD_STEP * (1.0 + mean.get(s, j).abs());
                    plus.set(s, j, mean.get(s, j) + h);
                    minus.set(s, j, mean.get(s, j) - h);
                    h
                })
                .collect();
            let up = denoiser.predict(&plus, y, n)?;
            let down = denoiser.predict(&minus, y, n)?;
            for (&s, &h) in sources.iter().zip(&steps) {
                let v = var.get(s, j);
                let lo = s.saturating_sub(reach);
                let hi = (s + reach + 1).min(frames);
                for t in lo..hi {
                    for i in 0..dim {
                        let d = (up.get(t, i) - down.get(t, i)) / (2.0 * h);
                        out.set(t, i, out.get(t, i) + d * d * v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Result of running the reverse chain with moment tracking.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainVariance {
    /// A sampled `x^0` from the same chain.
    pub refined: Motion,
    pub mean0: Motion,
    pub var0: Motion,
    /// Negative variance entries set to zero over all steps.
    pub floored: usize,
}

/// Runs the reverse chain from a sampled `x^N`, tracking `E[x^n]`, `Var(x^n)`
/// and `Cov(x^n, x_hat)` with `samples` auxiliary draws per step.
pub fn propagate<D: ProbabilisticDenoiser + ?Sized, R: Rng + ?Sized>(
    y: &Motion,
    denoiser: &D,
    schedule: &ShiftSchedule,
    samples: usize,
    rng: &mut R,
) -> Result<ChainVariance> {
    let start = initial_state(y, schedule, rng);
    propagate_from(start, y, denoiser, schedule, samples, rng)
}

/// [`propagate`] from a given `x^n`, treated as known.
pub fn propagate_from<D: ProbabilisticDenoiser + ?Sized, R: Rng + ?Sized>(
    start: MotionState,
    y: &Motion,
    denoiser: &D,
    schedule: &ShiftSchedule,
    samples: usize,
    rng: &mut R,
) -> Result<ChainVariance> {
    if samples < 2 {
        return Err(Error::Parameter(format!("need at least 2 samples per step, got {samples}")));
    }
    if start.step > schedule.steps() {
        return Err(Error::StepOutOfRange {
            step: start.step,
            max: schedule.steps(),
        });
    }
    start.values.ensure_same_shape(y, "observation")?;
    let mut chain: MotionState = start.clone();
    let mut state = VarianceState::certain(start.values, start.step);
    let mut floored = 0;
    while state.step > 0 {
        let n = state.step;
        let (mean_hat, var_hat, cov) = if state.var.max_abs() == 0.0 {
            // every draw would equal the mean
            let (m, v) = denoiser.predict_with_variance(&state.mean, y, n)?;
            let zeros = Motion::zeros(m.frames(), m.dim());
            (m, v, zeros)
        } else {
            let draws: Vec<Motion> = (0..samples)
                .map(|_| gaussian_motion(&state.mean, |i| state.var.as_slice()[i], rng))
                .collect();
            let mut means = Vec::with_capacity(samples);
            let mut vars = Vec::with_capacity(samples);
            for x in &draws {
                let (m, v) = denoiser.predict_with_variance(x, y, n)?;
                means.push(m);
                vars.push(v);
            }
            let (mean_hat, gamma2) = prediction_moments(&means, &vars)?;
            let var_hat = gamma2.add(&prediction_spread(denoiser, &state.mean, &state.var, y, n)?)?;
            let cov = mc_covariance(&draws, &means)?;
            (mean_hat, var_hat, cov)
        };
        let mean = step_expectation(&state.mean, &mean_hat, n, schedule)?;
        let (var, f) = step_variance(&state.var, &var_hat, &cov, n, schedule)?;
        floored += f;

        let (m, v) = denoiser.predict_with_variance(&chain.values, y, n)?;
        let x_hat = gaussian_motion(&m, |i| v.as_slice()[i], rng);
        chain = reverse_step(&chain, &x_hat, schedule, rng)?;

        state = VarianceState {
            mean,
            var,
            cov,
            step: n - 1,
        };
    }
    if !state.mean.is_finite() || !state.var.is_finite() {
        return Err(Error::NonFinite("propagated moments".into()));
    }
    Ok(ChainVariance {
        refined: chain.values,
        mean0: state.mean,
        var0: state.var,
        floored,
    })
}

/// Diagonal of `J Var(x^0) J^T` per frame, with `J` the force Jacobian at the
/// mean trajectory.
pub fn force_variance(model: &Multibody, mean0: &Trajectory, var0: &Motion) -> Result<Motion> {
    mean0.values().ensure_same_shape(var0, "variance")?;
    if var0.as_slice().iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Parameter("variance must be nonnegative".into()));
    }
    let jac = force_jacobian(model, mean0)?;
    let dim = var0.dim();
    let mut out = Motion::zeros(var0.frames(), dim);
    for fj in &jac {
        for tap in &fj.taps {
            let block = fj.block(tap);
            let v = var0.row(tap.frame);
            for i in 0..dim {
                let s: f64 = (0..dim).map(|j| block[(i, j)] * block[(i, j)] * v[j]).sum();
                out.row_mut(fj.frame)[i] += s;
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("force variance".into()));
    }
    Ok(out)
}

/// Joint-level and optional vertex-level maps in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceMaps {
    /// Frames x joints.
    pub joints: Motion,
    /// Frames x vertices.
    pub vertices: Option<Motion>,
}

/// Coordinates whose force variance make up joint `k`: the rotational block.
pub fn joint_coords(tree: &KinematicTree, k: usize) -> std::ops::Range<usize> {
    let r = tree.coord_range(k);
    r.start..r.start + 3
}

/// Sums each joint's rotational force variances and divides by the sequence
/// maximum; an all-zero input stays zero.
pub fn variance_maps(
    tree: &KinematicTree,
    var_force: &Motion,
    weights: Option<&PartWeights>,
) -> Result<VarianceMaps> {
    tree.check_dim(var_force.dim(), "force variance")?;
    if var_force.as_slice().iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Parameter("variance must be nonnegative".into()));
    }
    let parts = tree.part_count();
    let mut joints = Motion::from_fn(var_force.frames(), parts, |t, k| {
        joint_coords(tree, k).map(|j| var_force.get(t, j)).sum()
    });
    let max = joints.max_abs();
    if max > 0.0 {
        joints = joints.map(|v| v / max);
    }
    let vertices = weights
        .map(|w| {
            if w.part_count() != parts {
                return Err(shape_err(format!("{} weight columns for {parts} parts", w.part_count())));
            }
            Ok(Motion::from_fn(joints.frames(), w.vertex_count(), |t, v| {
                w.rows()[v].iter().enumerate().map(|(k, wk)| wk * joints.get(t, k)).sum()
            }))
        })
        .transpose()?;
    Ok(VarianceMaps { joints, vertices })
}

/// Everything reported for one sequence, in raw coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    pub refined: Motion,
    pub mean0: Motion,
    pub var0: Motion,
    pub force_var: Motion,
    pub maps: VarianceMaps,
    pub floored: usize,
}

impl VarianceReport {
    /// Pushes a raw-space chain result through the force Jacobian.
    pub fn new(
        model: &Multibody,
        chain: ChainVariance,
        dt: f64,
        weights: Option<&PartWeights>,
    ) -> Result<Self> {
        let mean_traj = Trajectory::new(chain.mean0.clone(), dt)?;
        let force_var = force_variance(model, &mean_traj, &chain.var0)?;
        let maps = variance_maps(&model.tree, &force_var, weights)?;
        Ok(Self {
            refined: chain.refined,
            mean0: chain.mean0,
            var0: chain.var0,
            force_var,
            maps,
            floored: chain.floored,
        })
    }

    /// Sum of force variances over coordinates, per frame.
    pub fn frame_force_variance(&self) -> Vec<f64> {
        self.force_var.rows().map(|r| r.iter().sum()).collect()
    }
}

/// Propagates a raw-space observation through a checkpoint's chain and
/// Laplace posterior, then reports in raw coordinates.
pub fn checkpoint_report<R: Rng + ?Sized>(
    checkpoint: &Checkpoint,
    model: &Multibody,
    y: &Motion,
    dt: f64,
    samples: usize,
    weights: Option<&PartWeights>,
    rng: &mut R,
) -> Result<VarianceReport> {
    let scaling = &checkpoint.scaling;
    let y_n = scaling.normalize(y)?;
    let chain = propagate(&y_n, &checkpoint.laplace()?, &checkpoint.schedule, samples, rng)?;
    let raw = ChainVariance {
        refined: scaling.denormalize(&chain.refined)?,
        mean0: scaling.denormalize(&chain.mean0)?,
        var0: scaling.denormalize_variance(&chain.var0)?,
        floored: chain.floored,
    };
    VarianceReport::new(model, raw, dt, weights)
}

#[cfg(test)]
mod tests;
