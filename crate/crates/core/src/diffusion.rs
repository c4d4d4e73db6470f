//! Residual-shift diffusion between clean motion `x0` and an observation `y`.
//!
//! The forward chain moves `x0` toward `y` by increments of the shift `d = y - x0`
//! while adding Gaussian noise, so the terminal state is centered on `y`. The
//! reverse kernel has mean `A_n x^n + B_n x_hat` and variance `Sigma_n`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::motion::Motion;

/// Parameters of the log-space power schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub eta1: f64,
    pub eta_n: f64,
    pub kappa: f64,
    pub exponent: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            eta1: 1e-3,
            eta_n: 0.999,
            kappa: 1.0,
            exponent: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<ShiftSchedule> {
        ShiftSchedule::build(self.steps, self.eta1, self.eta_n, self.kappa, self.exponent)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct ShiftSchedule {
    etas: Vec<f64>,
    kappa: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRepr {
    etas: Vec<f64>,
    kappa: f64,
}

impl TryFrom<ScheduleRepr> for ShiftSchedule {
    type Error = Error;
    fn try_from(r: ScheduleRepr) -> Result<Self> {
        Self::from_etas(r.etas, r.kappa)
    }
}

impl From<ShiftSchedule> for ScheduleRepr {
    fn from(s: ShiftSchedule) -> Self {
        Self {
            etas: s.etas,
            kappa: s.kappa,
        }
    }
}

impl ShiftSchedule {
    /// `eta_n = exp(log eta1 + (log etaN - log eta1) ((n-1)/(N-1))^p)`.
    pub fn build(steps: usize, eta1: f64, eta_n: f64, kappa: f64, exponent: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if !(eta1 > 0.0 && eta1 < eta_n && eta_n < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < eta1 < etaN < 1, got eta1={eta1}, etaN={eta_n}"
            )));
        }
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::Parameter(format!("curve exponent must be positive, got {exponent}")));
        }
        if steps > 1 && !(eta1 <= 0.01 && eta_n >= 0.99) {
            return Err(Error::Parameter(format!(
                "schedule must start near 0 and end near 1 (eta1 <= 0.01, etaN >= 0.99), got {eta1}, {eta_n}"
            )));
        }
        let etas = if steps == 1 {
            vec![eta1]
        } else {
            let (lo, hi) = (eta1.ln(), eta_n.ln());
            (0..steps)
                .map(|i| {
                    let u = (i as f64 / (steps - 1) as f64).powf(exponent);
                    (lo + (hi - lo) * u).exp()
                })
                .collect()
        };
        Self::from_etas(etas, kappa)
    }

    pub fn from_etas(etas: Vec<f64>, kappa: f64) -> Result<Self> {
        if etas.is_empty() {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
        }
        if etas.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::Parameter("etas must lie in (0, 1)".into()));
        }
        if etas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("etas must be strictly increasing".into()));
        }
        Ok(Self { etas, kappa })
    }

    /// Number of diffusion steps `N`.
    pub fn steps(&self) -> usize {
        self.etas.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    fn check(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.steps() {
            return Err(Error::StepOutOfRange {
                step: n,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// `eta_n`, with `eta_0 = 0`.
    pub fn eta(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Ok(0.0);
        }
        self.check(n)?;
        Ok(self.etas[n - 1])
    }

    pub fn alpha(&self, n: usize) -> Result<f64> {
        self.check(n)?;
        Ok(self.eta(n)? - self.eta(n - 1)?)
    }

    pub fn a(&self, n: usize) -> Result<f64> {
        self.check(n)?;
        Ok(self.eta(n - 1)? / self.eta(n)?)
    }

    /// `alpha_n / eta_n`, evaluated as `1 - A_n` so the pair sums to one exactly.
    pub fn b(&self, n: usize) -> Result<f64> {
        Ok(1.0 - self.a(n)?)
    }

    /// Reverse-kernel variance `A_n alpha_n kappa^2`.
    pub fn sigma(&self, n: usize) -> Result<f64> {
        Ok(self.a(n)? * self.alpha(n)? * self.kappa * self.kappa)
    }

    /// Shift fraction and per-coordinate variance of `q(x^n | x0, y)`.
    pub fn marginal(&self, n: usize) -> Result<(f64, f64)> {
        let eta = self.eta(n)?;
        Ok((eta, self.kappa * self.kappa * eta))
    }

    /// CSV with header `n,eta,alpha,A,B,Sigma`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "eta", "alpha", "A", "B", "Sigma"])
            .map_err(csv_err)?;
        for n in 1..=self.steps() {
            out.write_record(&[
                n.to_string(),
                self.eta(n)?.to_string(),
                self.alpha(n)?.to_string(),
                self.a(n)?.to_string(),
                self.b(n)?.to_string(),
                self.sigma(n)?.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// A motion array tagged with its diffusion step.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionState {
    pub values: Motion,
    pub step: usize,
}

impl MotionState {
    pub fn new(values: Motion, step: usize) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::NonFinite("motion state".into()));
        }
        Ok(Self { values, step })
    }
}

pub(crate) fn gaussian_motion<R: Rng + ?Sized>(
    mean: &Motion,
    variance: impl Fn(usize) -> f64,
    rng: &mut R,
) -> Motion {
    let mut out = mean.clone();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        let var = variance(i);
        if var > 0.0 {
            let e: f64 = rng.sample(StandardNormal);
            *v += var.sqrt() * e;
        }
    }
    out
}

/// One forward transition `x^{n-1} -> x^n ~ N(x^{n-1} + alpha_n d, kappa^2 alpha_n)`.
pub fn forward_step_sample<R: Rng + ?Sized>(
    x_prev: &MotionState,
    x0: &Motion,
    y: &Motion,
    schedule: &ShiftSchedule,
    rng: &mut R,
) -> Result<MotionState> {
    let n = x_prev.step + 1;
    let alpha = schedule.alpha(n)?;
    x_prev.values.ensure_same_shape(x0, "x0")?;
    x_prev.values.ensure_same_shape(y, "y")?;
    let shift = y.sub(x0)?;
    let mean = x_prev.values.lincomb(1.0, &shift, alpha)?;
    let var = schedule.kappa * schedule.kappa * alpha;
    Ok(MotionState {
        values: gaussian_motion(&mean, |_| var, rng),
        step: n,
    })
}

/// Closed-form marginal `x^n ~ N(x0 + eta_n d, kappa^2 eta_n)`.
pub fn forward_marginal_sample<R: Rng + ?Sized>(
    x0: &Motion,
    y: &Motion,
    n: usize,
    schedule: &ShiftSchedule,
    rng: &mut R,
) -> Result<MotionState> {
    let (eta, var) = schedule.marginal(n)?;
    let mean = x0.lincomb(1.0 - eta, y, eta)?;
    Ok(MotionState {
        values: gaussian_motion(&mean, |_| var, rng),
        step: n,
    })
}

/// Mean of the reverse kernel, `A_n x^n + B_n x_hat`.
pub fn reverse_mean(x_n: &MotionState, x_hat: &Motion, schedule: &ShiftSchedule) -> Result<Motion> {
    let n = x_n.step;
    x_n.values.lincomb(schedule.a(n)?, x_hat, schedule.b(n)?)
}

/// `x^{n-1} = A_n x^n + B_n x_hat + sqrt(Sigma_n) eps`.
pub fn reverse_step<R: Rng + ?Sized>(
    x_n: &MotionState,
    x_hat: &Motion,
    schedule: &ShiftSchedule,
    rng: &mut R,
) -> Result<MotionState> {
    let mean = reverse_mean(x_n, x_hat, schedule)?;
    let var = schedule.sigma(x_n.step)?;
    Ok(MotionState {
        values: gaussian_motion(&mean, |_| var, rng),
        step: x_n.step - 1,
    })
}

/// Draws `x^N ~ N(y, kappa^2)`.
pub fn initial_state<R: Rng + ?Sized>(y: &Motion, schedule: &ShiftSchedule, rng: &mut R) -> MotionState {
    let var = schedule.kappa * schedule.kappa;
    MotionState {
        values: gaussian_motion(y, |_| var, rng),
        step: schedule.steps(),
    }
}

/// Full reverse chain from `x^N ~ N(y, kappa^2)` down to `x^0`.
pub fn refine<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    y: &Motion,
    denoiser: &D,
    schedule: &ShiftSchedule,
    rng: &mut R,
) -> Result<Motion> {
    let mut state = initial_state(y, schedule, rng);
    while state.step > 0 {
        let x_hat = denoiser.predict(&state.values, y, state.step)?;
        state.values.ensure_same_shape(&x_hat, "denoiser output")?;
        state = reverse_step(&state, &x_hat, schedule, rng)?;
    }
    if !state.values.is_finite() {
        return Err(Error::NonFinite("refined motion".into()));
    }
    Ok(state.values)
}
