//! Clean-motion predictors `x_hat = f(x^n, y, n)`.
//!
//! [`MlpDenoiser`] is a per-frame MLP over a temporal window whose linear head
//! adds a correction to `x^n`. [`LaplacePosterior`] is a diagonal Gaussian over
//! that head, giving per-output predictive variances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::motion::Motion;

pub trait Denoiser {
    /// Predicted clean motion for the state `x_n` at step `n`.
    fn predict(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<Motion>;

    /// How many frames on either side of `t` can affect the prediction at `t`;
    /// `None` when any frame can.
    fn receptive_radius(&self) -> Option<usize> {
        None
    }
}

/// A denoiser whose prediction comes with per-entry variances.
pub trait ProbabilisticDenoiser: Denoiser {
    fn predict_with_variance(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<(Motion, Motion)>;
}

/// Denoisers ending in a linear head applied to per-frame feature vectors.
pub trait LastLayer: Denoiser {
    /// Head input, one row per frame.
    fn features(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<DMatrix<f64>>;
    /// `(outputs, features)`.
    fn head_shape(&self) -> (usize, usize);
}

/// Always predicts the observation.
#[derive(Clone, Copy, Debug, Default)]
pub struct ObservationDenoiser;

impl Denoiser for ObservationDenoiser {
    fn predict(&self, x_n: &Motion, y: &Motion, _n: usize) -> Result<Motion> {
        x_n.ensure_same_shape(y, "observation")?;
        Ok(y.clone())
    }

    fn receptive_radius(&self) -> Option<usize> {
        Some(0)
    }
}

/// Always predicts a fixed clean motion.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    target: Motion,
}

impl OracleDenoiser {
    pub fn new(target: Motion) -> Self {
        Self { target }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, x_n: &Motion, _y: &Motion, _n: usize) -> Result<Motion> {
        x_n.ensure_same_shape(&self.target, "oracle target")?;
        Ok(self.target.clone())
    }

    fn receptive_radius(&self) -> Option<usize> {
        Some(0)
    }
}

/// Elementwise affine predictor `x_hat = w * x^n + c` with fixed predictive
/// variance.
#[derive(Clone, Debug)]
pub struct AffineDenoiser {
    pub weight: Motion,
    pub offset: Motion,
    pub variance: Motion,
}

impl AffineDenoiser {
    pub fn uniform(frames: usize, dim: usize, weight: f64, offset: f64, variance: f64) -> Self {
        Self {
            weight: Motion::filled(frames, dim, weight),
            offset: Motion::filled(frames, dim, offset),
            variance: Motion::filled(frames, dim, variance),
        }
    }
}

impl Denoiser for AffineDenoiser {
    fn predict(&self, x_n: &Motion, _y: &Motion, _n: usize) -> Result<Motion> {
        x_n.zip_map(&self.weight, |x, w| x * w)?.add(&self.offset)
    }

    fn receptive_radius(&self) -> Option<usize> {
        Some(0)
    }
}

impl ProbabilisticDenoiser for AffineDenoiser {
    fn predict_with_variance(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<(Motion, Motion)> {
        Ok((self.predict(x_n, y, n)?, self.variance.clone()))
    }
}

/// Prior precision used when none is configured.
pub const DEFAULT_PRIOR_PRECISION: f64 = 1.0;

/// Size of the sinusoidal step embedding.
pub const STEP_EMBEDDING: usize = 8;

pub fn step_embedding(n: usize) -> [f64; STEP_EMBEDDING] {
    let mut e = [0.0; STEP_EMBEDDING];
    for i in 0..STEP_EMBEDDING / 2 {
        let phase = n as f64 / f64::powi(2.0, i as i32);
        e[2 * i] = phase.sin();
        e[2 * i + 1] = phase.cos();
    }
    e
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    /// Frames on each side of the predicted frame.
    pub window: usize,
    pub hidden: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            window: 2,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Dense {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
}

impl Dense {
    fn apply(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.weight * input;
        for mut col in out.column_iter_mut() {
            col += &self.bias;
        }
        out
    }
}

/// Windowed per-frame MLP with tanh hidden layers and a residual linear head
/// that sees both the last hidden layer and the standardized inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpDenoiser {
    dim: usize,
    window: usize,
    /// Hidden layers followed by the head.
    layers: Vec<Dense>,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
}

/// Activations recorded by [`MlpDenoiser::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    input: DMatrix<f64>,
    hidden: Vec<DMatrix<f64>>,
    features: DMatrix<f64>,
}

impl Tape {
    /// Head input, features x frames.
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }
}

impl MlpDenoiser {
    /// Xavier-uniform hidden layers and a zero head, so the initial prediction
    /// is `x^n` itself.
    pub fn new<R: Rng + ?Sized>(dim: usize, config: &MlpConfig, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("denoiser dimension must be positive".into()));
        }
        if config.window == 0 {
            return Err(Error::Parameter("window must be at least 1".into()));
        }
        if config.hidden.contains(&0) {
            return Err(Error::Parameter("hidden layers must be non-empty".into()));
        }
        let input = Self::input_size_for(dim, config.window);
        let mut layers = Vec::new();
        let mut fan_in = input;
        for &width in &config.hidden {
            let limit = (6.0 / (fan_in + width) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            layers.push(Dense {
                weight: DMatrix::from_fn(width, fan_in, |_, _| dist.sample(rng)),
                bias: DVector::zeros(width),
            });
            fan_in = width;
        }
        if !config.hidden.is_empty() {
            fan_in += input;
        }
        layers.push(Dense {
            weight: DMatrix::zeros(dim, fan_in),
            bias: DVector::zeros(dim),
        });
        Ok(Self {
            dim,
            window: config.window,
            layers,
            input_mean: vec![0.0; input],
            input_scale: vec![1.0; input],
        })
    }

    fn input_size_for(dim: usize, window: usize) -> usize {
        (2 * window + 1) * 2 * dim + dim + STEP_EMBEDDING
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn input_size(&self) -> usize {
        Self::input_size_for(self.dim, self.window)
    }

    pub fn feature_size(&self) -> usize {
        self.head().0.ncols()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn head(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        let h = self.layers.last().expect("head layer");
        (&h.weight, &h.bias)
    }

    pub fn head_mut(&mut self) -> (&mut DMatrix<f64>, &mut DVector<f64>) {
        let h = self.layers.last_mut().expect("head layer");
        (&mut h.weight, &mut h.bias)
    }

    fn check_inputs(&self, x_n: &Motion, y: &Motion) -> Result<()> {
        x_n.ensure_same_shape(y, "observation")?;
        if x_n.dim() != self.dim {
            return Err(shape_err(format!(
                "denoiser expects dim {}, got {}",
                self.dim,
                x_n.dim()
            )));
        }
        if x_n.frames() == 0 {
            return Err(shape_err("empty motion"));
        }
        Ok(())
    }

    /// Unstandardized inputs, one column per frame: window offsets of `x^n`
    /// and `y` relative to `x^n_t`, then `x^n_t`, then the step embedding.
    pub fn raw_inputs(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<DMatrix<f64>> {
        self.check_inputs(x_n, y)?;
        let frames = x_n.frames();
        let dim = self.dim;
        let w = self.window as isize;
        let emb = step_embedding(n);
        let mut out = DMatrix::zeros(self.input_size(), frames);
        for t in 0..frames {
            let centre = x_n.row(t);
            let mut col = out.column_mut(t);
            let mut k = 0;
            for off in -w..=w {
                let s = (t as isize + off).clamp(0, frames as isize - 1) as usize;
                for (src, j0) in [(x_n.row(s), 0), (y.row(s), dim)] {
                    for j in 0..dim {
                        col[k + j0 + j] = src[j] - centre[j];
                    }
                }
                k += 2 * dim;
            }
            for j in 0..dim {
                col[k + j] = centre[j];
            }
            k += dim;
            for (i, e) in emb.iter().enumerate() {
                col[k + i] = *e;
            }
        }
        Ok(out)
    }

    fn standardized(&self, mut raw: DMatrix<f64>) -> DMatrix<f64> {
        for mut col in raw.column_iter_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = (*v - self.input_mean[i]) / self.input_scale[i];
            }
        }
        raw
    }

    /// Fits per-input mean and standard deviation over every frame of the
    /// given `(x_n, y, n)` examples.
    pub fn fit_input_standardization(&mut self, examples: &[(Motion, Motion, usize)]) -> Result<()> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let size = self.input_size();
        let mut sum = vec![0.0; size];
        let mut sq = vec![0.0; size];
        let mut count = 0usize;
        for (x, y, n) in examples {
            let raw = self.raw_inputs(x, y, *n)?;
            for col in raw.column_iter() {
                for (i, v) in col.iter().enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                }
                count += 1;
            }
        }
        let c = count as f64;
        for i in 0..size {
            let mean = sum[i] / c;
            let var = (sq[i] / c - mean * mean).max(0.0);
            self.input_mean[i] = mean;
            self.input_scale[i] = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
        }
        Ok(())
    }

    fn hidden_pass(&self, input: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() - 1);
        for layer in &self.layers[..self.layers.len() - 1] {
            let prev = acts.last().unwrap_or(input);
            let act = layer.apply(prev).map(f64::tanh);
            acts.push(act);
        }
        acts
    }

    fn head_input(input: &DMatrix<f64>, hidden: &[DMatrix<f64>]) -> DMatrix<f64> {
        match hidden.last() {
            None => input.clone(),
            Some(last) => {
                let mut f = DMatrix::zeros(last.nrows() + input.nrows(), input.ncols());
                f.rows_mut(0, last.nrows()).copy_from(last);
                f.rows_mut(last.nrows(), input.nrows()).copy_from(input);
                f
            }
        }
    }

    fn finish(&self, x_n: &Motion, features: &DMatrix<f64>) -> Motion {
        let out = self.layers.last().expect("head layer").apply(features);
        let mut pred = x_n.clone();
        for t in 0..x_n.frames() {
            for (v, d) in pred.row_mut(t).iter_mut().zip(out.column(t).iter()) {
                *v += d;
            }
        }
        pred
    }

    /// Prediction plus the activations needed by [`MlpDenoiser::backward`].
    pub fn forward(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<(Motion, Tape)> {
        let input = self.standardized(self.raw_inputs(x_n, y, n)?);
        let hidden = self.hidden_pass(&input);
        let features = Self::head_input(&input, &hidden);
        let pred = self.finish(x_n, &features);
        let tape = Tape {
            input,
            hidden,
            features,
        };
        Ok((pred, tape))
    }

    /// Gradient of `sum(upstream * x_hat)` with respect to the flattened
    /// parameters, in [`MlpDenoiser::params`] order. `x_n` is held fixed.
    pub fn backward(&self, tape: &Tape, upstream: &Motion) -> Result<Vec<f64>> {
        let frames = tape.input.ncols();
        if upstream.shape() != (frames, self.dim) {
            return Err(shape_err(format!(
                "upstream gradient {:?} does not match forward pass ({frames}, {})",
                upstream.shape(),
                self.dim
            )));
        }
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut g = DMatrix::from_fn(self.dim, frames, |j, t| upstream.get(t, j));
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = if l == last {
                &tape.features
            } else if l == 0 {
                &tape.input
            } else {
                &tape.hidden[l - 1]
            };
            if l < last {
                let act = &tape.hidden[l];
                g.zip_apply(act, |gv, a| *gv *= 1.0 - a * a);
            }
            let dw = &g * input.transpose();
            let db = g.column_sum();
            if l > 0 {
                // only the hidden part of the head input carries gradient further
                let width = self.layers[l - 1].weight.nrows();
                g = layer.weight.columns(0, width).transpose() * &g;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (dw, db) in grads {
            flat.extend_from_slice(dw.as_slice());
            flat.extend_from_slice(db.as_slice());
        }
        Ok(flat)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flattened `(weight, bias)` index ranges of each layer, head last.
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.layers
            .iter()
            .map(|l| {
                let len = l.weight.len() + l.bias.len();
                start += len;
                start - len..start
            })
            .collect()
    }

    /// All parameters, layer by layer: column-major weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            flat.extend_from_slice(l.weight.as_slice());
            flat.extend_from_slice(l.bias.as_slice());
        }
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape_err(format!(
                "{} parameters for a model with {}",
                flat.len(),
                self.param_count()
            )));
        }
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("denoiser parameters".into()));
        }
        let mut k = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[k..k + n]);
            k += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[k..k + n]);
            k += n;
        }
        Ok(())
    }
}

impl Denoiser for MlpDenoiser {
    fn predict(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<Motion> {
        let input = self.standardized(self.raw_inputs(x_n, y, n)?);
        let hidden = self.hidden_pass(&input);
        Ok(self.finish(x_n, &Self::head_input(&input, &hidden)))
    }

    fn receptive_radius(&self) -> Option<usize> {
        Some(self.window)
    }
}

impl LastLayer for MlpDenoiser {
    fn features(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<DMatrix<f64>> {
        let input = self.standardized(self.raw_inputs(x_n, y, n)?);
        let hidden = self.hidden_pass(&input);
        Ok(Self::head_input(&input, &hidden).transpose())
    }

    fn head_shape(&self) -> (usize, usize) {
        (self.dim, self.feature_size())
    }
}

/// Diagonal Gaussian posterior over the head weights and biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacePosterior {
    prior_precision: f64,
    weight_precision: DMatrix<f64>,
    bias_precision: DVector<f64>,
}

impl LaplacePosterior {
    pub fn prior_precision(&self) -> f64 {
        self.prior_precision
    }

    pub fn weight_variance(&self) -> DMatrix<f64> {
        self.weight_precision.map(|p| 1.0 / p)
    }

    pub fn bias_variance(&self) -> DVector<f64> {
        self.bias_precision.map(|p| 1.0 / p)
    }

    /// `gamma^2_{t,j} = sum_k a_{t,k}^2 var(W_jk) + var(b_j)` for features `a`
    /// given one row per frame.
    pub fn predictive_variance(&self, features: &DMatrix<f64>) -> Result<Motion> {
        let (outputs, width) = self.weight_precision.shape();
        if features.ncols() != width {
            return Err(shape_err(format!(
                "{} features for a head of width {width}",
                features.ncols()
            )));
        }
        let wv = self.weight_variance();
        let bv = self.bias_variance();
        let sq = features.map(|a| a * a);
        let contrib = sq * wv.transpose();
        Ok(Motion::from_fn(features.nrows(), outputs, |t, j| contrib[(t, j)] + bv[j]))
    }
}

/// Gauss-Newton diagonal for a squared loss: each head row shares the
/// precision `prior + sum a_k^2` over every frame of every example.
pub fn fit_laplace<D: LastLayer + ?Sized>(
    model: &D,
    examples: &[(Motion, Motion, usize)],
    prior_precision: f64,
) -> Result<LaplacePosterior> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(prior_precision > 0.0 && prior_precision.is_finite()) {
        return Err(Error::Parameter(format!(
            "prior precision must be positive, got {prior_precision}"
        )));
    }
    let (outputs, width) = model.head_shape();
    let mut sq = DVector::<f64>::zeros(width);
    let mut count = 0.0;
    for (x, y, n) in examples {
        let a = model.features(x, y, *n)?;
        for row in a.row_iter() {
            for (k, v) in row.iter().enumerate() {
                sq[k] += v * v;
            }
            count += 1.0;
        }
    }
    Ok(LaplacePosterior {
        prior_precision,
        weight_precision: DMatrix::from_fn(outputs, width, |_, k| prior_precision + sq[k]),
        bias_precision: DVector::from_element(outputs, prior_precision + count),
    })
}

/// Mean prediction and predictive variance of the head under the posterior.
pub fn predict_with_variance<D: LastLayer + ?Sized>(
    model: &D,
    posterior: &LaplacePosterior,
    x_n: &Motion,
    y: &Motion,
    n: usize,
) -> Result<(Motion, Motion)> {
    let mean = model.predict(x_n, y, n)?;
    let var = posterior.predictive_variance(&model.features(x_n, y, n)?)?;
    Ok((mean, var))
}

/// A last-layer model paired with its posterior.
#[derive(Clone, Copy, Debug)]
pub struct LaplaceDenoiser<'a, D: ?Sized> {
    pub model: &'a D,
    pub posterior: &'a LaplacePosterior,
}

impl<D: LastLayer + ?Sized> Denoiser for LaplaceDenoiser<'_, D> {
    fn predict(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<Motion> {
        self.model.predict(x_n, y, n)
    }

    fn receptive_radius(&self) -> Option<usize> {
        self.model.receptive_radius()
    }
}

impl<D: LastLayer + ?Sized> ProbabilisticDenoiser for LaplaceDenoiser<'_, D> {
    fn predict_with_variance(&self, x_n: &Motion, y: &Motion, n: usize) -> Result<(Motion, Motion)> {
        predict_with_variance(self.model, self.posterior, x_n, y, n)
    }
}
