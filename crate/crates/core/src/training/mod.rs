//! Losses, the training loop, synthetic data and dataset files.

mod dataset;
mod optim;
mod synth;
mod train;

pub use dataset::{read_dataset, write_dataset, CoordinateScaling, Dataset, Manifest, SequenceEntry};
pub use optim::AdamW;
pub use synth::{
    corrupt, generate_motion, hand_model, synth_dataset, CorruptionConfig, SequenceSample, SynthConfig,
};
pub use train::{train, Checkpoint, EpochLosses, TrainOutcome, Trainer, CHECKPOINT_VERSION};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::diffusion::ShiftSchedule;
use crate::dynamics::{el_residual, force_jacobian, residual_vjp, Multibody};
use crate::error::{Error, Result};
use crate::kinematics::{joint_positions, GeneralizedCoords, KinematicTree, Trajectory};
use crate::motion::Motion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the data and geometric terms.
    pub lambda1: f64,
    /// Weight of the physics term.
    pub lambda2: f64,
    /// Divisor turning the kernel variance of step n into the physics-term variance.
    pub c: f64,
    /// Fixed virtual-observable variance; the loss uses the per-step value.
    pub sigma2_virtual: f64,
    /// Lower bound on the physics-term variance, in squared force units.
    pub sigma_floor: f64,
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 2e3,
            lambda2: 500.0,
            c: 10.0,
            sigma2_virtual: 1.0,
            sigma_floor: 50.0,
            learning_rate: 2e-4,
            decay: 0.8,
            decay_every: 10,
            weight_decay: 0.0,
            epochs: 60,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda1", self.lambda1),
            ("c", self.c),
            ("sigma2_virtual", self.sigma2_virtual),
            ("sigma_floor", self.sigma_floor),
            ("decay", self.decay),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        let nonnegative = [
            ("lambda2", self.lambda2),
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in nonnegative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("decay_every and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Stepwise decayed rate for `epoch` (0-based).
    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi((epoch / self.decay_every) as i32)
    }

    /// Variance of the physics virtual observable at step `n`.
    pub fn sigma_n(&self, schedule: &ShiftSchedule, n: usize) -> Result<f64> {
        Ok((schedule.sigma(n)? / self.c).max(self.sigma_floor))
    }
}

/// Mean squared error over every entry.
pub fn loss_data(x_gt: &Motion, x_hat: &Motion) -> Result<f64> {
    x_gt.ensure_same_shape(x_hat, "prediction")?;
    let sum: f64 = x_gt
        .as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x_gt.len() as f64)
}

/// [`loss_data`] and its gradient with respect to `x_hat`.
pub fn loss_data_with_grad(x_gt: &Motion, x_hat: &Motion) -> Result<(f64, Motion)> {
    let loss = loss_data(x_gt, x_hat)?;
    let scale = 2.0 / x_gt.len() as f64;
    let grad = x_hat.zip_map(x_gt, |h, g| scale * (h - g))?;
    Ok((loss, grad))
}

fn frame_joints(tree: &KinematicTree, x: &Motion) -> Result<Vec<Vec<Vector3<f64>>>> {
    tree.check_dim(x.dim(), "trajectory")?;
    x.rows()
        .map(|r| joint_positions(tree, &GeneralizedCoords::from_slice(tree, r)?))
        .collect()
}

/// Position and velocity parts of the geometric loss.
pub fn geometric_terms(tree: &KinematicTree, x_gt: &Motion, x_hat: &Motion) -> Result<(f64, f64)> {
    x_gt.ensure_same_shape(x_hat, "prediction")?;
    let gt = frame_joints(tree, x_gt)?;
    let pred = frame_joints(tree, x_hat)?;
    let joints = tree.part_count() as f64;
    let frames = gt.len();
    let pos: f64 = gt
        .iter()
        .zip(&pred)
        .flat_map(|(g, p)| g.iter().zip(p).map(|(a, b)| (a - b).norm_squared()))
        .sum::<f64>()
        / (frames as f64 * joints);
    let vel = if frames < 2 {
        0.0
    } else {
        let mut s = 0.0;
        for t in 0..frames - 1 {
            for j in 0..gt[t].len() {
                let dg = gt[t + 1][j] - gt[t][j];
                let dp = pred[t + 1][j] - pred[t][j];
                s += (dp - dg).norm_squared();
            }
        }
        s / ((frames - 1) as f64 * joints)
    };
    Ok((pos, vel))
}

/// Mean squared joint-position error plus mean squared frame-difference velocity error.
pub fn loss_geometric(tree: &KinematicTree, x_gt: &Motion, x_hat: &Motion) -> Result<f64> {
    let (p, v) = geometric_terms(tree, x_gt, x_hat)?;
    Ok(p + v)
}

/// [`loss_geometric`] with its gradient with respect to `x_hat`; the joint
/// Jacobian comes from central differences of forward kinematics.
pub fn loss_geometric_with_grad(tree: &KinematicTree, x_gt: &Motion, x_hat: &Motion) -> Result<(f64, Motion)> {
    let loss = loss_geometric(tree, x_gt, x_hat)?;
    let gt = frame_joints(tree, x_gt)?;
    let pred = frame_joints(tree, x_hat)?;
    let (frames, dim) = x_hat.shape();
    let joints = tree.part_count();
    let pos_w = 2.0 / (frames * joints) as f64;
    let vel_w = if frames > 1 { 2.0 / ((frames - 1) * joints) as f64 } else { 0.0 };
    // d loss / d p_t for every joint
    let mut upstream = vec![vec![Vector3::zeros(); joints]; frames];
    for t in 0..frames {
        for j in 0..joints {
            upstream[t][j] += pos_w * (pred[t][j] - gt[t][j]);
        }
    }
    for t in 0..frames.saturating_sub(1) {
        for j in 0..joints {
            let r = (pred[t + 1][j] - pred[t][j]) - (gt[t + 1][j] - gt[t][j]);
            upstream[t + 1][j] += vel_w * r;
            upstream[t][j] -= vel_w * r;
        }
    }
    let mut grad = Motion::zeros(frames, dim);
    let mut q = vec![0.0; dim];
    for t in 0..frames {
        q.copy_from_slice(x_hat.row(t));
        for k in 0..dim {
            let h = 1e-6 * (1.0 + q[k].abs());
            let orig = q[k];
            q[k] = orig + h;
            let plus = joint_positions(tree, &GeneralizedCoords::from_slice(tree, &q)?)?;
            q[k] = orig - h;
            let minus = joint_positions(tree, &GeneralizedCoords::from_slice(tree, &q)?)?;
            q[k] = orig;
            let g: f64 = (0..joints)
                .map(|j| upstream[t][j].dot(&((plus[j] - minus[j]) / (2.0 * h))))
                .sum();
            grad.set(t, k, g);
        }
    }
    Ok((loss, grad))
}

/// `(1 / (2 sigma_n)) sum_t |Z_t|^2` for residuals against `pseudoforce`.
pub fn loss_el(model: &Multibody, x0: &Trajectory, pseudoforce: &Motion, sigma_n: f64) -> Result<f64> {
    check_sigma(sigma_n)?;
    let z = el_residual(model, x0, pseudoforce)?;
    Ok(z.squared_norm() / (2.0 * sigma_n))
}

/// [`loss_el`] and its gradient with respect to the trajectory values.
pub fn loss_el_with_grad(
    model: &Multibody,
    x0: &Trajectory,
    pseudoforce: &Motion,
    sigma_n: f64,
) -> Result<(f64, Motion)> {
    check_sigma(sigma_n)?;
    let z = el_residual(model, x0, pseudoforce)?;
    let loss = z.squared_norm() / (2.0 * sigma_n);
    let jac = force_jacobian(model, x0)?;
    let grad = residual_vjp(&jac, &z.map(|v| v / sigma_n))?;
    Ok((loss, grad))
}

fn check_sigma(sigma_n: f64) -> Result<()> {
    if !(sigma_n > 0.0 && sigma_n.is_finite()) {
        return Err(Error::Parameter(format!("physics variance must be positive, got {sigma_n}")));
    }
    Ok(())
}

/// Unweighted loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub data: f64,
    pub geometric: f64,
    pub el: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.data.is_finite() && self.geometric.is_finite() && self.el.is_finite()
    }
}

/// `lambda1 (data + geometric) + lambda2 el`.
pub fn total_loss(parts: &LossParts, config: &TrainConfig) -> f64 {
    config.lambda1 * (parts.data + parts.geometric) + config.lambda2 * parts.el
}
