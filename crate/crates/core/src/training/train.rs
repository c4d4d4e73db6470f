use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::CoordinateScaling;
use super::optim::AdamW;
use super::synth::SequenceSample;
use super::{
    loss_data_with_grad, loss_el_with_grad, loss_geometric_with_grad, total_loss, LossParts, TrainConfig,
};
use crate::denoiser::{fit_laplace, Denoiser, LaplaceDenoiser, LaplacePosterior, MlpConfig, MlpDenoiser};
use crate::diffusion::{forward_marginal_sample, initial_state, refine, reverse_step, ShiftSchedule};
use crate::dynamics::Multibody;
use crate::error::{Error, Result};
use crate::kinematics::Trajectory;
use crate::motion::Motion;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: MlpDenoiser,
    pub scaling: CoordinateScaling,
    pub schedule: ShiftSchedule,
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub epochs_done: usize,
    #[serde(default)]
    pub posterior: Option<LaplacePosterior>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.model.dim() != ck.scaling.dim() {
            return Err(Error::Parse("checkpoint scaling does not match the model".into()));
        }
        Ok(ck)
    }

    /// Refines a raw-space observation; the chain runs in scaled coordinates.
    pub fn refine<R: Rng + ?Sized>(&self, y: &Motion, rng: &mut R) -> Result<Motion> {
        let y_n = self.scaling.normalize(y)?;
        let x = refine(&y_n, &self.model, &self.schedule, rng)?;
        self.scaling.denormalize(&x)
    }

    /// Fits the last-layer posterior on forward-diffused training samples,
    /// one draw per sequence and step.
    pub fn fit_posterior(&mut self, samples: &[SequenceSample], prior_precision: f64, seed: u64) -> Result<()> {
        let mut rng = stream_rng(seed, 1);
        let mut examples = Vec::with_capacity(samples.len() * self.schedule.steps());
        for s in samples {
            let x = self.scaling.normalize(s.x_gt.values())?;
            let y = self.scaling.normalize(&s.y)?;
            for n in 1..=self.schedule.steps() {
                let x_n = forward_marginal_sample(&x, &y, n, &self.schedule, &mut rng)?;
                examples.push((x_n.values, y.clone(), n));
            }
        }
        self.posterior = Some(fit_laplace(&self.model, &examples, prior_precision)?);
        Ok(())
    }

    pub fn laplace(&self) -> Result<LaplaceDenoiser<'_, MlpDenoiser>> {
        let posterior = self
            .posterior
            .as_ref()
            .ok_or_else(|| Error::Parameter("checkpoint has no Laplace posterior".into()))?;
        Ok(LaplaceDenoiser {
            model: &self.model,
            posterior,
        })
    }
}

/// Sequence-averaged losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub data: f64,
    pub geometric: f64,
    pub el: f64,
    pub total: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<EpochLosses>,
}

/// Training state: a checkpoint plus the body model the physics term uses.
pub struct Trainer<'a> {
    pub checkpoint: Checkpoint,
    body: &'a Multibody,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<'a> Trainer<'a> {
    /// Fresh model with input standardization fitted on forward-diffused samples.
    pub fn new(
        body: &'a Multibody,
        samples: &[SequenceSample],
        schedule: ShiftSchedule,
        config: TrainConfig,
        mlp: &MlpConfig,
    ) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scaling = CoordinateScaling::fit(samples)?;
        let mut rng = stream_rng(config.seed, 0);
        let mut model = MlpDenoiser::new(body.dim(), mlp, &mut rng)?;
        let mut examples = Vec::new();
        for s in samples {
            let x = scaling.normalize(s.x_gt.values())?;
            let y = scaling.normalize(&s.y)?;
            for n in 1..=schedule.steps() {
                let x_n = forward_marginal_sample(&x, &y, n, &schedule, &mut rng)?;
                examples.push((x_n.values, y.clone(), n));
            }
        }
        model.fit_input_standardization(&examples)?;
        let optimizer = AdamW::new(model.param_count(), config.weight_decay);
        Ok(Self {
            checkpoint: Checkpoint {
                version: CHECKPOINT_VERSION,
                model,
                scaling,
                schedule,
                config,
                optimizer,
                epochs_done: 0,
                posterior: None,
            },
            body,
        })
    }

    pub fn resume(body: &'a Multibody, checkpoint: Checkpoint) -> Result<Self> {
        checkpoint.config.validate()?;
        body.tree.check_dim(checkpoint.model.dim(), "checkpoint model")?;
        Ok(Self { checkpoint, body })
    }

    /// Loss parts and parameter gradient for one sequence.
    fn sequence_gradient(
        &self,
        sample: &SequenceSample,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(LossParts, Vec<f64>)> {
        let ck = &self.checkpoint;
        let (model, scaling, schedule, config) = (&ck.model, &ck.scaling, &ck.schedule, &ck.config);
        let x_gt = scaling.normalize(sample.x_gt.values())?;
        let y = scaling.normalize(&sample.y)?;
        let x_n = forward_marginal_sample(&x_gt, &y, n, schedule, rng)?;
        let (x_hat, tape) = model.forward(&x_n.values, &y, n)?;
        let (data, g_data) = loss_data_with_grad(&x_gt, &x_hat)?;
        let (geometric, g_geo) =
            loss_geometric_with_grad(&self.body.tree, sample.x_gt.values(), &scaling.denormalize(&x_hat)?)?;
        let upstream = g_data
            .add(&scaling.pull_back_gradient(&g_geo)?)?
            .map(|g| config.lambda1 * g);
        let mut grad = model.backward(&tape, &upstream)?;

        let mut el = 0.0;
        if config.lambda2 > 0.0 {
            // stop-gradient through every step but the last prediction
            let mut state = initial_state(&y, schedule, rng);
            while state.step > 1 {
                let pred = model.predict(&state.values, &y, state.step)?;
                state = reverse_step(&state, &pred, schedule, rng)?;
            }
            let (pred, tape0) = model.forward(&state.values, &y, 1)?;
            let x0 = reverse_step(&state, &pred, schedule, rng)?;
            let traj = Trajectory::new(scaling.denormalize(&x0.values)?, sample.x_gt.dt())?;
            let sigma = config.sigma_n(schedule, n)?;
            let (loss, g_el) = loss_el_with_grad(self.body, &traj, &sample.force_gt, sigma)?;
            el = loss;
            let w = config.lambda2 * schedule.b(1)?;
            let g0 = model.backward(&tape0, &scaling.pull_back_gradient(&g_el)?.map(|g| w * g))?;
            for (a, b) in grad.iter_mut().zip(g0) {
                *a += b;
            }
        }
        Ok((LossParts { data, geometric, el }, grad))
    }

    /// One pass over `samples` in shuffled minibatches.
    pub fn run_epoch(&mut self, samples: &[SequenceSample]) -> Result<EpochLosses> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let epoch = self.checkpoint.epochs_done;
        let config = self.checkpoint.config.clone();
        let seed = config.seed;
        let rate = config.rate_at(epoch);
        let mut shuffle_rng = stream_rng(seed, ((epoch as u64 + 1) << 32) | 0xffff_ffff);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        // every step appears equally often per epoch; each draw is still uniform
        let steps = self.checkpoint.schedule.steps();
        let mut step_of: Vec<usize> = (0..samples.len()).map(|k| k % steps + 1).collect();
        step_of.shuffle(&mut shuffle_rng);
        let mut sums = LossParts::default();
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(LossParts, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = stream_rng(seed, ((epoch as u64 + 1) << 32) | i as u64);
                    self.sequence_gradient(&samples[i], step_of[i], &mut rng)
                })
                .collect();
            let mut grad = vec![0.0; self.checkpoint.model.param_count()];
            for r in results {
                let (parts, g) = r?;
                if !parts.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {epoch}: {parts:?}")));
                }
                sums.data += parts.data;
                sums.geometric += parts.geometric;
                sums.el += parts.el;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let ck = &mut self.checkpoint;
            let mut params = ck.model.params();
            ck.optimizer.step(&mut params, &grad, rate)?;
            ck.model.set_params(&params)?;
        }
        let count = samples.len() as f64;
        let mean = LossParts {
            data: sums.data / count,
            geometric: sums.geometric / count,
            el: sums.el / count,
        };
        self.checkpoint.epochs_done += 1;
        let losses = EpochLosses {
            epoch: epoch + 1,
            data: mean.data,
            geometric: mean.geometric,
            el: mean.el,
            total: total_loss(&mean, &config),
        };
        log::debug!("epoch {}: {:?}", losses.epoch, losses);
        Ok(losses)
    }

    /// Runs `epochs` more epochs.
    pub fn run(&mut self, samples: &[SequenceSample], epochs: usize) -> Result<Vec<EpochLosses>> {
        (0..epochs).map(|_| self.run_epoch(samples)).collect()
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.checkpoint
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(
    body: &Multibody,
    samples: &[SequenceSample],
    schedule: ShiftSchedule,
    config: TrainConfig,
    mlp: &MlpConfig,
) -> Result<TrainOutcome> {
    let epochs = config.epochs;
    let mut trainer = Trainer::new(body, samples, schedule, config, mlp)?;
    let losses = trainer.run(samples, epochs)?;
    Ok(TrainOutcome {
        checkpoint: trainer.into_checkpoint(),
        losses,
    })
}
