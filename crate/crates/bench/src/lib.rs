//! Shared inputs for the benchmarks.

use physdiff::denoiser::{fit_laplace, LaplacePosterior, MlpConfig, MlpDenoiser};
use physdiff::diffusion::{forward_marginal_sample, ScheduleConfig, ShiftSchedule};
use physdiff::dynamics::Multibody;
use physdiff::inertia::DEFAULT_DENSITY;
use physdiff::training::{hand_model, synth_dataset, SequenceSample, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Scene {
    pub body: Multibody,
    pub sample: SequenceSample,
    pub schedule: ShiftSchedule,
    pub model: MlpDenoiser,
    pub posterior: LaplacePosterior,
}

/// The hand model, one synthetic sequence, and an untrained denoiser with a
/// posterior fitted on that sequence.
pub fn scene() -> Scene {
    let body = hand_model(DEFAULT_DENSITY).expect("hand model");
    let sample = synth_dataset(&body, &SynthConfig { count: 1, ..Default::default() }, 0)
        .expect("synthetic sequence")
        .remove(0);
    let schedule = ScheduleConfig::default().build().expect("schedule");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = MlpDenoiser::new(body.dim(), &MlpConfig::default(), &mut rng).expect("model");
    let examples: Vec<_> = (1..=schedule.steps())
        .map(|n| {
            let x_n = forward_marginal_sample(sample.x_gt.values(), &sample.y, n, &schedule, &mut rng)
                .expect("forward sample");
            (x_n.values, sample.y.clone(), n)
        })
        .collect();
    let posterior = fit_laplace(&model, &examples, 1.0).expect("posterior");
    Scene {
        body,
        sample,
        schedule,
        model,
        posterior,
    }
}
