//! Run configuration: one JSON document covering every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use physdiff::denoiser::{MlpConfig, DEFAULT_PRIOR_PRECISION};
use physdiff::diffusion::ScheduleConfig;
use physdiff::training::{CorruptionConfig, SynthConfig, TrainConfig};
use physdiff::uncertainty::DEFAULT_SAMPLES;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub frames: usize,
    pub dt: f64,
    pub substeps: usize,
    pub density: f64,
    pub corruption: CorruptionConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            count: d.count,
            frames: d.frames,
            dt: d.dt,
            substeps: d.substeps,
            density: d.density,
            corruption: d.corruption,
        }
    }
}

impl SynthSection {
    pub fn to_config(&self) -> SynthConfig {
        SynthConfig {
            count: self.count,
            frames: self.frames,
            dt: self.dt,
            substeps: self.substeps,
            density: self.density,
            corruption: self.corruption.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaplaceSection {
    pub prior_precision: f64,
}

impl Default for LaplaceSection {
    fn default() -> Self {
        Self {
            prior_precision: DEFAULT_PRIOR_PRECISION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSection {
    /// Auxiliary samples per reverse step.
    pub samples: usize,
}

impl Default for VarianceSection {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
        }
    }
}

/// Default locations; command-line paths take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Everything a run needs. `seed` drives every command and replaces
/// `train.seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
        pub synth: SynthSection,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub model: MlpConfig,
    pub laplace: LaplaceSection,
    pub variance: VarianceSection,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Checks every section; called after flag overrides are applied.
    pub fn validate(&self) -> CliResult<()> {
        self.synth.to_config().corruption.validate()?;
        if !(self.synth.dt > 0.0) || self.synth.substeps == 0 {
            return Err(CliError::Validation("synth.dt must be positive and synth.substeps nonzero".into()));
        }
        if !(self.synth.density > 0.0) {
            return Err(CliError::Validation("synth.density must be positive".into()));
        }
        self.schedule.build()?;
        self.train.validate()?;
        if self.model.window == 0 {
            return Err(CliError::Validation("model.window must be at least 1".into()));
        }
        if !(self.laplace.prior_precision > 0.0 && self.laplace.prior_precision.is_finite()) {
            return Err(CliError::Validation("laplace.prior_precision must be positive".into()));
        }
        if self.variance.samples < 2 {
            return Err(CliError::Validation("variance.samples must be at least 2".into()));
        }
        Ok(())
    }
}
