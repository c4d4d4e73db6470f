//! Dataset directories and per-coordinate normalization.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::{CorruptionConfig, SequenceSample};
use crate::dynamics::{pseudoforce, Multibody, RigidBodySet};
use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, TrajectoryFile};
use crate::motion::Motion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub gt: String,
    pub observed: String,
    /// Frames touched by bias windows or jumps.
    #[serde(default)]
    pub corrupted_frames: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dt: f64,
    pub frames: usize,
    pub seed: u64,
    pub tree: String,
    pub bodies: String,
    pub gravity: [f64; 3],
    pub corruption: CorruptionConfig,
    pub sequences: Vec<SequenceEntry>,
}

/// Model plus sequences, as stored in a dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub model: Multibody,
    pub dt: f64,
    pub seed: u64,
    pub corruption: CorruptionConfig,
    pub samples: Vec<SequenceSample>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `manifest.json`, `tree.json`, `bodies.json` and one gt/observed
/// trajectory pair per sequence.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let frames = data.samples.first().map_or(0, |s| s.y.frames());
    write_json(&dir.join("tree.json"), &data.model.tree)?;
    write_json(&dir.join("bodies.json"), &data.model.bodies)?;
    let mut sequences = Vec::with_capacity(data.samples.len());
    for (i, s) in data.samples.iter().enumerate() {
        let entry = SequenceEntry {
            gt: format!("seq_{i:04}_gt.json"),
            observed: format!("seq_{i:04}_obs.json"),
            corrupted_frames: s
                .corrupted
                .iter()
                .enumerate()
                .filter_map(|(t, c)| c.then_some(t))
                .collect(),
        };
        write_json(&dir.join(&entry.gt), &TrajectoryFile::from(&s.x_gt))?;
        write_json(&dir.join(&entry.observed), &TrajectoryFile::from_motion(&s.y, data.dt))?;
        sequences.push(entry);
    }
    let g = data.model.gravity;
    let manifest = Manifest {
        dt: data.dt,
        frames,
        seed: data.seed,
        tree: "tree.json".into(),
        bodies: "bodies.json".into(),
        gravity: [g.x, g.y, g.z],
        corruption: data.corruption.clone(),
        sequences,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let tree: KinematicTree = read_json(&dir.join(&manifest.tree))?;
    let bodies: RigidBodySet = read_json(&dir.join(&manifest.bodies))?;
    let model = Multibody::new(tree, bodies, manifest.gravity.into())?;
    let mut samples = Vec::with_capacity(manifest.sequences.len());
    for entry in &manifest.sequences {
        let gt: TrajectoryFile = read_json(&dir.join(&entry.gt))?;
        let obs: TrajectoryFile = read_json(&dir.join(&entry.observed))?;
        let x_gt = gt.to_trajectory()?;
        model.tree.check_dim(x_gt.dim(), "ground truth")?;
        let y = obs.to_motion()?;
        x_gt.values().ensure_same_shape(&y, "observation")?;
        if (gt.dt - obs.dt).abs() > 1e-12 * gt.dt.abs() {
            return Err(Error::Parameter(format!("{} and {} disagree on dt", entry.gt, entry.observed)));
        }
        let mut corrupted = vec![false; y.frames()];
        for &t in &entry.corrupted_frames {
            *corrupted
                .get_mut(t)
                .ok_or_else(|| Error::Parse(format!("corrupted frame {t} out of range in {}", entry.gt)))? = true;
        }
        let force_gt = pseudoforce(&model, &x_gt)?;
        samples.push(SequenceSample {
            x_gt,
            y,
            force_gt,
            corrupted,
        });
    }
    Ok(Dataset {
        model,
        dt: manifest.dt,
        seed: manifest.seed,
        corruption: manifest.corruption,
        samples,
    })
}

/// Affine per-coordinate map `z = (q - mean) / scale` under which the
/// diffusion and the denoiser operate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinateScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl CoordinateScaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean of the clean coordinates and RMS observation error per coordinate,
    /// so that unit noise in scaled space matches the typical observation error.
    pub fn fit(samples: &[SequenceSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let dim = first.y.dim();
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut err = vec![0.0; dim];
        let mut count = 0.0;
        for s in samples {
            s.x_gt.values().ensure_same_shape(&s.y, "observation")?;
            if s.y.dim() != dim {
                return Err(crate::error::shape_err(format!("dimension {} vs {dim}", s.y.dim())));
            }
            for (g, o) in s.x_gt.values().rows().zip(s.y.rows()) {
                for j in 0..dim {
                    sum[j] += g[j];
                    sq[j] += g[j] * g[j];
                    err[j] += (o[j] - g[j]).powi(2);
                }
                count += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let scale = (0..dim)
            .map(|j| {
                let rms = (err[j] / count).sqrt();
                let sd = (sq[j] / count - mean[j] * mean[j]).max(0.0).sqrt();
                if rms > 1e-9 {
                    rms
                } else if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, m: &Motion) -> Result<()> {
        if m.dim() != self.dim() {
            return Err(crate::error::shape_err(format!(
                "scaling has dimension {} but motion has {}",
                self.dim(),
                m.dim()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, m: &Motion) -> Result<Motion> {
        self.check(m)?;
        Ok(Motion::from_fn(m.frames(), m.dim(), |t, j| (m.get(t, j) - self.mean[j]) / self.scale[j]))
    }

    pub fn denormalize(&self, m: &Motion) -> Result<Motion> {
        self.check(m)?;
        Ok(Motion::from_fn(m.frames(), m.dim(), |t, j| m.get(t, j) * self.scale[j] + self.mean[j]))
    }

    /// Chain rule from raw-space gradients to scaled-space gradients.
    pub fn pull_back_gradient(&self, grad_raw: &Motion) -> Result<Motion> {
        self.check(grad_raw)?;
        Ok(Motion::from_fn(grad_raw.frames(), grad_raw.dim(), |t, j| grad_raw.get(t, j) * self.scale[j]))
    }

    /// Scaled-space variances to raw-space variances.
    pub fn denormalize_variance(&self, var: &Motion) -> Result<Motion> {
        self.check(var)?;
        Ok(Motion::from_fn(var.frames(), var.dim(), |t, j| var.get(t, j) * self.scale[j].powi(2)))
    }
}

#[cfg(test)]
mod tests {
    use super::super::synth::{hand_model, synth_dataset, SynthConfig};
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let model = hand_model(1000.0).unwrap();
        let config = SynthConfig {
            count: 3,
            ..SynthConfig::default()
        };
        let samples = synth_dataset(&model, &config, 9).unwrap();
        let data = Dataset {
            model: model.clone(),
            dt: config.dt,
            seed: 9,
            corruption: config.corruption.clone(),
            samples,
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.samples.len(), 3);
        for (a, b) in data.samples.iter().zip(&back.samples) {
            assert_eq!(a.x_gt.values(), b.x_gt.values());
            assert_eq!(a.y, b.y);
            assert_eq!(a.corrupted, b.corrupted);
            assert_eq!(a.force_gt, b.force_gt);
        }
    }

    #[test]
    fn scaling_round_trip() {
        let model = hand_model(1000.0).unwrap();
        let samples = synth_dataset(&model, &SynthConfig { count: 4, ..SynthConfig::default() }, 1).unwrap();
        let s = CoordinateScaling::fit(&samples).unwrap();
        assert!(s.scale.iter().all(|v| *v > 0.0));
        let y = &samples[0].y;
        let back = s.denormalize(&s.normalize(y).unwrap()).unwrap();
        assert!(back.sub(y).unwrap().max_abs() < 1e-12);
    }
}
