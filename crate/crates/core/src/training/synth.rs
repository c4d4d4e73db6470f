//! Synthetic articulated motion and observation corruption.

use std::f64::consts::TAU;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{bias_terms, mass_matrix, pseudoforce, simulate, Integrator, Multibody, RigidBodySet, GRAVITY};
use crate::error::{Error, Result};
use crate::inertia::TriangleMesh;
use crate::kinematics::{KinematicTree, Link, Trajectory, DEFAULT_DT};
use crate::motion::Motion;

/// A clean trajectory, its corrupted observation and the clean pseudoforce.
#[derive(Clone, Debug)]
pub struct SequenceSample {
    pub x_gt: Trajectory,
    pub y: Motion,
    pub force_gt: Motion,
    /// Frames touched by a bias window or a held-pose jump.
    pub corrupted: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Per-frame Gaussian noise on rotational coordinates, rad.
    pub jitter_rot: f64,
    /// Per-frame Gaussian noise on root position, m.
    pub jitter_pos: f64,
    pub bias_probability: f64,
    pub bias_rot: f64,
    pub bias_pos: f64,
    pub bias_max_frames: usize,
    pub jump_probability: f64,
    pub jump_max_frames: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            jitter_rot: 0.02,
            jitter_pos: 0.002,
            bias_probability: 0.5,
            bias_rot: 0.08,
            bias_pos: 0.008,
            bias_max_frames: 6,
            jump_probability: 0.3,
            jump_max_frames: 4,
        }
    }
}

impl CorruptionConfig {
    pub fn none() -> Self {
        Self {
            jitter_rot: 0.0,
            jitter_pos: 0.0,
            bias_probability: 0.0,
            bias_rot: 0.0,
            bias_pos: 0.0,
            bias_max_frames: 0,
            jump_probability: 0.0,
            jump_max_frames: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mags = [self.jitter_rot, self.jitter_pos, self.bias_rot, self.bias_pos];
        if mags.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("corruption magnitudes must be nonnegative".into()));
        }
        for p in [self.bias_probability, self.jump_probability] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub frames: usize,
    pub dt: f64,
    /// Integration steps per frame.
    pub substeps: usize,
    pub density: f64,
    pub corruption: CorruptionConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 100,
            frames: 16,
            dt: DEFAULT_DT,
            substeps: 10,
            density: crate::inertia::DEFAULT_DENSITY,
            corruption: CorruptionConfig::default(),
        }
    }
}

/// Palm with two two-segment fingers, bodies from box meshes at `density`.
pub fn hand_model(density: f64) -> Result<Multibody> {
    let z = |v: f64| Vector3::new(0.0, 0.0, v);
    let links = vec![
        Link { parent: None, offset: Vector3::zeros() },
        Link { parent: Some(0), offset: Vector3::new(-0.02, 0.0, 0.045) },
        Link { parent: Some(1), offset: z(0.04) },
        Link { parent: Some(0), offset: Vector3::new(0.02, 0.0, 0.045) },
        Link { parent: Some(3), offset: z(0.035) },
    ];
    let tree = KinematicTree::new(links)?;
    let segment = |x: f64, z0: f64, len: f64| {
        TriangleMesh::cuboid(Vector3::new(x - 0.008, -0.008, z0), Vector3::new(x + 0.008, 0.008, z0 + len))
    };
    let meshes = vec![
        TriangleMesh::cuboid(Vector3::new(-0.04, -0.012, -0.045), Vector3::new(0.04, 0.012, 0.045)),
        segment(-0.02, 0.045, 0.04),
        segment(-0.02, 0.085, 0.035),
        segment(0.02, 0.045, 0.035),
        segment(0.02, 0.08, 0.03),
    ];
    let bodies = RigidBodySet::from_part_meshes(&tree, &meshes, density)?;
    Multibody::new(tree, bodies, GRAVITY)
}

struct Drive {
    amplitude: Vec<f64>,
    freq: Vec<[f64; 3]>,
    phase: Vec<[f64; 3]>,
}

impl Drive {
    fn sample(tree: &KinematicTree, rng: &mut impl Rng) -> Self {
        let dim = tree.dim();
        let amplitude = (0..dim)
            .map(|j| match j {
                0..3 => 4.0,
                3..6 => 0.3,
                _ => 12.0,
            })
            .collect();
        let freq = (0..dim)
            .map(|_| [0; 3].map(|_| TAU * rng.random_range(0.3..2.5)))
            .collect();
        let phase = (0..dim).map(|_| [0; 3].map(|_| rng.random_range(0.0..TAU))).collect();
        Self { amplitude, freq, phase }
    }

    fn accel(&self, j: usize, t: f64) -> f64 {
        let s: f64 = (0..3).map(|k| (self.freq[j][k] * t + self.phase[j][k]).sin()).sum();
        self.amplitude[j] * s / 3f64.sqrt()
    }
}

/// One clean trajectory driven by gravity compensation, a PD pull toward a
/// random rest pose and band-limited random accelerations.
pub fn generate_motion(
    model: &Multibody,
    frames: usize,
    dt: f64,
    substeps: usize,
    rng: &mut impl Rng,
) -> Result<(Trajectory, Motion)> {
    let tree = &model.tree;
    let dim = tree.dim();
    let stiffness = (TAU * 1.2).powi(2);
    let damping = 2.0 * 0.7 * TAU * 1.2;
    let mut last_err = None;
    for _ in 0..20 {
        let rest: Vec<f64> = (0..dim)
            .map(|j| match j {
                0..3 => rng.random_range(-0.3..0.3),
                3..6 => 0.0,
                _ => rng.random_range(-0.4..0.4),
            })
            .collect();
        let q0: Vec<f64> = rest
            .iter()
            .enumerate()
            .map(|(j, r)| r + if tree.is_rotational(j) { rng.random_range(-0.1..0.1) } else { rng.random_range(-0.01..0.01) })
            .collect();
        let qd0: Vec<f64> = (0..dim).map(|j| if tree.is_rotational(j) { rng.random_range(-0.3..0.3) } else { rng.random_range(-0.02..0.02) }).collect();
        let diag = mass_matrix(tree, &model.bodies, &rest)?.diagonal();
        let drive = Drive::sample(tree, rng);
        let zeros = vec![0.0; dim];
        let torque = |t: f64, q: &[f64], qd: &[f64]| -> DVector<f64> {
            let g = bias_terms(tree, &model.bodies, q, &zeros, &model.gravity)
                .map(|(_, g)| g)
                .unwrap_or_else(|_| DVector::zeros(dim));
            g + DVector::from_fn(dim, |j, _| {
                diag[j] * (drive.accel(j, t) - stiffness * (q[j] - rest[j]) - damping * qd[j])
            })
        };
        match simulate(model, &q0, &qd0, torque, dt, frames, substeps, Integrator::Rk4) {
            Ok(sim) => {
                let ok = tree.rotation_blocks().all(|s| {
                    sim.trajectory
                        .values()
                        .rows()
                        .all(|r| Vector3::new(r[s], r[s + 1], r[s + 2]).norm() < 2.5)
                });
                if ok {
                    return Ok((sim.trajectory, sim.torques));
                }
                last_err = Some(Error::NonFinite("synthetic motion left the rotation chart".into()));
            }
            Err(e) if e.is_numerical() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::NonFinite("synthetic motion".into())))
}

fn window(frames: usize, max_len: usize, rng: &mut impl Rng) -> Option<std::ops::Range<usize>> {
    let max_len = max_len.min(frames);
    if max_len == 0 {
        return None;
    }
    let len = rng.random_range(1..=max_len);
    let start = rng.random_range(0..=frames - len);
    Some(start..start + len)
}

/// Jitter on every frame, a constant offset on a random window and a
/// held pose over another window.
pub fn corrupt(
    tree: &KinematicTree,
    x: &Motion,
    config: &CorruptionConfig,
    rng: &mut impl Rng,
) -> Result<(Motion, Vec<bool>)> {
    config.validate()?;
    tree.check_dim(x.dim(), "trajectory")?;
    let frames = x.frames();
    let sd = |j: usize, rot: f64, pos: f64| if tree.is_rotational(j) { rot } else { pos };
    let mut y = x.clone();
    let mut corrupted = vec![false; frames];
    for t in 0..frames {
        for (j, v) in y.row_mut(t).iter_mut().enumerate() {
            let s = sd(j, config.jitter_rot, config.jitter_pos);
            if s > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                *v += s * e;
            }
        }
    }
    if rng.random_bool(config.bias_probability) {
        if let Some(w) = window(frames, config.bias_max_frames, rng) {
            let offset: Vec<f64> = (0..x.dim())
                .map(|j| {
                    let s = sd(j, config.bias_rot, config.bias_pos);
                    Normal::new(0.0, s).map_or(0.0, |d| d.sample(rng))
                })
                .collect();
            for t in w {
                for (v, o) in y.row_mut(t).iter_mut().zip(&offset) {
                    *v += o;
                }
                corrupted[t] = true;
            }
        }
    }
    if rng.random_bool(config.jump_probability) {
        if let Some(w) = window(frames, config.jump_max_frames, rng) {
            let held = if w.start > 0 { w.start - 1 } else { w.end.min(frames - 1) };
            if w.len() < frames {
                let pose = y.row(held).to_vec();
                for t in w {
                    y.row_mut(t).copy_from_slice(&pose);
                    corrupted[t] = true;
                }
            }
        }
    }
    Ok((y, corrupted))
}

/// `count` independent sequences; sequence `i` uses its own rng stream so the
/// result does not depend on evaluation order.
pub fn synth_dataset(
    model: &Multibody,
    config: &SynthConfig,
    seed: u64,
) -> Result<Vec<SequenceSample>> {
    if config.frames < 3 {
        return Err(Error::InsufficientFrames {
            needed: 3,
            got: config.frames,
        });
    }
    config.corruption.validate()?;
    (0..config.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let (x_gt, _) = generate_motion(model, config.frames, config.dt, config.substeps, &mut rng)?;
            let (y, corrupted) = corrupt(&model.tree, x_gt.values(), &config.corruption, &mut rng)?;
            let force_gt = pseudoforce(model, &x_gt)?;
            Ok(SequenceSample {
                x_gt,
                y,
                force_gt,
                corrupted,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize, corruption: CorruptionConfig) -> SynthConfig {
        SynthConfig {
            count,
            corruption,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn hand_model_shape() {
        let m = hand_model(1000.0).unwrap();
        assert_eq!(m.dim(), 18);
        let palm = m.bodies.bodies()[0];
        assert!((palm.mass - 1000.0 * 0.08 * 0.024 * 0.09).abs() < 1e-9);
    }

    #[test]
    fn zero_corruption_is_identity() {
        let m = hand_model(1000.0).unwrap();
        let data = synth_dataset(&m, &small(2, CorruptionConfig::none()), 3).unwrap();
        for s in &data {
            assert_eq!(&s.y, s.x_gt.values());
            assert!(s.corrupted.iter().all(|c| !c));
        }
    }

    #[test]
    fn seeded_dataset_is_reproducible() {
        let m = hand_model(1000.0).unwrap();
        let a = synth_dataset(&m, &small(3, CorruptionConfig::default()), 11).unwrap();
        let b = synth_dataset(&m, &small(3, CorruptionConfig::default()), 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.x_gt.values(), y.x_gt.values());
            assert_eq!(x.y, y.y);
            assert_eq!(x.corrupted, y.corrupted);
        }
        let c = synth_dataset(&m, &small(3, CorruptionConfig::default()), 12).unwrap();
        assert_ne!(a[0].y, c[0].y);
    }

    #[test]
    fn jitter_matches_folded_normal_mean() {
        let m = hand_model(1000.0).unwrap();
        let sigma = 0.05;
        let corruption = CorruptionConfig {
            jitter_rot: sigma,
            jitter_pos: sigma,
            ..CorruptionConfig::none()
        };
        let data = synth_dataset(&m, &small(20, corruption), 5).unwrap();
        let (mut sum, mut n) = (0.0, 0.0);
        for s in &data {
            for (a, b) in s.y.as_slice().iter().zip(s.x_gt.values().as_slice()) {
                sum += (a - b).abs();
                n += 1.0;
            }
        }
        let expect = sigma * (2.0 / std::f64::consts::PI).sqrt();
        // the folded normal has sd sigma * sqrt(1 - 2/pi)
        let tol = 4.0 * sigma * (1.0 - 2.0 / std::f64::consts::PI).sqrt() / f64::sqrt(n);
        assert!((sum / n - expect).abs() < tol);
    }

    #[test]
    fn pseudoforce_tracks_driving_torque() {
        let m = hand_model(1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (traj, torque) = generate_motion(&m, 16, DEFAULT_DT, 10, &mut rng).unwrap();
        let f = pseudoforce(&m, &traj).unwrap();
        let err = f.sub(&torque).unwrap().max_abs();
        assert!(err < 0.1 * torque.max_abs(), "{err} vs {}", torque.max_abs());
    }
}
