use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::denoiser::{AffineDenoiser, Denoiser, MlpConfig, MlpDenoiser};
use crate::diffusion::ScheduleConfig;
use crate::dynamics::{pseudoforce, RigidBodySet, GRAVITY};
use crate::inertia::BodyParams;
use crate::kinematics::Link;

fn schedule() -> ShiftSchedule {
    ScheduleConfig::default().build().unwrap()
}

fn random_motion(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> Motion {
    Motion::from_fn(frames, dim, |_, _| rng.random_range(-1.0..1.0))
}

fn positive_motion(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> Motion {
    Motion::from_fn(frames, dim, |_, _| rng.random_range(0.01..1.0))
}

#[test]
fn expectation_cases() {
    let s = schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_motion(&mut rng, 4, 3);
    let same = step_expectation(&m, &m, 3, &s).unwrap();
    assert!(same.sub(&m).unwrap().max_abs() < 1e-15);
    let hat = random_motion(&mut rng, 4, 3);
    assert_eq!(step_expectation(&m, &hat, 1, &s).unwrap(), hat);
    let e = step_expectation(&m, &hat, 2, &s).unwrap();
    let (a, b) = (s.a(2).unwrap(), s.b(2).unwrap());
    for i in 0..12 {
        let want = a * m.as_slice()[i] + b * hat.as_slice()[i];
        assert!((e.as_slice()[i] - want).abs() < 1e-15);
    }
    assert!(matches!(step_expectation(&m, &hat, 0, &s), Err(Error::StepOutOfRange { .. })));
    assert!(matches!(step_expectation(&m, &hat, 5, &s), Err(Error::StepOutOfRange { .. })));
}

#[test]
fn variance_step_cases() {
    let s = schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = positive_motion(&mut rng, 3, 2);
    let zero = Motion::zeros(3, 2);
    for n in 1..=4 {
        let sigma = s.sigma(n).unwrap();
        let a = s.a(n).unwrap();
        let (correlated, f) = step_variance(&v, &v, &v, n, &s).unwrap();
        assert_eq!(f, 0);
        let (independent, _) = step_variance(&v, &zero, &zero, n, &s).unwrap();
        for i in 0..6 {
            let vi = v.as_slice()[i];
            assert!((correlated.as_slice()[i] - (vi + sigma)).abs() < 1e-14);
            assert!((independent.as_slice()[i] - (a * a * vi + sigma)).abs() < 1e-15);
        }
    }
    let neg = Motion::filled(3, 2, -10.0);
    let (out, floored) = step_variance(&v, &zero, &neg, 3, &s).unwrap();
    assert_eq!(floored, 6);
    assert!(out.as_slice().iter().all(|x| *x == 0.0));
}

#[test]
fn covariance_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sd = 0.7;
    let count = 100_000;
    let mean = Motion::filled(1, 2, 0.4);
    let xs: Vec<Motion> = (0..count)
        .map(|_| mean.map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let own = mc_covariance(&xs, &xs).unwrap();
    for v in own.as_slice() {
        assert!((v / (sd * sd) - 1.0).abs() < 0.03, "{v}");
    }
    let c = 1.5;
    let constant = vec![Motion::filled(1, 2, c); count];
    let est = mc_covariance(&xs, &constant).unwrap();
    assert!(est.as_slice().iter().all(|v| v.abs() < 1e-12));
    let two = [Motion::filled(1, 1, 1.0), Motion::filled(1, 1, 3.0)];
    let neg = [Motion::filled(1, 1, 2.0), Motion::filled(1, 1, 0.0)];
    assert_eq!(mc_covariance(&two, &neg).unwrap().get(0, 0), -2.0);
    assert!(mc_covariance(&xs[..1], &xs[..1]).is_err());
    assert!(mc_covariance(&xs[..3], &xs[..2]).is_err());
}

/// Exact variance of x^0 for an affine denoiser, by tracking each entry's
/// coefficients on the independent Gaussian sources of the sampler.
fn affine_chain_variance(w: f64, gamma2: f64, start_var: f64, s: &ShiftSchedule) -> f64 {
    // sources: initial state, then per step one prediction and one kernel draw
    let mut coeffs = vec![1.0];
    let mut vars = vec![start_var];
    for n in (1..=s.steps()).rev() {
        let (a, b, sigma) = (s.a(n).unwrap(), s.b(n).unwrap(), s.sigma(n).unwrap());
        coeffs = coeffs.iter().map(|c| (a + b * w) * c).collect();
        coeffs.push(b);
        vars.push(gamma2);
        coeffs.push(1.0);
        vars.push(sigma);
    }
    coeffs.iter().zip(&vars).map(|(c, v)| c * c * v).sum()
}

#[test]
fn analytic_recursion_is_exact_on_affine_chain() {
    let s = schedule();
    let (frames, dim) = (3, 2);
    for (w, gamma2, start) in [(0.7, 0.05, 0.0), (1.2, 0.3, 0.4), (-0.4, 0.0, 1.0)] {
        let den = AffineDenoiser::uniform(frames, dim, w, 0.2, gamma2);
        let mut state = VarianceState::certain(Motion::filled(frames, dim, 0.3), s.steps());
        state.var = Motion::filled(frames, dim, start);
        while state.step > 0 {
            let n = state.step;
            let (mean_hat, _) = den.predict_with_variance(&state.mean, &state.mean, n).unwrap();
            let var_hat = state.var.map(|v| w * w * v + gamma2);
            let cov = state.var.map(|v| w * v);
            let mean = step_expectation(&state.mean, &mean_hat, n, &s).unwrap();
            let (var, f) = step_variance(&state.var, &var_hat, &cov, n, &s).unwrap();
            assert_eq!(f, 0);
            state = VarianceState { mean, var, cov, step: n - 1 };
        }
        let want = affine_chain_variance(w, gamma2, start, &s);
        for v in state.var.as_slice() {
            assert!((v - want).abs() < 1e-10 * want.max(1.0), "{v} vs {want}");
        }
    }
}

#[test]
fn collapsed_chain_variance_vanishes_with_kappa() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = random_motion(&mut rng, 5, 3);
    let den = AffineDenoiser::uniform(5, 3, 0.5, 0.1, 0.0);
    let mut last = f64::INFINITY;
    for kappa in [1e-2, 1e-4, 1e-8, 1e-12] {
        let s = ScheduleConfig {
            kappa,
            ..ScheduleConfig::default()
        }
        .build()
        .unwrap();
        let out = propagate(&y, &den, &s, 20, &mut rng).unwrap();
        let v = out.var0.max_abs();
        assert!(v < last);
        last = v;
    }
    assert!(last < 1e-10, "{last}");
}

#[test]
fn single_step_variance_is_predictive_variance() {
    let s = ScheduleConfig {
        steps: 1,
        ..ScheduleConfig::default()
    }
    .build()
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = random_motion(&mut rng, 4, 2);
    let mut den = AffineDenoiser::uniform(4, 2, 0.8, 0.0, 0.0);
    den.variance = positive_motion(&mut rng, 4, 2);
    let out = propagate(&y, &den, &s, 20, &mut rng).unwrap();
    assert_eq!(out.var0, den.variance);
    assert!(propagate(&y, &den, &s, 1, &mut rng).is_err());
}

#[test]
fn sampled_propagation_tracks_brute_force() {
    let s = schedule();
    let (frames, dim) = (4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y = random_motion(&mut rng, frames, dim);
    let den = AffineDenoiser::uniform(frames, dim, 0.6, 0.1, 0.02);
    let start = initial_state(&y, &s, &mut rng);
    let mut totals = Vec::new();
    for _ in 0..20 {
        let out = propagate_from(start.clone(), &y, &den, &s, 20, &mut rng).unwrap();
        totals.push(out.var0.mean());
    }
    let est = totals.iter().sum::<f64>() / totals.len() as f64;
    let want = affine_chain_variance(0.6, 0.02, 0.0, &s);
    assert!((est / want - 1.0).abs() < 0.03, "{est} vs {want}");
}

/// `x_hat_t = a x_{t-1} + b x_t + c x_{t+1}` with clamped ends.
struct Smoother([f64; 3]);

impl Denoiser for Smoother {
    fn predict(&self, x: &Motion, _: &Motion, _: usize) -> Result<Motion> {
        let last = x.frames() - 1;
        Ok(Motion::from_fn(x.frames(), x.dim(), |t, j| {
            self.0[0] * x.get(t.saturating_sub(1), j) + self.0[1] * x.get(t, j) + self.0[2] * x.get((t + 1).min(last), j)
        }))
    }

    fn receptive_radius(&self) -> Option<usize> {
        Some(1)
    }
}

/// Hides the receptive radius so every frame is perturbed on its own.
struct Dense<'a, D>(&'a D);

impl<D: Denoiser> Denoiser for Dense<'_, D> {
    fn predict(&self, x: &Motion, y: &Motion, n: usize) -> Result<Motion> {
        self.0.predict(x, y, n)
    }
}

#[test]
fn spread_of_linear_predictor() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (frames, dim) = (7, 2);
    let x = random_motion(&mut rng, frames, dim);
    let var = positive_motion(&mut rng, frames, dim);
    let den = AffineDenoiser::uniform(frames, dim, 0.7, 0.3, 0.0);
    let got = prediction_spread(&den, &x, &var, &x, 1).unwrap();
    for i in 0..got.len() {
        assert!((got.as_slice()[i] - 0.49 * var.as_slice()[i]).abs() < 1e-9);
    }

    let k = [0.2, 0.5, -0.3];
    let got = prediction_spread(&Smoother(k), &x, &var, &x, 1).unwrap();
    let last = frames - 1;
    for t in 0..frames {
        for j in 0..dim {
            // clamped neighbours fold their weight onto the end frame
            let mut w = vec![0.0; frames];
            w[t.saturating_sub(1)] += k[0];
            w[t] += k[1];
            w[(t + 1).min(last)] += k[2];
            let want: f64 = (0..frames).map(|s| w[s] * w[s] * var.get(s, j)).sum();
            assert!((got.get(t, j) - want).abs() < 1e-9, "{t} {j}");
        }
    }
}

#[test]
fn windowed_spread_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (frames, dim) = (9, 3);
    let mut m = MlpDenoiser::new(dim, &MlpConfig { window: 2, hidden: vec![8] }, &mut rng).unwrap();
    let (w, _) = m.head_mut();
    for v in w.iter_mut() {
        *v = rng.random_range(-0.3..0.3);
    }
    let x = random_motion(&mut rng, frames, dim);
    let y = random_motion(&mut rng, frames, dim);
    let var = positive_motion(&mut rng, frames, dim);
    let fast = prediction_spread(&m, &x, &var, &y, 2).unwrap();
    let slow = prediction_spread(&Dense(&m), &x, &var, &y, 2).unwrap();
    for i in 0..fast.len() {
        assert!((fast.as_slice()[i] - slow.as_slice()[i]).abs() < 1e-8 * (1.0 + slow.as_slice()[i]));
    }
    assert!(fast.max_abs() > 0.0);
}

fn point_mass(mass: f64) -> Multibody {
    let tree = KinematicTree::new(vec![Link {
        parent: None,
        offset: Vector3::zeros(),
    }])
    .unwrap();
    let body = BodyParams::solid_box(mass, Vector3::new(0.1, 0.1, 0.1), Vector3::zeros());
    Multibody::new(tree, RigidBodySet::new(vec![body]).unwrap(), GRAVITY).unwrap()
}

#[test]
fn zero_variance_pushes_forward_to_zero() {
    let model = point_mass(2.0);
    let traj = Trajectory::new(Motion::zeros(6, 6), 0.05).unwrap();
    let fv = force_variance(&model, &traj, &Motion::zeros(6, 6)).unwrap();
    assert_eq!(fv.max_abs(), 0.0);
}

#[test]
fn point_mass_force_variance_closed_form() {
    let (m, v, dt) = (1.7, 2e-4, 0.04);
    let model = point_mass(m);
    let frames = 7;
    let traj = Trajectory::new(Motion::zeros(frames, 6), dt).unwrap();
    let var = Motion::from_fn(frames, 6, |_, j| if (3..6).contains(&j) { v } else { 0.0 });
    let fv = force_variance(&model, &traj, &var).unwrap();
    let want = m * m * v * (1.0 + 4.0 + 1.0) / dt.powi(4);
    for t in 1..frames - 1 {
        for j in 3..6 {
            assert!((fv.get(t, j) / want - 1.0).abs() < 1e-6, "{} vs {want}", fv.get(t, j));
        }
        for j in 0..3 {
            assert!(fv.get(t, j).abs() < 1e-9 * want);
        }
    }
}

#[test]
fn force_variance_matches_sampling() {
    let model = crate::training::hand_model(1000.0).unwrap();
    let samples = crate::training::synth_dataset(
        &model,
        &crate::training::SynthConfig {
            count: 1,
            frames: 8,
            corruption: crate::training::CorruptionConfig::none(),
            ..Default::default()
        },
        7,
    )
    .unwrap();
    let mean = &samples[0].x_gt;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let var0 = Motion::from_fn(mean.frames(), mean.dim(), |_, j| {
        if model.tree.is_rotational(j) { rng.random_range(1e-6..4e-6) } else { rng.random_range(1e-8..4e-8) }
    });
    let analytic = force_variance(&model, mean, &var0).unwrap();
    let count = 10_000;
    let base = pseudoforce(&model, mean).unwrap();
    let mut sq = Motion::zeros(mean.frames(), mean.dim());
    let mut sum = sq.clone();
    for _ in 0..count {
        let x = gaussian_motion(mean.values(), |i| var0.as_slice()[i], &mut rng);
        let f = pseudoforce(&model, &Trajectory::new(x, mean.dt()).unwrap()).unwrap();
        let d = f.sub(&base).unwrap();
        for i in 0..d.len() {
            sum.as_mut_slice()[i] += d.as_slice()[i];
            sq.as_mut_slice()[i] += d.as_slice()[i] * d.as_slice()[i];
        }
    }
    let c = count as f64;
    let mut errs = Vec::new();
    for i in 0..sq.len() {
        let mc = sq.as_slice()[i] / c - (sum.as_slice()[i] / c).powi(2);
        errs.push((analytic.as_slice()[i] / mc - 1.0).abs());
    }
    let mean_err = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean_err < 0.1, "{mean_err}");
}

#[test]
fn map_cases() {
    let tree = crate::training::hand_model(1000.0).unwrap().tree;
    let (frames, dim, parts) = (5, tree.dim(), tree.part_count());
    let uniform = variance_maps(&tree, &Motion::filled(frames, dim, 0.3), None).unwrap();
    assert!(uniform.joints.as_slice().iter().all(|v| (*v - 1.0).abs() < 1e-15));

    let mut hot = Motion::zeros(frames, dim);
    let k = 2;
    hot.set(3, tree.coord_range(k).start + 1, 4.0);
    let maps = variance_maps(&tree, &hot, None).unwrap();
    for t in 0..frames {
        for j in 0..parts {
            assert_eq!(maps.joints.get(t, j), if (t, j) == (3, k) { 1.0 } else { 0.0 });
        }
    }

    let zero = variance_maps(&tree, &Motion::zeros(frames, dim), None).unwrap();
    assert_eq!(zero.joints.max_abs(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let input = positive_motion(&mut rng, frames, dim);
    let maps = variance_maps(&tree, &input, None).unwrap();
    let raw: Vec<Vec<f64>> = (0..frames)
        .map(|t| (0..parts).map(|p| (0..3).map(|c| input.get(t, tree.coord_range(p).start + c)).sum()).collect())
        .collect();
    let max = raw.iter().flatten().cloned().fold(0.0, f64::max);
    for t in 0..frames {
        for p in 0..parts {
            assert!((maps.joints.get(t, p) - raw[t][p] / max).abs() < 1e-15);
        }
    }

    let weights = PartWeights::new(vec![
        vec![1.0, 0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.5, 0.5, 0.0, 0.0],
        vec![0.2, 0.2, 0.2, 0.2, 0.2],
    ])
    .unwrap();
    let maps = variance_maps(&tree, &input, Some(&weights)).unwrap();
    let vert = maps.vertices.unwrap();
    let j = &maps.joints;
    for t in 0..frames {
        assert_eq!(vert.get(t, 0), j.get(t, 0));
        assert!((vert.get(t, 1) - 0.5 * (j.get(t, 1) + j.get(t, 2))).abs() < 1e-15);
        let avg: f64 = (0..5).map(|p| 0.2 * j.get(t, p)).sum();
        assert!((vert.get(t, 2) - avg).abs() < 1e-15);
        assert!((0..3).all(|v| vert.get(t, v) <= 1.0 + 1e-15));
    }
    assert!(variance_maps(&tree, &input.map(|v| -v), None).is_err());
}
