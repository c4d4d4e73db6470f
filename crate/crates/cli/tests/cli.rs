use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use physdiff::kinematics::TrajectoryFile;
use physdiff::training::{read_dataset, Checkpoint};
use tempfile::TempDir;

fn physdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_physdiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = physdiff(args);
    assert!(
        out.status.success(),
        "physdiff {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = csv_rows(path);
    let k = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

/// A trained model shared by the slower tests.
struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    held_out: PathBuf,
    checkpoint: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("train");
        let held_out = dir.path().join("held_out");
        let checkpoint = dir.path().join("model.json");
        ok(&["synth", "--out", s(&data), "--count", "60", "--seed", "1"]);
        ok(&["synth", "--out", s(&held_out), "--count", "8", "--seed", "77"]);
        ok(&["train", "--data", s(&data), "--out", s(&checkpoint), "--epochs", "30", "--seed", "1"]);
        Fixture {
            _dir: dir,
            data,
            held_out,
            checkpoint,
        }
    })
}

#[test]
fn synth_writes_requested_sequences() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d");
    ok(&["synth", "--out", s(&out), "--count", "10"]);
    let data = read_dataset(&out).unwrap();
    assert_eq!(data.samples.len(), 10);
    for sample in &data.samples {
        assert_eq!(sample.x_gt.frames(), 16);
        assert_eq!(sample.y.frames(), 16);
    }
}

#[test]
fn synth_with_zero_count_writes_empty_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d");
    let status = physdiff(&["synth", "--out", s(&out), "--count", "0"]).status;
    assert_eq!(status.code(), Some(0));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sequences"].as_array().unwrap().len(), 0);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["synth", "--out", s(&a), "--count", "4", "--seed", "9"]);
    ok(&["synth", "--out", s(&b), "--count", "4", "--seed", "9", "--jobs", "1"]);
    ok(&["synth", "--out", s(&c), "--count", "4", "--seed", "10"]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn train_writes_losses_and_resumes() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    ok(&["synth", "--out", s(&data), "--count", "2"]);
    ok(&["train", "--data", s(&data), "--out", s(&first), "--epochs", "1", "--lambda2", "10"]);
    assert!(first.exists());
    let losses = dir.path().join("first.losses.csv");
    let (header, rows) = csv_rows(&losses);
    assert_eq!(header, ["epoch", "L_data", "L_geo", "L_EL", "total"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "1");
    assert!(column(&losses, "L_EL")[0] > 0.0);
    let ck = Checkpoint::load(&first).unwrap();
    assert_eq!(ck.epochs_done, 1);
    assert!(ck.posterior.is_some());

    ok(&[
        "train", "--data", s(&data), "--out", s(&second), "--resume", s(&first), "--epochs", "2",
    ]);
    assert_eq!(column(&dir.path().join("second.losses.csv"), "epoch"), [2.0, 3.0]);
    assert_eq!(Checkpoint::load(&second).unwrap().epochs_done, 3);
}

#[test]
fn refine_is_seeded() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let input = f.held_out.join("seq_0000_obs.json");
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    for (out, seed) in outs.iter().zip(["5", "5", "6"]) {
        ok(&["refine", "--checkpoint", s(&f.checkpoint), "--input", s(&input), "--out", s(out), "--seed", seed]);
    }
    let bytes: Vec<Vec<u8>> = outs.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], bytes[2]);
}

#[test]
fn identity_head_without_noise_returns_input() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut ck = Checkpoint::load(&f.checkpoint).unwrap();
    let (w, b) = ck.model.head_mut();
    w.fill(0.0);
    b.fill(0.0);
    let identity = dir.path().join("identity.json");
    ck.save(&identity).unwrap();
    let input = f.held_out.join("seq_0001_obs.json");
    let out = dir.path().join("out.json");
    ok(&["refine", "--checkpoint", s(&identity), "--input", s(&input), "--out", s(&out), "--kappa", "1e-12"]);
    let read = |p: &Path| -> TrajectoryFile { serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap() };
    let (x, y) = (read(&out).to_motion().unwrap(), read(&input).to_motion().unwrap());
    assert!(x.sub(&y).unwrap().max_abs() < 1e-9);
}

#[test]
fn refinement_lowers_acceleration_error() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let refined = dir.path().join("refined");
    let observed = dir.path().join("observed");
    ok(&["refine", "--checkpoint", s(&f.checkpoint), "--input", s(&f.held_out), "--out", s(&refined)]);
    fs::create_dir(&observed).unwrap();
    for i in 0..8 {
        fs::copy(
            f.held_out.join(format!("seq_{i:04}_obs.json")),
            observed.join(format!("seq_{i:04}_refined.json")),
        )
        .unwrap();
    }
    let score = |input: &Path, name: &str| {
        let out = dir.path().join(format!("eval_{name}"));
        ok(&["eval", "--refined", s(input), "--data", s(&f.held_out), "--out", s(&out)]);
        column(&out.join("metrics.csv"), "accel")
    };
    let (after, before) = (score(&refined, "refined"), score(&observed, "observed"));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&after) < mean(&before), "accel {} vs {}", mean(&after), mean(&before));
}

fn variance_csv(f: &Fixture, checkpoint: &Path, extra: &[&str], name: &str, dir: &Path) -> PathBuf {
    let out = dir.join(name);
    let input = f.held_out.join("seq_0002_obs.json");
    let mut args = vec![
        "variance", "--checkpoint", s(checkpoint), "--data", s(&f.data), "--input", s(&input), "--out", s(&out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    assert!(fs::read_to_string(out.join("variance.svg")).unwrap().starts_with("<svg"));
    out.join("variance.csv")
}

#[test]
fn variance_report_schema_and_default_samples() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let default = variance_csv(f, &f.checkpoint, &[], "default", dir.path());
    let twenty = variance_csv(f, &f.checkpoint, &["--S", "20"], "twenty", dir.path());
    let ten = variance_csv(f, &f.checkpoint, &["--S", "10"], "ten", dir.path());
    let (header, rows) = csv_rows(&default);
    assert_eq!(header, ["frame", "joint", "coordinate", "var_x0", "var_force", "normalized_map"]);
    let ck = Checkpoint::load(&f.checkpoint).unwrap();
    assert_eq!(rows.len(), 16 * ck.model.dim());
    assert_eq!(fs::read(&default).unwrap(), fs::read(&twenty).unwrap());
    assert_ne!(fs::read(&default).unwrap(), fs::read(&ten).unwrap());
    let map = column(&default, "normalized_map");
    assert!(map.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(map.contains(&1.0));
}

#[test]
fn collapsed_posterior_without_noise_has_zero_variance() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut ck = Checkpoint::load(&f.checkpoint).unwrap();
    let data = read_dataset(&f.data).unwrap();
    ck.fit_posterior(&data.samples[..4], 1e30, 0).unwrap();
    let collapsed = dir.path().join("collapsed.json");
    ck.save(&collapsed).unwrap();
    let csv = variance_csv(f, &collapsed, &["--kappa", "1e-15"], "v", dir.path());
    for name in ["var_x0", "var_force"] {
        let col = column(&csv, name);
        assert!(col.iter().all(|v| v.abs() < 1e-12), "{name} max {}", col.iter().cloned().fold(0.0, f64::max));
    }
}

#[test]
fn eval_of_ground_truth_is_zero_and_aggregates_rows() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let gt = dir.path().join("gt");
    fs::create_dir(&gt).unwrap();
    for i in 0..8 {
        fs::copy(f.held_out.join(format!("seq_{i:04}_gt.json")), gt.join(format!("seq_{i:04}_refined.json"))).unwrap();
    }
    let out = dir.path().join("eval");
    ok(&["eval", "--refined", s(&gt), "--data", s(&f.held_out), "--out", s(&out)]);
    let (header, rows) = csv_rows(&out.join("metrics.csv"));
    assert_eq!(header, ["sequence", "mpjpe", "pa_mpjpe", "accel", "residual_metric"]);
    assert_eq!(rows.len(), 8);
    for name in &header[1..] {
        assert!(column(&out.join("metrics.csv"), name).iter().all(|v| v.abs() < 1e-9), "{name}");
    }

    let refined = dir.path().join("refined");
    ok(&["refine", "--checkpoint", s(&f.checkpoint), "--input", s(&f.held_out), "--out", s(&refined)]);
    ok(&["eval", "--refined", s(&refined), "--data", s(&f.held_out), "--out", s(&out)]);
    let aggregate: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for name in &header[1..] {
        let col = column(&out.join("metrics.csv"), name);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        assert!(mean > 0.0);
        assert!((aggregate[name.as_str()].as_f64().unwrap() - mean).abs() < 1e-9, "{name}");
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing");
    let code = |args: &[&str]| physdiff(args).status.code();

    assert_eq!(code(&["synth"]), Some(2));
    assert_eq!(code(&["synth", "--out", s(&missing), "--kappa", "-1"]), Some(2));
    assert_eq!(code(&["train", "--data", s(&missing), "--out", s(&dir.path().join("m.json"))]), Some(1));

    let bad_config = dir.path().join("bad.json");
    fs::write(&bad_config, r#"{"train": {"epoch": 3}}"#).unwrap();
    assert_eq!(code(&["--config", s(&bad_config), "synth", "--out", s(&missing)]), Some(2));

    let data = dir.path().join("d");
    ok(&["synth", "--out", s(&data), "--count", "2"]);
    let diverging = dir.path().join("diverging.json");
    fs::write(&diverging, r#"{"train": {"learning_rate": 1e200}}"#).unwrap();
    let out = physdiff(&[
        "--config", s(&diverging), "train", "--data", s(&data), "--out", s(&dir.path().join("m.json")), "--epochs", "3",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_values_apply_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"seed": 4, "synth": {"count": 3, "frames": 12}}"#).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["--config", s(&config), "synth", "--out", s(&a)]);
    ok(&["synth", "--out", s(&b), "--count", "3", "--frames", "12", "--seed", "4"]);
    ok(&["--config", s(&config), "synth", "--out", s(&c), "--count", "2"]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let data = read_dataset(&c).unwrap();
    assert_eq!(data.samples.len(), 2);
    assert_eq!(data.samples[0].y.frames(), 12);
}

#[test]
fn corrupted_window_is_hot_in_variance_csv() {
    use physdiff::training::{corrupt, CorruptionConfig};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    let f = fixture();
    let dir = TempDir::new().unwrap();
    let data = read_dataset(&f.held_out).unwrap();
    let tree = &data.model.tree;
    let window = 5..11;
    let defaults = CorruptionConfig::default();
    let jitter = CorruptionConfig {
        bias_probability: 0.0,
        jump_probability: 0.0,
        ..defaults.clone()
    };
    let mut wins = 0;
    for (i, sample) in data.samples.iter().enumerate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(i as u64);
        let (mut y, _) = corrupt(tree, sample.x_gt.values(), &jitter, &mut rng).unwrap();
        let offset: Vec<f64> = (0..y.dim())
            .map(|j| {
                let sd = if tree.is_rotational(j) { defaults.bias_rot } else { defaults.bias_pos };
                sd * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        for t in window.clone() {
            for (v, o) in y.row_mut(t).iter_mut().zip(&offset) {
                *v += o;
            }
        }
        let input = dir.path().join(format!("obs_{i}.json"));
        fs::write(&input, serde_json::to_string(&TrajectoryFile::from_motion(&y, data.dt)).unwrap()).unwrap();
        let out = dir.path().join(format!("v{i}"));
        ok(&[
            "variance", "--checkpoint", s(&f.checkpoint), "--data", s(&f.data), "--input", s(&input), "--out", s(&out),
        ]);
        let csv = out.join("variance.csv");
        let mut per_frame = vec![0.0; y.frames()];
        for (t, v) in column(&csv, "frame").iter().zip(column(&csv, "var_force")) {
            per_frame[*t as usize] += v;
        }
        let mean = |fs: Vec<usize>| fs.iter().map(|&t| per_frame[t]).sum::<f64>() / fs.len() as f64;
        let inside = mean(window.clone().collect());
        let outside = mean((0..y.frames()).filter(|t| !window.contains(t)).collect());
        eprintln!("sequence {i}: per-frame force variance {per_frame:.3?}");
        if inside > outside {
            wins += 1;
        }
    }
    assert!(wins * 10 >= data.samples.len() * 9, "window hotter in {wins}/{}", data.samples.len());
}
