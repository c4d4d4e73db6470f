use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub mod eval;
pub mod refine;
pub mod synth;
pub mod train;
pub mod variance;

/// Per-sequence generator: sequence `i` draws from stream `i + 1` of the run seed.
pub fn sequence_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| CliError::io(path, e))
}

/// Flag value, else the configured default, else a validation error.
pub fn required_path(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Validation(format!("missing --{name} (or paths.{name} in the config)")))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
