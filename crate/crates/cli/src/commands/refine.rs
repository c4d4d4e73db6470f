use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;

use physdiff::diffusion::ShiftSchedule;
use physdiff::kinematics::TrajectoryFile;
use physdiff::training::{read_dataset, Checkpoint};

use crate::commands::{create_dir, read_json, required_path, sequence_rng, write_json};
use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Trajectory JSON, or a dataset directory whose observations are all refined.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, or output directory for dataset input.
    #[arg(long)]
    pub out: PathBuf,
}

/// Loads a checkpoint, replacing its noise scale when one is given.
pub fn load_checkpoint(path: &Path, kappa: Option<f64>) -> CliResult<Checkpoint> {
    let mut ck = Checkpoint::load(path)?;
    if let Some(kappa) = kappa {
        ck.schedule = ShiftSchedule::from_etas(ck.schedule.etas().to_vec(), kappa)?;
    }
    Ok(ck)
}

pub fn refined_name(i: usize) -> String {
    format!("seq_{i:04}_refined.json")
}

pub fn run(args: &RefineArgs, config: &RunConfig, kappa: Option<f64>) -> CliResult<()> {
    let ck = load_checkpoint(&required_path(&args.checkpoint, &config.paths.checkpoint, "checkpoint")?, kappa)?;
    if args.input.is_dir() {
        let data = read_dataset(&args.input)?;
        let refined = data
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| ck.refine(&s.y, &mut sequence_rng(config.seed, i)))
            .collect::<Result<Vec<_>, _>>()?;
        create_dir(&args.out)?;
        for (i, x) in refined.iter().enumerate() {
            write_json(&args.out.join(refined_name(i)), &TrajectoryFile::from_motion(x, data.dt))?;
        }
        log::info!("refined {} sequences into {}", refined.len(), args.out.display());
    } else {
        let input: TrajectoryFile = read_json(&args.input)?;
        let y = input.to_motion()?;
        let x = ck.refine(&y, &mut sequence_rng(config.seed, 0))?;
        write_json(&args.out, &TrajectoryFile::from_motion(&x, input.dt))?;
    }
    Ok(())
}
