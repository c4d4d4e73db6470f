use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use physdiff::dynamics::residual_metric;
use physdiff::kinematics::TrajectoryFile;
use physdiff::metrics::{accel_error, mpjpe, pa_mpjpe, JointSequence};
use physdiff::training::read_dataset;

use crate::commands::refine::refined_name;
use crate::commands::{create_dir, read_json, required_path, write_json};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `seq_XXXX_refined.json` files written by `refine`.
    #[arg(long)]
    pub refined: PathBuf,
    /// Dataset directory holding the ground truth.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for `metrics.csv` and `metrics.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Scores {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub accel: f64,
    pub residual_metric: f64,
}

pub fn run(args: &EvalArgs, config: &RunConfig) -> CliResult<()> {
    let data = read_dataset(&required_path(&args.data, &config.paths.data, "data")?)?;
    let tree = &data.model.tree;
    let rows = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> CliResult<Scores> {
            let file: TrajectoryFile = read_json(&args.refined.join(refined_name(i)))?;
            let refined = file.to_trajectory()?;
            let pred = JointSequence::from_motion(tree, refined.values())?;
            let gt = JointSequence::from_motion(tree, s.x_gt.values())?;
            Ok(Scores {
                mpjpe: mpjpe(&pred, &gt)?,
                pa_mpjpe: pa_mpjpe(&pred, &gt)?,
                accel: accel_error(&pred, &gt)?,
                residual_metric: residual_metric(&data.model, &refined, &s.force_gt)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    create_dir(&args.out)?;
    let csv_path = args.out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    w.write_record(["sequence", "mpjpe", "pa_mpjpe", "accel", "residual_metric"])?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.mpjpe.to_string(),
            r.pa_mpjpe.to_string(),
            r.accel.to_string(),
            r.residual_metric.to_string(),
        ])?;
    }
    w.flush()?;

    let n = rows.len().max(1) as f64;
    let mean = rows.iter().fold(Scores::default(), |a, r| Scores {
        mpjpe: a.mpjpe + r.mpjpe / n,
        pa_mpjpe: a.pa_mpjpe + r.pa_mpjpe / n,
        accel: a.accel + r.accel / n,
        residual_metric: a.residual_metric + r.residual_metric / n,
    });
    write_json(&args.out.join("metrics.json"), &mean)
}
