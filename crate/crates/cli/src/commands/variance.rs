use std::fs;
use std::path::PathBuf;

use clap::Args;

use physdiff::kinematics::TrajectoryFile;
use physdiff::training::read_dataset;
use physdiff::uncertainty::{checkpoint_report, VarianceReport};
use physdiff::dynamics::Multibody;

use crate::commands::refine::load_checkpoint;
use crate::commands::{create_dir, read_json, required_path, sequence_rng};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::svg;

#[derive(Debug, Args)]
pub struct VarianceArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory providing the body model.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Observed trajectory JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for `variance.csv` and `variance.svg`.
    #[arg(long)]
    pub out: PathBuf,
}

fn write_csv(path: &std::path::Path, model: &Multibody, report: &VarianceReport) -> CliResult<()> {
    let tree = &model.tree;
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(["frame", "joint", "coordinate", "var_x0", "var_force", "normalized_map"])?;
    for t in 0..report.var0.frames() {
        for j in 0..report.var0.dim() {
            let joint = tree.link_of_coord(j);
            w.write_record([
                t.to_string(),
                joint.to_string(),
                j.to_string(),
                report.var0.get(t, j).to_string(),
                report.force_var.get(t, j).to_string(),
                report.maps.joints.get(t, joint).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &VarianceArgs, config: &RunConfig, kappa: Option<f64>) -> CliResult<()> {
    let ck = load_checkpoint(&required_path(&args.checkpoint, &config.paths.checkpoint, "checkpoint")?, kappa)?;
    let data = read_dataset(&required_path(&args.data, &config.paths.data, "data")?)?;
    let input: TrajectoryFile = read_json(&args.input)?;
    let y = input.to_motion()?;
    let report = checkpoint_report(
        &ck,
        &data.model,
        &y,
        input.dt,
        config.variance.samples,
        None,
        &mut sequence_rng(config.seed, 0),
    )?;
    if report.floored > 0 {
        log::warn!("{} variance entries were clamped at zero", report.floored);
    }
    create_dir(&args.out)?;
    write_csv(&args.out.join("variance.csv"), &data.model, &report)?;
    let svg_path = args.out.join("variance.svg");
    fs::write(&svg_path, svg::heat_map(&report.maps.joints)).map_err(|e| CliError::io(&svg_path, e))?;
    Ok(())
}
