use std::path::{Path, PathBuf};

use clap::Args;

use physdiff::training::{read_dataset, Checkpoint, EpochLosses, Trainer};

use crate::commands::required_path;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write; losses go to `<stem>.losses.csv` beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from an existing checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn loss_csv_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("losses.csv")
}

fn write_losses(path: &Path, losses: &[EpochLosses]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(["epoch", "L_data", "L_geo", "L_EL", "total"])?;
    for l in losses {
        w.write_record([
            l.epoch.to_string(),
            l.data.to_string(),
            l.geometric.to_string(),
            l.el.to_string(),
            l.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &TrainArgs, config: &RunConfig) -> CliResult<()> {
    let data_dir = required_path(&args.data, &config.paths.data, "data")?;
    let data = read_dataset(&data_dir)?;
    let mut trainer = match &args.resume {
        Some(path) => Trainer::resume(&data.model, Checkpoint::load(path)?)?,
        None => Trainer::new(
            &data.model,
            &data.samples,
            config.schedule.build()?,
            config.train.clone(),
            &config.model,
        )?,
    };
    let losses = trainer.run(&data.samples, config.train.epochs)?;
    for l in &losses {
        log::info!("epoch {}: total {:.6}", l.epoch, l.total);
    }
    let mut checkpoint = trainer.into_checkpoint();
    checkpoint.fit_posterior(&data.samples, config.laplace.prior_precision, config.seed)?;
    checkpoint.save(&args.out)?;
    write_losses(&loss_csv_path(&args.out), &losses)
}
