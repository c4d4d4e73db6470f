use std::path::PathBuf;

use clap::Args;

use physdiff::training::{hand_model, synth_dataset, write_dataset, Dataset};

use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &SynthArgs, config: &RunConfig) -> CliResult<()> {
    let synth = config.synth.to_config();
    let model = hand_model(synth.density)?;
    let samples = synth_dataset(&model, &synth, config.seed)?;
    let manifest = write_dataset(
        &args.out,
        &Dataset {
            model,
            dt: synth.dt,
            seed: config.seed,
            corruption: synth.corruption,
            samples,
        },
    )?;
    log::info!("wrote {} sequences to {}", manifest.sequences.len(), args.out.display());
    Ok(())
}
