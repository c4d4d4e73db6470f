use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod svg;

use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "physdiff", version, about = "Physics-regularized diffusion refinement of motion sequences")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-sequence work.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Auxiliary samples per reverse step for variance propagation.
    #[arg(long = "samples", visible_alias = "S", global = true)]
    pub samples: Option<usize>,
    /// Diffusion steps.
    #[arg(long = "steps", visible_alias = "N", global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    #[arg(long, global = true)]
    pub lambda1: Option<f64>,
    #[arg(long, global = true)]
    pub lambda2: Option<f64>,
    /// Weight of the geometric term.
    #[arg(long = "c", global = true)]
    pub c: Option<f64>,
    /// Number of synthesized sequences.
    #[arg(long, global = true)]
    pub count: Option<usize>,
    /// Frames per synthesized sequence.
    #[arg(long, global = true)]
    pub frames: Option<usize>,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.samples {
            c.variance.samples = v;
        }
        if let Some(v) = self.steps {
            c.schedule.steps = v;
        }
        if let Some(v) = self.kappa {
            c.schedule.kappa = v;
        }
        if let Some(v) = self.lambda1 {
            c.train.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            c.train.lambda2 = v;
        }
        if let Some(v) = self.c {
            c.train.c = v;
        }
        if let Some(v) = self.count {
            c.synth.count = v;
        }
        if let Some(v) = self.frames {
            c.synth.frames = v;
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset of clean and corrupted sequences.
    Synth(commands::synth::SynthArgs),
    /// Train a denoiser and fit its last-layer posterior.
    Train(commands::train::TrainArgs),
    /// Refine an observed trajectory or every sequence of a dataset.
    Refine(commands::refine::RefineArgs),
    /// Propagate posterior variance to per-frame force variance maps.
    Variance(commands::variance::VarianceArgs),
    /// Score refined sequences against ground truth.
    Eval(commands::eval::EvalArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.train.seed = config.seed;
    cli.overrides.apply(&mut config);
    config.validate()?;

    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }

    match cli.command {
        Command::Synth(args) => commands::synth::run(&args, &config),
        Command::Train(args) => commands::train::run(&args, &config),
        Command::Refine(args) => commands::refine::run(&args, &config, cli.overrides.kappa),
        Command::Variance(args) => commands::variance::run(&args, &config, cli.overrides.kappa),
        Command::Eval(args) => commands::eval::run(&args, &config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
