mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "setrack", version, about = "Siamese single-object tracker: synth, train, track, eval, bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic sequences in GOT-10k layout.
    Synth(Common),
    /// Train on a GOT-style dataset directory.
    Train(Common),
    /// Track one sequence and write its box CSV.
    Track(Common),
    /// Evaluate a checkpoint on every sequence of a dataset.
    Eval(Common),
    /// Measure tracking speed on one sequence.
    Bench(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model preset: `default` or `desk`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    sequences: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    /// Seed for synthesis and training.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "samples-per-epoch")]
    samples_per_epoch: Option<usize>,
    /// `sgd`, `momentum` or `adam`.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "reset-skip")]
    reset_skip: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    sequence: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue training from this epoch checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every frame with the tracked box drawn on it.
    #[arg(long = "dump-frames")]
    dump_frames: bool,
    /// Single-threaded reference mode.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            sequences: self.sequences,
            length: self.length,
            seed: self.seed,
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            samples_per_epoch: self.samples_per_epoch,
            optimizer: self.optimizer.clone(),
            sigma: self.sigma,
            delta: self.delta,
            reset_skip: self.reset_skip,
            warmup: self.warmup,
            reps: self.reps,
            dataset: self.dataset.clone(),
            sequence: self.sequence.clone(),
            checkpoint: self.checkpoint.clone(),
            resume: self.resume.clone(),
            out: self.out.clone(),
            dump_frames: self.dump_frames,
            deterministic: self.deterministic,
        }
    }
}

fn run(cli: Cli) -> setrack::Result<()> {
    let (common, cmd): (&Common, fn(&RunConfig) -> setrack::Result<()>) = match &cli.command {
        Command::Synth(c) => (c, commands::synth),
        Command::Train(c) => (c, commands::train),
        Command::Track(c) => (c, commands::track),
        Command::Eval(c) => (c, commands::eval),
        Command::Bench(c) => (c, commands::bench),
    };
    let cfg = RunConfig::resolve(common.config.as_deref(), &common.overrides())?;
    if cfg.deterministic {
        setrack::parallel::set_deterministic(true);
    }
    println!("{}", serde_json::to_string_pretty(&cfg)?);
    cmd(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
