//! The single run configuration shared by every subcommand.
//!
//! Resolution order: built-in defaults, then the JSON file given by
//! `--config`, then individual command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use setrack::data::SynthConfig;
use setrack::evaluation::DEFAULT_RESET_SKIP;
use setrack::tracking::DEFAULT_DELTA;
use setrack::training::{OptimizerKind, TrainConfig};
use setrack::{Error, ModelConfig, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Number of sequences written by `synth`.
    pub sequences: usize,
    /// Search-region margin as a fraction of the previous box size.
    pub delta: f64,
    pub reset_skip: usize,
    pub warmup: usize,
    pub reps: usize,
    pub dataset: Option<PathBuf>,
    pub sequence: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub out: PathBuf,
    pub dump_frames: bool,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            sequences: 4,
            delta: DEFAULT_DELTA,
            reset_skip: DEFAULT_RESET_SKIP,
            warmup: 5,
            reps: 5,
            dataset: None,
            sequence: None,
            checkpoint: None,
            resume: None,
            out: PathBuf::from("out"),
            dump_frames: false,
            deterministic: false,
        }
    }
}

/// Command-line values that override the file. `None` leaves the
/// file/default value untouched.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub preset: Option<String>,
    pub sequences: Option<usize>,
    pub length: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub samples_per_epoch: Option<usize>,
    pub optimizer: Option<String>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub reset_skip: Option<usize>,
    pub warmup: Option<usize>,
    pub reps: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub sequence: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub dump_frames: bool,
    pub deterministic: bool,
}

pub fn parse_optimizer(name: &str) -> Result<OptimizerKind> {
    match name.to_ascii_lowercase().as_str() {
        "sgd" => Ok(OptimizerKind::Sgd),
        "momentum" => Ok(OptimizerKind::Momentum { momentum: 0.9 }),
        "adam" => Ok(OptimizerKind::adam()),
        other => Err(Error::InvalidArgument(format!(
            "unknown optimizer {other:?}; expected sgd, momentum or adam"
        ))),
    }
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "default" => Ok(ModelConfig::default()),
        "desk" => Ok(ModelConfig::desk()),
        other => Err(Error::InvalidArgument(format!("unknown preset {other:?}; expected default or desk"))),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(p) = &o.preset {
            c.model = preset(p)?;
        }
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = o.$src.clone() {
                    $($dst)+ = v;
                }
            };
        }
        set!(sequences => c.sequences);
        set!(length => c.synth.length);
        set!(epochs => c.train.epochs);
        set!(lr => c.train.learning_rate);
        set!(batch_size => c.train.batch_size);
        set!(samples_per_epoch => c.train.samples_per_epoch);
        set!(sigma => c.train.sigma);
        set!(delta => c.delta);
        set!(reset_skip => c.reset_skip);
        set!(warmup => c.warmup);
        set!(reps => c.reps);
        set!(out => c.out);
        if let Some(seed) = o.seed {
            c.synth.seed = seed;
            c.train.seed = seed;
        }
        if let Some(name) = &o.optimizer {
            c.train.optimizer = parse_optimizer(name)?;
        }
        for (src, dst) in [
            (&o.dataset, &mut c.dataset),
            (&o.sequence, &mut c.sequence),
            (&o.checkpoint, &mut c.checkpoint),
            (&o.resume, &mut c.resume),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        c.dump_frames |= o.dump_frames;
        c.deterministic |= o.deterministic;
        c.model.validate()?;
        c.synth.validate()?;
        if !(c.delta >= 0.0 && c.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be >= 0, got {}", c.delta)));
        }
        Ok(c)
    }

    /// Fails unless every path in `paths` exists.
    pub fn require_paths(&self, paths: &[(&str, &Option<PathBuf>)]) -> Result<()> {
        for (flag, p) in paths {
            match p {
                None => return Err(Error::InvalidArgument(format!("--{flag} is required"))),
                Some(p) if !p.exists() => {
                    return Err(Error::InvalidArgument(format!("--{flag} {} does not exist", p.display())))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}
