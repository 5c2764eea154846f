use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss, loss_grad};
use super::optim::{Optimizer, OptimizerKind};
use crate::data::{PairSampler, PatchPair, SequenceRecord};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{backward, forward_train, ModelConfig, ModelWeights};
use crate::rng::{seeded, StreamRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub sigma: f64,
    pub samples_per_epoch: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 80,
            epochs: 5,
            sigma: 1.0,
            samples_per_epoch: 5000,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.samples_per_epoch < self.batch_size {
            return bad(format!(
                "samples_per_epoch {} is smaller than one batch of {}",
                self.samples_per_epoch, self.batch_size
            ));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples_per_epoch / self.batch_size
    }
}

/// Per-step batch losses (measured before each update), per-epoch means and
/// per-epoch wall-clock seconds. Equality ignores the timings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub step_loss: Vec<f64>,
    pub epoch_mean_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.step_loss == other.step_loss && self.epoch_mean_loss == other.epoch_mean_loss
    }
}

/// Where training pairs come from.
pub enum TrainingData<T> {
    /// Pairs are regenerated every epoch from the sequences.
    Sequences(Vec<SequenceRecord>),
    /// A fixed pool, reshuffled every epoch.
    Pairs(Vec<PatchPair<T>>),
}

struct PairStream<'a, T> {
    data: &'a TrainingData<T>,
    sampler: PairSampler,
    rng: StreamRng,
    order: Vec<usize>,
    cursor: usize,
    dead: Vec<bool>,
}

impl<'a, T: Scalar> PairStream<'a, T> {
    fn new(data: &'a TrainingData<T>, sampler: PairSampler, seed: u64, epoch: usize) -> Self {
        let mut rng = seeded(seed, &format!("epoch-{epoch}"));
        let (order, dead) = match data {
            TrainingData::Pairs(p) => {
                let mut o: Vec<usize> = (0..p.len()).collect();
                o.shuffle(&mut rng);
                (o, vec![])
            }
            TrainingData::Sequences(s) => (vec![], vec![false; s.len()]),
        };
        Self {
            data,
            sampler,
            rng,
            order,
            cursor: 0,
            dead,
        }
    }

    fn next_pair(&mut self) -> Result<PatchPair<T>> {
        match self.data {
            TrainingData::Pairs(pairs) => {
                if self.cursor == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let p = pairs[self.order[self.cursor]].clone();
                self.cursor += 1;
                Ok(p)
            }
            TrainingData::Sequences(seqs) => loop {
                let alive: Vec<usize> = (0..seqs.len()).filter(|&i| !self.dead[i]).collect();
                if alive.is_empty() {
                    return Err(Error::EmptyDataset("no sequence can produce a training pair".into()));
                }
                let k = alive[self.rng.random_range(0..alive.len())];
                match self.sampler.sample(&seqs[k], &mut self.rng) {
                    Ok(p) => return Ok(p),
                    Err(Error::Unsampleable(_)) => self.dead[k] = true,
                    Err(e) => return Err(e),
                }
            },
        }
    }
}

/// Mini-batch trainer holding weights, optimizer state and history.
pub struct Trainer<T> {
    pub weights: ModelWeights<T>,
    pub optimizer: Optimizer<T>,
    pub config: TrainConfig,
    pub history: TrainHistory,
    pub epochs_done: usize,
    global_step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model_config: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let weights = ModelWeights::init(model_config, config.seed)?;
        Ok(Self::from_weights(weights, config))
    }

    pub fn from_weights(weights: ModelWeights<T>, config: TrainConfig) -> Self {
        let optimizer = Optimizer::new(config.optimizer, &weights.params);
        Self {
            weights,
            optimizer,
            config,
            history: TrainHistory::default(),
            epochs_done: 0,
            global_step: 0,
        }
    }

    /// Restores weights, optimizer state and progress from an epoch
    /// checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ck: Checkpoint<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let meta = &ck.metadata;
        let epochs_done = meta["epochs_done"].as_u64().unwrap_or(0) as usize;
        let global_step = meta["global_step"].as_u64().unwrap_or(0) as usize;
        let history: TrainHistory = serde_json::from_value(meta["history"].clone()).unwrap_or_default();
        let mut t = Self::from_weights(ck.weights.clone(), config);
        t.epochs_done = epochs_done;
        t.global_step = global_step;
        t.history = history;
        if let Some(s) = ck.extra("optim.step") {
            t.optimizer.step = s.data[0].to_f64_lossy() as u64;
        }
        for (si, slot) in t.optimizer.slots.iter_mut().enumerate() {
            for (pi, tensor) in slot.iter_mut().enumerate() {
                let name = format!("optim.slot{si}.{pi}");
                let stored = ck
                    .extra(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {name}")))?;
                *tensor = stored.clone();
            }
        }
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut ck = Checkpoint::new(self.weights.clone());
        ck.extras.push((
            "optim.step".into(),
            Tensor::filled(&[1], T::lit(self.optimizer.step as f64)),
        ));
        for (si, slot) in self.optimizer.slots.iter().enumerate() {
            for (pi, tensor) in slot.iter().enumerate() {
                ck.extras.push((format!("optim.slot{si}.{pi}"), tensor.clone()));
            }
        }
        ck.metadata = serde_json::json!({
            "epochs_done": self.epochs_done,
            "global_step": self.global_step,
            "train_config": self.config,
            "history": self.history,
        });
        ck
    }

    /// One optimizer step on `batch`; returns the mean loss before the step.
    pub fn step(&mut self, batch: &[PatchPair<T>]) -> Result<f64> {
        let templates: Vec<_> = batch.iter().map(|p| p.template.clone()).collect();
        let detections: Vec<_> = batch.iter().map(|p| p.detection.clone()).collect();
        let trace = forward_train(&templates, &detections, &self.weights)?;
        let sigma = T::lit(self.config.sigma);
        let n = T::count(batch.len());
        let mut total = T::zero();
        let mut d_out = Vec::with_capacity(batch.len());
        for (pred, pair) in trace.outputs.iter().zip(batch) {
            total += loss(pred, &pair.label, sigma)?;
            let g = loss_grad(pred, &pair.label, sigma)?;
            d_out.push(g.map(|v| v / n));
        }
        let mean = (total / n).to_f64_lossy();
        if !mean.is_finite() {
            let provenance = batch
                .iter()
                .map(|p| {
                    format!(
                        "{}[{}->{}]",
                        p.provenance.sequence, p.provenance.template_frame, p.provenance.detection_frame
                    )
                })
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::NonFiniteLoss {
                step: self.global_step,
                provenance,
            });
        }
        let grads = backward(&self.weights, &trace, &d_out);
        self.optimizer.apply(&mut self.weights.params, &grads, self.config.learning_rate);
        self.weights.update_running_stats(&trace);
        self.global_step += 1;
        Ok(mean)
    }

    /// Runs one epoch and, when a checkpoint directory is configured, writes
    /// its checkpoint and history rows.
    pub fn run_epoch(&mut self, data: &TrainingData<T>) -> Result<f64> {
        let epoch = self.epochs_done;
        let sampler = PairSampler::for_model(self.weights.config());
        let mut stream = PairStream::new(data, sampler, self.config.seed, epoch);
        let started = Instant::now();
        let first_step = self.history.step_loss.len();
        let mut rows = Vec::new();
        for _ in 0..self.config.steps_per_epoch() {
            let batch = (0..self.config.batch_size)
                .map(|_| stream.next_pair())
                .collect::<Result<Vec<_>>>()?;
            let l = self.step(&batch)?;
            self.history.step_loss.push(l);
            rows.push((self.global_step - 1, l, started.elapsed().as_secs_f64()));
        }
        let losses = &self.history.step_loss[first_step..];
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        self.history.epoch_mean_loss.push(mean);
        self.history.epoch_seconds.push(started.elapsed().as_secs_f64());
        self.epochs_done += 1;
        if let Some(dir) = self.config.checkpoint_dir.clone() {
            self.write_epoch(&dir, &rows)?;
        }
        Ok(mean)
    }

    fn write_epoch(&self, dir: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let snapshot = dir.join("config.json");
        if !snapshot.exists() {
            let cfg = serde_json::json!({
                "model": self.weights.config(),
                "train": self.config,
            });
            fs::write(&snapshot, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(&snapshot, e))?;
        }
        let history = dir.join("history.csv");
        let fresh = !history.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&history)
            .map_err(|e| Error::io(&history, e))?;
        let mut text = String::new();
        if fresh {
            text.push_str("step,loss,wall_clock\n");
        }
        for (s, l, t) in rows {
            text.push_str(&format!("{s},{l},{t:.6}\n"));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&history, e))?;
        self.checkpoint().save(dir.join(epoch_file(self.epochs_done)))?;
        Ok(())
    }

    pub fn run(&mut self, data: &TrainingData<T>) -> Result<()> {
        if let TrainingData::Sequences(s) = data {
            if s.is_empty() {
                return Err(Error::EmptyDataset("no sequences".into()));
            }
        }
        if let TrainingData::Pairs(p) = data {
            if p.is_empty() {
                return Err(Error::EmptyDataset("no training pairs".into()));
            }
        }
        while self.epochs_done < self.config.epochs {
            self.run_epoch(data)?;
        }
        Ok(())
    }
}

/// Checkpoint file name after `epochs_done` completed epochs.
pub fn epoch_file(epochs_done: usize) -> String {
    format!("epoch_{epochs_done:03}.ckpt")
}

pub fn train<T: Scalar>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: &TrainingData<T>,
) -> Result<(ModelWeights<T>, TrainHistory)> {
    let mut t = Trainer::new(model_config, train_config.clone())?;
    t.run(data)?;
    Ok((t.weights, t.history))
}

/// Continues from a checkpoint until `train_config.epochs` epochs are done.
pub fn train_resume<T: Scalar>(
    checkpoint: Checkpoint<T>,
    train_config: &TrainConfig,
    data: &TrainingData<T>,
) -> Result<(ModelWeights<T>, TrainHistory)> {
    let mut t = Trainer::from_checkpoint(checkpoint, train_config.clone())?;
    t.run(data)?;
    Ok((t.weights, t.history))
}
