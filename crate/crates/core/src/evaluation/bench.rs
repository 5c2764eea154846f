use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use image::RgbImage;
use serde::Serialize;

use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::model::checkpoint::serialize_weights;
use crate::model::ModelWeights;
use crate::scalar::Scalar;
use crate::tracking::{NetworkTracker, SingleTracker};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpsReport {
    pub median_fps: f64,
    pub runs_fps: Vec<f64>,
    pub frames_timed: usize,
    pub warmup: usize,
    pub hardware: String,
}

/// CPU model, logical core count, OS and architecture.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{cpu}; {cores} logical cores; {}-{}; single-threaded timing",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Times `reps` runs over in-memory `frames`. Each run initializes a fresh
/// tracker on frame 0, tracks `warmup` untimed frames and then times the
/// rest.
pub fn benchmark_tracker<S: SingleTracker>(
    mut make: impl FnMut() -> Result<S>,
    frames: &[Arc<RgbImage>],
    init_box: &BoundingBox<f64>,
    warmup: usize,
    reps: usize,
) -> Result<FpsReport> {
    if frames.len() < warmup + 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} frames for {warmup} warmup frames, got {}",
            warmup + 2,
            frames.len()
        )));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let timed = frames.len() - 1 - warmup;
    let mut runs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut t = make()?;
        t.initialize(&frames[0], init_box)?;
        for f in &frames[1..=warmup] {
            t.track(f)?;
        }
        let start = Instant::now();
        for f in &frames[warmup + 1..] {
            std::hint::black_box(t.track(f)?);
        }
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        runs.push(timed as f64 / secs);
    }
    Ok(FpsReport {
        median_fps: median(&runs),
        runs_fps: runs,
        frames_timed: timed,
        warmup,
        hardware: hardware_descriptor(),
    })
}

/// Network tracker speed on `seq`, with every frame decoded up front.
/// Inference on a single pair runs on the calling thread only.
pub fn benchmark_fps<T: Scalar>(
    weights: &ModelWeights<T>,
    seq: &SequenceRecord,
    delta: f64,
    warmup: usize,
    reps: usize,
) -> Result<FpsReport> {
    seq.validate()?;
    let frames = seq.frames.iter().map(|f| f.load()).collect::<Result<Vec<_>>>()?;
    let init = seq
        .annotations
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty sequence".into()))?;
    benchmark_tracker(|| Ok(NetworkTracker::new(weights, delta)), &frames, init, warmup, reps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelSize {
    pub parameter_count: usize,
    pub checkpoint_bytes: u64,
}

/// Parameter count and the size of the checkpoint written to `path`.
pub fn report_model_size<T: Scalar>(weights: &ModelWeights<T>, path: impl AsRef<Path>) -> Result<ModelSize> {
    let path = path.as_ref();
    serialize_weights(weights, path)?;
    let bytes = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    Ok(ModelSize {
        parameter_count: weights.parameter_count(),
        checkpoint_bytes: bytes,
    })
}
