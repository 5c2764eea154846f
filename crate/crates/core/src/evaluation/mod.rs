//! Tracking metrics: one-pass success and precision curves, the reset
//! protocol for accuracy and robustness, speed and model-size reports.

mod bench;
mod curves;
mod report;

pub use bench::{benchmark_fps, benchmark_tracker, hardware_descriptor, report_model_size, FpsReport, ModelSize};
pub use curves::{
    center_error, evaluate_one_pass, precision_thresholds, success_thresholds, OnePassResult, PRECISION_AT,
};
pub use report::{plot_curve, write_results, EvalSummary, SequenceMetrics, NOT_COMPUTED};

use image::RgbImage;
use serde::Serialize;

use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::tracking::SingleTracker;

pub const DEFAULT_RESET_SKIP: usize = 5;

/// What happened at one frame under the reset protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "iou", rename_all = "lowercase")]
pub enum FrameOutcome {
    /// The tracker was (re)initialized from ground truth here.
    Init,
    Tracked(f64),
    /// Zero overlap with ground truth, or the tracker reported failure.
    Failure,
    /// Inside the post-failure window; not tracked.
    Skipped,
    /// Target marked absent; tracked through but not scored.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResetResult {
    /// Mean IoU over tracked frames; 0 when there are none.
    pub mean_iou: f64,
    pub valid_frames: usize,
    pub failures: usize,
    pub outcomes: Vec<FrameOutcome>,
}

/// Builds and initializes a fresh tracker for each (re)start.
pub trait TrackerFactory {
    type Tracker: SingleTracker;
    fn create(&self) -> Result<Self::Tracker>;
}

impl<F, S> TrackerFactory for F
where
    F: Fn() -> Result<S>,
    S: SingleTracker,
{
    type Tracker = S;

    fn create(&self) -> Result<S> {
        self()
    }
}

fn start<F: TrackerFactory>(factory: &F, frame: &RgbImage, target: &BoundingBox<f64>) -> Result<F::Tracker> {
    let mut t = factory.create()?;
    t.initialize(frame, target)?;
    Ok(t)
}

/// Tracks `seq`, declaring a failure whenever the prediction has zero
/// overlap with ground truth (or the tracker gives up), and restarting from
/// ground truth `reset_skip` frames after each failure.
pub fn evaluate_with_reset<F: TrackerFactory>(factory: &F, seq: &SequenceRecord, reset_skip: usize) -> Result<ResetResult> {
    seq.validate()?;
    if seq.is_empty() {
        return Err(Error::InvalidArgument(format!("sequence {} has no frames", seq.name)));
    }
    let n = seq.len();
    let mut outcomes = Vec::with_capacity(n);
    let mut tracker: Option<F::Tracker> = None;
    let mut resume_at = 0usize;
    for f in 0..n {
        if f < resume_at {
            outcomes.push(FrameOutcome::Skipped);
            continue;
        }
        let frame = seq.frames[f].load()?;
        let Some(t) = tracker.as_mut() else {
            if seq.visible[f] {
                tracker = Some(start(factory, &frame, &seq.annotations[f])?);
                outcomes.push(FrameOutcome::Init);
            } else {
                outcomes.push(FrameOutcome::Absent);
            }
            continue;
        };
        let predicted = match t.track(&frame) {
            Ok(b) => Some(b),
            Err(Error::TrackingFailure { .. } | Error::LostTarget(_)) => None,
            Err(e) => return Err(e),
        };
        if !seq.visible[f] {
            outcomes.push(FrameOutcome::Absent);
            continue;
        }
        match predicted.map(|b| iou(&b, &seq.annotations[f])) {
            Some(v) if v > 0.0 => outcomes.push(FrameOutcome::Tracked(v)),
            _ => {
                outcomes.push(FrameOutcome::Failure);
                tracker = None;
                resume_at = f + reset_skip.max(1);
            }
        }
    }
    let scored: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| match o {
            FrameOutcome::Tracked(v) => Some(*v),
            _ => None,
        })
        .collect();
    Ok(ResetResult {
        mean_iou: if scored.is_empty() { 0.0 } else { scored.iter().sum::<f64>() / scored.len() as f64 },
        valid_frames: scored.len(),
        failures: outcomes.iter().filter(|o| **o == FrameOutcome::Failure).count(),
        outcomes,
    })
}
