//! Randomized (template, detection, label) pair generation.
//!
//! 1. Draw an ordered frame pair `i < j` with `j - i` uniform in `[1, 100]`
//!    (pairs overrunning the sequence are re-drawn), retrying when either
//!    target is out of view.
//! 2. The template is the exact target box of frame `i`.
//! 3. The detection crop of frame `j` has each edge drawn uniformly between
//!    the target edge and an outer bound set by one of three margin rules.
//! 4. The label encodes frame `j`'s target relative to the detection patch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::crop_and_resize;
use super::SequenceRecord;
use crate::error::{Error, Result};
use crate::geometry::{encode_offsets, BoundingBox, PatchSize, RelativeOffsets};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Outer crop bounds. `Full` allows a margin of one target width/height on
/// every side; `HalfHorizontal` halves the left/right margin and
/// `HalfVertical` the top/bottom margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeRule {
    Full,
    HalfHorizontal,
    HalfVertical,
}

impl EdgeRule {
    pub const ALL: [EdgeRule; 3] = [EdgeRule::Full, EdgeRule::HalfHorizontal, EdgeRule::HalfVertical];

    /// `(left^, top^, right^, bottom^)` as a box, clipped to the frame.
    pub fn bounds(&self, target: &BoundingBox<f64>, frame: PatchSize<f64>) -> BoundingBox<f64> {
        let (wb, hb) = (target.width(), target.height());
        let (mx, my) = match self {
            EdgeRule::Full => (wb, hb),
            EdgeRule::HalfHorizontal => (wb / 2.0, hb),
            EdgeRule::HalfVertical => (wb, hb / 2.0),
        };
        BoundingBox::new(
            (target.x1 - mx).max(0.0),
            (target.y1 - my).max(0.0),
            (target.x2 + mx).min(frame.width),
            (target.y2 + my).min(frame.height),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sequence: String,
    pub template_frame: usize,
    pub detection_frame: usize,
    /// Detection crop in frame pixels.
    pub crop: BoundingBox<f64>,
    /// Detection-frame target in frame pixels.
    pub target: BoundingBox<f64>,
    pub edge_rule: EdgeRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair<T> {
    pub template: FeatureMap<T>,
    pub detection: FeatureMap<T>,
    pub label: RelativeOffsets<T>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSampler {
    pub template_size: usize,
    pub detection_size: usize,
    pub max_interval: usize,
    pub max_retries: usize,
}

impl Default for PairSampler {
    fn default() -> Self {
        Self {
            template_size: 125,
            detection_size: 239,
            max_interval: 100,
            max_retries: 100,
        }
    }
}

impl PairSampler {
    pub fn for_model(config: &crate::model::ModelConfig) -> Self {
        Self {
            template_size: config.template_input,
            detection_size: config.detection_input,
            ..Self::default()
        }
    }

    /// Uniform over all `(i, d)` with `1 <= d <= max_interval` and
    /// `i + d < n`, which is the distribution of redrawing until in range.
    fn draw_frames<R: Rng>(&self, n: usize, rng: &mut R) -> (usize, usize) {
        let per_start = |i: usize| self.max_interval.min(n - 1 - i);
        let total: usize = (0..n - 1).map(per_start).sum();
        let mut k = rng.random_range(0..total);
        for i in 0..n - 1 {
            let m = per_start(i);
            if k < m {
                return (i, i + 1 + k);
            }
            k -= m;
        }
        unreachable!("index within total")
    }

    fn usable(seq: &SequenceRecord, i: usize) -> bool {
        let b = &seq.annotations[i];
        seq.visible[i] && b.width() > 0.0 && b.height() > 0.0
    }

    /// Draws the detection crop for `target` inside `frame`.
    pub fn draw_crop<R: Rng>(
        target: &BoundingBox<f64>,
        frame: PatchSize<f64>,
        rng: &mut R,
    ) -> (BoundingBox<f64>, EdgeRule) {
        let rule = EdgeRule::ALL[rng.random_range(0..3)];
        let outer = rule.bounds(target, frame);
        let mut between = |a: f64, b: f64| a + (b - a) * rng.random::<f64>();
        let left = between(outer.x1, target.x1);
        let top = between(outer.y1, target.y1);
        let right = between(target.x2, outer.x2);
        let bottom = between(target.y2, outer.y2);
        (BoundingBox::new(left, top, right, bottom), rule)
    }

    /// Label of `target` inside the `crop` once stretched to a square patch.
    pub fn label_for(&self, target: &BoundingBox<f64>, crop: &BoundingBox<f64>) -> Result<RelativeOffsets<f64>> {
        let s = self.detection_size as f64;
        let (sx, sy) = (s / crop.width(), s / crop.height());
        let in_patch = BoundingBox::new(
            (target.x1 - crop.x1) * sx,
            (target.y1 - crop.y1) * sy,
            (target.x2 - crop.x1) * sx,
            (target.y2 - crop.y1) * sy,
        );
        encode_offsets(&in_patch, PatchSize::square(s))
    }

    pub fn sample<T: Scalar, R: Rng>(&self, seq: &SequenceRecord, rng: &mut R) -> Result<PatchPair<T>> {
        seq.validate()?;
        let n = seq.len();
        let usable = (0..n).filter(|&i| Self::usable(seq, i)).count();
        if usable < 2 {
            return Err(Error::Unsampleable(format!(
                "{}: {usable} visible frames, need at least 2",
                seq.name
            )));
        }
        for _ in 0..self.max_retries {
            let (i, j) = self.draw_frames(n, rng);
            if !Self::usable(seq, i) || !Self::usable(seq, j) {
                continue;
            }
            let template_frame = seq.frames[i].load()?;
            let detection_frame = seq.frames[j].load()?;
            let t = self.template_size;
            let template = crop_and_resize(&*template_frame, &seq.annotations[i], t, t)?;
            let target = seq.annotations[j];
            let (crop, edge_rule) = Self::draw_crop(&target, seq.frame_sizes[j], rng);
            if !(crop.width() > 0.0 && crop.height() > 0.0) {
                continue;
            }
            let d = self.detection_size;
            let detection = crop_and_resize(&*detection_frame, &crop, d, d)?;
            let label = self.label_for(&target, &crop)?;
            return Ok(PatchPair {
                template,
                detection,
                label: RelativeOffsets(label.0.map(T::lit)),
                provenance: Provenance {
                    sequence: seq.name.clone(),
                    template_frame: i,
                    detection_frame: j,
                    crop,
                    target,
                    edge_rule,
                },
            });
        }
        Err(Error::Unsampleable(format!(
            "{}: no usable frame pair after {} attempts",
            seq.name, self.max_retries
        )))
    }
}

/// [`PairSampler::sample`] with the default interval and retry limits.
pub fn sample_pair<T: Scalar, R: Rng>(
    seq: &SequenceRecord,
    sampler: &PairSampler,
    rng: &mut R,
) -> Result<PatchPair<T>> {
    sampler.sample(seq, rng)
}
