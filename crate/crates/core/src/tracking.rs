//! Single-target inference: crop a search region around the previous box,
//! regress the target corners against a fixed template, repeat.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::{crop_and_resize, SequenceRecord};
use crate::error::{Error, Result};
use crate::geometry::{clamp_box, corners_to_ltwh, decode_offsets, ltwh_to_corners, BoundingBox, Ltwh, PatchSize};
use crate::model::{forward_with_template, template_features, ModelWeights};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

pub const DEFAULT_DELTA: f64 = 0.5;
/// Smallest width and height a tracked box may shrink to.
pub const MIN_BOX_SIDE: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct TrackerState<T> {
    pub target_ltwh: Ltwh<f64>,
    pub template: FeatureMap<T>,
    pub delta: f64,
    pub frame_index: usize,
}

impl<T> TrackerState<T> {
    pub fn target(&self) -> BoundingBox<f64> {
        let [l, t, w, h] = self.target_ltwh;
        BoundingBox::new(l, t, l + w, t + h)
    }
}

fn frame_size(frame: &RgbImage) -> PatchSize<f64> {
    PatchSize::new(f64::from(frame.width()), f64::from(frame.height()))
}

/// Computes and caches the template features from `first_frame` cropped to
/// `target`.
pub fn init<T: Scalar>(
    first_frame: &RgbImage,
    target: &BoundingBox<f64>,
    weights: &ModelWeights<T>,
    delta: f64,
) -> Result<TrackerState<T>> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be finite and >= 0, got {delta}")));
    }
    if !(target.is_finite() && target.width() > 0.0 && target.height() > 0.0) {
        return Err(Error::InvalidArgument(format!("degenerate initial box {target:?}")));
    }
    let fs = frame_size(first_frame);
    let frame = BoundingBox::new(0.0, 0.0, fs.width, fs.height);
    if target.intersection(&frame).is_none_or(|b| b.area() <= 0.0) {
        return Err(Error::InvalidArgument(format!("initial box {target:?} does not overlap the frame")));
    }
    let side = weights.config().template_input;
    let patch = crop_and_resize(first_frame, target, side, side)?;
    Ok(TrackerState {
        target_ltwh: corners_to_ltwh(target)?,
        template: template_features(&patch, weights)?,
        delta,
        frame_index: 0,
    })
}

/// The previous box grown by `delta` times its size on each side, clipped to
/// the frame.
pub fn search_region<T>(state: &TrackerState<T>, frame: PatchSize<f64>) -> Result<BoundingBox<f64>> {
    let [l, t, w, h] = state.target_ltwh;
    let d = state.delta;
    let region = BoundingBox::new(
        (l - w * d).max(0.0),
        (t - h * d).max(0.0),
        (l + w * (1.0 + d)).min(frame.width),
        (t + h * (1.0 + d)).min(frame.height),
    );
    if !(region.width() > 0.0 && region.height() > 0.0) {
        return Err(Error::LostTarget(format!(
            "previous box {:?} lies outside the {}x{} frame",
            state.target_ltwh, frame.width, frame.height
        )));
    }
    Ok(region)
}

/// Maps network offsets for a search `region` back to frame pixels.
pub fn offsets_to_frame(offsets: &[f64; 4], region: &BoundingBox<f64>, patch_side: usize) -> Result<BoundingBox<f64>> {
    let s = patch_side as f64;
    let in_patch = decode_offsets(&crate::geometry::RelativeOffsets(*offsets), PatchSize::square(s))?;
    let (sx, sy) = (region.width() / s, region.height() / s);
    Ok(BoundingBox::new(
        in_patch.x1 * sx + region.x1,
        in_patch.y1 * sy + region.y1,
        in_patch.x2 * sx + region.x1,
        in_patch.y2 * sy + region.y1,
    ))
}

/// Orders corners, clips to the frame and enforces the minimum box size
/// while staying inside the frame where possible.
pub fn sanitize_box(b: &BoundingBox<f64>, frame: PatchSize<f64>) -> BoundingBox<f64> {
    let fix = |a: f64, b: f64, max: f64| {
        let (lo, hi) = (a.min(b).clamp(0.0, max), a.max(b).clamp(0.0, max));
        let side = MIN_BOX_SIDE.min(max);
        if hi - lo >= side {
            (lo, hi)
        } else {
            let c = 0.5 * (lo + hi);
            let lo = (c - side / 2.0).clamp(0.0, max - side);
            (lo, lo + side)
        }
    };
    let (x1, x2) = fix(b.x1, b.x2, frame.width);
    let (y1, y2) = fix(b.y1, b.y2, frame.height);
    clamp_box(&BoundingBox::new(x1, y1, x2, y2), frame)
}

/// Tracks one frame; on success replaces the state's box and advances the
/// frame index.
pub fn update<T: Scalar>(
    state: &mut TrackerState<T>,
    frame: &RgbImage,
    weights: &ModelWeights<T>,
) -> Result<BoundingBox<f64>> {
    let fs = frame_size(frame);
    let region = search_region(state, fs)?;
    let side = weights.config().detection_input;
    let patch = crop_and_resize(frame, &region, side, side)?;
    let out = forward_with_template(&state.template, &patch, weights)?;
    let offsets = out.0.map(|v| v.to_f64_lossy());
    let failure = |reason: String| Error::TrackingFailure {
        frame_index: state.frame_index + 1,
        reason,
        last_ltwh: state.target_ltwh,
    };
    if offsets.iter().any(|v| !v.is_finite()) {
        return Err(failure(format!("non-finite network output {offsets:?}")));
    }
    let b = sanitize_box(&offsets_to_frame(&offsets, &region, side)?, fs);
    state.target_ltwh = corners_to_ltwh(&b).map_err(|e| failure(e.to_string()))?;
    state.frame_index += 1;
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    Ok,
    Failed,
}

impl FrameStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameStatus::Ok => "ok",
            FrameStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub boxes: Vec<BoundingBox<f64>>,
    pub status: Vec<FrameStatus>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// `frame_idx,x1,y1,x2,y2,status` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame_idx,x1,y1,x2,y2,status\n");
        for (i, (b, st)) in self.boxes.iter().zip(&self.status).enumerate() {
            let _ = writeln!(s, "{i},{},{},{},{},{}", b.x1, b.y1, b.x2, b.y2, st.as_str());
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One-pass tracking from the first annotation. A failing frame is marked
/// `failed`, repeats the last box, and tracking continues from that box.
pub fn track_sequence<T: Scalar>(seq: &SequenceRecord, weights: &ModelWeights<T>, delta: f64) -> Result<Track> {
    seq.validate()?;
    let first = seq
        .frames
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("sequence {} has no frames", seq.name)))?;
    let init_box = seq.annotations[0];
    let mut state = init(&*first.load()?, &init_box, weights, delta)?;
    let mut track = Track {
        boxes: vec![init_box],
        status: vec![FrameStatus::Ok],
    };
    for frame in &seq.frames[1..] {
        let img = frame.load()?;
        match update(&mut state, &img, weights) {
            Ok(b) => {
                track.boxes.push(b);
                track.status.push(FrameStatus::Ok);
            }
            Err(Error::TrackingFailure { .. } | Error::LostTarget(_)) => {
                state.frame_index += 1;
                track.boxes.push(state.target());
                track.status.push(FrameStatus::Failed);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(track)
}

/// Frame-by-frame tracker interface used by the evaluation harness.
pub trait SingleTracker {
    fn initialize(&mut self, frame: &RgbImage, target: &BoundingBox<f64>) -> Result<()>;
    fn track(&mut self, frame: &RgbImage) -> Result<BoundingBox<f64>>;
}

/// [`SingleTracker`] backed by the network.
pub struct NetworkTracker<'w, T> {
    pub weights: &'w ModelWeights<T>,
    pub delta: f64,
    state: Option<TrackerState<T>>,
}

impl<'w, T: Scalar> NetworkTracker<'w, T> {
    pub fn new(weights: &'w ModelWeights<T>, delta: f64) -> Self {
        Self {
            weights,
            delta,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&TrackerState<T>> {
        self.state.as_ref()
    }
}

impl<T: Scalar> SingleTracker for NetworkTracker<'_, T> {
    fn initialize(&mut self, frame: &RgbImage, target: &BoundingBox<f64>) -> Result<()> {
        self.state = Some(init(frame, target, self.weights, self.delta)?);
        Ok(())
    }

    fn track(&mut self, frame: &RgbImage) -> Result<BoundingBox<f64>> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("tracker used before initialize".into()))?;
        update(state, frame, self.weights)
    }
}

fn draw_rect(img: &mut RgbImage, b: &BoundingBox<f64>, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if w == 0 || h == 0 {
        return;
    }
    let x1 = (b.x1.floor() as i64).clamp(0, w - 1);
    let x2 = ((b.x2.ceil() as i64) - 1).clamp(0, w - 1);
    let y1 = (b.y1.floor() as i64).clamp(0, h - 1);
    let y2 = ((b.y2.ceil() as i64) - 1).clamp(0, h - 1);
    for x in x1..=x2 {
        img.put_pixel(x as u32, y1 as u32, color);
        img.put_pixel(x as u32, y2 as u32, color);
    }
    for y in y1..=y2 {
        img.put_pixel(x1 as u32, y as u32, color);
        img.put_pixel(x2 as u32, y as u32, color);
    }
}

/// Writes every frame with the tracked box (green, red when failed) and the
/// annotation (blue) drawn on top, as `00000001.png` onwards.
pub fn dump_frames(seq: &SequenceRecord, track: &Track, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in seq.frames.iter().enumerate().take(track.len()) {
        let mut img = (*frame.load()?).clone();
        draw_rect(&mut img, &seq.annotations[i], Rgb([40, 90, 255]));
        let color = match track.status[i] {
            FrameStatus::Ok => Rgb([30, 230, 60]),
            FrameStatus::Failed => Rgb([255, 30, 30]),
        };
        draw_rect(&mut img, &track.boxes[i], color);
        let path = dir.join(format!("{:08}.png", i + 1));
        img.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
    }
    Ok(())
}

/// Box helper for callers that hold `ltwh` rows.
pub fn ltwh_box(ltwh: Ltwh<f64>) -> Result<BoundingBox<f64>> {
    ltwh_to_corners(ltwh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn state(ltwh: Ltwh<f64>, delta: f64) -> TrackerState<f64> {
        TrackerState {
            target_ltwh: ltwh,
            template: FeatureMap::zeros(3, 3, 8),
            delta,
            frame_index: 0,
        }
    }

    #[test]
    fn zero_delta_region_is_previous_box() {
        let s = state([30.0, 40.0, 20.0, 10.0], 0.0);
        let r = search_region(&s, PatchSize::new(200.0, 200.0)).unwrap();
        assert_eq!(r, BoundingBox::new(30.0, 40.0, 50.0, 50.0));
    }

    #[test]
    fn half_delta_region() {
        let s = state([100.0, 100.0, 40.0, 40.0], 0.5);
        let r = search_region(&s, PatchSize::new(1000.0, 1000.0)).unwrap();
        assert_eq!(r, BoundingBox::new(80.0, 80.0, 160.0, 160.0));
    }

    #[test]
    fn corner_region_clamped() {
        let s = state([2.0, 3.0, 30.0, 30.0], 2.0);
        let r = search_region(&s, PatchSize::new(50.0, 40.0)).unwrap();
        assert_eq!(r, BoundingBox::new(0.0, 0.0, 50.0, 40.0));
    }

    #[test]
    fn outside_box_is_lost() {
        let s = state([300.0, 10.0, 20.0, 20.0], 0.5);
        assert!(matches!(
            search_region(&s, PatchSize::new(100.0, 100.0)),
            Err(Error::LostTarget(_))
        ));
    }

    #[test]
    fn full_patch_offsets_return_region() {
        let region = BoundingBox::new(13.5, 20.0, 71.25, 44.0);
        let b = offsets_to_frame(&[-0.5, -0.5, 0.5, 0.5], &region, 239).unwrap();
        for (a, e) in [b.x1, b.y1, b.x2, b.y2].iter().zip([13.5, 20.0, 71.25, 44.0]) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn sanitize_enforces_minimum() {
        let fs = PatchSize::new(100.0, 100.0);
        let b = sanitize_box(&BoundingBox::new(50.0, 50.0, 50.5, 49.0), fs);
        assert!((b.width() - 2.0).abs() < 1e-12 && (b.height() - 2.0).abs() < 1e-12);
        let edge = sanitize_box(&BoundingBox::new(99.9, -5.0, 120.0, 0.5), fs);
        assert_eq!(edge, BoundingBox::new(98.0, 0.0, 100.0, 2.0));
    }

    #[test]
    fn init_reads_back_and_caches_template() {
        let cfg = ModelConfig::desk();
        let w = ModelWeights::<f64>::init(&cfg, 1).unwrap();
        let img = RgbImage::from_fn(64, 48, |x, y| Rgb([(x * 3) as u8, (y * 5) as u8, 7]));
        let b = BoundingBox::new(10.0, 12.0, 30.0, 28.0);
        let s = init(&img, &b, &w, 0.5).unwrap();
        assert_eq!(s.target(), b);
        let patch = crop_and_resize(&img, &b, cfg.template_input, cfg.template_input).unwrap();
        assert_eq!(s.template, template_features(&patch, &w).unwrap());
        assert!(matches!(
            init(&img, &BoundingBox::new(5.0, 5.0, 5.0, 9.0), &w, 0.5),
            Err(Error::InvalidArgument(_))
        ));
    }
}
