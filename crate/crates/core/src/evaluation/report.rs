use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use super::bench::{FpsReport, ModelSize};
use super::curves::{precision_thresholds, success_thresholds, OnePassResult};
use super::ResetResult;
use crate::error::{Error, Result};
use crate::tracking::Track;

/// Placeholder for metrics that need the official benchmark toolkit.
pub const NOT_COMPUTED: &str = "not computed";

#[derive(Debug, Clone, Serialize)]
pub struct SequenceMetrics {
    pub name: String,
    pub frames: usize,
    pub one_pass: OnePassResult,
    pub reset: ResetResult,
}

/// Everything written to `metrics.json`, plus the curves averaged over
/// sequences.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub sequences: Vec<SequenceMetrics>,
    pub config_hash: String,
    pub model_size: ModelSize,
    pub fps: Option<FpsReport>,
    pub hardware: String,
}

impl EvalSummary {
    fn mean_curve(&self, pick: impl Fn(&OnePassResult) -> &Vec<(f64, f64)>, grid: Vec<f64>) -> Vec<(f64, f64)> {
        let n = self.sequences.len().max(1) as f64;
        grid.into_iter()
            .enumerate()
            .map(|(k, t)| (t, self.sequences.iter().map(|s| pick(&s.one_pass)[k].1).sum::<f64>() / n))
            .collect()
    }

    pub fn success_curve(&self) -> Vec<(f64, f64)> {
        self.mean_curve(|r| &r.success, success_thresholds())
    }

    pub fn precision_curve(&self) -> Vec<(f64, f64)> {
        self.mean_curve(|r| &r.precision, precision_thresholds())
    }

    pub fn auc(&self) -> f64 {
        let c = self.success_curve();
        c.iter().map(|(_, v)| v).sum::<f64>() / c.len() as f64
    }

    pub fn precision_at_20(&self) -> f64 {
        self.precision_curve()[20].1
    }

    /// Mean over sequences of the reset-protocol mean IoU.
    pub fn accuracy(&self) -> f64 {
        let n = self.sequences.len().max(1) as f64;
        self.sequences.iter().map(|s| s.reset.mean_iou).sum::<f64>() / n
    }

    pub fn failures(&self) -> usize {
        self.sequences.iter().map(|s| s.reset.failures).sum()
    }

    pub fn metrics_json(&self) -> serde_json::Value {
        let per_sequence: Vec<_> = self
            .sequences
            .iter()
            .map(|s| {
                serde_json::json!({
                    "name": s.name,
                    "frames": s.frames,
                    "mean_iou_one_pass": s.one_pass.mean_iou,
                    "auc": s.one_pass.auc,
                    "precision_at_20": s.one_pass.precision_at_20,
                    "accuracy": s.reset.mean_iou,
                    "failures": s.reset.failures,
                    "valid_frames": s.reset.valid_frames,
                })
            })
            .collect();
        serde_json::json!({
            "accuracy": self.accuracy(),
            "failures": self.failures(),
            "auc": self.auc(),
            "precision_at_20": self.precision_at_20(),
            "EAO": NOT_COMPUTED,
            "EFO": NOT_COMPUTED,
            "fps": self.fps.as_ref().map(|f| f.median_fps),
            "parameter_count": self.model_size.parameter_count,
            "checkpoint_bytes": self.model_size.checkpoint_bytes,
            "config_hash": self.config_hash,
            "hardware": self.hardware,
            "sequences": per_sequence,
        })
    }
}

fn curve_csv(header: &str, curve: &[(f64, f64)]) -> String {
    let mut s = format!("{header},value\n");
    for (t, v) in curve {
        let _ = writeln!(s, "{t},{v}");
    }
    s
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Renders a curve with `y` in `[0, 1]` over the range of its `x` values,
/// with axes and a light grid at tenths.
pub fn plot_curve(curve: &[(f64, f64)], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 20i64;
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    if curve.is_empty() || w <= 0 || h <= 0 {
        return img;
    }
    let x_min = curve.first().map(|p| p.0).unwrap_or(0.0);
    let x_max = curve.last().map(|p| p.0).unwrap_or(1.0).max(x_min + 1e-12);
    let to_px = |(x, y): (f64, f64)| {
        let px = margin + ((x - x_min) / (x_max - x_min) * w as f64).round() as i64;
        let py = margin + h - (y.clamp(0.0, 1.0) * h as f64).round() as i64;
        (px, py)
    };
    let grid = Rgb([225, 225, 225]);
    for k in 1..10 {
        let f = k as f64 / 10.0;
        line(&mut img, to_px((x_min, f)), to_px((x_max, f)), grid);
        let gx = x_min + f * (x_max - x_min);
        line(&mut img, to_px((gx, 0.0)), to_px((gx, 1.0)), grid);
    }
    let axis = Rgb([0, 0, 0]);
    line(&mut img, to_px((x_min, 0.0)), to_px((x_max, 0.0)), axis);
    line(&mut img, to_px((x_min, 0.0)), to_px((x_min, 1.0)), axis);
    let ink = Rgb([200, 30, 30]);
    for pair in curve.windows(2) {
        line(&mut img, to_px(pair[0]), to_px(pair[1]), ink);
    }
    img
}

/// Writes `metrics.json`, `success.csv`, `precision.csv`, the two plot
/// images and one track CSV per sequence into `dir`.
pub fn write_results(dir: impl AsRef<Path>, summary: &EvalSummary, tracks: &[(String, Track)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(
        &dir.join("metrics.json"),
        serde_json::to_string_pretty(&summary.metrics_json())?,
    )?;
    let success = summary.success_curve();
    let precision = summary.precision_curve();
    write(&dir.join("success.csv"), curve_csv("threshold", &success))?;
    write(&dir.join("precision.csv"), curve_csv("threshold", &precision))?;
    for (name, curve) in [("success.png", &success), ("precision.png", &precision)] {
        let path = dir.join(name);
        plot_curve(curve, 420, 320)
            .save(&path)
            .map_err(|source| Error::Image { path: path.clone(), source })?;
    }
    let tracks_dir = dir.join("tracks");
    fs::create_dir_all(&tracks_dir).map_err(|e| Error::io(&tracks_dir, e))?;
    for (name, track) in tracks {
        track.write_csv(tracks_dir.join(format!("{name}.csv")))?;
    }
    Ok(())
}
