use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

/// Center-error threshold at which precision is reported.
pub const PRECISION_AT: f64 = 20.0;

/// IoU thresholds `0.00, 0.01, ..., 1.00`.
pub fn success_thresholds() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 100.0).collect()
}

/// Center-error thresholds `0, 1, ..., 50` pixels.
pub fn precision_thresholds() -> Vec<f64> {
    (0..=50).map(f64::from).collect()
}

pub fn center_error(a: &BoundingBox<f64>, b: &BoundingBox<f64>) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OnePassResult {
    pub ious: Vec<f64>,
    pub center_errors: Vec<f64>,
    /// `(tau, fraction of frames with IoU > tau)`.
    pub success: Vec<(f64, f64)>,
    pub auc: f64,
    /// `(rho, fraction of frames with center error <= rho)`.
    pub precision: Vec<(f64, f64)>,
    pub precision_at_20: f64,
    pub mean_iou: f64,
}

fn fraction(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len() as f64
}

/// Success and precision curves of one uninterrupted run.
pub fn evaluate_one_pass(outputs: &[BoundingBox<f64>], groundtruth: &[BoundingBox<f64>]) -> Result<OnePassResult> {
    if outputs.len() != groundtruth.len() {
        return Err(Error::Structural(format!(
            "{} tracker outputs for {} ground-truth boxes",
            outputs.len(),
            groundtruth.len()
        )));
    }
    let ious: Vec<f64> = outputs.iter().zip(groundtruth).map(|(o, g)| iou(o, g)).collect();
    let center_errors: Vec<f64> = outputs.iter().zip(groundtruth).map(|(o, g)| center_error(o, g)).collect();
    let success: Vec<(f64, f64)> = success_thresholds()
        .into_iter()
        .map(|t| (t, fraction(&ious, |v| v > t)))
        .collect();
    let precision: Vec<(f64, f64)> = precision_thresholds()
        .into_iter()
        .map(|r| (r, fraction(&center_errors, |e| e <= r)))
        .collect();
    let auc = success.iter().map(|(_, s)| s).sum::<f64>() / success.len() as f64;
    let mean_iou = if ious.is_empty() { 0.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 };
    Ok(OnePassResult {
        precision_at_20: fraction(&center_errors, |e| e <= PRECISION_AT),
        ious,
        center_errors,
        success,
        auc,
        precision,
        mean_iou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox<f64> {
        BoundingBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn perfect_tracker() {
        let gt = vec![b(0.0, 0.0, 10.0, 10.0), b(5.0, 5.0, 20.0, 30.0)];
        let r = evaluate_one_pass(&gt, &gt).unwrap();
        assert!(r.success[..100].iter().all(|&(_, s)| s == 1.0));
        assert_eq!(r.success[100].1, 0.0);
        assert!((r.auc - 100.0 / 101.0).abs() < 1e-12);
        assert_eq!(r.precision_at_20, 1.0);
    }

    #[test]
    fn disjoint_tracker() {
        let gt = vec![b(0.0, 0.0, 10.0, 10.0)];
        let out = vec![b(100.0, 0.0, 110.0, 10.0)];
        let r = evaluate_one_pass(&out, &gt).unwrap();
        assert_eq!(r.auc, 0.0);
        assert_eq!(r.precision_at_20, 0.0);
        assert_eq!(r.precision.last().unwrap().1, 0.0);
    }

    #[test]
    fn three_frame_fixture() {
        let gt = vec![b(0.0, 0.0, 10.0, 10.0), b(0.0, 0.0, 10.0, 10.0), b(0.0, 0.0, 10.0, 10.0)];
        // Second output overlaps in a 5x10 strip: 50 / (100 + 300 - 50) = 1/7.
        let out = vec![b(0.0, 0.0, 10.0, 10.0), b(5.0, 0.0, 35.0, 10.0), b(20.0, 20.0, 30.0, 30.0)];
        let r = evaluate_one_pass(&out, &gt).unwrap();
        assert!((r.ious[1] - 1.0 / 7.0).abs() < 1e-12);
        for &(t, s) in &r.success {
            let expected = if t < 1.0 / 7.0 {
                2.0 / 3.0
            } else if t < 1.0 {
                1.0 / 3.0
            } else {
                0.0
            };
            assert!((s - expected).abs() < 1e-12, "tau {t}");
        }
        // 15 grid points (0.00..=0.14) at 2/3, 85 at 1/3, one at 0.
        let auc = (15.0 * 2.0 / 3.0 + 85.0 / 3.0) / 101.0;
        assert!((r.auc - auc).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let gt = vec![b(0.0, 0.0, 1.0, 1.0)];
        assert!(matches!(evaluate_one_pass(&[], &gt), Err(Error::Structural(_))));
    }
}
