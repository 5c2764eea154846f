use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Read access to a multi-channel pixel grid.
pub trait Raster {
    /// `(height, width, channels)`.
    fn dims(&self) -> (usize, usize, usize);
    fn value(&self, row: usize, col: usize, ch: usize) -> f64;
}

/// 8-bit RGB reads as `value / 255`.
impl Raster for RgbImage {
    fn dims(&self) -> (usize, usize, usize) {
        (self.height() as usize, self.width() as usize, 3)
    }

    fn value(&self, row: usize, col: usize, ch: usize) -> f64 {
        f64::from(self.get_pixel(col as u32, row as u32).0[ch]) / 255.0
    }
}

impl<T: Scalar> Raster for FeatureMap<T> {
    fn dims(&self) -> (usize, usize, usize) {
        self.shape()
    }

    fn value(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.get(row, col, ch).to_f64_lossy()
    }
}

pub fn image_to_map<T: Scalar>(img: &RgbImage) -> FeatureMap<T> {
    let (h, w, _) = img.dims();
    FeatureMap::from_fn(h, w, 3, |i, j, k| T::lit(img.value(i, j, k)))
}

/// Bilinear resampling of `region` onto an `out_h x out_w` grid.
///
/// Output pixel centers are mapped back into the region; samples falling
/// past the outermost source pixel centers replicate the border.
pub fn crop_and_resize<T: Scalar, R: Raster + ?Sized>(
    frame: &R,
    region: &BoundingBox<f64>,
    out_w: usize,
    out_h: usize,
) -> Result<FeatureMap<T>> {
    if !(region.width() > 0.0 && region.height() > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "crop region must have positive area, got ({}, {}, {}, {})",
            region.x1, region.y1, region.x2, region.y2
        )));
    }
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument("output size must be positive".into()));
    }
    let (h, w, c) = frame.dims();
    let sx = region.width() / out_w as f64;
    let sy = region.height() / out_h as f64;
    let axis = |start: f64, scale: f64, o: usize, n: usize| -> (usize, usize, f64) {
        let s = (start + (o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|o| axis(region.x1, sx, o, w)).collect();
    let ys: Vec<_> = (0..out_h).map(|o| axis(region.y1, sy, o, h)).collect();
    let mut out = FeatureMap::zeros(out_h, out_w, c);
    for (oi, &(r0, r1, fy)) in ys.iter().enumerate() {
        for (oj, &(c0, c1, fx)) in xs.iter().enumerate() {
            let px = out.pixel_mut(oi, oj);
            for (k, p) in px.iter_mut().enumerate() {
                let top = frame.value(r0, c0, k) * (1.0 - fx) + frame.value(r0, c1, k) * fx;
                let bottom = frame.value(r1, c0, k) * (1.0 - fx) + frame.value(r1, c1, k) * fx;
                *p = T::lit(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_frame_same_size_is_identity() {
        let f = FeatureMap::from_fn(6, 5, 3, |i, j, k| (i * 31 + j * 7 + k) as f64 / 50.0);
        let out: FeatureMap<f64> =
            crop_and_resize(&f, &BoundingBox::new(0.0, 0.0, 5.0, 6.0), 5, 6).unwrap();
        for (a, b) in out.as_slice().iter().zip(f.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn checkerboard_upsample_by_hand() {
        // p = [[0, 1], [1, 0]]; source coordinates per output index are
        // -0.25, 0.25, 0.75, 1.25 -> clamped weights (1,0), (.75,.25), (.25,.75), (0,1).
        let f = FeatureMap::from_vec(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out: FeatureMap<f64> = crop_and_resize(&f, &BoundingBox::new(0.0, 0.0, 2.0, 2.0), 4, 4).unwrap();
        let wts = [(1.0, 0.0), (0.75, 0.25), (0.25, 0.75), (0.0, 1.0)];
        for (i, &(ay, by)) in wts.iter().enumerate() {
            for (j, &(ax, bx)) in wts.iter().enumerate() {
                let top = ax * 0.0 + bx * 1.0;
                let bottom = ax * 1.0 + bx * 0.0;
                let expected = ay * top + by * bottom;
                assert!((out.get(i, j, 0) - expected).abs() < 1e-12, "({i},{j})");
            }
        }
        assert!((out.get(1, 1, 0) - 0.375).abs() < 1e-12);
    }

    #[test]
    fn constant_region_stays_constant() {
        let f = FeatureMap::filled(10, 12, 3, 0.4);
        for &(w, h) in &[(3, 7), (25, 25), (1, 1)] {
            let out: FeatureMap<f32> =
                crop_and_resize(&f, &BoundingBox::new(1.3, 2.2, 9.9, 7.1), w, h).unwrap();
            assert!(out.as_slice().iter().all(|v| (v - 0.4).abs() < 1e-6));
        }
    }

    #[test]
    fn zero_area_rejected() {
        let f = FeatureMap::<f64>::zeros(4, 4, 3);
        assert!(crop_and_resize::<f64, _>(&f, &BoundingBox::new(1.0, 1.0, 1.0, 3.0), 2, 2).is_err());
    }

    #[test]
    fn rgb_image_reads_normalized() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, image::Rgb([255, 0, 51]));
        let m: FeatureMap<f64> = image_to_map(&img);
        assert_eq!(m.shape(), (1, 2, 3));
        assert_eq!(m.pixel(0, 1), &[1.0, 0.0, 0.2]);
    }
}
