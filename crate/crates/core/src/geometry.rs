//! Box arithmetic and the center-relative corner offset encoding.
//!
//! Coordinates are continuous with the origin at the top-left corner of the
//! top-left pixel; pixel `(row i, col j)` covers `[j, j+1) x [i, i+1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

/// Target corners as fractions of the patch size, measured from the patch
/// center: `[x1/w - 1/2, y1/h - 1/2, x2/w - 1/2, y2/h - 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeOffsets<T>(pub [T; 4]);

/// Width and height of a patch or frame in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSize<T> {
    pub width: T,
    pub height: T,
}

impl<T: Scalar> PatchSize<T> {
    pub fn new(width: T, height: T) -> Self {
        Self { width, height }
    }

    pub fn square(side: T) -> Self {
        Self::new(side, side)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width > T::zero() && self.height > T::zero() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "patch size must be strictly positive, got {}x{}",
                self.width, self.height
            )))
        }
    }
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Checked constructor enforcing `x1 <= x2` and `y1 <= y2`.
    pub fn try_new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let b = Self::new(x1, y1, x2, y2);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidArgument(format!(
                "box corners out of order: ({x1}, {y1}, {x2}, {y2})"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width().max(T::zero()) * self.height().max(T::zero())
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        ((self.x1 + self.x2) * half, (self.y1 + self.y2) * half)
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// True when `other` lies inside `self` (boundaries included).
    pub fn contains(&self, other: &Self) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x1 <= x2 && y1 <= y2).then(|| Self::new(x1, y1, x2, y2))
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox::new(
            U::lit(self.x1.to_f64_lossy()),
            U::lit(self.y1.to_f64_lossy()),
            U::lit(self.x2.to_f64_lossy()),
            U::lit(self.y2.to_f64_lossy()),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.y1.is_finite() && self.x2.is_finite() && self.y2.is_finite()
    }
}

impl<T: Scalar> RelativeOffsets<T> {
    pub fn zeros() -> Self {
        Self([T::zero(); 4])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Expresses a box given in patch coordinates as center-relative fractions.
pub fn encode_offsets<T: Scalar>(b: &BoundingBox<T>, size: PatchSize<T>) -> Result<RelativeOffsets<T>> {
    size.validate()?;
    let half = T::lit(0.5);
    Ok(RelativeOffsets([
        b.x1 / size.width - half,
        b.y1 / size.height - half,
        b.x2 / size.width - half,
        b.y2 / size.height - half,
    ]))
}

/// Inverse of [`encode_offsets`]: `x = O * w + w / 2`.
pub fn decode_offsets<T: Scalar>(o: &RelativeOffsets<T>, size: PatchSize<T>) -> Result<BoundingBox<T>> {
    size.validate()?;
    let half = T::lit(0.5);
    let [o1, o2, o3, o4] = o.0;
    let (w, h) = (size.width, size.height);
    Ok(BoundingBox::new(
        o1 * w + w * half,
        o2 * h + h * half,
        o3 * w + w * half,
        o4 * h + h * half,
    ))
}

/// Intersection over union. Zero-area boxes score 0 against everything.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= T::zero() || area_b <= T::zero() {
        return T::zero();
    }
    let inter = a.intersection(b).map_or(T::zero(), |i| i.area());
    let union = area_a + area_b - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).min(T::one()).max(T::zero())
}

/// Clips every coordinate into `[0, width] x [0, height]`.
pub fn clamp_box<T: Scalar>(b: &BoundingBox<T>, frame: PatchSize<T>) -> BoundingBox<T> {
    let cx = |v: T| v.max(T::zero()).min(frame.width);
    let cy = |v: T| v.max(T::zero()).min(frame.height);
    BoundingBox::new(cx(b.x1), cy(b.y1), cx(b.x2), cy(b.y2))
}

/// `(left, top, width, height)`.
pub type Ltwh<T> = [T; 4];

pub fn corners_to_ltwh<T: Scalar>(b: &BoundingBox<T>) -> Result<Ltwh<T>> {
    if !b.is_valid() {
        return Err(Error::InvalidArgument(format!(
            "negative extent in box ({}, {}, {}, {})",
            b.x1, b.y1, b.x2, b.y2
        )));
    }
    Ok([b.x1, b.y1, b.width(), b.height()])
}

pub fn ltwh_to_corners<T: Scalar>(ltwh: Ltwh<T>) -> Result<BoundingBox<T>> {
    let [l, t, w, h] = ltwh;
    if w < T::zero() || h < T::zero() {
        return Err(Error::InvalidArgument(format!(
            "negative width/height ({w}, {h})"
        )));
    }
    Ok(BoundingBox::new(l, t, l + w, t + h))
}
