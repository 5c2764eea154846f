//! Regression head: 1x1 convolution collapsing the correlation channels to a
//! single `m x m` map, then one fully-connected layer to four offsets.

use crate::geometry::RelativeOffsets;
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

pub struct HeadWeights<'a, T> {
    pub conv_w: &'a [T],
    pub conv_b: &'a [T],
    pub fc_w: &'a [T],
    pub fc_b: &'a [T],
}

pub struct HeadGrads<'a, T> {
    pub conv_w: &'a mut [T],
    pub conv_b: &'a mut [T],
    pub fc_w: &'a mut [T],
    pub fc_b: &'a mut [T],
}

/// Returns the offsets and the collapsed `m*m` map.
pub fn head_forward<T: Scalar>(corr: &FeatureMap<T>, p: &HeadWeights<'_, T>) -> (RelativeOffsets<T>, Vec<T>) {
    let collapsed: Vec<T> = corr
        .as_slice()
        .chunks_exact(corr.channels())
        .map(|px| px.iter().zip(p.conv_w).fold(p.conv_b[0], |acc, (&v, &w)| acc + v * w))
        .collect();
    let m2 = collapsed.len();
    let mut out = [T::zero(); 4];
    for (j, o) in out.iter_mut().enumerate() {
        let row = &p.fc_w[j * m2..(j + 1) * m2];
        *o = row.iter().zip(&collapsed).fold(p.fc_b[j], |acc, (&w, &v)| acc + w * v);
    }
    (RelativeOffsets(out), collapsed)
}

/// Returns the gradient w.r.t. the correlation map.
pub fn head_backward<T: Scalar>(
    d_out: &[T; 4],
    corr: &FeatureMap<T>,
    collapsed: &[T],
    p: &HeadWeights<'_, T>,
    g: &mut HeadGrads<'_, T>,
) -> FeatureMap<T> {
    let m2 = collapsed.len();
    let c = corr.channels();
    let mut d_collapsed = vec![T::zero(); m2];
    for j in 0..4 {
        g.fc_b[j] += d_out[j];
        for q in 0..m2 {
            g.fc_w[j * m2 + q] += d_out[j] * collapsed[q];
            d_collapsed[q] += p.fc_w[j * m2 + q] * d_out[j];
        }
    }
    let mut d_corr = FeatureMap::zeros(corr.height(), corr.width(), c);
    for (q, (dp, cp)) in d_corr
        .as_mut_slice()
        .chunks_exact_mut(c)
        .zip(corr.as_slice().chunks_exact(c))
        .enumerate()
    {
        let ds = d_collapsed[q];
        g.conv_b[0] += ds;
        for k in 0..c {
            g.conv_w[k] += ds * cp[k];
            dp[k] = ds * p.conv_w[k];
        }
    }
    d_corr
}
