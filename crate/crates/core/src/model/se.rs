//! Squeeze-and-excitation channel recalibration.
//!
//! `s = sigmoid(W2 relu(W1 avgpool(f) + b1) + b2)` and every channel `k` of
//! the input is scaled by `s[k]`. `W1` is `[c/r, c]`, `W2` is `[c, c/r]`.

use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

#[derive(Debug, Clone)]
pub struct SeCache<T> {
    pub input: FeatureMap<T>,
    pub pooled: Vec<T>,
    pub hidden_pre: Vec<T>,
    pub gate: Vec<T>,
}

pub struct SeWeights<'a, T> {
    pub w1: &'a [T],
    pub b1: &'a [T],
    pub w2: &'a [T],
    pub b2: &'a [T],
}

pub struct SeGrads<'a, T> {
    pub w1: &'a mut [T],
    pub b1: &'a mut [T],
    pub w2: &'a mut [T],
    pub b2: &'a mut [T],
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn global_average_pool<T: Scalar>(f: &FeatureMap<T>) -> Vec<T> {
    let c = f.channels();
    let mut z = vec![T::zero(); c];
    for px in f.as_slice().chunks_exact(c) {
        for (a, &v) in z.iter_mut().zip(px) {
            *a += v;
        }
    }
    let n = T::count(f.height() * f.width());
    z.iter_mut().for_each(|v| *v /= n);
    z
}

fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * cols..(r + 1) * cols];
            row.iter().zip(x).fold(bias, |acc, (&a, &v)| acc + a * v)
        })
        .collect()
}

/// Returns `(gate, pooled, hidden pre-activation)`.
pub fn se_gate<T: Scalar>(f: &FeatureMap<T>, p: &SeWeights<'_, T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let pooled = global_average_pool(f);
    let hidden_pre = affine(p.w1, p.b1, &pooled);
    let hidden: Vec<T> = hidden_pre.iter().map(|&v| v.max(T::zero())).collect();
    let gate = affine(p.w2, p.b2, &hidden).into_iter().map(sigmoid).collect();
    (gate, pooled, hidden_pre)
}

/// Multiplies channel `k` of `f` by `gate[k]`.
pub fn se_apply_gate<T: Scalar>(f: &FeatureMap<T>, gate: &[T]) -> FeatureMap<T> {
    let c = f.channels();
    let mut out = f.clone();
    for px in out.as_mut_slice().chunks_exact_mut(c) {
        for (v, &s) in px.iter_mut().zip(gate) {
            *v *= s;
        }
    }
    out
}

pub fn se_forward<T: Scalar>(f: &FeatureMap<T>, p: &SeWeights<'_, T>) -> (FeatureMap<T>, SeCache<T>) {
    let (gate, pooled, hidden_pre) = se_gate(f, p);
    let out = se_apply_gate(f, &gate);
    (
        out,
        SeCache {
            input: f.clone(),
            pooled,
            hidden_pre,
            gate,
        },
    )
}

pub fn se_backward<T: Scalar>(
    d_out: &FeatureMap<T>,
    cache: &SeCache<T>,
    p: &SeWeights<'_, T>,
    g: &mut SeGrads<'_, T>,
) -> FeatureMap<T> {
    let c = d_out.channels();
    let hid = cache.hidden_pre.len();
    let mut d_gate = vec![T::zero(); c];
    for (dp, xp) in d_out
        .as_slice()
        .chunks_exact(c)
        .zip(cache.input.as_slice().chunks_exact(c))
    {
        for k in 0..c {
            d_gate[k] += dp[k] * xp[k];
        }
    }
    let d_logit: Vec<T> = d_gate
        .iter()
        .zip(&cache.gate)
        .map(|(&d, &s)| d * s * (T::one() - s))
        .collect();
    let hidden: Vec<T> = cache.hidden_pre.iter().map(|&v| v.max(T::zero())).collect();
    let mut d_hidden = vec![T::zero(); hid];
    for k in 0..c {
        g.b2[k] += d_logit[k];
        for j in 0..hid {
            g.w2[k * hid + j] += d_logit[k] * hidden[j];
            d_hidden[j] += p.w2[k * hid + j] * d_logit[k];
        }
    }
    let mut d_pooled = vec![T::zero(); c];
    for j in 0..hid {
        if cache.hidden_pre[j] <= T::zero() {
            continue;
        }
        let dh = d_hidden[j];
        g.b1[j] += dh;
        for k in 0..c {
            g.w1[j * c + k] += dh * cache.pooled[k];
            d_pooled[k] += p.w1[j * c + k] * dh;
        }
    }
    let inv_n = T::one() / T::count(d_out.height() * d_out.width());
    let mut dx = d_out.clone();
    for px in dx.as_mut_slice().chunks_exact_mut(c) {
        for k in 0..c {
            px[k] = px[k] * cache.gate[k] + d_pooled[k] * inv_n;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    /// Scalar re-derivation of the squeeze-excite formula with explicit loops.
    fn oracle(f: &FeatureMap<f64>, w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64]) -> FeatureMap<f64> {
        let (h, w, c) = f.shape();
        let hid = b1.len();
        let mut z = vec![0.0; c];
        for k in 0..c {
            for i in 0..h {
                for j in 0..w {
                    z[k] += f.get(i, j, k);
                }
            }
            z[k] /= (h * w) as f64;
        }
        let mut a = vec![0.0; hid];
        for r in 0..hid {
            let mut s = b1[r];
            for k in 0..c {
                s += w1[r * c + k] * z[k];
            }
            a[r] = if s > 0.0 { s } else { 0.0 };
        }
        let mut gate = vec![0.0; c];
        for k in 0..c {
            let mut s = b2[k];
            for r in 0..hid {
                s += w2[k * hid + r] * a[r];
            }
            gate[k] = 1.0 / (1.0 + (-s).exp());
        }
        FeatureMap::from_fn(h, w, c, |i, j, k| f.get(i, j, k) * gate[k])
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut s = 99;
        let (c, hid) = (8, 2);
        let f = FeatureMap::from_fn(7, 7, c, |_, _, _| lcg(&mut s) * 3.0);
        let w1: Vec<f64> = (0..hid * c).map(|_| lcg(&mut s)).collect();
        let b1: Vec<f64> = (0..hid).map(|_| lcg(&mut s)).collect();
        let w2: Vec<f64> = (0..c * hid).map(|_| lcg(&mut s)).collect();
        let b2: Vec<f64> = (0..c).map(|_| lcg(&mut s)).collect();
        let p = SeWeights { w1: &w1, b1: &b1, w2: &w2, b2: &b2 };
        let (out, cache) = se_forward(&f, &p);
        let expected = oracle(&f, &w1, &b1, &w2, &b2);
        for (a, b) in out.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(cache.gate.iter().all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn zero_input_and_identity_gate() {
        let f = FeatureMap::<f64>::zeros(3, 3, 4);
        let w = vec![0.3; 4];
        let b = vec![0.1; 1];
        let b2 = vec![0.2; 4];
        let p = SeWeights { w1: &w, b1: &b, w2: &w, b2: &b2 };
        assert!(se_forward(&f, &p).0.as_slice().iter().all(|&v| v == 0.0));
        let g = FeatureMap::from_fn(3, 3, 4, |i, j, k| (i * 10 + j + k) as f64);
        assert_eq!(se_apply_gate(&g, &[1.0; 4]), g);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
