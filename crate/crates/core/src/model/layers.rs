//! Convolution, batch normalization, ReLU and max-pool primitives with their
//! backward passes. All maps are HWC; conv kernels are `[k, k, c_in, c_out]`.

use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels
    }
}

pub fn pool_output_size(n: usize) -> Option<usize> {
    (n >= 2).then_some(n / 2)
}

/// Bias-free strided convolution with zero padding.
pub fn conv2d_forward<T: Scalar>(x: &FeatureMap<T>, kernel: &[T], g: &ConvGeometry) -> FeatureMap<T> {
    let (h, w, cin) = x.shape();
    debug_assert_eq!(cin, g.in_channels);
    let oh = g.output_size(h).expect("conv input too small");
    let ow = g.output_size(w).expect("conv input too small");
    let cout = g.out_channels;
    let mut out = FeatureMap::zeros(oh, ow, cout);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = vec![T::zero(); cout];
            for ky in 0..g.kernel {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..g.kernel {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = x.pixel(iy as usize, ix as usize);
                    let base = (ky * g.kernel + kx) * cin;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        let row = &kernel[(base + ci) * cout..(base + ci + 1) * cout];
                        for (a, &wv) in acc.iter_mut().zip(row) {
                            *a += v * wv;
                        }
                    }
                }
            }
            out.pixel_mut(oy, ox).copy_from_slice(&acc);
        }
    }
    out
}

/// Accumulates the kernel gradient into `d_kernel` and returns the input
/// gradient when `need_input_grad` is set.
pub fn conv2d_backward<T: Scalar>(
    x: &FeatureMap<T>,
    d_out: &FeatureMap<T>,
    kernel: &[T],
    g: &ConvGeometry,
    d_kernel: &mut [T],
    need_input_grad: bool,
) -> Option<FeatureMap<T>> {
    let (h, w, cin) = x.shape();
    let (oh, ow, cout) = d_out.shape();
    let mut dx = need_input_grad.then(|| FeatureMap::zeros(h, w, cin));
    for oy in 0..oh {
        for ox in 0..ow {
            let go = d_out.pixel(oy, ox);
            for ky in 0..g.kernel {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..g.kernel {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let (iy, ix) = (iy as usize, ix as usize);
                    let base = (ky * g.kernel + kx) * cin;
                    let px = x.pixel(iy, ix);
                    for (ci, &v) in px.iter().enumerate() {
                        let off = (base + ci) * cout;
                        if v != T::zero() {
                            for (dk, &gv) in d_kernel[off..off + cout].iter_mut().zip(go) {
                                *dk += v * gv;
                            }
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dpx = dx.pixel_mut(iy, ix);
                        for (ci, d) in dpx.iter_mut().enumerate() {
                            let off = (base + ci) * cout;
                            let row = &kernel[off..off + cout];
                            let mut s = T::zero();
                            for (&wv, &gv) in row.iter().zip(go) {
                                s += wv * gv;
                            }
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel statistics of one batch-norm application in training mode.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub x_hat: Vec<FeatureMap<T>>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Unbiased variance, used for the running estimate.
    pub var_unbiased: Vec<T>,
}

/// Normalizes with statistics pooled over the batch and all spatial sites.
pub fn batch_norm_train<T: Scalar>(
    xs: &[FeatureMap<T>],
    gamma: &[T],
    beta: &[T],
) -> (Vec<FeatureMap<T>>, BatchNormCache<T>) {
    let c = gamma.len();
    let count: usize = xs.iter().map(|x| x.height() * x.width()).sum();
    let n = T::count(count);
    let mut mean = vec![T::zero(); c];
    for x in xs {
        for px in x.as_slice().chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(px) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); c];
    for x in xs {
        for px in x.as_slice().chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
    }
    let var_unbiased: Vec<T> = var
        .iter()
        .map(|&s| if count > 1 { s / T::count(count - 1) } else { T::zero() })
        .collect();
    let inv_std: Vec<T> = var
        .iter()
        .map(|&s| T::one() / (s / n + T::lit(BN_EPS)).sqrt())
        .collect();
    let mut x_hat = Vec::with_capacity(xs.len());
    let mut ys = Vec::with_capacity(xs.len());
    for x in xs {
        let mut xh = x.clone();
        let mut y = x.clone();
        for (hp, yp) in xh
            .as_mut_slice()
            .chunks_exact_mut(c)
            .zip(y.as_mut_slice().chunks_exact_mut(c))
        {
            for k in 0..c {
                let v = (hp[k] - mean[k]) * inv_std[k];
                hp[k] = v;
                yp[k] = gamma[k] * v + beta[k];
            }
        }
        x_hat.push(xh);
        ys.push(y);
    }
    (
        ys,
        BatchNormCache {
            x_hat,
            inv_std,
            mean,
            var_unbiased,
        },
    )
}

pub fn batch_norm_backward<T: Scalar>(
    d_ys: &[FeatureMap<T>],
    cache: &BatchNormCache<T>,
    gamma: &[T],
    d_gamma: &mut [T],
    d_beta: &mut [T],
) -> Vec<FeatureMap<T>> {
    let c = gamma.len();
    let count: usize = d_ys.iter().map(|x| x.height() * x.width()).sum();
    let n = T::count(count);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for (dy, xh) in d_ys.iter().zip(&cache.x_hat) {
        for (dp, hp) in dy.as_slice().chunks_exact(c).zip(xh.as_slice().chunks_exact(c)) {
            for k in 0..c {
                sum_dy[k] += dp[k];
                sum_dy_xhat[k] += dp[k] * hp[k];
            }
        }
    }
    for k in 0..c {
        d_beta[k] += sum_dy[k];
        d_gamma[k] += sum_dy_xhat[k];
    }
    d_ys.iter()
        .zip(&cache.x_hat)
        .map(|(dy, xh)| {
            let mut dx = dy.clone();
            for (dp, hp) in dx.as_mut_slice().chunks_exact_mut(c).zip(xh.as_slice().chunks_exact(c)) {
                for k in 0..c {
                    let scale = gamma[k] * cache.inv_std[k] / n;
                    dp[k] = scale * (n * dp[k] - sum_dy[k] - hp[k] * sum_dy_xhat[k]);
                }
            }
            dx
        })
        .collect()
}

/// Inference-mode batch norm using running statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &FeatureMap<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> FeatureMap<T> {
    let c = gamma.len();
    let scale: Vec<T> = (0..c)
        .map(|k| gamma[k] / (running_var[k] + T::lit(BN_EPS)).sqrt())
        .collect();
    let mut y = x.clone();
    for px in y.as_mut_slice().chunks_exact_mut(c) {
        for k in 0..c {
            px[k] = (px[k] - running_mean[k]) * scale[k] + beta[k];
        }
    }
    y
}

pub fn relu_inplace<T: Scalar>(x: &mut FeatureMap<T>) {
    for v in x.as_mut_slice() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `d` where the rectified output was zero.
pub fn relu_backward_inplace<T: Scalar>(d: &mut FeatureMap<T>, out: &FeatureMap<T>) {
    for (g, &o) in d.as_mut_slice().iter_mut().zip(out.as_slice()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max-pool, stride 2, floor mode. Returns the flat argmax index into
/// the input for every output element.
pub fn max_pool_forward<T: Scalar>(x: &FeatureMap<T>) -> (FeatureMap<T>, Vec<usize>) {
    let (h, w, c) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureMap::zeros(oh, ow, c);
    let mut arg = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for k in 0..c {
                let mut best_idx = x.idx(2 * oy, 2 * ox, k);
                let mut best = x.as_slice()[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = x.idx(2 * oy + dy, 2 * ox + dx, k);
                    let v = x.as_slice()[idx];
                    if v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                let o = out.idx(oy, ox, k);
                out.as_mut_slice()[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward<T: Scalar>(
    d_out: &FeatureMap<T>,
    arg: &[usize],
    input_shape: (usize, usize, usize),
) -> FeatureMap<T> {
    let (h, w, c) = input_shape;
    let mut dx = FeatureMap::zeros(h, w, c);
    for (g, &i) in d_out.as_slice().iter().zip(arg) {
        dx.as_mut_slice()[i] += *g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition of a 2-D cross-correlation with padding, written
    /// independently of the HWC inner loops.
    fn conv_oracle(x: &FeatureMap<f64>, kernel: &[f64], g: &ConvGeometry) -> FeatureMap<f64> {
        let (h, w, _) = x.shape();
        let oh = g.output_size(h).unwrap();
        let ow = g.output_size(w).unwrap();
        FeatureMap::from_fn(oh, ow, g.out_channels, |oy, ox, co| {
            let mut s = 0.0;
            for ky in 0..g.kernel {
                for kx in 0..g.kernel {
                    for ci in 0..g.in_channels {
                        let iy = (oy * g.stride + ky) as i64 - g.pad as i64;
                        let ix = (ox * g.stride + kx) as i64 - g.pad as i64;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            let kidx = ((ky * g.kernel + kx) * g.in_channels + ci) * g.out_channels + co;
                            s += x.get(iy as usize, ix as usize, ci) * kernel[kidx];
                        }
                    }
                }
            }
            s
        })
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut s = 7;
        for &(k, stride, pad) in &[(3, 1, 0), (3, 2, 1), (5, 2, 2), (1, 1, 0)] {
            let g = ConvGeometry {
                kernel: k,
                stride,
                pad,
                in_channels: 3,
                out_channels: 4,
            };
            let x = FeatureMap::from_fn(9, 8, 3, |_, _, _| lcg(&mut s));
            let kernel: Vec<f64> = (0..g.kernel_len()).map(|_| lcg(&mut s)).collect();
            let a = conv2d_forward(&x, &kernel, &g);
            let b = conv_oracle(&x, &kernel, &g);
            assert_eq!(a.shape(), b.shape());
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut s = 11;
        let g = ConvGeometry {
            kernel: 3,
            stride: 2,
            pad: 1,
            in_channels: 2,
            out_channels: 3,
        };
        let x = FeatureMap::from_fn(7, 6, 2, |_, _, _| lcg(&mut s));
        let kernel: Vec<f64> = (0..g.kernel_len()).map(|_| lcg(&mut s)).collect();
        let y = conv2d_forward(&x, &kernel, &g);
        let probe = FeatureMap::from_fn(y.height(), y.width(), 3, |_, _, _| lcg(&mut s));
        let objective = |x: &FeatureMap<f64>, k: &[f64]| -> f64 {
            conv2d_forward(x, k, &g)
                .as_slice()
                .iter()
                .zip(probe.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut dk = vec![0.0; kernel.len()];
        let dx = conv2d_backward(&x, &probe, &kernel, &g, &mut dk, true).unwrap();
        let eps = 1e-6;
        for i in 0..kernel.len() {
            let mut kp = kernel.clone();
            kp[i] += eps;
            let mut km = kernel.clone();
            km[i] -= eps;
            let fd = (objective(&x, &kp) - objective(&x, &km)) / (2.0 * eps);
            assert!((fd - dk[i]).abs() < 1e-7, "kernel {i}: {fd} vs {}", dk[i]);
        }
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += eps;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= eps;
            let fd = (objective(&xp, &kernel) - objective(&xm, &kernel)) / (2.0 * eps);
            assert!((fd - dx.as_slice()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn batch_norm_normalizes_per_channel() {
        let mut s = 3;
        let xs: Vec<_> = (0..3)
            .map(|_| FeatureMap::from_fn(4, 5, 2, |_, _, k| 3.0 * lcg(&mut s) + k as f64 * 10.0))
            .collect();
        let (ys, cache) = batch_norm_train(&xs, &[1.0, 1.0], &[0.0, 0.0]);
        for k in 0..2 {
            let vals: Vec<f64> = ys
                .iter()
                .flat_map(|y| y.as_slice().iter().skip(k).step_by(2).copied().collect::<Vec<_>>())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert!(cache.mean[1] > 5.0);
    }

    #[test]
    fn batch_norm_backward_matches_finite_differences() {
        let mut s = 5;
        let xs: Vec<_> = (0..2)
            .map(|_| FeatureMap::from_fn(3, 3, 2, |_, _, _| lcg(&mut s)))
            .collect();
        let gamma = [0.7, -1.3];
        let beta = [0.1, 0.4];
        let probe: Vec<_> = (0..2)
            .map(|_| FeatureMap::from_fn(3, 3, 2, |_, _, _| lcg(&mut s)))
            .collect();
        let objective = |xs: &[FeatureMap<f64>], gamma: &[f64]| -> f64 {
            let (ys, _) = batch_norm_train(xs, gamma, &beta);
            ys.iter()
                .zip(&probe)
                .map(|(y, p)| y.as_slice().iter().zip(p.as_slice()).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let (_, cache) = batch_norm_train(&xs, &gamma, &beta);
        let mut dg = [0.0; 2];
        let mut db = [0.0; 2];
        let dxs = batch_norm_backward(&probe, &cache, &gamma, &mut dg, &mut db);
        let eps = 1e-6;
        for n in 0..2 {
            for i in 0..18 {
                let mut xp = xs.clone();
                xp[n].as_mut_slice()[i] += eps;
                let mut xm = xs.clone();
                xm[n].as_mut_slice()[i] -= eps;
                let fd = (objective(&xp, &gamma) - objective(&xm, &gamma)) / (2.0 * eps);
                assert!((fd - dxs[n].as_slice()[i]).abs() < 1e-6);
            }
        }
        for k in 0..2 {
            let mut gp = gamma;
            gp[k] += eps;
            let mut gm = gamma;
            gm[k] -= eps;
            let fd = (objective(&xs, &gp) - objective(&xs, &gm)) / (2.0 * eps);
            assert!((fd - dg[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = FeatureMap::from_vec(2, 2, 1, vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let (y, arg) = max_pool_forward(&x);
        assert_eq!(y.as_slice(), &[4.0]);
        let d = max_pool_backward(&FeatureMap::filled(1, 1, 1, 2.0), &arg, x.shape());
        assert_eq!(d.as_slice(), &[0.0, 2.0, 0.0, 0.0]);
        let odd = FeatureMap::<f64>::zeros(5, 3, 2);
        assert_eq!(max_pool_forward(&odd).0.shape(), (2, 1, 2));
    }
}
