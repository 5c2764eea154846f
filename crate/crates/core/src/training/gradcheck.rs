//! Central-difference gradient checking.
//!
//! Relative error for one coordinate is `|a - n| / max(|a|, |n|, floor)`,
//! where `a` is analytic, `n` numeric and `floor` keeps coordinates whose
//! true gradient is ~0 from dominating the report.
//!
//! The network is only piecewise smooth (ReLU, max-pool, the Smooth L1
//! breakpoint). A coordinate whose perturbation changes the activation
//! pattern has no derivative estimate from central differences, so such
//! coordinates are counted in `kinks` and left out of the error maxima.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::loss::{loss, loss_grad};
use crate::data::PatchPair;
use crate::error::Result;
use crate::model::{backward, forward_train, ModelConfig, ModelWeights};
use crate::rng::seeded;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupError {
    pub name: String,
    pub count: usize,
    pub max_rel: f64,
    pub max_abs: f64,
    /// `||a - n|| / max(||a|| + ||n||, floor)` over the whole group.
    pub norm_rel: f64,
    /// Coordinates skipped because the stencil crossed a kink.
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel).fold(0.0, f64::max)
    }

    pub fn max_norm_rel(&self) -> f64 {
        self.groups.iter().map(|g| g.norm_rel).fold(0.0, f64::max)
    }

    pub fn kinks(&self) -> usize {
        self.groups.iter().map(|g| g.kinks).sum()
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.count - g.kinks).sum()
    }

    pub fn worst(&self) -> Option<&GroupError> {
        self.groups.iter().max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of a smooth `f` at `x`.
pub fn check_gradient(
    name: &str,
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    floor: f64,
) -> GroupError {
    check_gradient_piecewise(name, |p| (f(p), ()), x, analytic, step, floor)
}

/// Like [`check_gradient`] for a piecewise-smooth `f` that also returns a
/// region signature. Coordinates where either probe lands in a different
/// region than `x` are counted as kinks and not compared.
pub fn check_gradient_piecewise<S: PartialEq>(
    name: &str,
    mut f: impl FnMut(&[f64]) -> (f64, S),
    x: &[f64],
    analytic: &[f64],
    step: f64,
    floor: f64,
) -> GroupError {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let (_, centre) = f(x);
    let mut probe = x.to_vec();
    let mut err = GroupError {
        name: name.to_string(),
        count: x.len(),
        max_rel: 0.0,
        max_abs: 0.0,
        norm_rel: 0.0,
        kinks: 0,
    };
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let (up, s_up) = f(&probe);
        probe[i] = x[i] - step;
        let (down, s_down) = f(&probe);
        probe[i] = x[i];
        if s_up != centre || s_down != centre {
            err.kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        err.max_rel = err.max_rel.max(relative_error(a, numeric, floor));
        err.max_abs = err.max_abs.max((a - numeric).abs());
        diff2 += (a - numeric).powi(2);
        a2 += a * a;
        n2 += numeric * numeric;
    }
    err.norm_rel = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(floor);
    err
}

/// Mean Smooth L1 loss of a batch under training-mode batch norm.
pub fn batch_loss(weights: &ModelWeights<f64>, batch: &[PatchPair<f64>], sigma: f64) -> Result<f64> {
    Ok(loss_and_pattern(weights, batch, sigma)?.0)
}

/// [`batch_loss`] together with the activation pattern of the network and
/// the Smooth L1 branch taken by every residual.
pub fn loss_and_pattern(weights: &ModelWeights<f64>, batch: &[PatchPair<f64>], sigma: f64) -> Result<(f64, Vec<u64>)> {
    let (t, d): (Vec<_>, Vec<_>) = batch.iter().map(|p| (p.template.clone(), p.detection.clone())).unzip();
    let trace = forward_train(&t, &d, weights)?;
    let mut pattern = trace.activation_pattern();
    let knee = 1.0 / (sigma * sigma);
    let mut total = 0.0;
    for (pred, p) in trace.outputs.iter().zip(batch) {
        total += loss(pred, &p.label, sigma)?;
        pattern.extend((0..4).map(|i| u64::from((p.label.0[i] - pred.0[i]).abs() <= knee)));
    }
    Ok((total / batch.len() as f64, pattern))
}

/// Analytic gradient of [`batch_loss`] for every parameter tensor, in
/// [`ModelConfig::parameter_layout`] order.
pub fn analytic_gradient(weights: &ModelWeights<f64>, batch: &[PatchPair<f64>], sigma: f64) -> Result<Vec<Vec<f64>>> {
    let (t, d): (Vec<_>, Vec<_>) = batch.iter().map(|p| (p.template.clone(), p.detection.clone())).unzip();
    let trace = forward_train(&t, &d, weights)?;
    let n = batch.len() as f64;
    let d_out = trace
        .outputs
        .iter()
        .zip(batch)
        .map(|(pred, p)| loss_grad(pred, &p.label, sigma).map(|g| g.map(|v| v / n)))
        .collect::<Result<Vec<_>>>()?;
    let grads = backward(weights, &trace, &d_out);
    Ok(grads.tensors().iter().map(|t| t.data.clone()).collect())
}

/// Checks every parameter of `weights` on `batch`.
pub fn gradient_check(weights: &ModelWeights<f64>, batch: &[PatchPair<f64>], sigma: f64) -> Result<GradCheckReport> {
    gradient_check_with(weights, batch, sigma, DEFAULT_STEP, DEFAULT_FLOOR)
}

pub fn gradient_check_with(
    weights: &ModelWeights<f64>,
    batch: &[PatchPair<f64>],
    sigma: f64,
    step: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    batch_loss(weights, batch, sigma)?;
    let analytic = analytic_gradient(weights, batch, sigma)?;
    let names: Vec<String> = weights.config().parameter_layout().into_iter().map(|(n, _)| n).collect();
    let mut report = GradCheckReport::default();
    for (ti, name) in names.iter().enumerate() {
        let x = weights.params.tensors()[ti].data.clone();
        let mut w = weights.clone();
        let g = check_gradient_piecewise(
            name,
            |probe| {
                w.params.tensors_mut()[ti].data.copy_from_slice(probe);
                loss_and_pattern(&w, batch, sigma).expect("shapes validated above")
            },
            &x,
            &analytic[ti],
            step,
            floor,
        );
        report.groups.push(g);
    }
    Ok(report)
}

/// Weights with every tensor randomized at a scale where all layers carry
/// gradient signal: He-scaled kernels, batch-norm scale near 1 and small
/// random shifts and biases.
pub fn randomized_weights(config: &ModelConfig, seed: u64) -> Result<ModelWeights<f64>> {
    let mut w = ModelWeights::<f64>::init(config, seed)?;
    let mut rng = seeded(seed, "gradcheck-weights");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let layout = config.parameter_layout();
    for ((name, shape), t) in layout.iter().zip(w.params.tensors_mut()) {
        let fan_in: usize = if shape.len() > 1 { shape[..shape.len() - 1].iter().product() } else { 1 };
        for v in &mut t.data {
            let z: f64 = unit.sample(&mut rng);
            *v = if name.ends_with(".gamma") {
                1.0 + 0.2 * z
            } else if name.ends_with(".weight") {
                let fan = if name.starts_with("backbone") { fan_in } else { shape[shape.len() - 1] };
                z * (2.0 / fan as f64).sqrt()
            } else {
                0.1 * z
            };
        }
        if name.ends_with(".gamma") {
            for v in &mut t.data {
                if v.abs() < 0.3 {
                    *v = if rng.random_bool(0.5) { 0.5 } else { -0.5 };
                }
            }
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches() {
        let x = [0.3, -1.2, 2.0];
        let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let e = check_gradient("q", |p| p.iter().map(|v| v * v).sum(), &x, &analytic, DEFAULT_STEP, DEFAULT_FLOOR);
        assert!(e.max_rel < 1e-9, "{e:?}");
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let x = [1.0, 2.0];
        let e = check_gradient("q", |p| p[0] * p[1], &x, &[2.0, 2.0], DEFAULT_STEP, DEFAULT_FLOOR);
        assert!(e.max_rel > 0.4);
    }

    #[test]
    fn kinks_are_excluded() {
        // |x| at 0 and 0.5: the first stencil straddles the kink.
        let x = [0.0, 0.5];
        let f = |p: &[f64]| (p.iter().map(|v| v.abs()).sum::<f64>(), p.iter().map(|v| *v > 0.0).collect::<Vec<_>>());
        let e = check_gradient_piecewise("abs", f, &x, &[0.0, 1.0], DEFAULT_STEP, DEFAULT_FLOOR);
        assert_eq!(e.kinks, 1);
        assert!(e.max_rel < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 1e-9, 1e-6), 1e-3);
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-12);
    }
}
