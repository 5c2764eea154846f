use crate::error::{Error, Result};
use crate::geometry::RelativeOffsets;
use crate::parallel::map_indexed;
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

use super::correlation::{channelwise_correlate, correlate_backward};
use super::head::{head_backward, head_forward, HeadGrads, HeadWeights};
use super::layers::{
    batch_norm_backward, batch_norm_eval, batch_norm_train, conv2d_backward, conv2d_forward,
    max_pool_backward, max_pool_forward, relu_backward_inplace, relu_inplace, BatchNormCache,
    BN_MOMENTUM,
};
use super::se::{se_backward, se_forward, SeCache, SeGrads, SeWeights};
use super::{ModelWeights, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Template = 0,
    Detection = 1,
}

impl<T: Scalar> ModelWeights<T> {
    fn se_weights(&self) -> SeWeights<'_, T> {
        let p = &self.params;
        SeWeights {
            w1: &p.se_w1.data,
            b1: &p.se_b1.data,
            w2: &p.se_w2.data,
            b2: &p.se_b2.data,
        }
    }

    fn head_weights(&self) -> HeadWeights<'_, T> {
        let p = &self.params;
        HeadWeights {
            conv_w: &p.head_conv_w.data,
            conv_b: &p.head_conv_b.data,
            fc_w: &p.head_fc_w.data,
            fc_b: &p.head_fc_b.data,
        }
    }

    /// Branch selected by the square input side.
    pub fn branch_for(&self, image: &FeatureMap<T>) -> Result<Branch> {
        let cfg = self.config();
        let (h, w, c) = image.shape();
        if c == 3 && h == w && h == cfg.template_input {
            Ok(Branch::Template)
        } else if c == 3 && h == w && h == cfg.detection_input {
            Ok(Branch::Detection)
        } else {
            Err(Error::shape(
                "extract_features",
                format!(
                    "{t}x{t}x3 (template) or {d}x{d}x3 (detection)",
                    t = cfg.template_input,
                    d = cfg.detection_input
                ),
                image.shape_str(),
            ))
        }
    }

    /// Folds the training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, trace: &TrainTrace<T>) {
        let m = T::lit(BN_MOMENTUM);
        for (branch, bt) in [(Branch::Template, &trace.template), (Branch::Detection, &trace.detection)] {
            for (stats, block) in self.buffers.running.iter_mut().zip(&bt.blocks) {
                let s = &mut stats[branch as usize];
                for (r, &b) in s.mean.data.iter_mut().zip(&block.bn.mean) {
                    *r = (T::one() - m) * *r + m * b;
                }
                for (r, &b) in s.var.data.iter_mut().zip(&block.bn.var_unbiased) {
                    *r = (T::one() - m) * *r + m * b;
                }
            }
        }
    }
}

fn backbone_eval<T: Scalar>(image: &FeatureMap<T>, weights: &ModelWeights<T>, branch: Branch) -> FeatureMap<T> {
    let cfg = weights.config();
    let mut x = image.clone();
    for ((spec, p), stats) in cfg
        .backbone
        .blocks(cfg.channels)
        .iter()
        .zip(&weights.params.blocks)
        .zip(&weights.buffers.running)
    {
        let s = &stats[branch as usize];
        let y = conv2d_forward(&x, &p.kernel.data, &spec.conv);
        let mut y = batch_norm_eval(&y, &p.gamma.data, &p.beta.data, &s.mean.data, &s.var.data);
        relu_inplace(&mut y);
        x = if spec.pool_after { max_pool_forward(&y).0 } else { y };
    }
    x
}

/// Backbone features of a normalized RGB patch. The patch side picks the
/// branch; both branches share every learnable parameter.
pub fn extract_features<T: Scalar>(image: &FeatureMap<T>, weights: &ModelWeights<T>) -> Result<FeatureMap<T>> {
    let branch = weights.branch_for(image)?;
    Ok(backbone_eval(image, weights, branch))
}

pub fn se_recalibrate<T: Scalar>(f: &FeatureMap<T>, weights: &ModelWeights<T>) -> Result<FeatureMap<T>> {
    let c = weights.config().channels;
    if f.channels() != c {
        return Err(Error::shape("se_recalibrate", format!("{c} channels"), f.channels()));
    }
    Ok(se_forward(f, &weights.se_weights()).0)
}

pub fn regress<T: Scalar>(corr: &FeatureMap<T>, weights: &ModelWeights<T>) -> Result<RelativeOffsets<T>> {
    let cfg = weights.config();
    let m = cfg.corr_side();
    corr.expect_shape("regress", m, m, cfg.channels)?;
    Ok(head_forward(corr, &weights.head_weights()).0)
}

/// Recalibrated template features, the part of the forward pass a tracker
/// caches for the whole track.
pub fn template_features<T: Scalar>(template: &FeatureMap<T>, weights: &ModelWeights<T>) -> Result<FeatureMap<T>> {
    let cfg = weights.config();
    let t = cfg.template_input;
    template.expect_shape("template patch", t, t, 3)?;
    se_recalibrate(&extract_features(template, weights)?, weights)
}

pub fn forward_with_template<T: Scalar>(
    template_feats: &FeatureMap<T>,
    detection: &FeatureMap<T>,
    weights: &ModelWeights<T>,
) -> Result<RelativeOffsets<T>> {
    let cfg = weights.config();
    let d = cfg.detection_input;
    detection.expect_shape("detection patch", d, d, 3)?;
    template_feats.expect_shape("template features", cfg.w_z, cfg.w_z, cfg.channels)?;
    let fx = se_recalibrate(&extract_features(detection, weights)?, weights)?;
    let corr = channelwise_correlate(&fx, template_feats)?;
    regress(&corr, weights)
}

/// Inference-mode forward pass of one (template, detection) pair.
pub fn forward<T: Scalar>(
    template: &FeatureMap<T>,
    detection: &FeatureMap<T>,
    weights: &ModelWeights<T>,
) -> Result<RelativeOffsets<T>> {
    let fz = template_features(template, weights)?;
    forward_with_template(&fz, detection, weights)
}

#[derive(Debug, Clone)]
struct BlockTrace<T> {
    inputs: Vec<FeatureMap<T>>,
    bn: BatchNormCache<T>,
    activated: Vec<FeatureMap<T>>,
    pool_arg: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone)]
struct BranchTrace<T> {
    blocks: Vec<BlockTrace<T>>,
    se: Vec<SeCache<T>>,
    outputs: Vec<FeatureMap<T>>,
}

/// Everything the backward pass needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct TrainTrace<T> {
    template: BranchTrace<T>,
    detection: BranchTrace<T>,
    corr: Vec<FeatureMap<T>>,
    collapsed: Vec<Vec<T>>,
    pub outputs: Vec<RelativeOffsets<T>>,
}

impl<T: Scalar> TrainTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.outputs.len()
    }

    /// Which ReLU units are active and which max-pool inputs won, for both
    /// branches. Two parameter settings with equal patterns lie on the same
    /// piecewise-smooth region of the network.
    pub fn activation_pattern(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for branch in [&self.template, &self.detection] {
            for b in &branch.blocks {
                for act in &b.activated {
                    for chunk in act.as_slice().chunks(64) {
                        let mut word = 0u64;
                        for (i, &v) in chunk.iter().enumerate() {
                            if v > T::zero() {
                                word |= 1 << i;
                            }
                        }
                        out.push(word);
                    }
                }
                if let Some(args) = &b.pool_arg {
                    out.extend(args.iter().flatten().map(|&i| i as u64));
                }
            }
        }
        out
    }
}

fn branch_train<T: Scalar>(images: &[FeatureMap<T>], weights: &ModelWeights<T>) -> BranchTrace<T> {
    let cfg = weights.config();
    let mut xs: Vec<FeatureMap<T>> = images.to_vec();
    let mut blocks = Vec::new();
    for (spec, p) in cfg.backbone.blocks(cfg.channels).iter().zip(&weights.params.blocks) {
        let conv_out = map_indexed(xs.len(), |n| conv2d_forward(&xs[n], &p.kernel.data, &spec.conv));
        let (mut ys, bn) = batch_norm_train(&conv_out, &p.gamma.data, &p.beta.data);
        ys.iter_mut().for_each(relu_inplace);
        let (next, pool_arg) = if spec.pool_after {
            let (pooled, args): (Vec<_>, Vec<_>) = ys.iter().map(max_pool_forward).unzip();
            (pooled, Some(args))
        } else {
            (ys.clone(), None)
        };
        blocks.push(BlockTrace {
            inputs: std::mem::replace(&mut xs, next),
            bn,
            activated: ys,
            pool_arg,
        });
    }
    let sew = weights.se_weights();
    let (outputs, se): (Vec<_>, Vec<_>) = xs.iter().map(|f| se_forward(f, &sew)).unzip();
    BranchTrace { blocks, se, outputs }
}

/// Training-mode forward pass: batch norm normalizes each branch with the
/// statistics of that branch's batch.
pub fn forward_train<T: Scalar>(
    templates: &[FeatureMap<T>],
    detections: &[FeatureMap<T>],
    weights: &ModelWeights<T>,
) -> Result<TrainTrace<T>> {
    let cfg = weights.config();
    if templates.len() != detections.len() || templates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "batch needs equal non-zero template/detection counts, got {} and {}",
            templates.len(),
            detections.len()
        )));
    }
    for t in templates {
        t.expect_shape("template patch", cfg.template_input, cfg.template_input, 3)?;
    }
    for d in detections {
        d.expect_shape("detection patch", cfg.detection_input, cfg.detection_input, 3)?;
    }
    let template = branch_train(templates, weights);
    let detection = branch_train(detections, weights);
    let corr = map_indexed(templates.len(), |n| {
        channelwise_correlate(&detection.outputs[n], &template.outputs[n]).expect("validated shapes")
    });
    let hw = weights.head_weights();
    let (outputs, collapsed): (Vec<_>, Vec<_>) = corr.iter().map(|c| head_forward(c, &hw)).unzip();
    Ok(TrainTrace {
        template,
        detection,
        corr,
        collapsed,
        outputs,
    })
}

fn branch_backward<T: Scalar>(
    trace: &BranchTrace<T>,
    d_outputs: Vec<FeatureMap<T>>,
    weights: &ModelWeights<T>,
    grads: &mut Params<T>,
) {
    let cfg = weights.config();
    let sew = weights.se_weights();
    let mut d: Vec<FeatureMap<T>> = {
        let g = &mut *grads;
        let mut seg = SeGrads {
            w1: &mut g.se_w1.data,
            b1: &mut g.se_b1.data,
            w2: &mut g.se_w2.data,
            b2: &mut g.se_b2.data,
        };
        d_outputs
            .iter()
            .zip(&trace.se)
            .map(|(dy, cache)| se_backward(dy, cache, &sew, &mut seg))
            .collect()
    };
    let specs = cfg.backbone.blocks(cfg.channels);
    for (bi, (spec, bt)) in specs.iter().zip(&trace.blocks).enumerate().rev() {
        let p = &weights.params.blocks[bi];
        if let Some(args) = &bt.pool_arg {
            d = d
                .iter()
                .zip(args)
                .zip(&bt.activated)
                .map(|((g, a), act)| max_pool_backward(g, a, act.shape()))
                .collect();
        }
        for (g, act) in d.iter_mut().zip(&bt.activated) {
            relu_backward_inplace(g, act);
        }
        let gb = &mut grads.blocks[bi];
        let d_conv = batch_norm_backward(&d, &bt.bn, &p.gamma.data, &mut gb.gamma.data, &mut gb.beta.data);
        let need_input = bi > 0;
        let per_sample = map_indexed(d_conv.len(), |n| {
            let mut dk = vec![T::zero(); p.kernel.len()];
            let dx = conv2d_backward(&bt.inputs[n], &d_conv[n], &p.kernel.data, &spec.conv, &mut dk, need_input);
            (dk, dx)
        });
        let mut next = Vec::with_capacity(per_sample.len());
        for (dk, dx) in per_sample {
            for (a, b) in gb.kernel.data.iter_mut().zip(dk) {
                *a += b;
            }
            if let Some(dx) = dx {
                next.push(dx);
            }
        }
        d = next;
    }
}

/// Gradients of `sum_n <d_outputs[n], outputs[n]>` with respect to every
/// learnable tensor.
pub fn backward<T: Scalar>(weights: &ModelWeights<T>, trace: &TrainTrace<T>, d_outputs: &[[T; 4]]) -> Params<T> {
    let mut grads = Params::zeros(weights.config());
    let hw = weights.head_weights();
    let mut d_fx = Vec::with_capacity(d_outputs.len());
    let mut d_fz = Vec::with_capacity(d_outputs.len());
    {
        let g = &mut grads;
        let mut hg = HeadGrads {
            conv_w: &mut g.head_conv_w.data,
            conv_b: &mut g.head_conv_b.data,
            fc_w: &mut g.head_fc_w.data,
            fc_b: &mut g.head_fc_b.data,
        };
        for n in 0..d_outputs.len() {
            let d_corr = head_backward(&d_outputs[n], &trace.corr[n], &trace.collapsed[n], &hw, &mut hg);
            let (dx, dz) = correlate_backward(&d_corr, &trace.detection.outputs[n], &trace.template.outputs[n]);
            d_fx.push(dx);
            d_fz.push(dz);
        }
    }
    branch_backward(&trace.detection, d_fx, weights, &mut grads);
    branch_backward(&trace.template, d_fz, weights, &mut grads);
    grads
}
