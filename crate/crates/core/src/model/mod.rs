//! The twin-branch network: shared backbone, squeeze-and-excitation,
//! per-channel correlation and the offset regression head.

pub mod checkpoint;
pub mod correlation;
pub mod head;
pub mod layers;
mod network;
pub mod se;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use layers::{pool_output_size, ConvGeometry};

pub use correlation::channelwise_correlate;
pub use network::{
    backward, extract_features, forward, forward_train, forward_with_template, regress,
    se_recalibrate, template_features, Branch, TrainTrace,
};

/// Backbone variants. Every variant is a stack of conv + batch-norm + ReLU
/// blocks, some followed by a 2x2 max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneId {
    /// Five blocks, total stride 16: 239 -> 15 and 125 -> 7.
    ///
    /// | block | kernel | stride | pad | out channels | pool |
    /// |-------|--------|--------|-----|--------------|------|
    /// | 1     | 3      | 2      | 1   | max(c/4, 4)  | yes  |
    /// | 2     | 3      | 1      | 0   | max(c/2, 4)  | yes  |
    /// | 3     | 3      | 2      | 1   | c            | no   |
    /// | 4     | 3      | 1      | 1   | c            | no   |
    /// | 5     | 3      | 1      | 1   | c            | no   |
    SmallDefault,
    /// Three blocks, total stride 4, for desk-scale experiments: 35 -> 7 and
    /// 19 -> 3.
    ///
    /// | block | kernel | stride | pad | out channels | pool |
    /// |-------|--------|--------|-----|--------------|------|
    /// | 1     | 3      | 2      | 1   | max(c/2, 4)  | yes  |
    /// | 2     | 3      | 1      | 0   | c            | no   |
    /// | 3     | 3      | 1      | 1   | c            | no   |
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub conv: ConvGeometry,
    pub pool_after: bool,
}

impl BackboneId {
    pub fn blocks(&self, channels: usize) -> Vec<BlockSpec> {
        let table: Vec<(usize, usize, usize, usize, bool)> = match self {
            BackboneId::SmallDefault => vec![
                (3, 2, 1, (channels / 4).max(4), true),
                (3, 1, 0, (channels / 2).max(4), true),
                (3, 2, 1, channels, false),
                (3, 1, 1, channels, false),
                (3, 1, 1, channels, false),
            ],
            BackboneId::Tiny => vec![
                (3, 2, 1, (channels / 2).max(4), true),
                (3, 1, 0, channels, false),
                (3, 1, 1, channels, false),
            ],
        };
        let mut in_channels = 3;
        table
            .into_iter()
            .map(|(kernel, stride, pad, out_channels, pool_after)| {
                let conv = ConvGeometry {
                    kernel,
                    stride,
                    pad,
                    in_channels,
                    out_channels,
                };
                in_channels = out_channels;
                BlockSpec { conv, pool_after }
            })
            .collect()
    }

    /// Spatial side length produced for a square input, if the input is
    /// large enough.
    pub fn output_side(&self, channels: usize, input: usize) -> Option<usize> {
        self.blocks(channels).iter().try_fold(input, |n, b| {
            let n = b.conv.output_size(n)?;
            if b.pool_after {
                pool_output_size(n)
            } else {
                Some(n)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub template_input: usize,
    pub detection_input: usize,
    pub w_z: usize,
    pub w_x: usize,
    pub channels: usize,
    pub se_reduction: usize,
    pub backbone: BackboneId,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            template_input: 125,
            detection_input: 239,
            w_z: 7,
            w_x: 15,
            channels: 64,
            se_reduction: 4,
            backbone: BackboneId::SmallDefault,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration: tiny backbone, 8 channels, 7x7 detection
    /// and 3x3 template features.
    pub fn desk() -> Self {
        Self {
            template_input: 19,
            detection_input: 35,
            w_z: 3,
            w_x: 7,
            channels: 8,
            se_reduction: 4,
            backbone: BackboneId::Tiny,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.w_z < 1 || self.w_x <= self.w_z {
            return bad(format!("need w_x > w_z >= 1, got w_x={} w_z={}", self.w_x, self.w_z));
        }
        if self.detection_input <= self.template_input {
            return bad(format!(
                "detection input {} must exceed template input {}",
                self.detection_input, self.template_input
            ));
        }
        if self.channels == 0 || self.se_reduction == 0 || self.channels % self.se_reduction != 0 {
            return bad(format!(
                "channels {} must be a positive multiple of se_reduction {}",
                self.channels, self.se_reduction
            ));
        }
        for (input, want, name) in [
            (self.template_input, self.w_z, "template"),
            (self.detection_input, self.w_x, "detection"),
        ] {
            let got = self.backbone.output_side(self.channels, input);
            if got != Some(want) {
                return bad(format!(
                    "{:?} backbone maps the {name} input {input} to {:?}, config expects {want}",
                    self.backbone, got
                ));
            }
        }
        Ok(())
    }

    /// Side of the correlation map, `w_x - w_z + 1`.
    pub fn corr_side(&self) -> usize {
        self.w_x - self.w_z + 1
    }

    pub fn se_hidden(&self) -> usize {
        self.channels / self.se_reduction
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Names and shapes of every learnable tensor in flattening order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, b) in self.backbone.blocks(self.channels).iter().enumerate() {
            let g = &b.conv;
            out.push((
                format!("backbone.{i}.conv.weight"),
                vec![g.kernel, g.kernel, g.in_channels, g.out_channels],
            ));
            out.push((format!("backbone.{i}.bn.gamma"), vec![g.out_channels]));
            out.push((format!("backbone.{i}.bn.beta"), vec![g.out_channels]));
        }
        let (c, h, m2) = (self.channels, self.se_hidden(), self.corr_side().pow(2));
        out.push(("se.fc1.weight".into(), vec![h, c]));
        out.push(("se.fc1.bias".into(), vec![h]));
        out.push(("se.fc2.weight".into(), vec![c, h]));
        out.push(("se.fc2.bias".into(), vec![c]));
        out.push(("head.conv.weight".into(), vec![c]));
        out.push(("head.conv.bias".into(), vec![1]));
        out.push(("head.fc.weight".into(), vec![4, m2]));
        out.push(("head.fc.bias".into(), vec![4]));
        out
    }

    /// Number of learnable scalars. Batch-norm running statistics are
    /// buffers and are not counted.
    pub fn parameter_count(&self) -> usize {
        self.parameter_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

pub fn parameter_count(config: &ModelConfig) -> usize {
    config.parameter_count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub kernel: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Learnable tensors. One backbone parameter set serves both branches.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub blocks: Vec<BlockParams<T>>,
    pub se_w1: Tensor<T>,
    pub se_b1: Tensor<T>,
    pub se_w2: Tensor<T>,
    pub se_b2: Tensor<T>,
    pub head_conv_w: Tensor<T>,
    pub head_conv_b: Tensor<T>,
    pub head_fc_w: Tensor<T>,
    pub head_fc_b: Tensor<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut tensors = config
            .parameter_layout()
            .into_iter()
            .map(|(_, shape)| Tensor::zeros(&shape));
        let mut next = || tensors.next().expect("layout length");
        let blocks = (0..config.backbone.blocks(config.channels).len())
            .map(|_| BlockParams {
                kernel: next(),
                gamma: next(),
                beta: next(),
            })
            .collect();
        Self {
            blocks,
            se_w1: next(),
            se_b1: next(),
            se_w2: next(),
            se_b2: next(),
            head_conv_w: next(),
            head_conv_b: next(),
            head_fc_w: next(),
            head_fc_b: next(),
        }
    }

    /// Tensors in flattening order (matches [`ModelConfig::parameter_layout`]).
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = Vec::new();
        for b in &self.blocks {
            out.extend([&b.kernel, &b.gamma, &b.beta]);
        }
        out.extend([
            &self.se_w1,
            &self.se_b1,
            &self.se_w2,
            &self.se_b2,
            &self.head_conv_w,
            &self.head_conv_b,
            &self.head_fc_w,
            &self.head_fc_b,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for b in &mut self.blocks {
            out.extend([&mut b.kernel, &mut b.gamma, &mut b.beta]);
        }
        out.extend([
            &mut self.se_w1,
            &mut self.se_b1,
            &mut self.se_w2,
            &mut self.se_b2,
            &mut self.head_conv_w,
            &mut self.head_conv_b,
            &mut self.head_fc_w,
            &mut self.head_fc_b,
        ]);
        out
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Running batch-norm statistics, tracked separately for each branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Buffers<T> {
    /// `[block][branch]`, branch 0 = template, 1 = detection.
    pub running: Vec<[BranchStats<T>; 2]>,
}

impl<T: Scalar> Buffers<T> {
    pub fn fresh(config: &ModelConfig) -> Self {
        let running = config
            .backbone
            .blocks(config.channels)
            .iter()
            .map(|b| {
                let c = b.conv.out_channels;
                let s = || BranchStats {
                    mean: Tensor::zeros(&[c]),
                    var: Tensor::filled(&[c], T::one()),
                };
                [s(), s()]
            })
            .collect();
        Self { running }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, pair) in self.running.iter().enumerate() {
            for (b, name) in pair.iter().zip(["template", "detection"]) {
                out.push((format!("backbone.{i}.bn.running_mean.{name}"), &b.mean));
                out.push((format!("backbone.{i}.bn.running_var.{name}"), &b.var));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for pair in &mut self.running {
            for b in pair.iter_mut() {
                out.push(&mut b.mean);
                out.push(&mut b.var);
            }
        }
        out
    }
}

/// Configuration plus every tensor needed to run the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    config: ModelConfig,
    pub params: Params<T>,
    pub buffers: Buffers<T>,
}

pub const INIT_STD: f64 = 0.01;

fn truncated_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

impl<T: Scalar> ModelWeights<T> {
    /// Truncated-Gaussian (std 0.01, cut at 2 std) weights, zero biases,
    /// unit batch-norm scale and zero shift.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, "model-init");
        let mut params = Params::zeros(config);
        let layout = config.parameter_layout();
        for ((name, _), t) in layout.iter().zip(params.tensors_mut()) {
            if name.ends_with(".gamma") {
                t.fill(T::one());
            } else if name.ends_with(".weight") {
                for v in &mut t.data {
                    *v = T::lit(truncated_normal(&mut rng, INIT_STD));
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            params,
            buffers: Buffers::fresh(config),
        })
    }

    pub fn from_parts(config: ModelConfig, params: Params<T>, buffers: Buffers<T>) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_layout();
        for ((name, shape), t) in expected.iter().zip(params.tensors()) {
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::shape("ModelWeights::from_parts", format!("{name} {shape:?}"), format!("{:?}", t.shape)));
            }
        }
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.config
            .parameter_layout()
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.params.tensors())
            .collect()
    }
}
