use serde::{Deserialize, Serialize};

use crate::model::Params;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd
    }
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer plus its per-parameter state slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub step: u64,
    /// One slot list per state kind (velocity, or Adam's first and second
    /// moments), each aligned with the parameter flattening order.
    pub slots: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &Params<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(&t.shape)).collect::<Vec<_>>();
        let slots = match kind {
            OptimizerKind::Sgd => vec![],
            OptimizerKind::Momentum { .. } => vec![zeros()],
            OptimizerKind::Adam { .. } => vec![zeros(), zeros()],
        };
        Self { kind, step: 0, slots }
    }

    pub fn apply(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: f64) {
        self.step += 1;
        let lr_t = T::lit(lr);
        let grads = grads.tensors();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads) {
                    for (w, &d) in p.data.iter_mut().zip(&g.data) {
                        *w -= lr_t * d;
                    }
                }
            }
            OptimizerKind::Momentum { momentum } => {
                let mu = T::lit(momentum);
                for ((p, g), v) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.slots[0]) {
                    for ((w, &d), vel) in p.data.iter_mut().zip(&g.data).zip(&mut v.data) {
                        *vel = mu * *vel + d;
                        *w -= lr_t * *vel;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let t = self.step as i32;
                let c1 = T::lit(1.0 - beta1.powi(t));
                let c2 = T::lit(1.0 - beta2.powi(t));
                let eps = T::lit(eps);
                let (ms, vs) = self.slots.split_at_mut(1);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads)
                    .zip(&mut ms[0])
                    .zip(&mut vs[0])
                {
                    for (((w, &d), m), v) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                        *m = b1 * *m + (T::one() - b1) * d;
                        *v = b2 * *v + (T::one() - b2) * d * d;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr_t * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
