//! Smooth L1 objective, optimizers, the offline training loop and the
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod loss;
pub mod optim;
mod train;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{loss, loss_grad, smooth_l1, smooth_l1_grad};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{epoch_file, train, train_resume, TrainConfig, TrainHistory, Trainer, TrainingData};
