//! Optimisation, checkpoints, the training loop and evaluation.

mod adam;
pub mod checkpoint;
mod config;
mod eval;
mod fit;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{check_compatible, decode_tensors, encode_tensors, Checkpoint};
pub use config::{Phase, TrainConfig};
pub use eval::{evaluate, GroundTruthPredictor, NetworkPredictor, Predictor, ZeroPredictor};
pub use fit::{make_batch, train, Batch, LossGraph, TrainOutcome};
