//! Stereo matching with a depth-edge auxiliary task and granular-convolution
//! cost aggregation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] is a small dense tensor library with a reverse-mode tape.
//! * [`stereo`] holds the stereo-specific operators: granular convolution,
//!   the concatenation/distance cost volume, soft-argmin regression, the
//!   shared concatenation used by the edge head, and the latency model.
//! * [`data`] generates depth-edge ground truth and synthetic stereograms and
//!   reads/writes PFM and PGM files.
//! * [`network`] assembles the full model.
//! * [`loss`] has the training objectives and the evaluation metrics.
//! * [`train`] has Adam, checkpoints, the training loop and evaluation.
//! * [`cli`] backs the `dagm` binary.

// `!(x >= 0.0)` is deliberate: it also rejects NaN. Index loops mirror the
// math in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod cli;
pub mod data;
pub mod error;
pub mod loss;
pub mod network;
pub mod stereo;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
