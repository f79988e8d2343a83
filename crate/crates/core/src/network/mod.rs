//! The full model: a shared feature extractor, the depth-edge branch,
//! edge-aware spatial pyramid pooling, a concatenation/distance cost volume
//! and a stack of granular aggregation modules with one disparity output
//! each.
//!
//! Parameter names carry their task as a prefix (`shared.`, `edge.`,
//! `disp.`). A [`Ctx`] registers each name on the tape once, so both images
//! pass through the very same extractor leaves.

mod config;
mod forward;
pub mod modules;
mod params;

pub use config::NetworkConfig;
pub use forward::{forward, forward_ctx, init_params, predict, ForwardOutput};
pub use params::{Ctx, Fill, Mode, ModelParams, Partition};
