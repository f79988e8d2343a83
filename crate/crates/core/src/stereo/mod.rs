//! Stereo-specific operators built on the tensor tape.

mod granular;
mod latency;
mod regression;
mod shared_concat;
mod volume;

pub use granular::{
    granular_conv, granular_param_count, standard_param_count, GranularConvParams, GranularConvVars,
};
pub use latency::{parallel_latency, StructureGraph};
pub use regression::soft_argmin;
pub use shared_concat::shared_concat;
pub use volume::{build_cost_volume, concat_volume, distance_volume, CostVolume};
