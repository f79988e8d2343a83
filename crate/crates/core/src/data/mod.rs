//! Depth-edge ground truth, synthetic stereo data and file formats.

mod dataset;
mod edges;
mod grid;
mod pfm;
mod pgm;
mod synth;

pub use dataset::{
    load_sample, load_split, sample_files, split_indices, write_sample, SAMPLE_SUFFIXES,
};
pub use edges::{depth_edge_gt, dilate, instance_boundaries, semantic_boundaries};
pub use grid::{DepthEdgeMap, Grid, InstanceMask, SemanticMask};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use pgm::{decode_pgm, encode_pgm, encode_ppm, read_pgm, write_pgm, write_ppm, Pgm};
pub use synth::{sample_seed, synth_stereogram, StereoSample, SynthConfig};
