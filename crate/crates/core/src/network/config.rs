use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architectural hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Channel width `C` of the matching features and the cost aggregation.
    pub base_channels: usize,
    pub max_disparity: usize,
    /// Resolution ratio between the image and the cost volume. Two stride-2
    /// layers (L1 and L2) fix it at 4.
    pub downsample: usize,
    /// Channel groups `G` of every granular convolution.
    pub groups: usize,
    /// Dilation rates of the parallel granular bank.
    pub dilation_rates: Vec<usize>,
    /// Channels `K` of the top edge feature F5.
    pub top_channels: usize,
    /// Number of stacked aggregation modules, each with its own output.
    pub n_agm: usize,
    pub use_edge_branch: bool,
    pub use_dedge_spp: bool,
    pub norm_enabled: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 8,
            max_disparity: 16,
            downsample: 4,
            groups: 4,
            dilation_rates: vec![1, 4, 8, 16],
            top_channels: 4,
            n_agm: 3,
            use_edge_branch: true,
            use_dedge_spp: true,
            norm_enabled: true,
        }
    }
}

impl NetworkConfig {
    /// The plain aggregation network: no edge branch and plain SPP.
    pub fn without_edges(mut self) -> Self {
        self.use_edge_branch = false;
        self.use_dedge_spp = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.downsample != 4 {
            return fail(format!("downsample must be 4, got {}", self.downsample));
        }
        if self.max_disparity < self.downsample || !self.max_disparity.is_multiple_of(self.downsample) {
            return fail(format!(
                "max disparity {} must be a positive multiple of the downsample factor {}",
                self.max_disparity, self.downsample
            ));
        }
        if self.base_channels == 0 || self.groups < 2 || !self.base_channels.is_multiple_of(self.groups) {
            return fail(format!(
                "base channels {} must be divisible by at least 2 groups (got {} groups)",
                self.base_channels, self.groups
            ));
        }
        if self.dilation_rates.is_empty() || self.dilation_rates.contains(&0) {
            return fail(format!(
                "dilation rates must be non-empty and positive, got {:?}",
                self.dilation_rates
            ));
        }
        if self.top_channels == 0 {
            return fail("top edge channels K must be at least 1".into());
        }
        if self.n_agm == 0 {
            return fail("at least one aggregation module is required".into());
        }
        Ok(())
    }

    /// Whether the edge feature layers (side outputs and L5) are built.
    pub fn has_edge_features(&self) -> bool {
        self.use_edge_branch || self.use_dedge_spp
    }

    pub fn levels(&self) -> usize {
        self.max_disparity / self.downsample
    }
}
