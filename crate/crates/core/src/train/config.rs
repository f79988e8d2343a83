use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::network::NetworkConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    /// Drops the edge classification loss (`a = 0`).
    Finetune,
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// Steps at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub phase: Phase,
    /// Validate every this many steps (and after the last step); 0 = only
    /// after the last step.
    pub eval_interval: usize,
    pub bn_momentum: f64,
    /// Global gradient-norm limit; disabled when `None`.
    pub grad_clip: Option<f64>,
    /// Dilation radius of the depth-edge targets.
    pub edge_dilate: usize,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 4,
            steps: 300,
            lr: 1e-3,
            lr_milestones: vec![150, 200, 250],
            lr_decay: 0.5,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            phase: Phase::Pretrain,
            eval_interval: 50,
            bn_momentum: 0.1,
            grad_clip: None,
            edge_dilate: 0,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        self.network.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return fail(format!(
                "learning rate {} and decay {} must be positive",
                self.lr, self.lr_decay
            ));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!(
                "lr milestones must increase, got {:?}",
                self.lr_milestones
            ));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail(format!("bn momentum {} outside [0, 1]", self.bn_momentum));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail(format!("gradient clip {c} must be positive"));
            }
        }
        if self.loss.lambda.len() != self.network.n_agm {
            return fail(format!(
                "{} lambda weights for {} aggregation modules",
                self.loss.lambda.len(),
                self.network.n_agm
            ));
        }
        Ok(())
    }

    /// Learning rate used at 0-based step `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| m <= step).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }

    /// Weight of the edge classification loss after the phase override.
    pub fn edge_weight(&self) -> f64 {
        match self.phase {
            Phase::Pretrain => self.loss.a,
            Phase::Finetune => 0.0,
        }
    }
}
