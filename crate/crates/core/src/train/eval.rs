use crate::data::StereoSample;
use crate::error::{Error, Result};
use crate::loss::{Metrics, MetricsAccumulator};
use crate::network::{predict, ModelParams, NetworkConfig};
use crate::tensor::Tensor;
use rayon::prelude::*;

/// Anything that maps a stereo pair to a `[H, W]` disparity map.
pub trait Predictor: Sync {
    fn predict(&self, sample: &StereoSample) -> Result<Tensor>;
}

/// Infer-mode network.
pub struct NetworkPredictor<'a> {
    pub config: &'a NetworkConfig,
    pub params: &'a ModelParams,
}

impl Predictor for NetworkPredictor<'_> {
    fn predict(&self, s: &StereoSample) -> Result<Tensor> {
        let (h, w) = (s.height(), s.width());
        let batch = |t: &Tensor| t.clone().reshape(&[1, 3, h, w]);
        let d = predict(
            self.config,
            self.params,
            &batch(&s.left)?,
            &batch(&s.right)?,
        )?;
        d.reshape(&[h, w])
    }
}

/// Returns the ground truth itself.
pub struct GroundTruthPredictor;

impl Predictor for GroundTruthPredictor {
    fn predict(&self, s: &StereoSample) -> Result<Tensor> {
        Ok(s.disparity.clone())
    }
}

/// Predicts zero disparity everywhere.
pub struct ZeroPredictor;

impl Predictor for ZeroPredictor {
    fn predict(&self, s: &StereoSample) -> Result<Tensor> {
        Ok(Tensor::zeros(s.disparity.shape()))
    }
}

/// Pixel-pooled metrics over a dataset. Samples are predicted in parallel
/// and merged in dataset order.
pub fn evaluate(predictor: &dyn Predictor, samples: &[StereoSample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluate: the dataset is empty".into(),
        ));
    }
    let preds: Vec<Tensor> = samples
        .par_iter()
        .map(|s| predictor.predict(s))
        .collect::<Result<_>>()?;
    let mut acc = MetricsAccumulator::default();
    for (s, p) in samples.iter().zip(&preds) {
        acc.add(p, &s.disparity, &s.valid_tensor())?;
    }
    acc.finish()
}
