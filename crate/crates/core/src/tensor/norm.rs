use super::{Backward, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Variance floor added inside the square root.
pub const NORM_EPS: f64 = 1e-5;

/// Statistics source for [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a> {
    /// Normalise with the statistics of the current batch.
    Train,
    /// Normalise with fixed (running) statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel batch statistics from a train-mode call. `var` is the
/// unbiased estimate, the one folded into running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

struct BatchNormRule {
    channels: usize,
    inner: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl Backward for BatchNormRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (c_n, inner) = (self.channels, self.inner);
        let batch = grad.numel() / (c_n * inner);
        let n = (batch * inner) as f64;
        let g = grad.data();
        let gamma = inputs[1].data();
        let mut sum_g = vec![0.0; c_n];
        let mut sum_gx = vec![0.0; c_n];
        for b in 0..batch {
            for c in 0..c_n {
                let base = (b * c_n + c) * inner;
                for i in base..base + inner {
                    sum_g[c] += g[i];
                    sum_gx[c] += g[i] * self.xhat[i];
                }
            }
        }
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; g.len()];
            for b in 0..batch {
                for c in 0..c_n {
                    let base = (b * c_n + c) * inner;
                    let k = gamma[c] * self.inv_std[c];
                    for i in base..base + inner {
                        gx[i] = if self.train {
                            k * (g[i] - sum_g[c] / n - self.xhat[i] * sum_gx[c] / n)
                        } else {
                            k * g[i]
                        };
                    }
                }
            }
            Tensor::from_parts(inputs[0].shape().to_vec(), gx)
        });
        vec![
            gx,
            needs[1].then(|| Tensor::from_parts(vec![c_n], sum_gx)),
            needs[2].then(|| Tensor::from_parts(vec![c_n], sum_g)),
        ]
    }
}

impl Tape {
    /// Batch normalisation over axis 1 of a `[B, C, ...]` tensor followed by
    /// the affine map `gamma * xhat + beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        self.batch_norm_eps(x, gamma, beta, mode, NORM_EPS)
    }

    pub fn batch_norm_eps(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape(
                "batch_norm",
                format!("need [B, C, ...], got {shape:?}"),
            ));
        }
        let (batch, c_n) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c_n] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} shape {:?}, expected [{c_n}]", self.shape(v)),
                ));
            }
        }
        let n = batch * inner;
        let xd = self.value(x).data();
        let (mean, var, stats) = match mode {
            NormMode::Train => {
                if n < 2 {
                    return Err(Error::InvalidArgument(
                        "batch_norm: train mode needs more than one value per channel".into(),
                    ));
                }
                let mut mean = vec![0.0; c_n];
                let mut var = vec![0.0; c_n];
                for b in 0..batch {
                    for c in 0..c_n {
                        let base = (b * c_n + c) * inner;
                        mean[c] += xd[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                for b in 0..batch {
                    for c in 0..c_n {
                        let base = (b * c_n + c) * inner;
                        var[c] += xd[base..base + inner]
                            .iter()
                            .map(|v| (v - mean[c]).powi(2))
                            .sum::<f64>();
                    }
                }
                let unbiased = var.iter().map(|v| v / (n - 1) as f64).collect();
                var.iter_mut().for_each(|v| *v /= n as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            NormMode::Eval { mean, var } => {
                if mean.len() != c_n || var.len() != c_n {
                    return Err(Error::shape(
                        "batch_norm",
                        "running statistics length differs from channels",
                    ));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for c in 0..c_n {
                let base = (b * c_n + c) * inner;
                for i in base..base + inner {
                    xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                    out[i] = gd[c] * xhat[i] + bd[c];
                }
            }
        }
        let rule = BatchNormRule {
            channels: c_n,
            inner,
            xhat,
            inv_std,
            train: stats.is_some(),
        };
        let y = self.record(
            "batch_norm",
            &[x, gamma, beta],
            Tensor::from_parts(shape, out),
            rule,
        );
        Ok((y, stats))
    }
}
