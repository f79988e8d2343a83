//! Training objectives and evaluation metrics.

mod metrics;

pub use metrics::{epe, threshold_error, Combine, Metrics, MetricsAccumulator};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[EDGE_CLAMP, 1 - EDGE_CLAMP]` before logs.
pub const EDGE_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of each stacked disparity output, shallowest first.
    pub lambda: Vec<f64>,
    /// Balance between the edge loss (`a`) and the edge-aware smoothness
    /// term (`1 - a`).
    pub a: f64,
    /// Edge sensitivity of the smoothness term.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: vec![0.5, 0.7, 1.0],
            a: 0.5,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be non-negative, got {:?}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::InvalidArgument(format!(
                "a must lie in [0, 1], got {}",
                self.a
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// `(alpha, beta)`: the positive and negative fractions of a binary map.
/// The rarer class gets the larger weight: negatives are weighted by
/// `alpha`, positives by `beta`.
pub fn class_balance(labels: &[f64]) -> (f64, f64) {
    let pos = labels.iter().filter(|&&y| y != 0.0).count() as f64;
    let n = labels.len() as f64;
    let alpha = pos / n;
    (alpha, 1.0 - alpha)
}

/// Class-balanced binary cross-entropy between predicted probabilities
/// `p: [B, H, W]` and binary labels `y` of the same shape. Balance weights
/// are computed per image; the result is the mean over pixels and images.
pub fn edge_loss(tape: &mut Tape, p: Var, y: &Tensor) -> Result<Var> {
    let ps = tape.shape(p).to_vec();
    if ps != y.shape() || ps.len() != 3 {
        return Err(Error::shape(
            "edge_loss",
            format!("prediction {ps:?}, labels {:?}", y.shape()),
        ));
    }
    let plane = ps[1] * ps[2];
    let mut w_pos = Vec::with_capacity(y.numel());
    let mut w_neg = Vec::with_capacity(y.numel());
    for img in y.data().chunks(plane) {
        let (alpha, beta) = class_balance(img);
        for &l in img {
            let positive = l != 0.0;
            w_pos.push(if positive { beta } else { 0.0 });
            w_neg.push(if positive { 0.0 } else { alpha });
        }
    }
    let w_pos = tape.constant(Tensor::from_parts(ps.clone(), w_pos));
    let w_neg = tape.constant(Tensor::from_parts(ps, w_neg));
    let pc = tape.clamp(p, EDGE_CLAMP, 1.0 - EDGE_CLAMP);
    let log_p = tape.log(pc);
    let q = tape.neg(pc);
    let q = tape.add_scalar(q, 1.0);
    let log_q = tape.log(q);
    let pos = tape.mul(w_pos, log_p)?;
    let neg = tape.mul(w_neg, log_q)?;
    let ll = tape.add(pos, neg)?;
    let m = tape.mean(ll);
    Ok(tape.neg(m))
}

/// Forward differences of a `[B, H, W]` tensor along width and height,
/// restricted to the `(H - 1) x (W - 1)` interior.
fn forward_diffs(tape: &mut Tape, d: Var) -> Result<(Var, Var)> {
    let s = tape.shape(d).to_vec();
    let (h, w) = (s[1], s[2]);
    let rows = tape.slice(d, 1, 0, h - 1)?;
    let cols = tape.slice(d, 2, 0, w - 1)?;
    let base = tape.slice(rows, 2, 0, w - 1)?;
    let right = tape.slice(rows, 2, 1, w - 1)?;
    let below = tape.slice(cols, 1, 1, h - 1)?;
    let dx = tape.sub(right, base)?;
    let dy = tape.sub(below, base)?;
    Ok((dx, dy))
}

/// Edge-aware smoothness of a `[B, H, W]` disparity map:
/// `mean(|dx d| exp(-gamma |dx xi|) + |dy d| exp(-gamma |dy xi|))` over the
/// interior pixels, where `xi` is a depth-edge map.
pub fn dedge_disp_smoothness(tape: &mut Tape, d: Var, xi: &Tensor, gamma: f64) -> Result<Var> {
    let ds = tape.shape(d).to_vec();
    if ds != xi.shape() || ds.len() != 3 || ds[1] < 2 || ds[2] < 2 {
        return Err(Error::shape(
            "dedge_disp_smoothness",
            format!(
                "disparity {ds:?}, edges {:?} (need equal [B, H>=2, W>=2])",
                xi.shape()
            ),
        ));
    }
    let (dx, dy) = forward_diffs(tape, d)?;
    let mut scratch = Tape::new();
    let xv = scratch.constant(xi.clone());
    let (ex, ey) = forward_diffs(&mut scratch, xv)?;
    let weight = |v: &Tensor| v.map(|e| (-gamma * e.abs()).exp());
    let wx = tape.constant(weight(scratch.value(ex)));
    let wy = tape.constant(weight(scratch.value(ey)));
    let ax = tape.abs(dx);
    let ay = tape.abs(dy);
    let tx = tape.mul(ax, wx)?;
    let ty = tape.mul(ay, wy)?;
    let t = tape.add(tx, ty)?;
    Ok(tape.mean(t))
}

/// Smooth-L1 error averaged over valid pixels.
pub fn masked_smooth_l1(tape: &mut Tape, pred: Var, gt: &Tensor, valid: &Tensor) -> Result<Var> {
    let ps = tape.shape(pred).to_vec();
    if ps != gt.shape() || ps != valid.shape() {
        return Err(Error::shape(
            "disp_loss",
            format!(
                "prediction {ps:?}, target {:?}, mask {:?}",
                gt.shape(),
                valid.shape()
            ),
        ));
    }
    let n_valid = valid.data().iter().filter(|&&v| v != 0.0).count();
    if n_valid == 0 {
        return Err(Error::InvalidArgument(
            "disp_loss: the valid mask is empty".into(),
        ));
    }
    let g = tape.constant(gt.clone());
    let m = tape.constant(valid.map(|v| if v != 0.0 { 1.0 } else { 0.0 }));
    let e = tape.sub(pred, g)?;
    let l = tape.smooth_l1(e);
    let l = tape.mul(l, m)?;
    let s = tape.sum(l);
    Ok(tape.scale(s, 1.0 / n_valid as f64))
}

/// `sum_i lambda_i * masked_smooth_l1(pred_i)`.
pub fn disp_loss(
    tape: &mut Tape,
    preds: &[Var],
    gt: &Tensor,
    valid: &Tensor,
    lambda: &[f64],
) -> Result<Var> {
    if preds.len() != lambda.len() || preds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "disp_loss: {} predictions but {} weights",
            preds.len(),
            lambda.len()
        )));
    }
    let mut terms = Vec::with_capacity(preds.len());
    for (&p, &l) in preds.iter().zip(lambda) {
        let t = masked_smooth_l1(tape, p, gt, valid)?;
        terms.push(tape.scale(t, l));
    }
    tape.add_n(&terms)
}

/// `disp + a * edge + (1 - a) * dedge_disp`.
pub fn total_loss(tape: &mut Tape, disp: Var, edge: Var, dedge_disp: Var, a: f64) -> Result<Var> {
    let e = tape.scale(edge, a);
    let s = tape.scale(dedge_disp, 1.0 - a);
    tape.add_n(&[disp, e, s])
}
