use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// How the pixel and relative thresholds of [`threshold_error`] combine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combine {
    /// Outlier iff both thresholds are met (the KITTI D1 convention).
    And,
    Or,
}

fn check(op: &'static str, pred: &Tensor, gt: &Tensor, valid: &Tensor) -> Result<usize> {
    if pred.shape() != gt.shape() || gt.shape() != valid.shape() {
        return Err(Error::shape(
            op,
            format!(
                "prediction {:?}, target {:?}, mask {:?}",
                pred.shape(),
                gt.shape(),
                valid.shape()
            ),
        ));
    }
    let n = valid.data().iter().filter(|&&v| v != 0.0).count();
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op}: the valid mask is empty"
        )));
    }
    Ok(n)
}

fn valid_pairs<'a>(
    pred: &'a Tensor,
    gt: &'a Tensor,
    valid: &'a Tensor,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.data()
        .iter()
        .zip(gt.data())
        .zip(valid.data())
        .filter(|(_, &v)| v != 0.0)
        .map(|((&p, &g), _)| (p, g))
}

/// Mean absolute disparity error over valid pixels.
pub fn epe(pred: &Tensor, gt: &Tensor, valid: &Tensor) -> Result<f64> {
    let n = check("epe", pred, gt, valid)?;
    Ok(valid_pairs(pred, gt, valid)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n as f64)
}

fn is_outlier(err: f64, gt: f64, t_px: f64, t_rel: Option<f64>, combine: Combine) -> bool {
    let px = err >= t_px;
    match t_rel {
        None => px,
        Some(r) => {
            // an exact match is never an outlier, even at zero disparity
            let rel = err > 0.0 && err >= r * gt.abs();
            match combine {
                Combine::And => px && rel,
                Combine::Or => px || rel,
            }
        }
    }
}

/// Percentage of valid pixels whose absolute error is at least `t_px`
/// pixels and/or at least the fraction `t_rel` of the true disparity.
/// `t_rel = None` uses the pixel threshold alone.
pub fn threshold_error(
    pred: &Tensor,
    gt: &Tensor,
    valid: &Tensor,
    t_px: f64,
    t_rel: Option<f64>,
    combine: Combine,
) -> Result<f64> {
    let n = check("threshold_error", pred, gt, valid)?;
    let bad = valid_pairs(pred, gt, valid)
        .filter(|&(p, g)| is_outlier((p - g).abs(), g, t_px, t_rel, combine))
        .count();
    Ok(100.0 * bad as f64 / n as f64)
}

/// Evaluation report. Percentages are in `[0, 100]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epe: f64,
    /// D1 with the default (AND) combiner.
    pub d1_all: f64,
    pub d1_and: f64,
    pub d1_or: f64,
    /// 3-pixel error on non-occluded (valid) pixels.
    pub out_noc: f64,
    pub bad2: f64,
    pub bad4: f64,
    pub bad5: f64,
    pub n_valid: usize,
}

/// Pixel-pooled metrics over many samples, accumulated in call order.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    abs_sum: f64,
    n_valid: usize,
    d1_and: usize,
    d1_or: usize,
    bad: [usize; 4],
}

const BAD_PX: [f64; 4] = [2.0, 3.0, 4.0, 5.0];

impl MetricsAccumulator {
    pub fn add(&mut self, pred: &Tensor, gt: &Tensor, valid: &Tensor) -> Result<()> {
        check("metrics", pred, gt, valid)?;
        for (p, g) in valid_pairs(pred, gt, valid) {
            let e = (p - g).abs();
            self.abs_sum += e;
            self.n_valid += 1;
            self.d1_and += usize::from(is_outlier(e, g, 3.0, Some(0.05), Combine::And));
            self.d1_or += usize::from(is_outlier(e, g, 3.0, Some(0.05), Combine::Or));
            for (count, t) in self.bad.iter_mut().zip(BAD_PX) {
                *count += usize::from(e >= t);
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.n_valid == 0 {
            return Err(Error::InvalidArgument("metrics: no valid pixels".into()));
        }
        let n = self.n_valid as f64;
        let pct = |c: usize| 100.0 * c as f64 / n;
        Ok(Metrics {
            epe: self.abs_sum / n,
            d1_all: pct(self.d1_and),
            d1_and: pct(self.d1_and),
            d1_or: pct(self.d1_or),
            out_noc: pct(self.bad[1]),
            bad2: pct(self.bad[0]),
            bad4: pct(self.bad[2]),
            bad5: pct(self.bad[3]),
            n_valid: self.n_valid,
        })
    }
}
