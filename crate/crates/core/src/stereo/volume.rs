//! Concatenation and distance cost volumes.
//!
//! Level `d` pairs the left feature at column `x` with the right feature at
//! column `x - d`; right features that fall off the image are zero.

use crate::error::{Error, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

/// Matching cost volume `[B, C_v, levels, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct CostVolume {
    pub values: Var,
    pub levels: usize,
    pub downsample: usize,
}

impl CostVolume {
    /// Disparity range at full resolution.
    pub fn max_disparity(&self) -> usize {
        self.levels * self.downsample
    }
}

fn check_pair(
    tape: &Tape,
    op: &'static str,
    left: Var,
    right: Var,
    levels: usize,
) -> Result<[usize; 4]> {
    let ls = tape.shape(left);
    let rs = tape.shape(right);
    if ls.len() != 4 {
        return Err(Error::shape(
            op,
            format!("features must be [B, C, H, W], got {ls:?}"),
        ));
    }
    if ls != rs {
        return Err(Error::shape(
            op,
            format!("left {ls:?} and right {rs:?} differ"),
        ));
    }
    if levels == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op}: at least one disparity level required"
        )));
    }
    Ok([ls[0], ls[1], ls[2], ls[3]])
}

struct ConcatVolumeRule {
    dims: [usize; 4],
    levels: usize,
}

/// Calls `f(batch * C + channel, level, left_index, right_index)` for every
/// volume element in a fixed order; `right_index` is `None` off the image.
fn visit(dims: [usize; 4], levels: usize, mut f: impl FnMut(usize, usize, usize, Option<usize>)) {
    let [b, c, h, w] = dims;
    for bi in 0..b {
        for ci in 0..c {
            for d in 0..levels {
                for y in 0..h {
                    for x in 0..w {
                        let src = ((bi * c + ci) * h + y) * w + x;
                        let right = (x >= d).then(|| src - d);
                        f(bi * c + ci, d, src, right);
                    }
                }
            }
        }
    }
}

impl Backward for ConcatVolumeRule {
    fn backward(
        &self,
        _: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let [b, c, h, w] = self.dims;
        let hw = h * w;
        let g = grad.data();
        let mut gl = vec![0.0; b * c * hw];
        let mut gr = vec![0.0; b * c * hw];
        visit(self.dims, self.levels, |bc, d, src, right| {
            let (bi, ci) = (bc / c, bc % c);
            let pix = src % hw;
            gl[src] += g[((bi * 2 * c + ci) * self.levels + d) * hw + pix];
            if let Some(ri) = right {
                gr[ri] += g[((bi * 2 * c + c + ci) * self.levels + d) * hw + pix];
            }
        });
        let shape = vec![b, c, h, w];
        vec![
            needs[0].then(|| Tensor::from_parts(shape.clone(), gl)),
            needs[1].then(|| Tensor::from_parts(shape, gr)),
        ]
    }
}

struct DistanceRule {
    dims: [usize; 4],
    levels: usize,
}

impl Backward for DistanceRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let [b, c, h, w] = self.dims;
        let hw = h * w;
        let (l, r, g) = (inputs[0].data(), inputs[1].data(), grad.data());
        let mut gl = vec![0.0; b * c * hw];
        let mut gr = vec![0.0; b * c * hw];
        visit(self.dims, self.levels, |bc, d, src, right| {
            let o = (bc * self.levels + d) * hw + src % hw;
            let rv = right.map_or(0.0, |ri| r[ri]);
            let s = crate::tensor::sign_of(l[src] - rv) * g[o];
            gl[src] += s;
            if let Some(ri) = right {
                gr[ri] -= s;
            }
        });
        let shape = vec![b, c, h, w];
        vec![
            needs[0].then(|| Tensor::from_parts(shape.clone(), gl)),
            needs[1].then(|| Tensor::from_parts(shape, gr)),
        ]
    }
}

/// `[B, 2C, levels, H, W]`: channels `0..C` hold the left features, channels
/// `C..2C` the right features shifted right by the level index.
pub fn concat_volume(tape: &mut Tape, left: Var, right: Var, levels: usize) -> Result<Var> {
    let dims = check_pair(tape, "concat_volume", left, right, levels)?;
    let [b, c, h, w] = dims;
    let hw = h * w;
    let (l, r) = (tape.value(left).data(), tape.value(right).data());
    let mut out = vec![0.0; b * 2 * c * levels * hw];
    visit(dims, levels, |bc, d, src, right| {
        let (bi, ci) = (bc / c, bc % c);
        let pix = src % hw;
        out[((bi * 2 * c + ci) * levels + d) * hw + pix] = l[src];
        if let Some(ri) = right {
            out[((bi * 2 * c + c + ci) * levels + d) * hw + pix] = r[ri];
        }
    });
    let value = Tensor::from_parts(vec![b, 2 * c, levels, h, w], out);
    Ok(tape.record(
        "concat_volume",
        &[left, right],
        value,
        ConcatVolumeRule { dims, levels },
    ))
}

/// `[B, C, levels, H, W]` of per-channel `|left(x) - right(x - d)|`.
pub fn distance_volume(tape: &mut Tape, left: Var, right: Var, levels: usize) -> Result<Var> {
    let dims = check_pair(tape, "distance_volume", left, right, levels)?;
    let [b, c, h, w] = dims;
    let hw = h * w;
    let (l, r) = (tape.value(left).data(), tape.value(right).data());
    let mut out = vec![0.0; b * c * levels * hw];
    visit(dims, levels, |bc, d, src, right| {
        let rv = right.map_or(0.0, |ri| r[ri]);
        out[(bc * levels + d) * hw + src % hw] = (l[src] - rv).abs();
    });
    let value = Tensor::from_parts(vec![b, c, levels, h, w], out);
    Ok(tape.record(
        "distance_volume",
        &[left, right],
        value,
        DistanceRule { dims, levels },
    ))
}

/// Concatenation volume stacked with the distance volume on the channel
/// axis, giving `3C` channels.
pub fn build_cost_volume(
    tape: &mut Tape,
    left: Var,
    right: Var,
    levels: usize,
    downsample: usize,
) -> Result<CostVolume> {
    if downsample == 0 {
        return Err(Error::InvalidArgument(
            "cost volume downsample factor must be positive".into(),
        ));
    }
    let cat = concat_volume(tape, left, right, levels)?;
    let dist = distance_volume(tape, left, right, levels)?;
    let values = tape.concat(&[cat, dist], 1)?;
    Ok(CostVolume {
        values,
        levels,
        downsample,
    })
}
