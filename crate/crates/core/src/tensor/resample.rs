//! Average pooling and linear (bi/trilinear) resampling with
//! align-corners = false.

use super::{split_axis, Backward, Tape, Tensor, Var};
use crate::error::{Error, Result};

struct AvgPoolRule {
    window: usize,
    stride: usize,
}

impl Backward for AvgPoolRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let xs = inputs[0].shape();
        let gs = grad.shape();
        let (h, w, oh, ow) = (xs[2], xs[3], gs[2], gs[3]);
        let scale = 1.0 / (self.window * self.window) as f64;
        let mut gx = vec![0.0; inputs[0].numel()];
        for plane in 0..xs[0] * xs[1] {
            let gp = &grad.data()[plane * oh * ow..][..oh * ow];
            let xp = &mut gx[plane * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = gp[oy * ow + ox] * scale;
                    for ky in 0..self.window {
                        let row = (oy * self.stride + ky) * w + ox * self.stride;
                        for kx in 0..self.window {
                            xp[row + kx] += v;
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(xs.to_vec(), gx))]
    }
}

/// Source taps for one output position along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

/// Half-pixel-centred linear interpolation table from `n_in` to `n_out` samples.
fn linear_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            Tap {
                i0,
                i1,
                frac: src - i0 as f64,
            }
        })
        .collect()
}

struct ResizeRule {
    axis: usize,
    taps: Vec<Tap>,
}

impl Backward for ResizeRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (outer, n_in, inner) = split_axis(inputs[0].shape(), self.axis);
        let n_out = self.taps.len();
        let g = grad.data();
        let mut gx = vec![0.0; inputs[0].numel()];
        for o in 0..outer {
            for (k, t) in self.taps.iter().enumerate() {
                let src = (o * n_out + k) * inner;
                let d0 = (o * n_in + t.i0) * inner;
                let d1 = (o * n_in + t.i1) * inner;
                for i in 0..inner {
                    gx[d0 + i] += (1.0 - t.frac) * g[src + i];
                    gx[d1 + i] += t.frac * g[src + i];
                }
            }
        }
        vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))]
    }
}

impl Tape {
    /// Square-window average pooling of a `[B, C, H, W]` map. Trailing rows
    /// and columns that do not fill a window are dropped.
    pub fn pool_avg2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || window == 0 || stride == 0 {
            return Err(Error::shape(
                "pool_avg2d",
                format!("input {xs:?}, window {window}, stride {stride}"),
            ));
        }
        let (h, w) = (xs[2], xs[3]);
        if window > h || window > w {
            return Err(Error::shape(
                "pool_avg2d",
                format!("window {window} exceeds map {h}x{w}"),
            ));
        }
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let scale = 1.0 / (window * window) as f64;
        let xd = self.value(x).data();
        let mut out = vec![0.0; xs[0] * xs[1] * oh * ow];
        for plane in 0..xs[0] * xs[1] {
            let xp = &xd[plane * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..window {
                        let row = (oy * stride + ky) * w + ox * stride;
                        acc += xp[row..row + window].iter().sum::<f64>();
                    }
                    out[(plane * oh + oy) * ow + ox] = acc * scale;
                }
            }
        }
        let value = Tensor::from_parts(vec![xs[0], xs[1], oh, ow], out);
        Ok(self.record("pool_avg2d", &[x], value, AvgPoolRule { window, stride }))
    }

    /// Linear resampling of one axis to `n_out` samples.
    pub fn resize_axis(&mut self, x: Var, axis: usize, n_out: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || n_out == 0 {
            return Err(Error::shape(
                "resize",
                format!("axis {axis} to extent {n_out} on {:?}", t.shape()),
            ));
        }
        let (outer, n_in, inner) = split_axis(t.shape(), axis);
        let taps = linear_taps(n_in, n_out);
        let xd = t.data();
        let mut out = vec![0.0; outer * n_out * inner];
        for o in 0..outer {
            for (k, tp) in taps.iter().enumerate() {
                let dst = (o * n_out + k) * inner;
                let s0 = (o * n_in + tp.i0) * inner;
                let s1 = (o * n_in + tp.i1) * inner;
                for i in 0..inner {
                    out[dst + i] = (1.0 - tp.frac) * xd[s0 + i] + tp.frac * xd[s1 + i];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = n_out;
        let value = Tensor::from_parts(shape, out);
        Ok(self.record("resize", &[x], value, ResizeRule { axis, taps }))
    }

    fn resize_trailing(&mut self, x: Var, sizes: &[usize], op: &'static str) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank != sizes.len() + 2 {
            return Err(Error::shape(
                op,
                format!("input rank {rank} for {} output extents", sizes.len()),
            ));
        }
        let mut y = x;
        for (k, &n) in sizes.iter().enumerate() {
            if n == 0 {
                return Err(Error::shape(op, "output extent must be at least 1"));
            }
            if self.shape(y)[2 + k] != n {
                y = self.resize_axis(y, 2 + k, n)?;
            }
        }
        Ok(y)
    }

    /// Bilinear resize of a `[B, C, H, W]` map to `[B, C, out_h, out_w]`.
    pub fn upsample_bilinear(&mut self, x: Var, out_hw: [usize; 2]) -> Result<Var> {
        self.resize_trailing(x, &out_hw, "upsample_bilinear")
    }

    /// Trilinear resize of a `[B, C, D, H, W]` volume.
    pub fn upsample_trilinear(&mut self, x: Var, out_dhw: [usize; 3]) -> Result<Var> {
        self.resize_trailing(x, &out_dhw, "upsample_trilinear")
    }
}
