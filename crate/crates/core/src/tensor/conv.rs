//! 2D/3D cross-correlation and its adjoint.
//!
//! Both ranks run through one 3D kernel; a 2D convolution is a 3D one with a
//! depth extent of 1. Loops run in a fixed order so results are
//! bit-reproducible, and work is split across output planes with rayon.

use super::{Backward, Tape, Tensor, Var};
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Stride, dilation and zero padding per spatial axis, plus channel groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: Vec<usize>,
    pub dilation: Vec<usize>,
    pub padding: Vec<usize>,
    pub groups: usize,
}

impl ConvSpec {
    /// Unit stride and dilation, no padding, one group.
    pub fn new(rank: usize) -> Self {
        ConvSpec {
            stride: vec![1; rank],
            dilation: vec![1; rank],
            padding: vec![0; rank],
            groups: 1,
        }
    }

    /// Padding that preserves the extent at unit stride for an odd kernel.
    pub fn same(rank: usize, kernel: usize, dilation: usize) -> Self {
        ConvSpec::new(rank)
            .with_dilation(dilation)
            .with_padding(dilation * (kernel - 1) / 2)
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride.iter_mut().for_each(|v| *v = s);
        self
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation.iter_mut().for_each(|v| *v = d);
        self
    }

    pub fn with_padding(mut self, p: usize) -> Self {
        self.padding.iter_mut().for_each(|v| *v = p);
        self
    }

    pub fn with_groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn rank(&self) -> usize {
        self.stride.len()
    }

    /// `floor((in + 2 pad - dilation (k - 1) - 1) / stride) + 1`, or `None`
    /// when the dilated kernel does not fit.
    pub fn output_extent(&self, axis: usize, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation[axis] * (kernel - 1) + 1;
        let padded = input + 2 * self.padding[axis];
        (span <= padded).then(|| (padded - span) / self.stride[axis] + 1)
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        let lens = [self.stride.len(), self.dilation.len(), self.padding.len()];
        if lens.iter().any(|&l| l != self.rank()) {
            return Err(Error::shape(
                op,
                format!("conv spec axis counts differ: {lens:?}"),
            ));
        }
        if self.stride.contains(&0) || self.dilation.contains(&0) || self.groups == 0 {
            return Err(Error::InvalidArgument(format!(
                "{op}: stride, dilation and groups must be positive"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Geom {
    batch: usize,
    cin: usize,
    cout: usize,
    groups: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: [usize; 3],
    dilation: [usize; 3],
    padding: [usize; 3],
}

impl Geom {
    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// For each axis and kernel tap, the half-open range of output positions
    /// whose input index lands inside the (unpadded) input.
    fn tap_ranges(&self) -> [Vec<(usize, usize)>; 3] {
        std::array::from_fn(|a| {
            (0..self.kernel[a])
                .map(|k| {
                    let off = (k * self.dilation[a]) as isize - self.padding[a] as isize;
                    let s = self.stride[a] as isize;
                    let n = self.input[a] as isize;
                    // smallest o with o*s + off >= 0
                    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
                    // largest o with o*s + off <= n - 1
                    let hi = if n - 1 - off < 0 {
                        0
                    } else {
                        (n - 1 - off) / s + 1
                    };
                    let hi = hi.min(self.output[a] as isize);
                    (lo as usize, (hi.max(lo)) as usize)
                })
                .collect()
        })
    }

    fn in_index(&self, axis: usize, o: usize, k: usize) -> usize {
        o * self.stride[axis] + k * self.dilation[axis] - self.padding[axis]
    }
}

/// Visits every (output row, input row) pair touched by one kernel tap.
#[inline]
fn for_tap_rows(
    g: &Geom,
    ranges: &[Vec<(usize, usize)>; 3],
    tap: [usize; 3],
    mut f: impl FnMut(usize, usize, usize),
) {
    let (zlo, zhi) = ranges[0][tap[0]];
    let (ylo, yhi) = ranges[1][tap[1]];
    let (xlo, xhi) = ranges[2][tap[2]];
    if xlo >= xhi {
        return;
    }
    let ix0 = g.in_index(2, xlo, tap[2]);
    for oz in zlo..zhi {
        let iz = g.in_index(0, oz, tap[0]);
        for oy in ylo..yhi {
            let iy = g.in_index(1, oy, tap[1]);
            let orow = (oz * g.output[1] + oy) * g.output[2];
            let irow = (iz * g.input[1] + iy) * g.input[2];
            f(orow + xlo, irow + ix0, xhi - xlo);
        }
    }
}

fn conv_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &Geom) -> Vec<f64> {
    let (ip, op, kvol) = (g.in_plane(), g.out_plane(), g.kvol());
    let cig = g.cin / g.groups;
    let cog = g.cout / g.groups;
    let ranges = g.tap_ranges();
    let sx = g.stride[2];
    let mut out = vec![0.0; g.batch * g.cout * op];
    out.par_chunks_mut(op).enumerate().for_each(|(idx, o)| {
        let (bi, c) = (idx / g.cout, idx % g.cout);
        let grp = c / cog;
        if let Some(b) = bias {
            o.fill(b[c]);
        }
        for cl in 0..cig {
            let xin = &x[(bi * g.cin + grp * cig + cl) * ip..][..ip];
            let wk = &w[(c * cig + cl) * kvol..][..kvol];
            for kz in 0..g.kernel[0] {
                for ky in 0..g.kernel[1] {
                    for kx in 0..g.kernel[2] {
                        let wv = wk[(kz * g.kernel[1] + ky) * g.kernel[2] + kx];
                        for_tap_rows(g, &ranges, [kz, ky, kx], |ob, ib, n| {
                            let orow = &mut o[ob..ob + n];
                            if sx == 1 {
                                for (ov, iv) in orow.iter_mut().zip(&xin[ib..ib + n]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for (j, ov) in orow.iter_mut().enumerate() {
                                    *ov += wv * xin[ib + j * sx];
                                }
                            }
                        });
                    }
                }
            }
        }
    });
    out
}

/// Adjoint of [`conv_forward`] with respect to the input.
fn conv_backward_input(gy: &[f64], w: &[f64], g: &Geom) -> Vec<f64> {
    let (ip, op, kvol) = (g.in_plane(), g.out_plane(), g.kvol());
    let cig = g.cin / g.groups;
    let cog = g.cout / g.groups;
    let ranges = g.tap_ranges();
    let sx = g.stride[2];
    let mut gx = vec![0.0; g.batch * g.cin * ip];
    gx.par_chunks_mut(ip).enumerate().for_each(|(idx, gxp)| {
        let (bi, cin) = (idx / g.cin, idx % g.cin);
        let (grp, cl) = (cin / cig, cin % cig);
        for col in 0..cog {
            let c = grp * cog + col;
            let gyp = &gy[(bi * g.cout + c) * op..][..op];
            let wk = &w[(c * cig + cl) * kvol..][..kvol];
            for kz in 0..g.kernel[0] {
                for ky in 0..g.kernel[1] {
                    for kx in 0..g.kernel[2] {
                        let wv = wk[(kz * g.kernel[1] + ky) * g.kernel[2] + kx];
                        for_tap_rows(g, &ranges, [kz, ky, kx], |ob, ib, n| {
                            let grow = &gyp[ob..ob + n];
                            if sx == 1 {
                                for (xv, gv) in gxp[ib..ib + n].iter_mut().zip(grow) {
                                    *xv += wv * gv;
                                }
                            } else {
                                for (j, gv) in grow.iter().enumerate() {
                                    gxp[ib + j * sx] += wv * gv;
                                }
                            }
                        });
                    }
                }
            }
        }
    });
    gx
}

/// Gradient with respect to the weight given input `x` and output cotangent `gy`.
fn conv_backward_weight(x: &[f64], gy: &[f64], g: &Geom) -> Vec<f64> {
    let (ip, op, kvol) = (g.in_plane(), g.out_plane(), g.kvol());
    let cig = g.cin / g.groups;
    let cog = g.cout / g.groups;
    let ranges = g.tap_ranges();
    let sx = g.stride[2];
    let mut gw = vec![0.0; g.cout * cig * kvol];
    gw.par_chunks_mut(cig * kvol)
        .enumerate()
        .for_each(|(c, gwc)| {
            let grp = c / cog;
            for cl in 0..cig {
                for kz in 0..g.kernel[0] {
                    for ky in 0..g.kernel[1] {
                        for kx in 0..g.kernel[2] {
                            let mut acc = 0.0;
                            for bi in 0..g.batch {
                                let xin = &x[(bi * g.cin + grp * cig + cl) * ip..][..ip];
                                let gyp = &gy[(bi * g.cout + c) * op..][..op];
                                for_tap_rows(g, &ranges, [kz, ky, kx], |ob, ib, n| {
                                    let grow = &gyp[ob..ob + n];
                                    if sx == 1 {
                                        for (gv, xv) in grow.iter().zip(&xin[ib..ib + n]) {
                                            acc += gv * xv;
                                        }
                                    } else {
                                        for (j, gv) in grow.iter().enumerate() {
                                            acc += gv * xin[ib + j * sx];
                                        }
                                    }
                                });
                            }
                            gwc[cl * kvol + (kz * g.kernel[1] + ky) * g.kernel[2] + kx] = acc;
                        }
                    }
                }
            }
        });
    gw
}

fn bias_grad(gy: &[f64], g: &Geom) -> Vec<f64> {
    let op = g.out_plane();
    (0..g.cout)
        .map(|c| {
            (0..g.batch)
                .map(|bi| gy[(bi * g.cout + c) * op..][..op].iter().sum::<f64>())
                .sum()
        })
        .collect()
}

struct ConvRule {
    geom: Geom,
}

impl Backward for ConvRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let g = &self.geom;
        let gy = grad.data();
        let mut out = vec![
            needs[0].then(|| {
                Tensor::from_parts(
                    inputs[0].shape().to_vec(),
                    conv_backward_input(gy, inputs[1].data(), g),
                )
            }),
            needs[1].then(|| {
                Tensor::from_parts(
                    inputs[1].shape().to_vec(),
                    conv_backward_weight(inputs[0].data(), gy, g),
                )
            }),
        ];
        if inputs.len() == 3 {
            out.push(
                needs[2].then(|| Tensor::from_parts(inputs[2].shape().to_vec(), bias_grad(gy, g))),
            );
        }
        out
    }
}

/// The transposed convolution is the input-adjoint of the conv in `geom`,
/// whose "output" is the transposed op's input.
struct ConvTransposedRule {
    geom: Geom,
}

impl Backward for ConvTransposedRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let g = &self.geom;
        vec![
            needs[0].then(|| {
                Tensor::from_parts(
                    inputs[0].shape().to_vec(),
                    conv_forward(grad.data(), inputs[1].data(), None, g),
                )
            }),
            needs[1].then(|| {
                Tensor::from_parts(
                    inputs[1].shape().to_vec(),
                    conv_backward_weight(grad.data(), inputs[0].data(), g),
                )
            }),
        ]
    }
}

/// Lifts a rank-2 or rank-3 spatial description to the 3D kernel layout.
fn lift<T: Copy>(vals: &[T], fill: T) -> [T; 3] {
    match vals.len() {
        2 => [fill, vals[0], vals[1]],
        _ => [vals[0], vals[1], vals[2]],
    }
}

fn check_weight(
    op: &'static str,
    x_shape: &[usize],
    w_shape: &[usize],
    spec: &ConvSpec,
    cin_axis_of_w: usize,
) -> Result<()> {
    let rank = spec.rank();
    if x_shape.len() != rank + 2 || w_shape.len() != rank + 2 {
        return Err(Error::shape(
            op,
            format!(
                "expected rank {} input and weight, got {:?} and {:?}",
                rank + 2,
                x_shape,
                w_shape
            ),
        ));
    }
    let groups = spec.groups;
    let cin_per_group = w_shape[1];
    let expected_cin = if cin_axis_of_w == 1 {
        cin_per_group * groups
    } else {
        w_shape[0]
    };
    if x_shape[1] != expected_cin {
        return Err(Error::AxisMismatch {
            op,
            axis: 1,
            expected: expected_cin,
            got: x_shape[1],
        });
    }
    if cin_axis_of_w == 1 && !w_shape[0].is_multiple_of(groups) {
        return Err(Error::InvalidArgument(format!(
            "{op}: {} output channels not divisible by {groups} groups",
            w_shape[0]
        )));
    }
    Ok(())
}

impl Tape {
    fn conv_nd(
        &mut self,
        op: &'static str,
        x: Var,
        w: Var,
        bias: Option<Var>,
        spec: &ConvSpec,
    ) -> Result<Var> {
        spec.validate(op)?;
        let rank = spec.rank();
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        check_weight(op, &xs, &ws, spec, 1)?;
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(Error::shape(
                    op,
                    format!("bias shape {:?}, expected [{}]", self.shape(b), ws[0]),
                ));
            }
        }
        let mut out_sp = Vec::with_capacity(rank);
        for a in 0..rank {
            let e = spec.output_extent(a, xs[2 + a], ws[2 + a]).ok_or_else(|| {
                Error::shape(
                    op,
                    format!(
                        "axis {}: dilated kernel {} does not fit padded input {}",
                        2 + a,
                        spec.dilation[a] * (ws[2 + a] - 1) + 1,
                        xs[2 + a] + 2 * spec.padding[a]
                    ),
                )
            })?;
            out_sp.push(e);
        }
        let geom = Geom {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            groups: spec.groups,
            input: lift(&xs[2..], 1),
            kernel: lift(&ws[2..], 1),
            output: lift(&out_sp, 1),
            stride: lift(&spec.stride, 1),
            dilation: lift(&spec.dilation, 1),
            padding: lift(&spec.padding, 0),
        };
        let data = conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let mut shape = vec![xs[0], ws[0]];
        shape.extend(out_sp);
        let value = Tensor::from_parts(shape, data);
        let inputs: Vec<Var> = [Some(x), Some(w), bias].into_iter().flatten().collect();
        Ok(self.record(op, &inputs, value, ConvRule { geom }))
    }

    /// Cross-correlation of `[B,Cin,H,W]` with `[Cout,Cin/groups,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        if spec.rank() != 2 {
            return Err(Error::InvalidArgument(
                "conv2d needs a rank-2 ConvSpec".into(),
            ));
        }
        self.conv_nd("conv2d", x, w, bias, spec)
    }

    /// Cross-correlation of `[B,Cin,D,H,W]` with `[Cout,Cin/groups,kd,kh,kw]`.
    pub fn conv3d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        if spec.rank() != 3 {
            return Err(Error::InvalidArgument(
                "conv3d needs a rank-3 ConvSpec".into(),
            ));
        }
        self.conv_nd("conv3d", x, w, bias, spec)
    }

    /// Transposed 3D convolution: the input-gradient of `conv3d` with the same
    /// weight `[Cin, Cout/groups, kd, kh, kw]` and spec.
    ///
    /// `out_size` picks the output extents, which are ambiguous for strides
    /// above one; by default the smallest extents `(n - 1) s - 2p + d (k - 1) + 1`
    /// are used. A conv3d with `spec` must map `out_size` back onto the input
    /// extents.
    pub fn conv3d_transposed(
        &mut self,
        x: Var,
        w: Var,
        spec: &ConvSpec,
        out_size: Option<[usize; 3]>,
    ) -> Result<Var> {
        const OP: &str = "conv3d_transposed";
        spec.validate(OP)?;
        if spec.rank() != 3 {
            return Err(Error::InvalidArgument(
                "conv3d_transposed needs a rank-3 ConvSpec".into(),
            ));
        }
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        check_weight(OP, &xs, &ws, spec, 0)?;
        if !ws[0].is_multiple_of(spec.groups) {
            return Err(Error::InvalidArgument(format!(
                "{OP}: {} input channels not divisible by {} groups",
                ws[0], spec.groups
            )));
        }
        let out_sp: [usize; 3] = match out_size {
            Some(s) => s,
            None => {
                let mut s = [0; 3];
                for a in 0..3 {
                    let full =
                        (xs[2 + a] - 1) * spec.stride[a] + spec.dilation[a] * (ws[2 + a] - 1) + 1;
                    s[a] = full
                        .checked_sub(2 * spec.padding[a])
                        .filter(|&e| e > 0)
                        .ok_or_else(|| {
                            Error::shape(
                                OP,
                                format!("padding {} too large on axis {}", spec.padding[a], 2 + a),
                            )
                        })?;
                }
                s
            }
        };
        for a in 0..3 {
            let back = spec.output_extent(a, out_sp[a], ws[2 + a]);
            if back != Some(xs[2 + a]) {
                return Err(Error::shape(
                    OP,
                    format!(
                        "axis {}: output extent {} with stride {} does not map back to input extent {}",
                        2 + a,
                        out_sp[a],
                        spec.stride[a],
                        xs[2 + a]
                    ),
                ));
            }
        }
        let cout = ws[1] * spec.groups;
        // conv geometry running from this op's output back to its input
        let geom = Geom {
            batch: xs[0],
            cin: cout,
            cout: xs[1],
            groups: spec.groups,
            input: out_sp,
            kernel: [ws[2], ws[3], ws[4]],
            output: [xs[2], xs[3], xs[4]],
            stride: lift(&spec.stride, 1),
            dilation: lift(&spec.dilation, 1),
            padding: lift(&spec.padding, 0),
        };
        let data = conv_backward_input(self.value(x).data(), self.value(w).data(), &geom);
        let value = Tensor::from_parts(vec![xs[0], cout, out_sp[0], out_sp[1], out_sp[2]], data);
        Ok(self.record(OP, &[x, w], value, ConvTransposedRule { geom }))
    }
}
