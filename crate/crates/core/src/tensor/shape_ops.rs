use super::{split_axis, Backward, Tape, Tensor, Var};
use crate::error::{Error, Result};

struct ReshapeRule;

impl Backward for ReshapeRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::from_parts(
            inputs[0].shape().to_vec(),
            grad.data().to_vec(),
        ))]
    }
}

struct ConcatRule {
    axis: usize,
}

impl Backward for ConcatRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (outer, total, inner) = split_axis(grad.shape(), self.axis);
        let mut start = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(x, &need)| {
                let n = x.shape()[self.axis];
                let g = need.then(|| {
                    let mut data = Vec::with_capacity(x.numel());
                    for o in 0..outer {
                        let base = (o * total + start) * inner;
                        data.extend_from_slice(&grad.data()[base..base + n * inner]);
                    }
                    Tensor::from_parts(x.shape().to_vec(), data)
                });
                start += n;
                g
            })
            .collect()
    }
}

struct SliceRule {
    axis: usize,
    start: usize,
}

impl Backward for SliceRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (outer, n, inner) = split_axis(inputs[0].shape(), self.axis);
        let len = grad.shape()[self.axis];
        let mut gx = Tensor::zeros(inputs[0].shape());
        for o in 0..outer {
            let dst = (o * n + self.start) * inner;
            let src = o * len * inner;
            gx.data_mut()[dst..dst + len * inner]
                .copy_from_slice(&grad.data()[src..src + len * inner]);
        }
        vec![Some(gx)]
    }
}

struct PadRule {
    pads: Vec<(usize, usize)>,
}

impl Backward for PadRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let before: Vec<usize> = self.pads.iter().map(|p| p.0).collect();
        let gx = Tensor::from_fn(inputs[0].shape(), |idx| {
            let src: Vec<usize> = idx.iter().zip(&before).map(|(i, b)| i + b).collect();
            grad.get(&src)
        });
        vec![Some(gx)]
    }
}

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.record("reshape", &[x], value, ReshapeRule))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of an empty list".into()))?;
        let ref_shape = self.shape(*first).to_vec();
        if axis >= ref_shape.len() {
            return Err(Error::InvalidArgument(format!(
                "concat: axis {axis} out of range for rank {}",
                ref_shape.len()
            )));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != ref_shape.len() {
                return Err(Error::shape(
                    "concat",
                    format!("rank {} vs {}", s.len(), ref_shape.len()),
                ));
            }
            for (a, (&e, &r)) in s.iter().zip(&ref_shape).enumerate() {
                if a != axis && e != r {
                    return Err(Error::AxisMismatch {
                        op: "concat",
                        axis: a,
                        expected: r,
                        got: e,
                    });
                }
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&ref_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let n = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = ref_shape;
        shape[axis] = total;
        let value = Tensor::from_parts(shape, data);
        Ok(self.record("concat", xs, value, ConcatRule { axis }))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || len == 0 || start + len > t.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!(
                    "range {start}..{} on axis {axis} of shape {:?}",
                    start + len,
                    t.shape()
                ),
            ));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::from_parts(shape, data);
        Ok(self.record("slice", &[x], value, SliceRule { axis, start }))
    }

    /// Zero padding with `(before, after)` per axis.
    pub fn pad_zero(&mut self, x: Var, pads: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(x);
        if pads.len() != t.rank() {
            return Err(Error::shape(
                "pad_zero",
                format!("{} pad pairs for rank {}", pads.len(), t.rank()),
            ));
        }
        let shape: Vec<usize> = t
            .shape()
            .iter()
            .zip(pads)
            .map(|(e, p)| e + p.0 + p.1)
            .collect();
        let mut out = Tensor::zeros(&shape);
        let src_shape = t.shape().to_vec();
        let mut idx = vec![0usize; src_shape.len()];
        for &v in t.data() {
            let dst: Vec<usize> = idx.iter().zip(pads).map(|(i, p)| i + p.0).collect();
            out.set(&dst, v);
            for a in (0..idx.len()).rev() {
                idx[a] += 1;
                if idx[a] < src_shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(self.record(
            "pad_zero",
            &[x],
            out,
            PadRule {
                pads: pads.to_vec(),
            },
        ))
    }
}
