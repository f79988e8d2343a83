use super::{Backward, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Unary {
    Neg,
    Scale(f64),
    AddScalar,
    Relu,
    Sigmoid,
    Abs,
    Exp,
    Log,
    Clamp(f64, f64),
    SmoothL1,
}

impl Unary {
    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Scale(s) => s * x,
            Unary::AddScalar => unreachable!("handled by add_scalar"),
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => sigmoid(x),
            Unary::Abs => x.abs(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Clamp(lo, hi) => x.clamp(lo, hi),
            Unary::SmoothL1 => {
                let a = x.abs();
                if a < 1.0 {
                    0.5 * x * x
                } else {
                    a - 0.5
                }
            }
        }
    }

    /// d out / d in, from the input `x` and output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Scale(s) => s,
            Unary::AddScalar => 1.0,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Abs => sign(x),
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Clamp(lo, hi) => {
                if x > lo && x < hi {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::SmoothL1 => {
                if x.abs() < 1.0 {
                    x
                } else {
                    sign(x)
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sign with `sign(0) == 0`, the subgradient used for |x|.
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct UnaryRule(Unary);

impl Backward for UnaryRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0].data();
        let y = output.data();
        let g = grad.data();
        let data = (0..g.len())
            .map(|i| g[i] * self.0.deriv(x[i], y[i]))
            .collect();
        vec![Some(Tensor::from_parts(grad.shape().to_vec(), data))]
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryRule(Binary);

impl Backward for BinaryRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        match self.0 {
            Binary::Add => vec![Some(grad.clone()), Some(grad.clone())],
            Binary::Sub => vec![Some(grad.clone()), Some(grad.map(|g| -g))],
            Binary::Mul => vec![
                needs[0].then(|| grad.zip_map(inputs[1], |g, b| g * b)),
                needs[1].then(|| grad.zip_map(inputs[0], |g, a| g * a)),
            ],
        }
    }
}

struct SumRule;

impl Backward for SumRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape(), grad.item()))]
    }
}

/// Maximum over one axis; the gradient goes to the first maximal entry.
struct MaxAxisRule {
    axis: usize,
    argmax: Vec<usize>,
}

impl Backward for MaxAxisRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (outer, n, inner) = super::split_axis(inputs[0].shape(), self.axis);
        let mut gx = Tensor::zeros(inputs[0].shape());
        let gxd = gx.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let k = self.argmax[o * inner + i];
                gxd[(o * n + k) * inner + i] += grad.data()[o * inner + i];
            }
        }
        vec![Some(gx)]
    }
}

struct ChannelBiasRule {
    channels: usize,
    inner: usize,
}

impl Backward for ChannelBiasRule {
    fn backward(
        &self,
        _: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let mut gb = vec![0.0; self.channels];
        if needs[1] {
            for (i, chunk) in grad.data().chunks(self.inner).enumerate() {
                gb[i % self.channels] += chunk.iter().sum::<f64>();
            }
        }
        vec![
            needs[0].then(|| grad.clone()),
            needs[1].then(|| Tensor::from_parts(vec![self.channels], gb)),
        ]
    }
}

impl Tape {
    fn unary(&mut self, op: &'static str, x: Var, kind: Unary) -> Var {
        let value = self.value(x).map(|v| kind.eval(v));
        self.record(op, &[x], value, UnaryRule(kind))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                op,
                format!(
                    "operand shapes differ: {:?} vs {:?}",
                    ta.shape(),
                    tb.shape()
                ),
            ));
        }
        let value = match kind {
            Binary::Add => ta.zip_map(tb, |x, y| x + y),
            Binary::Sub => ta.zip_map(tb, |x, y| x - y),
            Binary::Mul => ta.zip_map(tb, |x, y| x * y),
        };
        Ok(self.record(op, &[a, b], value, BinaryRule(kind)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Binary::Mul)
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[B, C, ...]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(bias) != [xs[1]] {
            return Err(Error::shape(
                "add_channel_bias",
                format!(
                    "bias {:?} does not match channels of {xs:?}",
                    self.shape(bias)
                ),
            ));
        }
        let (channels, inner) = (xs[1], xs[2..].iter().product::<usize>());
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, chunk) in value.data_mut().chunks_mut(inner).enumerate() {
            let bc = b[i % channels];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
        Ok(self.record(
            "add_channel_bias",
            &[x, bias],
            value,
            ChannelBiasRule { channels, inner },
        ))
    }

    /// Sum of any number of same-shaped tensors, accumulated left to right.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_n of an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary("neg", x, Unary::Neg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary("scale", x, Unary::Scale(s))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.record("add_scalar", &[x], value, UnaryRule(Unary::AddScalar))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary("relu", x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary("sigmoid", x, Unary::Sigmoid)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary("abs", x, Unary::Abs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary("exp", x, Unary::Exp)
    }

    /// Natural log. Inputs must be positive.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary("log", x, Unary::Log)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary("clamp", x, Unary::Clamp(lo, hi))
    }

    /// Huber loss with unit threshold: `0.5 x²` for `|x| < 1`, else `|x| - 0.5`.
    pub fn smooth_l1(&mut self, x: Var) -> Var {
        self.unary("smooth_l1", x, Unary::SmoothL1)
    }

    /// Sum of all elements into a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.record("sum", &[x], value, SumRule)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Maximum along `axis`, which is removed from the shape.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::InvalidArgument(format!(
                "max_axis: axis {axis} out of range for rank {}",
                t.rank()
            )));
        }
        let (outer, n, inner) = super::split_axis(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut best_v = t.data()[o * n * inner + i];
                for k in 1..n {
                    let v = t.data()[(o * n + k) * inner + i];
                    if v > best_v {
                        best = k;
                        best_v = v;
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::from_parts(shape, out);
        Ok(self.record("max_axis", &[x], value, MaxAxisRule { axis, argmax }))
    }
}
