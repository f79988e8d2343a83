use super::{split_axis, Backward, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Max-shifted softmax of every fiber along `axis`, written into a new tensor.
pub(crate) fn softmax_values(t: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = split_axis(t.shape(), axis);
    let x = t.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..n {
                let e = (x[at(k)] - m).exp();
                out[at(k)] = e;
                z += e;
            }
            for k in 0..n {
                out[at(k)] /= z;
            }
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

struct SoftmaxRule {
    axis: usize,
}

impl Backward for SoftmaxRule {
    fn backward(
        &self,
        _: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (outer, n, inner) = split_axis(output.shape(), self.axis);
        let (p, g) = (output.data(), grad.data());
        let mut gx = vec![0.0; p.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let dot: f64 = (0..n).map(|k| p[at(k)] * g[at(k)]).sum();
                for k in 0..n {
                    gx[at(k)] = p[at(k)] * (g[at(k)] - dot);
                }
            }
        }
        vec![Some(Tensor::from_parts(output.shape().to_vec(), gx))]
    }
}

impl Tape {
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::InvalidArgument(format!(
                "softmax: axis {axis} out of range for rank {}",
                t.rank()
            )));
        }
        let value = softmax_values(t, axis);
        Ok(self.record("softmax", &[x], value, SoftmaxRule { axis }))
    }
}
