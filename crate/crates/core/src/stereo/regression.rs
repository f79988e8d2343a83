use crate::error::{Error, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

struct SoftArgminRule {
    levels: usize,
    plane: usize,
    prob: Vec<f64>,
}

impl Backward for SoftArgminRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (n, plane) = (self.levels, self.plane);
        let batch = output.numel() / plane;
        let (est, g) = (output.data(), grad.data());
        let mut gc = vec![0.0; inputs[0].numel()];
        for b in 0..batch {
            for px in 0..plane {
                let o = b * plane + px;
                for d in 0..n {
                    let i = (b * n + d) * plane + px;
                    // d(est)/d(cost_d) = -p_d (d - est)
                    gc[i] = -g[o] * self.prob[i] * (d as f64 - est[o]);
                }
            }
        }
        vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gc))]
    }
}

/// Disparity regression: the expectation of the level index under
/// `softmax(-cost)` along the disparity axis.
///
/// `cost` is `[B, 1, D_max, H, W]` at full resolution; the result is
/// `[B, H, W]` with values in `[0, D_max - 1]`.
pub fn soft_argmin(tape: &mut Tape, cost: Var, max_disparity: usize) -> Result<Var> {
    let cs = tape.shape(cost).to_vec();
    if cs.len() != 5 || cs[1] != 1 {
        return Err(Error::shape(
            "soft_argmin",
            format!("expected [B, 1, D, H, W], got {cs:?}"),
        ));
    }
    if cs[2] != max_disparity {
        return Err(Error::AxisMismatch {
            op: "soft_argmin",
            axis: 2,
            expected: max_disparity,
            got: cs[2],
        });
    }
    let (batch, n, plane) = (cs[0], cs[2], cs[3] * cs[4]);
    let c = tape.value(cost).data();
    let mut prob = vec![0.0; c.len()];
    let mut est = vec![0.0; batch * plane];
    for b in 0..batch {
        for px in 0..plane {
            let at = |d: usize| (b * n + d) * plane + px;
            let m = (0..n).map(|d| -c[at(d)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for d in 0..n {
                let e = (-c[at(d)] - m).exp();
                prob[at(d)] = e;
                z += e;
            }
            let mut acc = 0.0;
            for d in 0..n {
                prob[at(d)] /= z;
                acc += d as f64 * prob[at(d)];
            }
            est[b * plane + px] = acc;
        }
    }
    let value = Tensor::from_parts(vec![batch, cs[3], cs[4]], est);
    let rule = SoftArgminRule {
        levels: n,
        plane,
        prob,
    };
    Ok(tape.record("soft_argmin", &[cost], value, rule))
}
