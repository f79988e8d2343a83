//! Test helpers: a finite-difference gradient checker and naive reference
//! implementations written directly from the operator definitions.
#![allow(dead_code)]

pub mod grad_cases;
pub mod oracle_cases;

use dedge_agm::data::Grid;
use dedge_agm::{Result, Tape, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

/// Moves every entry at least `margin` away from each point in `kinks`,
/// so piecewise ops are differentiable at (and near) the test input.
pub fn avoid(t: &Tensor, kinks: &[f64], margin: f64) -> Tensor {
    t.map(|v| {
        let mut v = v;
        for &k in kinks {
            if (v - k).abs() < margin {
                v = if v >= k { k + margin } else { k - margin };
            }
        }
        v
    })
}

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradReport {
    /// Largest relative error over entries whose gradient is at least 1e-3.
    pub max_rel: f64,
    /// Largest absolute error over entries whose gradient is below 1e-3.
    pub max_abs: f64,
    pub checked: usize,
}

impl GradReport {
    /// Relative error below `tol`, absolute error below `tol / 100` for
    /// small gradients.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel < tol && self.max_abs < tol / 100.0 && self.checked > 0
    }

    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            max_rel: self.max_rel.max(other.max_rel),
            max_abs: self.max_abs.max(other.max_abs),
            checked: self.checked + other.checked,
        }
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Checks `d/d inputs` of `sum(f(inputs) * r)` for a fixed random `r` with
/// central differences. At most `per_input` coordinates of each input are
/// probed (all of them when the input is that small).
pub fn grad_check(
    inputs: &[Tensor],
    seed: u64,
    per_input: usize,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> GradReport {
    let mut r = rng(seed ^ 0xF00D);
    let loss_of = |tape: &mut Tape, vars: &[Var], proj: &Tensor| -> Var {
        let out = f(tape, vars).expect("forward");
        let p = tape.constant(proj.clone());
        let m = tape.mul(out, p).expect("projection shape");
        tape.sum(m)
    };
    let proj = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        uniform(tape.shape(out), -1.0, 1.0, &mut r)
    };
    let value = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let l = loss_of(&mut tape, &vars, &proj);
        tape.value(l).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let l = loss_of(&mut tape, &vars, &proj);
    let grads = tape.backward(l).expect("backward");

    let mut report = GradReport::default();
    let mut xs = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, v);
        let n = inputs[i].numel();
        let coords: Vec<usize> = if n <= per_input {
            (0..n).collect()
        } else {
            sample(&mut r, n, per_input).into_vec()
        };
        for k in coords {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + FD_STEP;
            let up = value(&xs);
            xs[i].data_mut()[k] = orig - FD_STEP;
            let down = value(&xs);
            xs[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.data()[k];
            let scale = a.abs().max(numeric.abs());
            let diff = (a - numeric).abs();
            if scale < 1e-3 {
                report.max_abs = report.max_abs.max(diff);
            } else {
                report.max_rel = report.max_rel.max(diff / scale);
            }
            report.checked += 1;
        }
    }
    report
}

/// Evaluates `f` on constant inputs.
pub fn eval(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.max_abs_diff(b)
}

// ---------------------------------------------------------------------------
// Naive oracles

/// Direct 3D cross-correlation, `x: [B,Cin,D,H,W]`, `w: [Cout,Cin/g,kd,kh,kw]`.
pub fn conv3d_naive(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: [usize; 3],
    dilation: [usize; 3],
    pad: [usize; 3],
    groups: usize,
) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    let (b, cin, cout) = (xs[0], xs[1], ws[0]);
    let (cin_g, cout_g) = (cin / groups, cout / groups);
    let out_ext =
        |a: usize| (xs[2 + a] + 2 * pad[a] - dilation[a] * (ws[2 + a] - 1) - 1) / stride[a] + 1;
    let (od, oh, ow) = (out_ext(0), out_ext(1), out_ext(2));
    let mut out = Tensor::zeros(&[b, cout, od, oh, ow]);
    for n in 0..b {
        for co in 0..cout {
            let g = co / cout_g;
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = bias.map_or(0.0, |bb| bb.data()[co]);
                        for ci in 0..cin_g {
                            for kz in 0..ws[2] {
                                for ky in 0..ws[3] {
                                    for kx in 0..ws[4] {
                                        let iz = (z * stride[0] + kz * dilation[0]) as isize
                                            - pad[0] as isize;
                                        let iy = (y * stride[1] + ky * dilation[1]) as isize
                                            - pad[1] as isize;
                                        let ix = (xo * stride[2] + kx * dilation[2]) as isize
                                            - pad[2] as isize;
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz >= xs[2] as isize
                                            || iy >= xs[3] as isize
                                            || ix >= xs[4] as isize
                                        {
                                            continue;
                                        }
                                        acc += w.get(&[co, ci, kz, ky, kx])
                                            * x.get(&[
                                                n,
                                                g * cin_g + ci,
                                                iz as usize,
                                                iy as usize,
                                                ix as usize,
                                            ]);
                                    }
                                }
                            }
                        }
                        out.set(&[n, co, z, y, xo], acc);
                    }
                }
            }
        }
    }
    out
}

/// 2D cross-correlation through the 3D oracle with a unit depth axis.
pub fn conv2d_naive(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    dilation: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    let x3 = x.clone().reshape(&[xs[0], xs[1], 1, xs[2], xs[3]]).unwrap();
    let w3 = w.clone().reshape(&[ws[0], ws[1], 1, ws[2], ws[3]]).unwrap();
    let y = conv3d_naive(
        &x3,
        &w3,
        bias,
        [1, stride, stride],
        [1, dilation, dilation],
        [0, pad, pad],
        groups,
    );
    let ys = y.shape().to_vec();
    y.reshape(&[ys[0], ys[1], ys[3], ys[4]]).unwrap()
}

/// Transposed convolution by scattering every input tap into the output,
/// `w: [Cin, Cout, kd, kh, kw]`.
pub fn conv3d_transposed_naive(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    out: [usize; 3],
) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    let mut y = Tensor::zeros(&[xs[0], ws[1], out[0], out[1], out[2]]);
    for n in 0..xs[0] {
        for ci in 0..xs[1] {
            for z in 0..xs[2] {
                for r in 0..xs[3] {
                    for c in 0..xs[4] {
                        let v = x.get(&[n, ci, z, r, c]);
                        for co in 0..ws[1] {
                            for kz in 0..ws[2] {
                                for ky in 0..ws[3] {
                                    for kx in 0..ws[4] {
                                        let oz = (z * stride + kz) as isize - pad as isize;
                                        let oy = (r * stride + ky) as isize - pad as isize;
                                        let ox = (c * stride + kx) as isize - pad as isize;
                                        if oz < 0
                                            || oy < 0
                                            || ox < 0
                                            || oz >= out[0] as isize
                                            || oy >= out[1] as isize
                                            || ox >= out[2] as isize
                                        {
                                            continue;
                                        }
                                        let idx = [n, co, oz as usize, oy as usize, ox as usize];
                                        let cur = y.get(&idx);
                                        y.set(&idx, cur + v * w.get(&[ci, co, kz, ky, kx]));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn softmax_naive(x: &Tensor, axis: usize) -> Tensor {
    let shape = x.shape().to_vec();
    Tensor::from_fn(&shape, |idx| {
        let mut j = idx.to_vec();
        let fiber: Vec<f64> = (0..shape[axis])
            .map(|k| {
                j[axis] = k;
                x.get(&j)
            })
            .collect();
        let m = fiber.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = fiber.iter().map(|v| (v - m).exp()).sum();
        (x.get(idx) - m).exp() / z
    })
}

pub fn pool_avg_naive(x: &Tensor, window: usize, stride: usize) -> Tensor {
    let s = x.shape();
    let oh = (s[2] - window) / stride + 1;
    let ow = (s[3] - window) / stride + 1;
    Tensor::from_fn(&[s[0], s[1], oh, ow], |i| {
        let mut acc = 0.0;
        for ky in 0..window {
            for kx in 0..window {
                acc += x.get(&[i[0], i[1], i[2] * stride + ky, i[3] * stride + kx]);
            }
        }
        acc / (window * window) as f64
    })
}

/// Linear interpolation along one axis, half-pixel centres, edge clamped.
pub fn interp_axis_naive(x: &Tensor, axis: usize, n_out: usize) -> Tensor {
    let n_in = x.shape()[axis];
    let mut shape = x.shape().to_vec();
    shape[axis] = n_out;
    Tensor::from_fn(&shape, |idx| {
        let pos = (idx[axis] as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
        let pos = pos.clamp(0.0, (n_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        let t = pos - lo as f64;
        let mut a = idx.to_vec();
        a[axis] = lo;
        let mut b = idx.to_vec();
        b[axis] = hi;
        x.get(&a) * (1.0 - t) + x.get(&b) * t
    })
}

pub fn concat_volume_naive(l: &Tensor, r: &Tensor, levels: usize) -> Tensor {
    let s = l.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    Tensor::from_fn(&[b, 2 * c, levels, h, w], |i| {
        let (n, ch, d, y, x) = (i[0], i[1], i[2], i[3], i[4]);
        if ch < c {
            l.get(&[n, ch, y, x])
        } else if x >= d {
            r.get(&[n, ch - c, y, x - d])
        } else {
            0.0
        }
    })
}

pub fn distance_volume_naive(l: &Tensor, r: &Tensor, levels: usize) -> Tensor {
    let s = l.shape();
    Tensor::from_fn(&[s[0], s[1], levels, s[2], s[3]], |i| {
        let (n, ch, d, y, x) = (i[0], i[1], i[2], i[3], i[4]);
        let rv = if x >= d {
            r.get(&[n, ch, y, x - d])
        } else {
            0.0
        };
        (l.get(&[n, ch, y, x]) - rv).abs()
    })
}

/// `sum_d d * exp(-c_d) / sum_d exp(-c_d)` per pixel of `[B,1,D,H,W]`.
pub fn soft_argmin_naive(cost: &Tensor) -> Tensor {
    let s = cost.shape();
    Tensor::from_fn(&[s[0], s[3], s[4]], |i| {
        let c: Vec<f64> = (0..s[2])
            .map(|d| -cost.get(&[i[0], 0, d, i[1], i[2]]))
            .collect();
        let m = c.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = c.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().enumerate().map(|(d, p)| d as f64 * p / z).sum()
    })
}

/// `(F5(1), F1, F2, F3, F5(2), F1, F2, F3, ...)`.
pub fn shared_concat_naive(top: &Tensor, sides: [&Tensor; 3]) -> Tensor {
    let s = top.shape();
    Tensor::from_fn(&[s[0], 4 * s[1], s[2], s[3]], |i| {
        let (k, slot) = (i[1] / 4, i[1] % 4);
        match slot {
            0 => top.get(&[i[0], k, i[2], i[3]]),
            j => sides[j - 1].get(&[i[0], 0, i[2], i[3]]),
        }
    })
}

/// Literal group recursion: `y1 = v1`, `y_g = conv(w_{g-1}, v_g + y_{g-1})`,
/// then the pointwise fusion. Works for 2D and 3D inputs.
pub fn granular_naive(
    x: &Tensor,
    kernels: &[Tensor],
    pointwise: &Tensor,
    dilation: usize,
) -> Tensor {
    let rank = x.rank() - 2;
    let to3 = |t: &Tensor| -> Tensor {
        if rank == 3 {
            t.clone()
        } else {
            let s = t.shape();
            t.clone().reshape(&[s[0], s[1], 1, s[2], s[3]]).unwrap()
        }
    };
    let x3 = to3(x);
    let groups = kernels.len() + 1;
    let s = x3.shape().to_vec();
    let width = s[1] / groups;
    let group = |g: usize| {
        Tensor::from_fn(&[s[0], width, s[2], s[3], s[4]], |i| {
            x3.get(&[i[0], g * width + i[1], i[2], i[3], i[4]])
        })
    };
    let mut ys = vec![group(0)];
    for g in 1..groups {
        let v = group(g);
        let sum = v.zip_map(&ys[g - 1], |a, b| a + b);
        let k = to3(&kernels[g - 1]);
        let ks = k.shape()[3];
        let p = dilation * (ks - 1) / 2;
        let pad_d = if rank == 3 { p } else { 0 };
        let dil_d = if rank == 3 { dilation } else { 1 };
        ys.push(conv3d_naive(
            &sum,
            &k,
            None,
            [1, 1, 1],
            [dil_d, dilation, dilation],
            [pad_d, p, p],
            1,
        ));
    }
    let cat = Tensor::from_fn(&s, |i| {
        ys[i[1] / width].get(&[i[0], i[1] % width, i[2], i[3], i[4]])
    });
    let y = conv3d_naive(
        &cat,
        &to3(pointwise),
        None,
        [1, 1, 1],
        [1, 1, 1],
        [0, 0, 0],
        1,
    );
    if rank == 3 {
        y
    } else {
        let ys = y.shape().to_vec();
        y.reshape(&[ys[0], ys[1], ys[3], ys[4]]).unwrap()
    }
}

/// Per-channel standardisation with biased batch variance and `eps`.
pub fn batch_norm_naive(x: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor {
    let s = x.shape().to_vec();
    let inner: usize = s[2..].iter().product();
    let mut mean = vec![0.0; s[1]];
    let mut var = vec![0.0; s[1]];
    let n = (s[0] * inner) as f64;
    for (k, &v) in x.data().iter().enumerate() {
        mean[(k / inner) % s[1]] += v / n;
    }
    for (k, &v) in x.data().iter().enumerate() {
        let c = (k / inner) % s[1];
        var[c] += (v - mean[c]).powi(2) / n;
    }
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let c = (k / inner) % s[1];
            gamma[c] * (v - mean[c]) / (var[c] + eps).sqrt() + beta[c]
        })
        .collect();
    Tensor::new(&s, data).unwrap()
}

/// Class-balanced binary cross-entropy, averaged over every pixel of the
/// batch; weights recomputed per image.
pub fn edge_loss_naive(p: &Tensor, y: &Tensor) -> f64 {
    let s = p.shape();
    let plane = s[1] * s[2];
    let mut total = 0.0;
    for b in 0..s[0] {
        let labels = &y.data()[b * plane..(b + 1) * plane];
        let pos = labels.iter().filter(|&&v| v == 1.0).count() as f64;
        let neg = labels.len() as f64 - pos;
        let alpha = pos / (pos + neg);
        let beta = neg / (pos + neg);
        for (k, &label) in labels.iter().enumerate() {
            let pc = p.data()[b * plane + k].clamp(1e-7, 1.0 - 1e-7);
            if label == 1.0 {
                total -= beta * pc.ln();
            } else {
                total -= alpha * (1.0 - pc).ln();
            }
        }
    }
    total / (s[0] * plane) as f64
}

pub fn smoothness_naive(d: &Tensor, xi: &Tensor, gamma: f64) -> f64 {
    let s = d.shape();
    let mut total = 0.0;
    let mut n = 0usize;
    for b in 0..s[0] {
        for y in 0..s[1] - 1 {
            for x in 0..s[2] - 1 {
                let dx = d.get(&[b, y, x + 1]) - d.get(&[b, y, x]);
                let dy = d.get(&[b, y + 1, x]) - d.get(&[b, y, x]);
                let ex = xi.get(&[b, y, x + 1]) - xi.get(&[b, y, x]);
                let ey = xi.get(&[b, y + 1, x]) - xi.get(&[b, y, x]);
                total +=
                    dx.abs() * (-gamma * ex.abs()).exp() + dy.abs() * (-gamma * ey.abs()).exp();
                n += 1;
            }
        }
    }
    total / n as f64
}

pub fn smooth_l1_naive(e: f64) -> f64 {
    if e.abs() < 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

pub fn disp_loss_naive(preds: &[Tensor], gt: &Tensor, valid: &Tensor, lambda: &[f64]) -> f64 {
    let n = valid.data().iter().filter(|&&v| v != 0.0).count() as f64;
    preds
        .iter()
        .zip(lambda)
        .map(|(p, l)| {
            let s: f64 = (0..gt.numel())
                .filter(|&k| valid.data()[k] != 0.0)
                .map(|k| smooth_l1_naive(p.data()[k] - gt.data()[k]))
                .sum();
            l * s / n
        })
        .sum()
}

pub fn epe_naive(pred: &Tensor, gt: &Tensor, valid: &Tensor) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for k in 0..gt.numel() {
        if valid.data()[k] != 0.0 {
            s += (pred.data()[k] - gt.data()[k]).abs();
            n += 1.0;
        }
    }
    s / n
}

/// Outlier count: `|e| >= t_px` combined with `|e| >= pct |gt|` (a zero
/// error is never an outlier).
pub fn outliers_naive(
    pred: &Tensor,
    gt: &Tensor,
    valid: &Tensor,
    t_px: f64,
    pct: Option<f64>,
    and: bool,
) -> (usize, usize) {
    let mut count = 0;
    let mut n = 0;
    for k in 0..gt.numel() {
        if valid.data()[k] == 0.0 {
            continue;
        }
        n += 1;
        let e = (pred.data()[k] - gt.data()[k]).abs();
        let px = e >= t_px;
        let hit = match pct {
            None => px,
            Some(r) => {
                let rel = e > 0.0 && e >= r * gt.data()[k].abs();
                if and {
                    px && rel
                } else {
                    px || rel
                }
            }
        };
        count += usize::from(hit);
    }
    (count, n)
}

/// Depth-edge ground truth by scanning each pixel's 8-neighbourhood:
/// instance edges on labelled pixels next to a different id, semantic edges
/// on any pixel next to a different class, OR-ed, then a square dilation.
pub fn depth_edge_naive(inst: &Grid<u32>, sem: &Grid<u32>, radius: usize) -> Vec<u8> {
    let (w, h) = (inst.width() as isize, inst.height() as isize);
    let differs = |g: &Grid<u32>, x: isize, y: isize| {
        let c = g.get(x as usize, y as usize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if (dx, dy) != (0, 0)
                    && nx >= 0
                    && ny >= 0
                    && nx < w
                    && ny < h
                    && g.get(nx as usize, ny as usize) != c
                {
                    return true;
                }
            }
        }
        false
    };
    let mut base = vec![0u8; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let ie = inst.get(x as usize, y as usize) != 0 && differs(inst, x, y);
            let se = differs(sem, x, y);
            base[(y * w + x) as usize] = u8::from(ie || se);
        }
    }
    let r = radius as isize;
    let mut out = vec![0u8; base.len()];
    for y in 0..h {
        for x in 0..w {
            let mut hit = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h && base[(ny * w + nx) as usize] == 1 {
                        hit = 1;
                    }
                }
            }
            out[(y * w + x) as usize] = hit;
        }
    }
    out
}

/// Random label grid with blocky regions so boundaries are non-trivial.
pub fn random_labels(w: usize, h: usize, n_labels: u32, rng: &mut ChaCha8Rng) -> Grid<u32> {
    let block = rng.random_range(1..=4usize);
    let bw = w.div_ceil(block);
    let bh = h.div_ceil(block);
    let cells: Vec<u32> = (0..bw * bh)
        .map(|_| rng.random_range(0..n_labels))
        .collect();
    Grid::from_fn(w, h, |x, y| cells[(y / block) * bw + x / block])
}

/// 100 random mask pairs up to 64x64 with a random dilation radius.
pub fn depth_edge_instances() -> impl Iterator<Item = (Grid<u32>, Grid<u32>, usize)> {
    (0..100u64).map(|seed| {
        let mut r = rng(1000 + seed);
        let (w, h) = (r.random_range(1..=64), r.random_range(1..=64));
        let inst = random_labels(w, h, r.random_range(1..=6), &mut r);
        let sem = random_labels(w, h, r.random_range(1..=3), &mut r);
        (inst, sem, r.random_range(0..=2))
    })
}
