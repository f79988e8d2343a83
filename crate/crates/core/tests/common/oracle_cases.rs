//! Library operators against the naive oracles on random small instances.
//! Each case returns the largest absolute difference of one instance.

use super::*;
use dedge_agm::loss::{
    dedge_disp_smoothness, disp_loss, edge_loss, epe, threshold_error, total_loss, Combine,
    MetricsAccumulator,
};
use dedge_agm::stereo::{
    build_cost_volume, concat_volume, distance_volume, granular_conv, shared_concat, soft_argmin,
    GranularConvParams,
};
use dedge_agm::tensor::{ConvSpec, NormMode, NORM_EPS};

pub const INSTANCES: u64 = 100;
pub const TOL: f64 = 1e-10;

pub struct OracleCase {
    pub name: &'static str,
    /// Integer-valued results that must agree exactly.
    pub exact: bool,
    pub run: fn(u64) -> f64,
}

impl OracleCase {
    pub fn passes(&self, worst: f64) -> bool {
        if self.exact {
            worst == 0.0
        } else {
            worst < TOL
        }
    }
}

pub fn run_case(case: &OracleCase) -> f64 {
    (0..INSTANCES).map(|s| (case.run)(s)).fold(0.0, f64::max)
}

pub fn case(name: &str) -> &'static OracleCase {
    CASES
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("no oracle case {name}"))
}

const fn close(name: &'static str, run: fn(u64) -> f64) -> OracleCase {
    OracleCase {
        name,
        exact: false,
        run,
    }
}

const fn exact(name: &'static str, run: fn(u64) -> f64) -> OracleCase {
    OracleCase {
        name,
        exact: true,
        run,
    }
}

pub static CASES: &[OracleCase] = &[
    close("conv2d", conv2d),
    close("conv3d", conv3d),
    close("conv3d_transposed", conv3d_transposed),
    close("conv_linearity", conv_linearity),
    close("transposed_adjoint", transposed_adjoint),
    close("granular_conv", granular),
    close("softmax", softmax),
    close("pool_avg2d", pool),
    close("upsample_trilinear", trilinear),
    close("upsample_bilinear", bilinear),
    close("batch_norm", batch_norm),
    exact("concat_volume", concat_vol),
    close("distance_volume", distance_vol),
    exact("cost_volume_layout", cost_volume_layout),
    exact("shared_concat", shared_concat_case),
    close("soft_argmin", soft_argmin_case),
    close("edge_loss", edge_loss_case),
    close("dedge_disp_smoothness", smoothness),
    close("disp_loss", disp_loss_case),
    close("total_loss", total_loss_case),
    close("epe", epe_case),
    exact("threshold_error", threshold_case),
    exact("metrics_report", metrics_case),
];

fn extent(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

fn conv2d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let groups = [1, 2][extent(&mut r, 0, 1)];
    let (cin, cout) = (groups * extent(&mut r, 1, 2), groups * extent(&mut r, 1, 2));
    let k = [1, 3][extent(&mut r, 0, 1)];
    let (stride, dil) = (extent(&mut r, 1, 2), extent(&mut r, 1, 2));
    let pad = extent(&mut r, 0, 2);
    let (h, w) = (
        extent(&mut r, dil * (k - 1) + 1, 7),
        extent(&mut r, dil * (k - 1) + 1, 7),
    );
    let x = randn(&[extent(&mut r, 1, 2), cin, h, w], &mut r);
    let wt = randn(&[cout, cin / groups, k, k], &mut r);
    let b = randn(&[cout], &mut r);
    let spec = ConvSpec::new(2)
        .with_stride(stride)
        .with_dilation(dil)
        .with_padding(pad)
        .with_groups(groups);
    let got = eval(&[x.clone(), wt.clone(), b.clone()], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), &spec)
    })
    .unwrap();
    max_abs_diff(
        &got,
        &conv2d_naive(&x, &wt, Some(&b), stride, dil, pad, groups),
    )
}

fn conv3d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (cin, cout) = (extent(&mut r, 1, 3), extent(&mut r, 1, 3));
    let (stride, dil, pad) = (
        extent(&mut r, 1, 2),
        extent(&mut r, 1, 2),
        extent(&mut r, 0, 2),
    );
    let span = 2 * dil + 1;
    let dims = [
        extent(&mut r, span, 5),
        extent(&mut r, span, 6),
        extent(&mut r, span, 6),
    ];
    let x = randn(&[1, cin, dims[0], dims[1], dims[2]], &mut r);
    let wt = randn(&[cout, cin, 3, 3, 3], &mut r);
    let spec = ConvSpec::new(3)
        .with_stride(stride)
        .with_dilation(dil)
        .with_padding(pad);
    let got = eval(&[x.clone(), wt.clone()], |t, v| {
        t.conv3d(v[0], v[1], None, &spec)
    })
    .unwrap();
    max_abs_diff(
        &got,
        &conv3d_naive(&x, &wt, None, [stride; 3], [dil; 3], [pad; 3], 1),
    )
}

fn conv3d_transposed(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (cin, cout) = (extent(&mut r, 1, 3), extent(&mut r, 1, 3));
    let stride = extent(&mut r, 1, 2);
    let pad = extent(&mut r, 0, 1);
    let n = [
        extent(&mut r, 1, 3),
        extent(&mut r, 2, 4),
        extent(&mut r, 2, 4),
    ];
    let x = randn(&[1, cin, n[0], n[1], n[2]], &mut r);
    let wt = randn(&[cin, cout, 3, 3, 3], &mut r);
    // the largest extents that a stride-s conv maps back onto n
    let out = n.map(|e| (e - 1) * stride + 3 - 2 * pad + (stride - 1));
    let spec = ConvSpec::new(3).with_stride(stride).with_padding(pad);
    let got = eval(&[x.clone(), wt.clone()], |t, v| {
        t.conv3d_transposed(v[0], v[1], &spec, Some(out))
    })
    .unwrap();
    max_abs_diff(&got, &conv3d_transposed_naive(&x, &wt, stride, pad, out))
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `conv(a x + b y) = a conv(x) + b conv(y)` without bias.
fn conv_linearity(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [
        1,
        2,
        extent(&mut r, 2, 4),
        extent(&mut r, 3, 6),
        extent(&mut r, 3, 6),
    ];
    let (x, y) = (randn(&shape, &mut r), randn(&shape, &mut r));
    let w = randn(&[3, 2, 3, 3, 3], &mut r);
    let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
    let spec = ConvSpec::same(3, 3, extent(&mut r, 1, 2));
    let conv = |t: &Tensor| {
        eval(&[t.clone(), w.clone()], |tp, v| {
            tp.conv3d(v[0], v[1], None, &spec)
        })
        .unwrap()
    };
    let mixed = x.zip_map(&y, |p, q| a * p + b * q);
    let sum = conv(&x).zip_map(&conv(&y), |p, q| a * p + b * q);
    max_abs_diff(&conv(&mixed), &sum)
}

/// `<conv(u), v> = <u, conv_transposed(v)>` for the same weights.
fn transposed_adjoint(seed: u64) -> f64 {
    let mut r = rng(seed);
    let stride = extent(&mut r, 1, 2);
    let pad = extent(&mut r, 0, 1);
    let n = [
        extent(&mut r, 1, 3),
        extent(&mut r, 2, 4),
        extent(&mut r, 2, 4),
    ];
    let out = n.map(|e| (e - 1) * stride + 3 - 2 * pad);
    let (cin, cout) = (extent(&mut r, 1, 3), extent(&mut r, 1, 3));
    // conv maps cout -> cin channels, its adjoint cin -> cout
    let w = randn(&[cin, cout, 3, 3, 3], &mut r);
    let u = randn(&[1, cout, out[0], out[1], out[2]], &mut r);
    let v = randn(&[1, cin, n[0], n[1], n[2]], &mut r);
    let spec = ConvSpec::new(3).with_stride(stride).with_padding(pad);
    let cu = eval(&[u.clone(), w.clone()], |t, x| {
        t.conv3d(x[0], x[1], None, &spec)
    })
    .unwrap();
    let tv = eval(&[v.clone(), w.clone()], |t, x| {
        t.conv3d_transposed(x[0], x[1], &spec, Some(out))
    })
    .unwrap();
    (dot(&cu, &v) - dot(&u, &tv)).abs()
}

fn granular(seed: u64) -> f64 {
    let mut r = rng(seed);
    let groups = [2, 4][extent(&mut r, 0, 1)];
    let c = groups * extent(&mut r, 1, 2);
    let rank = extent(&mut r, 2, 3);
    let dil = extent(&mut r, 1, 3);
    let shape: Vec<usize> = if rank == 2 {
        vec![1, c, extent(&mut r, 3, 6), extent(&mut r, 3, 6)]
    } else {
        vec![
            1,
            c,
            extent(&mut r, 2, 4),
            extent(&mut r, 3, 5),
            extent(&mut r, 3, 5),
        ]
    };
    let x = randn(&shape, &mut r);
    let p = GranularConvParams::random(c, c, 3, rank, groups, dil, false, &mut r).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = p.to_vars(&mut tape);
    let y = granular_conv(&mut tape, xv, &vars).unwrap();
    max_abs_diff(
        tape.value(y),
        &granular_naive(&x, &p.group_kernels, &p.pointwise, dil),
    )
}

fn softmax(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [
        extent(&mut r, 1, 3),
        extent(&mut r, 1, 6),
        extent(&mut r, 1, 4),
    ];
    let x = randn(&shape, &mut r).map(|v| v * 5.0);
    let axis = extent(&mut r, 0, 2);
    let got = eval(std::slice::from_ref(&x), |t, v| t.softmax(v[0], axis)).unwrap();
    max_abs_diff(&got, &softmax_naive(&x, axis))
}

fn pool(seed: u64) -> f64 {
    let mut r = rng(seed);
    let win = extent(&mut r, 1, 3);
    let stride = extent(&mut r, 1, 3);
    let x = randn(
        &[1, 2, extent(&mut r, win, 8), extent(&mut r, win, 8)],
        &mut r,
    );
    let got = eval(std::slice::from_ref(&x), |t, v| t.pool_avg2d(v[0], win, stride)).unwrap();
    max_abs_diff(&got, &pool_avg_naive(&x, win, stride))
}

fn trilinear(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = [
        extent(&mut r, 1, 4),
        extent(&mut r, 1, 4),
        extent(&mut r, 1, 4),
    ];
    let out = [
        extent(&mut r, 1, 9),
        extent(&mut r, 1, 9),
        extent(&mut r, 1, 9),
    ];
    let x = randn(&[1, 2, n[0], n[1], n[2]], &mut r);
    let got = eval(std::slice::from_ref(&x), |t, v| t.upsample_trilinear(v[0], out)).unwrap();
    let want = interp_axis_naive(
        &interp_axis_naive(&interp_axis_naive(&x, 2, out[0]), 3, out[1]),
        4,
        out[2],
    );
    max_abs_diff(&got, &want)
}

fn bilinear(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = randn(&[2, 1, extent(&mut r, 1, 5), extent(&mut r, 1, 5)], &mut r);
    let out = [extent(&mut r, 1, 10), extent(&mut r, 1, 10)];
    let got = eval(std::slice::from_ref(&x), |t, v| t.upsample_bilinear(v[0], out)).unwrap();
    max_abs_diff(
        &got,
        &interp_axis_naive(&interp_axis_naive(&x, 2, out[0]), 3, out[1]),
    )
}

fn batch_norm(seed: u64) -> f64 {
    let mut r = rng(seed);
    let c = extent(&mut r, 1, 4);
    let x =
        randn(&[extent(&mut r, 2, 3), c, extent(&mut r, 1, 4), 3], &mut r).map(|v| 3.0 * v + 1.0);
    let g = uniform(&[c], 0.5, 2.0, &mut r);
    let b = randn(&[c], &mut r);
    let got = eval(&[x.clone(), g.clone(), b.clone()], |t, v| {
        Ok(t.batch_norm(v[0], v[1], v[2], NormMode::Train)?.0)
    })
    .unwrap();
    max_abs_diff(&got, &batch_norm_naive(&x, g.data(), b.data(), NORM_EPS))
}

fn feature_pair(r: &mut ChaCha8Rng) -> (Tensor, Tensor, usize) {
    let shape = [
        extent(r, 1, 2),
        extent(r, 1, 3),
        extent(r, 1, 4),
        extent(r, 1, 7),
    ];
    let levels = extent(r, 1, shape[3] + 2);
    (randn(&shape, r), randn(&shape, r), levels)
}

fn concat_vol(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (l, rt, levels) = feature_pair(&mut r);
    let got = eval(&[l.clone(), rt.clone()], |t, v| {
        concat_volume(t, v[0], v[1], levels)
    })
    .unwrap();
    max_abs_diff(&got, &concat_volume_naive(&l, &rt, levels))
}

fn distance_vol(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (l, rt, levels) = feature_pair(&mut r);
    let got = eval(&[l.clone(), rt.clone()], |t, v| {
        distance_volume(t, v[0], v[1], levels)
    })
    .unwrap();
    max_abs_diff(&got, &distance_volume_naive(&l, &rt, levels))
}

/// The stacked volume is `[concat; distance]` along channels.
fn cost_volume_layout(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (l, rt, levels) = feature_pair(&mut r);
    let got = eval(&[l.clone(), rt.clone()], |t, v| {
        Ok(build_cost_volume(t, v[0], v[1], levels, 4)?.values)
    })
    .unwrap();
    let c = l.shape()[1];
    let cat = concat_volume_naive(&l, &rt, levels);
    let dist = distance_volume_naive(&l, &rt, levels);
    let want = Tensor::from_fn(got.shape(), |i| {
        if i[1] < 2 * c {
            cat.get(i)
        } else {
            dist.get(&[i[0], i[1] - 2 * c, i[2], i[3], i[4]])
        }
    });
    max_abs_diff(&got, &want)
}

fn shared_concat_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, k, h, w) = (
        extent(&mut r, 1, 2),
        extent(&mut r, 1, 5),
        extent(&mut r, 1, 4),
        extent(&mut r, 1, 4),
    );
    let top = randn(&[b, k, h, w], &mut r);
    let sides: Vec<Tensor> = (0..3).map(|_| randn(&[b, 1, h, w], &mut r)).collect();
    let mut inputs = vec![top.clone()];
    inputs.extend(sides.iter().cloned());
    let got = eval(&inputs, |t, v| shared_concat(t, v[0], &[v[1], v[2], v[3]])).unwrap();
    max_abs_diff(
        &got,
        &shared_concat_naive(&top, [&sides[0], &sides[1], &sides[2]]),
    )
}

fn soft_argmin_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = extent(&mut r, 1, 12);
    let c = randn(
        &[
            extent(&mut r, 1, 2),
            1,
            d,
            extent(&mut r, 1, 3),
            extent(&mut r, 1, 3),
        ],
        &mut r,
    )
    .map(|v| 4.0 * v);
    let got = eval(std::slice::from_ref(&c), |t, v| soft_argmin(t, v[0], d)).unwrap();
    max_abs_diff(&got, &soft_argmin_naive(&c))
}

fn scalar_diff(got: f64, want: f64) -> f64 {
    (got - want).abs()
}

fn labels(shape: &[usize], p: f64, r: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.iter().product())
        .map(|_| f64::from(u8::from(r.random_bool(p))))
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn edge_loss_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [
        extent(&mut r, 1, 3),
        extent(&mut r, 1, 6),
        extent(&mut r, 1, 6),
    ];
    let mut p = uniform(&shape, 0.0, 1.0, &mut r);
    // exercise the clamp at both ends
    p.data_mut()[0] = 0.0;
    if p.numel() > 1 {
        p.data_mut()[1] = 1.0;
    }
    let y = labels(&shape, [0.0, 0.1, 0.5, 1.0][extent(&mut r, 0, 3)], &mut r);
    let got = eval(&[p.clone()], |t, v| edge_loss(t, v[0], &y))
        .unwrap()
        .item();
    scalar_diff(got, edge_loss_naive(&p, &y))
}

fn smoothness(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [
        extent(&mut r, 1, 3),
        extent(&mut r, 2, 6),
        extent(&mut r, 2, 6),
    ];
    let d = uniform(&shape, 0.0, 16.0, &mut r);
    let xi = labels(&shape, 0.3, &mut r);
    let gamma = r.random_range(0.0..2.0);
    let got = eval(std::slice::from_ref(&d), |t, v| {
        dedge_disp_smoothness(t, v[0], &xi, gamma)
    })
    .unwrap()
    .item();
    scalar_diff(got, smoothness_naive(&d, &xi, gamma))
}

fn disp_loss_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [
        extent(&mut r, 1, 3),
        extent(&mut r, 1, 5),
        extent(&mut r, 1, 5),
    ];
    let gt = uniform(&shape, 0.0, 16.0, &mut r);
    let preds: Vec<Tensor> = (0..3).map(|_| uniform(&shape, 0.0, 16.0, &mut r)).collect();
    let mut valid = labels(&shape, 0.7, &mut r);
    valid.data_mut()[0] = 1.0;
    let lambda: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
    let got = eval(&preds, |t, v| disp_loss(t, v, &gt, &valid, &lambda))
        .unwrap()
        .item();
    scalar_diff(got, disp_loss_naive(&preds, &gt, &valid, &lambda))
}

fn total_loss_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let parts: Vec<f64> = (0..3).map(|_| r.random_range(0.0..5.0)).collect();
    let a = r.random_range(0.0..=1.0);
    let inputs: Vec<Tensor> = parts.iter().map(|&p| Tensor::scalar(p)).collect();
    let got = eval(&inputs, |t, v| total_loss(t, v[0], v[1], v[2], a))
        .unwrap()
        .item();
    scalar_diff(got, parts[0] + a * parts[1] + (1.0 - a) * parts[2])
}

/// Integer ground truth and quarter-pixel predictions, so errors land
/// exactly on the 3 px and 5 % thresholds now and then.
fn disparity_triplet(r: &mut ChaCha8Rng) -> (Tensor, Tensor, Tensor) {
    let shape = [extent(r, 1, 8), extent(r, 1, 8)];
    let n = shape[0] * shape[1];
    let gt_data: Vec<f64> = (0..n).map(|_| r.random_range(0..=80) as f64).collect();
    let pred_data = gt_data
        .iter()
        .map(|g| (g + r.random_range(-24i32..=24) as f64 * 0.25).max(0.0))
        .collect();
    let gt = Tensor::new(&shape, gt_data).unwrap();
    let pred = Tensor::new(&shape, pred_data).unwrap();
    let mut valid = labels(&shape, 0.8, r);
    valid.data_mut()[0] = 1.0;
    (pred, gt, valid)
}

fn epe_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (p, g, v) = disparity_triplet(&mut r);
    scalar_diff(epe(&p, &g, &v).unwrap(), epe_naive(&p, &g, &v))
}

fn threshold_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (p, g, v) = disparity_triplet(&mut r);
    let mut worst: f64 = 0.0;
    for (t_px, pct, combine) in [
        (3.0, Some(0.05), Combine::And),
        (3.0, Some(0.05), Combine::Or),
        (3.0, None, Combine::And),
        (2.0, None, Combine::Or),
        (5.0, Some(0.1), Combine::Or),
    ] {
        let pct_got = threshold_error(&p, &g, &v, t_px, pct, combine).unwrap();
        let (count, n) = outliers_naive(&p, &g, &v, t_px, pct, combine == Combine::And);
        // compare counts, the quantity that must be exact
        let got_count = (pct_got * n as f64 / 100.0).round();
        worst = worst.max((got_count - count as f64).abs());
        worst = worst.max((pct_got - 100.0 * count as f64 / n as f64).abs());
    }
    worst
}

/// The pooled report over several maps equals counts over their union.
fn metrics_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let maps: Vec<_> = (0..extent(&mut r, 1, 4))
        .map(|_| disparity_triplet(&mut r))
        .collect();
    let mut acc = MetricsAccumulator::default();
    let (mut p_all, mut g_all, mut v_all) = (Vec::new(), Vec::new(), Vec::new());
    for (p, g, v) in &maps {
        acc.add(p, g, v).unwrap();
        p_all.extend_from_slice(p.data());
        g_all.extend_from_slice(g.data());
        v_all.extend_from_slice(v.data());
    }
    let m = acc.finish().unwrap();
    let n_all = p_all.len();
    let (p, g, v) = (
        Tensor::new(&[n_all], p_all).unwrap(),
        Tensor::new(&[n_all], g_all).unwrap(),
        Tensor::new(&[n_all], v_all).unwrap(),
    );
    let pct = |(c, n): (usize, usize)| 100.0 * c as f64 / n as f64;
    let checks = [
        (
            m.d1_and,
            pct(outliers_naive(&p, &g, &v, 3.0, Some(0.05), true)),
        ),
        (
            m.d1_all,
            pct(outliers_naive(&p, &g, &v, 3.0, Some(0.05), true)),
        ),
        (
            m.d1_or,
            pct(outliers_naive(&p, &g, &v, 3.0, Some(0.05), false)),
        ),
        (m.out_noc, pct(outliers_naive(&p, &g, &v, 3.0, None, true))),
        (m.bad2, pct(outliers_naive(&p, &g, &v, 2.0, None, true))),
        (m.bad4, pct(outliers_naive(&p, &g, &v, 4.0, None, true))),
        (m.bad5, pct(outliers_naive(&p, &g, &v, 5.0, None, true))),
    ];
    let mut worst = checks
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let n_valid = v.data().iter().filter(|&&x| x != 0.0).count();
    worst = worst.max((m.n_valid as f64 - n_valid as f64).abs());
    // EPE is a float sum; any rounding difference counts against exactness
    // only beyond the float tolerance
    if (m.epe - epe_naive(&p, &g, &v)).abs() > TOL {
        worst = worst.max(1.0);
    }
    worst
}
