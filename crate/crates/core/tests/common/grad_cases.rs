//! Finite-difference checks for every differentiable operation, one entry
//! per operation, each run over several seeds.

use super::{avoid, grad_check, randn, rng, uniform, GradReport, FD_STEP};
use dedge_agm::loss::{dedge_disp_smoothness, disp_loss, edge_loss, total_loss};
use dedge_agm::network::modules::{agm_module, output_module};
use dedge_agm::network::{init_params, Ctx, Mode, ModelParams, NetworkConfig};
use dedge_agm::stereo::{
    build_cost_volume, concat_volume, distance_volume, granular_conv, shared_concat, soft_argmin,
    GranularConvVars,
};
use dedge_agm::tensor::{ConvSpec, NormMode};
use dedge_agm::train::{Batch, LossGraph, TrainConfig};
use dedge_agm::{Tape, Tensor, Var};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const SEEDS: u64 = 10;
pub const OP_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

pub struct GradCase {
    pub name: &'static str,
    pub tol: f64,
    pub run: fn(u64) -> GradReport,
}

/// Runs a case over `SEEDS` seeds and merges the reports.
pub fn run_case(case: &GradCase) -> GradReport {
    (0..SEEDS)
        .map(|s| (case.run)(s))
        .fold(GradReport::default(), GradReport::merge)
}

pub fn case(name: &str) -> &'static GradCase {
    CASES
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("no gradient case {name}"))
}

const fn op(name: &'static str, run: fn(u64) -> GradReport) -> GradCase {
    GradCase {
        name,
        tol: OP_TOL,
        run,
    }
}

pub static CASES: &[GradCase] = &[
    op("conv2d", conv2d),
    op("conv2d_strided_grouped", conv2d_strided_grouped),
    op("conv3d", conv3d),
    op("conv3d_transposed", conv3d_transposed),
    op("granular_conv_2d", granular_2d),
    op("granular_conv_3d", granular_3d),
    op("softmax", softmax),
    op("soft_argmin", soft_argmin_case),
    op("upsample_bilinear", bilinear),
    op("upsample_trilinear", trilinear),
    op("pool_avg2d", pool),
    op("batch_norm_train", batch_norm_train),
    op("batch_norm_eval", batch_norm_eval),
    op("pointwise_smooth", pointwise_smooth),
    op("pointwise_piecewise", pointwise_piecewise),
    op("reductions", reductions),
    op("shape_ops", shape_ops),
    op("cost_volume", cost_volume),
    op("shared_concat", shared_concat_case),
    op("edge_loss", edge_loss_case),
    op("dedge_disp_smoothness", smoothness_case),
    op("disp_loss", disp_loss_case),
    op("total_loss", total_loss_case),
    op("agm_module_input", agm_input),
    op("agm_module_params", agm_params_case),
    op("output_module", output_module_case),
    GradCase {
        name: "end_to_end",
        tol: END_TO_END_TOL,
        run: end_to_end,
    },
];

fn conv2d(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[2, 2, 5, 5], &mut r);
    let w = randn(&[3, 2, 3, 3], &mut r);
    let b = randn(&[3], &mut r);
    let dil = 1 + (seed % 2) as usize;
    grad_check(&[x, w, b], seed, 64, move |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), &ConvSpec::same(2, 3, dil))
    })
}

fn conv2d_strided_grouped(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[1, 4, 6, 7], &mut r);
    let w = randn(&[4, 2, 3, 3], &mut r);
    grad_check(&[x, w], seed, 64, |t, v| {
        t.conv2d(
            v[0],
            v[1],
            None,
            &ConvSpec::same(2, 3, 1).with_stride(2).with_groups(2),
        )
    })
}

fn conv3d(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[1, 2, 3, 4, 4], &mut r);
    let w = randn(&[2, 2, 3, 3, 3], &mut r);
    let b = randn(&[2], &mut r);
    let stride = 1 + (seed % 2) as usize;
    grad_check(&[x, w, b], seed, 64, move |t, v| {
        t.conv3d(
            v[0],
            v[1],
            Some(v[2]),
            &ConvSpec::same(3, 3, 1).with_stride(stride),
        )
    })
}

fn conv3d_transposed(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[1, 2, 2, 2, 3], &mut r);
    let w = randn(&[2, 3, 3, 3, 3], &mut r);
    grad_check(&[x, w], seed, 64, |t, v| {
        t.conv3d_transposed(
            v[0],
            v[1],
            &ConvSpec::same(3, 3, 1).with_stride(2),
            Some([4, 4, 6]),
        )
    })
}

fn granular_vars(v: &[Var], groups: usize, dilation: usize) -> GranularConvVars {
    GranularConvVars {
        groups,
        dilation,
        group_kernels: v[1..groups].to_vec(),
        pointwise: v[groups],
        pointwise_bias: v.get(groups + 1).copied(),
    }
}

fn granular_2d(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[1, 4, 5, 5], &mut r);
    let k = randn(&[2, 2, 3, 3], &mut r);
    let pw = randn(&[4, 4, 1, 1], &mut r);
    let b = randn(&[4], &mut r);
    grad_check(&[x, k, pw, b], seed, 64, |t, v| {
        let p = granular_vars(v, 2, 1);
        granular_conv(t, v[0], &p)
    })
}

fn granular_3d(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[1, 8, 2, 3, 3], &mut r);
    let ks: Vec<Tensor> = (0..3).map(|_| randn(&[2, 2, 3, 3, 3], &mut r)).collect();
    let pw = randn(&[8, 8, 1, 1, 1], &mut r);
    let mut inputs = vec![x];
    inputs.extend(ks);
    inputs.push(pw);
    let dil = [1, 2][(seed % 2) as usize];
    grad_check(&inputs, seed, 48, move |t, v| {
        let p = granular_vars(v, 4, dil);
        granular_conv(t, v[0], &p)
    })
}

fn softmax(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[2, 5, 3], &mut r);
    let axis = (seed % 3) as usize;
    grad_check(&[x], seed, 64, move |t, v| t.softmax(v[0], axis))
}

fn soft_argmin_case(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let c = randn(&[1, 1, 6, 3, 3], &mut r);
    grad_check(&[c], seed, 64, |t, v| soft_argmin(t, v[0], 6))
}

fn bilinear(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[1, 2, 3, 4], &mut r);
    grad_check(&[x], seed, 64, |t, v| t.upsample_bilinear(v[0], [7, 8]))
}

fn trilinear(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[1, 1, 2, 3, 4], &mut r);
    grad_check(&[x], seed, 64, |t, v| t.upsample_trilinear(v[0], [8, 6, 8]))
}

fn pool(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[1, 2, 6, 6], &mut r);
    let (win, stride) = [(2, 2), (3, 3), (3, 1)][(seed % 3) as usize];
    grad_check(&[x], seed, 72, move |t, v| t.pool_avg2d(v[0], win, stride))
}

fn batch_norm_train(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[2, 3, 2, 3], &mut r);
    let g = uniform(&[3], 0.5, 1.5, &mut r);
    let b = randn(&[3], &mut r);
    grad_check(&[x, g, b], seed, 64, |t, v| {
        Ok(t.batch_norm(v[0], v[1], v[2], NormMode::Train)?.0)
    })
}

fn batch_norm_eval(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[2, 3, 4], &mut r);
    let g = uniform(&[3], 0.5, 1.5, &mut r);
    let b = randn(&[3], &mut r);
    let mean = [0.1, -0.2, 0.3];
    let var = [0.5, 1.5, 2.0];
    grad_check(&[x, g, b], seed, 64, move |t, v| {
        Ok(t.batch_norm(
            v[0],
            v[1],
            v[2],
            NormMode::Eval {
                mean: &mean,
                var: &var,
            },
        )?
        .0)
    })
}

fn pointwise_smooth(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let a = randn(&[3, 4], &mut r);
    let b = randn(&[3, 4], &mut r);
    let p = uniform(&[3, 4], 0.2, 2.0, &mut r);
    let bias = randn(&[4], &mut r);
    let x4 = randn(&[2, 4, 3], &mut r);
    grad_check(&[a, b, p, bias, x4], seed, 64, |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let m = t.mul(d, v[1])?;
        let sg = t.sigmoid(m);
        let e = t.exp(v[0]);
        let l = t.log(v[2]);
        let n = t.neg(l);
        let sc = t.scale(n, 0.7);
        let sh = t.add_scalar(sc, 2.0);
        let all = t.add_n(&[sg, e, sh])?;
        let cb = t.add_channel_bias(v[4], v[3])?;
        let flat = t.reshape(cb, &[6, 4])?;
        let top = t.slice(flat, 0, 0, 3)?;
        t.mul(all, top)
    })
}

fn pointwise_piecewise(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let margin = 1e-3;
    let x = avoid(
        &uniform(&[4, 5], -2.0, 2.0, &mut r),
        &[-1.0, -0.5, 0.0, 0.5, 1.0],
        margin,
    );
    grad_check(&[x], seed, 64, |t, v| {
        let a = t.relu(v[0]);
        let b = t.abs(v[0]);
        let c = t.clamp(v[0], -0.5, 0.5);
        let d = t.smooth_l1(v[0]);
        let ab = t.mul(a, b)?;
        t.add_n(&[ab, c, d])
    })
}

fn reductions(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = randn(&[2, 4, 3], &mut r);
    let axis = (seed % 3) as usize;
    grad_check(&[x], seed, 64, move |t, v| {
        let m = t.max_axis(v[0], axis)?;
        let s = t.sum(v[0]);
        let mu = t.mean(v[0]);
        let sq = t.mul(s, mu)?;
        let ms = t.sum(m);
        let prod = t.mul(ms, sq)?;
        t.reshape(prod, &[1])
    })
}

fn shape_ops(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let a = randn(&[1, 2, 3, 3], &mut r);
    let b = randn(&[1, 3, 3, 3], &mut r);
    grad_check(&[a, b], seed, 64, |t, v| {
        let c = t.concat(&[v[0], v[1], v[0]], 1)?;
        let s = t.slice(c, 2, 1, 2)?;
        let p = t.pad_zero(s, &[(0, 0), (1, 0), (0, 1), (2, 1)])?;
        t.reshape(p, &[8, 3, 6])
    })
}

fn cost_volume(seed: u64) -> GradReport {
    let mut r = rng(seed);
    // |l - r| >= 1 and |l| >= 2 everywhere, away from the kink of |.|
    let l = uniform(&[1, 2, 3, 5], 2.0, 3.0, &mut r);
    let rt = uniform(&[1, 2, 3, 5], -1.0, 1.0, &mut r);
    let levels = 3 + (seed % 3) as usize;
    let a = grad_check(&[l.clone(), rt.clone()], seed, 64, move |t, v| {
        Ok(build_cost_volume(t, v[0], v[1], levels, 4)?.values)
    });
    let b = grad_check(&[l, rt], seed, 64, move |t, v| {
        let c = concat_volume(t, v[0], v[1], levels)?;
        let d = distance_volume(t, v[0], v[1], levels)?;
        let c2 = t.slice(c, 1, 0, 2)?;
        t.mul(c2, d)
    });
    a.merge(b)
}

fn shared_concat_case(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let top = randn(&[1, 3, 2, 3], &mut r);
    let sides: Vec<Tensor> = (0..3).map(|_| randn(&[1, 1, 2, 3], &mut r)).collect();
    let mut inputs = vec![top];
    inputs.extend(sides);
    grad_check(&inputs, seed, 64, |t, v| {
        shared_concat(t, v[0], &[v[1], v[2], v[3]])
    })
}

fn edge_labels(shape: &[usize], r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| f64::from(u8::from(r.random_bool(0.3))))
}

fn edge_loss_case(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let p = uniform(&[2, 3, 4], 0.05, 0.95, &mut r);
    let y = edge_labels(&[2, 3, 4], &mut r);
    grad_check(&[p], seed, 64, move |t, v| edge_loss(t, v[0], &y))
}

fn smoothness_case(seed: u64) -> GradReport {
    let mut r = rng(seed);
    // steps of at least 0.01 between neighbours keep |dx|, |dy| differentiable
    let d = Tensor::from_fn(&[2, 4, 5], |i| {
        (i[1] * 5 + i[2]) as f64 * 0.37 + r.random_range(0.0..0.3)
    });
    let xi = edge_labels(&[2, 4, 5], &mut r);
    let gamma = 0.5;
    grad_check(&[d], seed, 64, move |t, v| {
        dedge_disp_smoothness(t, v[0], &xi, gamma)
    })
}

fn disp_loss_case(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let gt = uniform(&[2, 3, 4], 0.0, 8.0, &mut r);
    let preds: Vec<Tensor> = (0..3)
        .map(|_| {
            let e = avoid(&uniform(&[2, 3, 4], -3.0, 3.0, &mut r), &[-1.0, 1.0], 1e-3);
            gt.zip_map(&e, |g, e| g + e)
        })
        .collect();
    let valid = Tensor::from_fn(&[2, 3, 4], |_| f64::from(u8::from(r.random_bool(0.7))));
    let valid = if valid.sum() == 0.0 {
        Tensor::ones(&[2, 3, 4])
    } else {
        valid
    };
    grad_check(&preds, seed, 64, move |t, v| {
        disp_loss(t, v, &gt, &valid, &[0.5, 0.7, 1.0])
    })
}

fn total_loss_case(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let parts: Vec<Tensor> = (0..3)
        .map(|_| Tensor::scalar(r.random_range(0.0..2.0)))
        .collect();
    let a = [0.0, 0.5, 1.0][(seed % 3) as usize];
    grad_check(&parts, seed, 8, move |t, v| {
        total_loss(t, v[0], v[1], v[2], a)
    })
}

fn agm_config() -> NetworkConfig {
    NetworkConfig {
        base_channels: 4,
        max_disparity: 16,
        ..NetworkConfig::default()
    }
}

/// Parameters of one aggregation module (and an output module) created by
/// an initialising context on a dummy volume.
fn agm_module_params(cfg: &NetworkConfig, seed: u64) -> ModelParams {
    let mut tape = Tape::new();
    let empty = ModelParams::default();
    let x = tape.constant(Tensor::zeros(&AGM_SHAPE));
    let mut ctx = Ctx::initializing(&mut tape, cfg, &empty, seed);
    let (y, _) = agm_module(&mut ctx, "disp.agm0", x, None).unwrap();
    output_module(&mut ctx, "disp.out0", y, [32, 32]).unwrap();
    let mut p = ctx.into_created().unwrap();
    // non-trivial affine parameters
    let mut r = rng(seed ^ 7);
    for (name, t) in p.tensors.iter_mut() {
        if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias") {
            *t = uniform(t.shape(), 0.5, 1.5, &mut r);
        }
    }
    p
}

const AGM_SHAPE: [usize; 5] = [1, 4, 4, 8, 8];

fn agm_input(seed: u64) -> GradReport {
    let cfg = agm_config();
    let params = agm_module_params(&cfg, seed);
    let mut r = rng(seed);
    let x = randn(&AGM_SHAPE, &mut r);
    let skip = randn(&[1, 8, 2, 4, 4], &mut r);
    grad_check(&[x, skip], seed, 48, move |t, v| {
        let mut ctx = Ctx::new(t, &cfg, &params, Mode::Train);
        Ok(agm_module(&mut ctx, "disp.agm0", v[0], Some(v[1]))?.0)
    })
}

fn output_module_case(seed: u64) -> GradReport {
    let cfg = agm_config();
    let params = agm_module_params(&cfg, seed);
    let mut r = rng(seed);
    let x = randn(&AGM_SHAPE, &mut r);
    grad_check(&[x], seed, 48, move |t, v| {
        let mut ctx = Ctx::new(t, &cfg, &params, Mode::Train);
        output_module(&mut ctx, "disp.out0", v[0], [32, 32])
    })
}

/// Probes `n` random parameter entries of `params`: `build` returns the
/// tape, a scalar loss and the parameter leaves.
pub fn param_grad_check(
    params: &ModelParams,
    seed: u64,
    n: usize,
    prefix: &str,
    build: impl Fn(&ModelParams) -> (Tape, Var, std::collections::BTreeMap<String, Var>),
) -> GradReport {
    let (tape, loss, vars) = build(params);
    let grads = tape.backward(loss).unwrap();
    let value = |p: &ModelParams| {
        let (t, l, _) = build(p);
        t.value(l).item()
    };
    let names: Vec<&String> = params
        .tensors
        .keys()
        .filter(|k| k.starts_with(prefix))
        .collect();
    let mut r = rng(seed ^ 0xBEEF);
    let mut report = GradReport::default();
    let mut probe = params.clone();
    for _ in 0..n {
        let name = (*names.choose(&mut r).unwrap()).clone();
        let k = r.random_range(0..params.tensors[&name].numel());
        let analytic = grads.wrt(&tape, vars[&name]).data()[k];
        let orig = params.tensors[&name].data()[k];
        probe.tensors.get_mut(&name).unwrap().data_mut()[k] = orig + FD_STEP;
        let up = value(&probe);
        probe.tensors.get_mut(&name).unwrap().data_mut()[k] = orig - FD_STEP;
        let down = value(&probe);
        probe.tensors.get_mut(&name).unwrap().data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = analytic.abs().max(numeric.abs());
        let diff = (analytic - numeric).abs();
        if scale < 1e-3 {
            report.max_abs = report.max_abs.max(diff);
        } else {
            report.max_rel = report.max_rel.max(diff / scale);
        }
        report.checked += 1;
    }
    report
}

fn agm_params_case(seed: u64) -> GradReport {
    let cfg = agm_config();
    let params = agm_module_params(&cfg, seed);
    let mut r = rng(seed);
    let x = randn(&AGM_SHAPE, &mut r);
    let proj = uniform(&AGM_SHAPE, -1.0, 1.0, &mut r);
    param_grad_check(&params, seed, 16, "disp.agm0", |p| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let pv = tape.constant(proj.clone());
        let mut ctx = Ctx::new(&mut tape, &cfg, p, Mode::Train);
        let (y, _) = agm_module(&mut ctx, "disp.agm0", xv, None).unwrap();
        let (vars, _) = ctx.into_parts();
        let m = tape.mul(y, pv).unwrap();
        let l = tape.sum(m);
        (tape, l, vars)
    })
}

/// The small end-to-end configuration: 16x16 images, D_max 8, 4 channels.
pub fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        base_channels: 4,
        max_disparity: 8,
        ..NetworkConfig::default()
    }
}

/// A random batch of two 16x16 pairs with plausible targets.
pub fn random_batch(seed: u64) -> Batch {
    let mut r = rng(seed);
    let shape = [2, 16, 16];
    Batch {
        left: uniform(&[2, 3, 16, 16], 0.0, 1.0, &mut r),
        right: uniform(&[2, 3, 16, 16], 0.0, 1.0, &mut r),
        disparity: uniform(&shape, 0.0, 7.0, &mut r),
        valid: Tensor::from_fn(&shape, |_| f64::from(u8::from(r.random_bool(0.8)))),
        edges: edge_labels(&shape, &mut r),
    }
}

fn end_to_end(seed: u64) -> GradReport {
    let cfg = TrainConfig {
        network: tiny_config(),
        ..TrainConfig::default()
    };
    let params = init_params(&cfg.network, seed).unwrap();
    let batch = random_batch(seed);
    param_grad_check(&params, seed, 5, "", |p| {
        let g = LossGraph::build(&cfg, p, &batch).unwrap();
        let total = g.total;
        (g.tape, total, g.vars)
    })
}
