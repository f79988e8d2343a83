use super::config::NetworkConfig;
use super::modules::{
    agm_module, dedge_spp, edge_features, edge_head, feature_extract, output_module, pre_aggregate,
};
use super::params::{Ctx, Mode, ModelParams};
use crate::error::{Error, Result};
use crate::stereo::build_cost_volume;
use crate::tensor::{BatchStats, Tape, Tensor, Var};
use std::collections::BTreeMap;

/// Result of [`forward`].
pub struct ForwardOutput {
    /// One `[B, H, W]` map per aggregation module in train mode; only the
    /// last one in infer mode.
    pub disparities: Vec<Var>,
    /// `[B, H, W]` edge probability of the left image (train mode with the
    /// edge branch enabled).
    pub edge_prob: Option<Var>,
    /// Tape leaf of every parameter used.
    pub vars: BTreeMap<String, Var>,
    /// Batch statistics of every train-mode normalisation, in call order.
    pub batch_stats: Vec<(String, BatchStats)>,
}

/// Runs the network inside an existing context.
pub fn forward_ctx(ctx: &mut Ctx, left: Var, right: Var) -> Result<(Vec<Var>, Option<Var>)> {
    let ls = ctx.tape.shape(left).to_vec();
    if ls != ctx.tape.shape(right) {
        return Err(Error::shape(
            "forward",
            format!("left {ls:?} and right {:?} differ", ctx.tape.shape(right)),
        ));
    }
    ctx.cfg.validate()?;
    let out_hw = [ls[2], ls[3]];
    let cfg = ctx.cfg;
    let train = ctx.train();

    let fl = feature_extract(ctx, left)?;
    let fr = feature_extract(ctx, right)?;

    let want_edge_prob = train && cfg.use_edge_branch;
    let mut edge_prob = None;
    let (mut ef_l, mut ef_r) = (None, None);
    if cfg.use_dedge_spp || want_edge_prob {
        let e = edge_features(ctx, &fl)?;
        if want_edge_prob {
            edge_prob = Some(edge_head(ctx, e, out_hw)?);
        }
        if cfg.use_dedge_spp {
            ef_l = Some(e);
            ef_r = Some(edge_features(ctx, &fr)?);
        }
    }

    let gl = dedge_spp(ctx, fl.l2, fl.l4, ef_l)?;
    let gr = dedge_spp(ctx, fr.l2, fr.l4, ef_r)?;
    let volume = build_cost_volume(ctx.tape, gl, gr, cfg.levels(), cfg.downsample)?;
    let mut x = pre_aggregate(ctx, volume.values)?;

    let mut skip = None;
    let mut disparities = Vec::new();
    for i in 0..cfg.n_agm {
        let (out, s) = agm_module(ctx, &format!("disp.agm{i}"), x, skip)?;
        x = out;
        skip = Some(s);
        if train || i + 1 == cfg.n_agm {
            disparities.push(output_module(ctx, &format!("disp.out{i}"), x, out_hw)?);
        }
    }
    Ok((disparities, edge_prob))
}

/// Full forward pass on `[B, 3, H, W]` image batches.
pub fn forward(
    tape: &mut Tape,
    cfg: &NetworkConfig,
    params: &ModelParams,
    left: &Tensor,
    right: &Tensor,
    mode: Mode,
) -> Result<ForwardOutput> {
    let l = tape.constant(left.clone());
    let r = tape.constant(right.clone());
    let mut ctx = Ctx::new(tape, cfg, params, mode);
    let (disparities, edge_prob) = forward_ctx(&mut ctx, l, r)?;
    let (vars, batch_stats) = ctx.into_parts();
    Ok(ForwardOutput {
        disparities,
        edge_prob,
        vars,
        batch_stats,
    })
}

/// Seeded initialisation: the network is run once on a small dummy pair and
/// every parameter is created on first use.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let side = 4 * cfg.downsample;
    let dummy = Tensor::zeros(&[2, 3, side, side]);
    let mut tape = Tape::new();
    let l = tape.constant(dummy.clone());
    let r = tape.constant(dummy);
    let empty = ModelParams::default();
    let mut ctx = Ctx::initializing(&mut tape, cfg, &empty, seed);
    forward_ctx(&mut ctx, l, r)?;
    Ok(ctx.into_created().unwrap_or_default())
}

/// Infer-mode disparity `[B, H, W]` of an image batch.
pub fn predict(
    cfg: &NetworkConfig,
    params: &ModelParams,
    left: &Tensor,
    right: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, cfg, params, left, right, Mode::Infer)?;
    let d = *out
        .disparities
        .last()
        .expect("infer mode yields one disparity");
    Ok(tape.value(d).clone())
}
