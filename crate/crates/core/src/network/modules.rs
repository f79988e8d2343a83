//! The building blocks of the network. Every function takes the forward
//! context and a parameter-name prefix.

use super::params::{Ctx, Fill};
use crate::error::{Error, Result};
use crate::stereo::{granular_conv, shared_concat, soft_argmin, GranularConvVars};
use crate::tensor::{ConvSpec, Var};

/// Convolution (2D or 3D from `spec`'s rank) with optional bias.
pub fn conv(
    ctx: &mut Ctx,
    name: &str,
    x: Var,
    c_out: usize,
    k: usize,
    spec: &ConvSpec,
    bias: bool,
) -> Result<Var> {
    let c_in = ctx.tape.shape(x)[1];
    let mut shape = vec![c_out, c_in / spec.groups];
    shape.extend(std::iter::repeat_n(k, spec.rank()));
    let (w, b) = ctx.conv_weights(name, &shape, bias)?;
    if spec.rank() == 2 {
        ctx.tape.conv2d(x, w, b, spec)
    } else {
        ctx.tape.conv3d(x, w, b, spec)
    }
}

/// Convolution followed by normalisation (or a bias when normalisation is
/// disabled), without activation.
pub fn conv_norm(
    ctx: &mut Ctx,
    name: &str,
    x: Var,
    c_out: usize,
    k: usize,
    spec: &ConvSpec,
) -> Result<Var> {
    let norm = ctx.cfg.norm_enabled;
    let y = conv(ctx, name, x, c_out, k, spec, !norm)?;
    if norm {
        ctx.batch_norm(&format!("{name}.bn"), y)
    } else {
        Ok(y)
    }
}

pub fn conv_norm_relu(
    ctx: &mut Ctx,
    name: &str,
    x: Var,
    c_out: usize,
    k: usize,
    spec: &ConvSpec,
) -> Result<Var> {
    let y = conv_norm(ctx, name, x, c_out, k, spec)?;
    Ok(ctx.tape.relu(y))
}

fn same(rank: usize, k: usize, dilation: usize, stride: usize) -> ConvSpec {
    ConvSpec::same(rank, k, dilation).with_stride(stride)
}

/// ResNet basic block with a projected shortcut when the shape changes.
fn basic_block(
    ctx: &mut Ctx,
    name: &str,
    x: Var,
    c_out: usize,
    stride: usize,
    dilation: usize,
) -> Result<Var> {
    let c_in = ctx.tape.shape(x)[1];
    let y = conv_norm_relu(
        ctx,
        &format!("{name}.conv1"),
        x,
        c_out,
        3,
        &same(2, 3, dilation, stride),
    )?;
    let y = conv_norm(
        ctx,
        &format!("{name}.conv2"),
        y,
        c_out,
        3,
        &same(2, 3, dilation, 1),
    )?;
    let shortcut = if stride != 1 || c_in != c_out {
        conv_norm(
            ctx,
            &format!("{name}.down"),
            x,
            c_out,
            1,
            &same(2, 1, 1, stride),
        )?
    } else {
        x
    };
    let s = ctx.tape.add(y, shortcut)?;
    Ok(ctx.tape.relu(s))
}

/// Taps of the shared extractor.
#[derive(Clone, Copy, Debug)]
pub struct Features {
    /// Full resolution, `C` channels.
    pub first: Var,
    /// Half resolution, `C` channels.
    pub l1: Var,
    /// Quarter resolution, `2C` channels.
    pub l2: Var,
    /// Quarter resolution, `4C` channels.
    pub l4: Var,
}

/// Shared feature extractor on a `[B, 3, H, W]` image.
pub fn feature_extract(ctx: &mut Ctx, image: Var) -> Result<Features> {
    let s = ctx.tape.shape(image).to_vec();
    let ds = ctx.cfg.downsample;
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::shape(
            "feature_extract",
            format!("expected [B, 3, H, W], got {s:?}"),
        ));
    }
    if !s[2].is_multiple_of(ds) || !s[3].is_multiple_of(ds) {
        return Err(Error::shape(
            "feature_extract",
            format!("image extents {}x{} are not divisible by {ds}", s[3], s[2]),
        ));
    }
    let c = ctx.cfg.base_channels;
    let mut x = image;
    for i in 0..3 {
        x = conv_norm_relu(
            ctx,
            &format!("shared.first_conv.{i}"),
            x,
            c,
            3,
            &same(2, 3, 1, 1),
        )?;
    }
    let first = x;
    let l1 = basic_block(ctx, "shared.l1", first, c, 2, 1)?;
    let l2 = basic_block(ctx, "shared.l2", l1, 2 * c, 2, 1)?;
    let l3 = basic_block(ctx, "shared.l3", l2, 4 * c, 1, 1)?;
    let l4 = basic_block(ctx, "shared.l4", l3, 4 * c, 1, 2)?;
    Ok(Features { first, l1, l2, l4 })
}

/// Edge features at quarter resolution: side outputs F1..F3 of the three
/// shallow taps and the `K`-channel top feature F5, interleaved into `4K`
/// channels.
pub fn edge_features(ctx: &mut Ctx, f: &Features) -> Result<Var> {
    let k = ctx.cfg.top_channels;
    if k == 0 {
        return Err(Error::InvalidArgument(
            "top edge channels K must be at least 1".into(),
        ));
    }
    let c = ctx.cfg.base_channels;
    let point = ConvSpec::new(2);
    let a1 = conv(ctx, "edge.a1", f.first, 1, 1, &point, true)?;
    let f1 = ctx.tape.pool_avg2d(a1, 4, 4)?;
    let a2 = conv(ctx, "edge.a2", f.l1, 1, 1, &point, true)?;
    let f2 = ctx.tape.pool_avg2d(a2, 2, 2)?;
    let f3 = conv(ctx, "edge.a3", f.l2, 1, 1, &point, true)?;
    let l5 = conv_norm_relu(ctx, "edge.l5.conv", f.l4, 2 * c, 3, &same(2, 3, 2, 1))?;
    let f5 = conv(ctx, "edge.l5.top", l5, k, 1, &point, true)?;
    shared_concat(ctx.tape, f5, &[f1, f2, f3])
}

/// Classifier head: a grouped 1x1 convolution gives one logit per top
/// channel, and the edge probability is the largest of the `K` sigmoids,
/// resampled to `out_hw`. Returns `[B, H, W]`.
pub fn edge_head(ctx: &mut Ctx, edge_feats: Var, out_hw: [usize; 2]) -> Result<Var> {
    let k = ctx.cfg.top_channels;
    let logits = conv(
        ctx,
        "edge.head",
        edge_feats,
        k,
        1,
        &ConvSpec::new(2).with_groups(k),
        true,
    )?;
    edge_prob_from_logits(ctx, logits, out_hw)
}

pub fn edge_prob_from_logits(ctx: &mut Ctx, logits: Var, out_hw: [usize; 2]) -> Result<Var> {
    let s = ctx.tape.shape(logits).to_vec();
    let p = ctx.tape.sigmoid(logits);
    let m = ctx.tape.max_axis(p, 1)?;
    let m = ctx.tape.reshape(m, &[s[0], 1, s[2], s[3]])?;
    let up = ctx.tape.upsample_bilinear(m, out_hw)?;
    ctx.tape.reshape(up, &[s[0], out_hw[0], out_hw[1]])
}

/// Pooling divisors of the pyramid: windows span the whole map, then
/// halves, quarters and eighths of its shorter side.
pub const SPP_DIVISORS: [usize; 4] = [1, 2, 4, 8];

/// Spatial pyramid pooling over `concat(L4, edge_feats)`, fused with the L2
/// skip and reduced to `C` channels.
pub fn dedge_spp(ctx: &mut Ctx, l2: Var, l4: Var, edge_feats: Option<Var>) -> Result<Var> {
    let s4 = ctx.tape.shape(l4).to_vec();
    let mut check = vec![l2];
    check.extend(edge_feats);
    for v in check {
        let s = ctx.tape.shape(v);
        if s[0] != s4[0] || s[2..] != s4[2..] {
            return Err(Error::shape(
                "dedge_spp",
                format!("tap {s:?} misaligned with L4 {s4:?}"),
            ));
        }
    }
    let c = ctx.cfg.base_channels;
    let (h, w) = (s4[2], s4[3]);
    let mut pyramid_in = vec![l4];
    pyramid_in.extend(edge_feats);
    let x = ctx.tape.concat(&pyramid_in, 1)?;
    let mut fused = vec![l2, l4];
    fused.extend(edge_feats);
    for (i, n) in SPP_DIVISORS.into_iter().enumerate() {
        let win = (h.min(w) / n).max(1);
        let p = ctx.tape.pool_avg2d(x, win, win)?;
        let b = conv(
            ctx,
            &format!("disp.spp.branch{i}"),
            p,
            c,
            1,
            &ConvSpec::new(2),
            true,
        )?;
        let b = ctx.tape.relu(b);
        fused.push(ctx.tape.upsample_bilinear(b, [h, w])?);
    }
    let cat = ctx.tape.concat(&fused, 1)?;
    let f = conv_norm_relu(ctx, "disp.spp.fuse", cat, 4 * c, 3, &same(2, 3, 1, 1))?;
    conv(ctx, "disp.spp.last", f, c, 1, &ConvSpec::new(2), false)
}

/// Two 3x3x3 convolutions from the cost volume to `C` channels with a
/// residual connection around the second.
pub fn pre_aggregate(ctx: &mut Ctx, volume: Var) -> Result<Var> {
    let c = ctx.cfg.base_channels;
    let a = conv_norm_relu(ctx, "disp.pre.0", volume, c, 3, &same(3, 3, 1, 1))?;
    let b = conv_norm(ctx, "disp.pre.1", a, c, 3, &same(3, 3, 1, 1))?;
    ctx.tape.add(a, b)
}

fn transposed(ctx: &mut Ctx, name: &str, x: Var, c_out: usize, out: [usize; 3]) -> Result<Var> {
    let c_in = ctx.tape.shape(x)[1];
    let (w, _) = ctx.conv_weights(name, &[c_in, c_out, 3, 3, 3], false)?;
    let y = ctx
        .tape
        .conv3d_transposed(x, w, &same(3, 3, 1, 2), Some(out))?;
    if ctx.cfg.norm_enabled {
        ctx.batch_norm(&format!("{name}.bn"), y)
    } else {
        let b = ctx.param(&format!("{name}.bias"), &[c_out], Fill::Const(0.0))?;
        ctx.tape.add_channel_bias(y, b)
    }
}

/// One aggregation module. Returns the refined volume (same shape as the
/// input) and the decoder state passed on to the next module.
pub fn agm_module(ctx: &mut Ctx, name: &str, x: Var, prev_skip: Option<Var>) -> Result<(Var, Var)> {
    let xs = ctx.tape.shape(x).to_vec();
    if xs.len() != 5 {
        return Err(Error::shape(
            "agm_module",
            format!("expected [B, C, D, H, W], got {xs:?}"),
        ));
    }
    let (c, g) = (xs[1], ctx.cfg.groups);
    let wide = 2 * c;
    if wide % g != 0 {
        return Err(Error::InvalidArgument(format!(
            "{wide} channels are not divisible into {g} groups"
        )));
    }
    let e1 = conv_norm_relu(ctx, &format!("{name}.enc1"), x, wide, 3, &same(3, 3, 1, 2))?;
    let e2 = conv_norm_relu(ctx, &format!("{name}.enc2"), e1, wide, 3, &same(3, 3, 1, 2))?;

    let rates = ctx.cfg.dilation_rates.clone();
    let width = wide / g;
    let mut arms = Vec::with_capacity(rates.len());
    for (j, &rate) in rates.iter().enumerate() {
        let bank = format!("{name}.bank{j}");
        let group_kernels = (1..g)
            .map(|gi| {
                let shape = [width, width, 3, 3, 3];
                ctx.conv_weights(&format!("{bank}.g{gi}"), &shape, false)
                    .map(|(w, _)| w)
            })
            .collect::<Result<Vec<_>>>()?;
        let (pointwise, _) =
            ctx.conv_weights(&format!("{bank}.pw"), &[wide, wide, 1, 1, 1], false)?;
        let vars = GranularConvVars {
            groups: g,
            dilation: rate,
            group_kernels,
            pointwise,
            pointwise_bias: None,
        };
        arms.push(granular_conv(ctx.tape, e2, &vars)?);
    }
    let merged = ctx.tape.add_n(&arms)?;
    let m = conv_norm_relu(
        ctx,
        &format!("{name}.fuse"),
        merged,
        wide,
        1,
        &ConvSpec::new(3),
    )?;

    let e1s = ctx.tape.shape(e1).to_vec();
    let d1 = transposed(
        ctx,
        &format!("{name}.dec1"),
        m,
        wide,
        [e1s[2], e1s[3], e1s[4]],
    )?;
    let mut d1 = ctx.tape.add(d1, e1)?;
    if let Some(s) = prev_skip {
        d1 = ctx.tape.add(d1, s)?;
    }
    let d1 = ctx.tape.relu(d1);
    let d2 = transposed(ctx, &format!("{name}.dec2"), d1, c, [xs[2], xs[3], xs[4]])?;
    let out = ctx.tape.add(d2, x)?;
    Ok((out, d1))
}

/// Regresses a full-resolution `[B, H, W]` disparity map from a volume.
pub fn output_module(ctx: &mut Ctx, name: &str, volume: Var, out_hw: [usize; 2]) -> Result<Var> {
    let vs = ctx.tape.shape(volume).to_vec();
    let dmax = ctx.cfg.max_disparity;
    if vs.len() != 5 || !dmax.is_multiple_of(vs[2]) || !out_hw[0].is_multiple_of(vs[3]) || !out_hw[1].is_multiple_of(vs[4]) {
        return Err(Error::shape(
            "output_module",
            format!(
                "output [{dmax}, {}, {}] is not a multiple of volume {vs:?}",
                out_hw[0], out_hw[1]
            ),
        ));
    }
    let c = ctx.cfg.base_channels;
    let o = conv_norm_relu(ctx, &format!("{name}.0"), volume, c, 3, &same(3, 3, 1, 1))?;
    let o = conv(ctx, &format!("{name}.1"), o, 1, 3, &same(3, 3, 1, 1), true)?;
    let up = ctx
        .tape
        .upsample_trilinear(o, [dmax, out_hw[0], out_hw[1]])?;
    soft_argmin(ctx.tape, up, dmax)
}
