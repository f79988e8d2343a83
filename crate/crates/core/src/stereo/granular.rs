//! Granular convolution: a channel-split, hierarchically residual
//! convolution followed by a pointwise fusion.
//!
//! The input channels are split into `G` equal groups `v_1..v_G`. Group 1
//! passes through unchanged; group `g > 1` is convolved together with the
//! previous group's result:
//!
//! ```text
//! y_1 = v_1
//! y_g = conv(w_{g-1}, v_g + y_{g-1})     g = 2..G
//! out = conv1x1(w_pw, concat(y_1, ..., y_G))
//! ```
//!
//! so only `G - 1` group kernels exist and the parameter count is
//! `(C/G)^2 s^r (G - 1) + C_out C`.

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tape, Tensor, Var};
use rand::Rng;

/// Weights of one granular convolution.
#[derive(Clone, Debug)]
pub struct GranularConvParams {
    pub groups: usize,
    pub dilation: usize,
    /// `G - 1` kernels of shape `[C/G, C/G, s, s(, s)]`.
    pub group_kernels: Vec<Tensor>,
    /// `[C_out, C, 1, 1(, 1)]`.
    pub pointwise: Tensor,
    pub pointwise_bias: Option<Tensor>,
}

impl GranularConvParams {
    /// Kaiming-scaled random weights.
    pub fn random<R: Rng + ?Sized>(
        channels: usize,
        out_channels: usize,
        kernel: usize,
        rank: usize,
        groups: usize,
        dilation: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        check_groups(channels, groups)?;
        let width = channels / groups;
        let mut kshape = vec![width, width];
        kshape.extend(std::iter::repeat_n(kernel, rank));
        let fan_in = (width * kernel.pow(rank as u32)) as f64;
        let group_kernels = (1..groups)
            .map(|_| Tensor::randn(&kshape, (2.0 / fan_in).sqrt(), rng))
            .collect();
        let mut pshape = vec![out_channels, channels];
        pshape.extend(std::iter::repeat_n(1, rank));
        Ok(GranularConvParams {
            groups,
            dilation,
            group_kernels,
            pointwise: Tensor::randn(&pshape, (2.0 / channels as f64).sqrt(), rng),
            pointwise_bias: with_bias.then(|| Tensor::zeros(&[out_channels])),
        })
    }

    /// Number of weight elements (bias excluded).
    pub fn weight_count(&self) -> usize {
        self.group_kernels.iter().map(Tensor::numel).sum::<usize>() + self.pointwise.numel()
    }

    /// Registers every tensor as a trainable leaf.
    pub fn to_vars(&self, tape: &mut Tape) -> GranularConvVars {
        GranularConvVars {
            groups: self.groups,
            dilation: self.dilation,
            group_kernels: self
                .group_kernels
                .iter()
                .map(|k| tape.param(k.clone()))
                .collect(),
            pointwise: tape.param(self.pointwise.clone()),
            pointwise_bias: self.pointwise_bias.as_ref().map(|b| tape.param(b.clone())),
        }
    }
}

/// [`GranularConvParams`] as tape variables.
#[derive(Clone, Debug)]
pub struct GranularConvVars {
    pub groups: usize,
    pub dilation: usize,
    pub group_kernels: Vec<Var>,
    pub pointwise: Var,
    pub pointwise_bias: Option<Var>,
}

fn check_groups(channels: usize, groups: usize) -> Result<()> {
    if groups < 2 {
        return Err(Error::InvalidArgument(format!(
            "granular convolution needs at least 2 groups, got {groups}"
        )));
    }
    if !channels.is_multiple_of(groups) {
        return Err(Error::InvalidArgument(format!(
            "{channels} channels are not divisible into {groups} groups"
        )));
    }
    Ok(())
}

/// Applies a granular convolution to a `[B, C, H, W]` or `[B, C, D, H, W]`
/// input. Group convolutions are same-padded at the configured dilation.
pub fn granular_conv(tape: &mut Tape, x: Var, p: &GranularConvVars) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let rank = xs.len().saturating_sub(2);
    if !(rank == 2 || rank == 3) {
        return Err(Error::shape(
            "granular_conv",
            format!("spatial rank must be 2 or 3, input {xs:?}"),
        ));
    }
    let channels = xs[1];
    check_groups(channels, p.groups)?;
    if p.group_kernels.len() != p.groups - 1 {
        return Err(Error::InvalidArgument(format!(
            "granular_conv: {} group kernels for {} groups (need {})",
            p.group_kernels.len(),
            p.groups,
            p.groups - 1
        )));
    }
    let width = channels / p.groups;
    for (g, &k) in p.group_kernels.iter().enumerate() {
        let ks = tape.shape(k);
        if ks.len() != rank + 2 || ks[0] != width || ks[1] != width {
            return Err(Error::shape(
                "granular_conv",
                format!(
                    "group kernel {} has shape {ks:?}, expected [{width}, {width}, ..]",
                    g + 1
                ),
            ));
        }
    }
    let kernel = tape.shape(p.group_kernels[0])[2];
    let spec = ConvSpec::same(rank, kernel, p.dilation);

    let mut ys = Vec::with_capacity(p.groups);
    ys.push(tape.slice(x, 1, 0, width)?);
    for g in 1..p.groups {
        let v = tape.slice(x, 1, g * width, width)?;
        let prev = ys[g - 1];
        let summed = tape.add(v, prev)?;
        let y = if rank == 2 {
            tape.conv2d(summed, p.group_kernels[g - 1], None, &spec)?
        } else {
            tape.conv3d(summed, p.group_kernels[g - 1], None, &spec)?
        };
        ys.push(y);
    }
    let cat = tape.concat(&ys, 1)?;
    let pw = ConvSpec::new(rank);
    if rank == 2 {
        tape.conv2d(cat, p.pointwise, p.pointwise_bias, &pw)
    } else {
        tape.conv3d(cat, p.pointwise, p.pointwise_bias, &pw)
    }
}

/// Weight count of a channel-preserving granular convolution with `C`
/// channels, kernel side `s`, `G` groups and spatial rank `rank`:
/// `(C/G)^2 s^rank (G - 1) + C^2`.
pub fn granular_param_count(
    c_in: usize,
    c_out: usize,
    kernel: usize,
    groups: usize,
    rank: u32,
) -> Result<usize> {
    if c_in != c_out {
        return Err(Error::InvalidArgument(format!(
            "granular parameter count assumes equal channels, got {c_in} -> {c_out}"
        )));
    }
    check_groups(c_in, groups)?;
    let width = c_in / groups;
    Ok(width * width * kernel.pow(rank) * (groups - 1) + c_out * c_in)
}

/// `C_in C_out s^rank`.
pub fn standard_param_count(c_in: usize, c_out: usize, kernel: usize, rank: u32) -> usize {
    c_in * c_out * kernel.pow(rank)
}
