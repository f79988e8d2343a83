use super::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::tensor::{BatchStats, NormMode, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Which task a parameter belongs to. The shared extractor feeds both the
/// disparity and the edge task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Shared,
    Edge,
    Disparity,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Shared, Partition::Edge, Partition::Disparity];

    pub fn prefix(self) -> &'static str {
        match self {
            Partition::Shared => "shared.",
            Partition::Edge => "edge.",
            Partition::Disparity => "disp.",
        }
    }

    pub fn of(name: &str) -> Option<Partition> {
        Partition::ALL
            .into_iter()
            .find(|p| name.starts_with(p.prefix()))
    }
}

/// Trainable tensors plus normalisation buffers (running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn names_in(&self, part: Partition) -> impl Iterator<Item = &str> {
        self.tensors
            .keys()
            .map(String::as_str)
            .filter(move |n| Partition::of(n) == Some(part))
    }

    /// Folds batch statistics into the running buffers:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running_stats(
        &mut self,
        stats: &[(String, BatchStats)],
        momentum: f64,
    ) -> Result<()> {
        for (name, s) in stats {
            for (suffix, values) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let key = format!("{name}.{suffix}");
                let buf = self.buffers.get_mut(&key).ok_or_else(|| {
                    Error::InvalidArgument(format!("unknown normalisation buffer {key}"))
                })?;
                for (r, &v) in buf.data_mut().iter_mut().zip(values) {
                    *r = (1.0 - momentum) * *r + momentum * v;
                }
            }
        }
        Ok(())
    }
}

/// How parameters are put on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Trainable leaves, batch statistics, all heads evaluated.
    Train,
    /// Constant leaves, running statistics, only the final disparity.
    Infer,
}

/// Forward-pass context. Every parameter name is registered on the tape
/// exactly once, so modules applied to both images share the same leaves.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub cfg: &'a NetworkConfig,
    pub mode: Mode,
    params: &'a ModelParams,
    vars: BTreeMap<String, Var>,
    stats: Vec<(String, BatchStats)>,
    // parameters created on first use while initialising
    init: Option<(ChaCha8Rng, ModelParams)>,
}

impl<'a> Ctx<'a> {
    pub fn new(
        tape: &'a mut Tape,
        cfg: &'a NetworkConfig,
        params: &'a ModelParams,
        mode: Mode,
    ) -> Self {
        Ctx {
            tape,
            cfg,
            mode,
            params,
            vars: BTreeMap::new(),
            stats: Vec::new(),
            init: None,
        }
    }

    /// A context that creates missing parameters with seeded Kaiming
    /// initialisation in first-use order.
    pub fn initializing(
        tape: &'a mut Tape,
        cfg: &'a NetworkConfig,
        empty: &'a ModelParams,
        seed: u64,
    ) -> Self {
        let mut ctx = Ctx::new(tape, cfg, empty, Mode::Train);
        ctx.init = Some((ChaCha8Rng::seed_from_u64(seed), ModelParams::default()));
        ctx
    }

    pub fn train(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Parameters created so far by an initialising context.
    pub fn into_created(self) -> Option<ModelParams> {
        self.init.map(|(_, p)| p)
    }

    pub fn into_parts(self) -> (BTreeMap<String, Var>, Vec<(String, BatchStats)>) {
        (self.vars, self.stats)
    }

    fn lookup(&mut self, name: &str, shape: &[usize], fill: Fill) -> Result<Tensor> {
        if let Some(t) = self
            .params
            .tensors
            .get(name)
            .or_else(|| self.params.buffers.get(name))
        {
            if t.shape() != shape {
                return Err(Error::shape(
                    "parameter",
                    format!(
                        "{name} has shape {:?}, the network expects {shape:?}",
                        t.shape()
                    ),
                ));
            }
            return Ok(t.clone());
        }
        let Some((rng, created)) = self.init.as_mut() else {
            return Err(Error::InvalidArgument(format!("missing parameter {name}")));
        };
        let t = match fill {
            Fill::Kaiming(fan_in) => Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng),
            Fill::Const(v) | Fill::BufferConst(v) => Tensor::full(shape, v),
        };
        let store = if fill.is_buffer() {
            &mut created.buffers
        } else {
            &mut created.tensors
        };
        store.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Registers (once) and returns the leaf for parameter `name`.
    pub fn param(&mut self, name: &str, shape: &[usize], fill: Fill) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            if self.tape.shape(v) != shape {
                return Err(Error::shape(
                    "parameter",
                    format!("{name} reused with shape {shape:?}"),
                ));
            }
            return Ok(v);
        }
        let t = self.lookup(name, shape, fill)?;
        let v = if self.train() {
            self.tape.param(t)
        } else {
            self.tape.constant(t)
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Convolution weight `[c_out, c_in, k, ..]` plus a bias when `bias`.
    pub fn conv_weights(
        &mut self,
        name: &str,
        shape: &[usize],
        bias: bool,
    ) -> Result<(Var, Option<Var>)> {
        let fan_in: usize = shape[1..].iter().product();
        let w = self.param(&format!("{name}.weight"), shape, Fill::Kaiming(fan_in))?;
        let b = if bias {
            Some(self.param(&format!("{name}.bias"), &[shape[0]], Fill::Const(0.0))?)
        } else {
            None
        };
        Ok((w, b))
    }

    /// Batch normalisation named `name` over axis 1 of `x`.
    pub fn batch_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let c = self.tape.shape(x)[1];
        let gamma = self.param(&format!("{name}.gamma"), &[c], Fill::Const(1.0))?;
        let beta = self.param(&format!("{name}.beta"), &[c], Fill::Const(0.0))?;
        let mean = self.lookup(
            &format!("{name}.running_mean"),
            &[c],
            Fill::Const(0.0).buffer(),
        )?;
        let var = self.lookup(
            &format!("{name}.running_var"),
            &[c],
            Fill::Const(1.0).buffer(),
        )?;
        if self.train() {
            let (y, stats) = self.tape.batch_norm(x, gamma, beta, NormMode::Train)?;
            if let Some(s) = stats {
                self.stats.push((name.to_string(), s));
            }
            Ok(y)
        } else {
            let mode = NormMode::Eval {
                mean: mean.data(),
                var: var.data(),
            };
            Ok(self.tape.batch_norm(x, gamma, beta, mode)?.0)
        }
    }
}

/// Initial value of a newly created tensor.
#[derive(Clone, Copy, Debug)]
pub enum Fill {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    Kaiming(usize),
    Const(f64),
    /// A constant normalisation buffer (not trainable).
    BufferConst(f64),
}

impl Fill {
    fn buffer(self) -> Fill {
        match self {
            Fill::Const(v) => Fill::BufferConst(v),
            other => other,
        }
    }

    fn is_buffer(self) -> bool {
        matches!(self, Fill::BufferConst(_))
    }
}
