use super::adam::{adam_step, clip_grad_norm, AdamState};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::eval::{evaluate, NetworkPredictor};
use crate::data::{depth_edge_gt, StereoSample};
use crate::error::{Error, Result};
use crate::loss::{dedge_disp_smoothness, disp_loss, edge_loss, Metrics};
use crate::network::{forward, init_params, Mode, ModelParams};
use crate::tensor::{BatchStats, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Stacked training targets of a minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub left: Tensor,
    pub right: Tensor,
    pub disparity: Tensor,
    pub valid: Tensor,
    /// Depth-edge targets.
    pub edges: Tensor,
}

fn stack(parts: &[&Tensor]) -> Tensor {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    let data = parts
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    Tensor::from_parts(shape, data)
}

pub fn make_batch(samples: &[&StereoSample], edge_dilate: usize) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty minibatch".into()))?;
    if let Some(s) = samples
        .iter()
        .find(|s| s.disparity.shape() != first.disparity.shape())
    {
        return Err(Error::shape(
            "make_batch",
            format!(
                "sample sizes differ: {:?} vs {:?}",
                s.disparity.shape(),
                first.disparity.shape()
            ),
        ));
    }
    let edges = samples
        .iter()
        .map(|s| Ok(depth_edge_gt(&s.instance, &s.semantic, edge_dilate)?.to_tensor()))
        .collect::<Result<Vec<_>>>()?;
    let valid: Vec<Tensor> = samples.iter().map(|s| s.valid_tensor()).collect();
    Ok(Batch {
        left: stack(&samples.iter().map(|s| &s.left).collect::<Vec<_>>()),
        right: stack(&samples.iter().map(|s| &s.right).collect::<Vec<_>>()),
        disparity: stack(&samples.iter().map(|s| &s.disparity).collect::<Vec<_>>()),
        valid: stack(&valid.iter().collect::<Vec<_>>()),
        edges: stack(&edges.iter().collect::<Vec<_>>()),
    })
}

/// A train-mode forward pass with every loss term on one tape.
pub struct LossGraph {
    pub tape: Tape,
    pub vars: BTreeMap<String, Var>,
    pub disparities: Vec<Var>,
    pub disp: Var,
    /// Edge classification loss, present when the edge branch is enabled.
    pub edge: Option<Var>,
    /// Edge-aware smoothness of the final disparity, present when the edge
    /// branch is enabled.
    pub dedge_disp: Option<Var>,
    pub total: Var,
    pub batch_stats: Vec<(String, BatchStats)>,
}

impl LossGraph {
    pub fn build(cfg: &TrainConfig, params: &ModelParams, batch: &Batch) -> Result<LossGraph> {
        let net = &cfg.network;
        let mut tape = Tape::new();
        let out = forward(
            &mut tape,
            net,
            params,
            &batch.left,
            &batch.right,
            Mode::Train,
        )?;
        let disp = disp_loss(
            &mut tape,
            &out.disparities,
            &batch.disparity,
            &batch.valid,
            &cfg.loss.lambda,
        )?;
        let (edge, dedge_disp, total) = match out.edge_prob {
            Some(p) => {
                let e = edge_loss(&mut tape, p, &batch.edges)?;
                let last = *out.disparities.last().expect("at least one output");
                let s = dedge_disp_smoothness(&mut tape, last, &batch.edges, cfg.loss.gamma)?;
                let t = crate::loss::total_loss(&mut tape, disp, e, s, cfg.edge_weight())?;
                (Some(e), Some(s), t)
            }
            None => (None, None, disp),
        };
        Ok(LossGraph {
            tape,
            vars: out.vars,
            disparities: out.disparities,
            disp,
            edge,
            dedge_disp,
            total,
            batch_stats: out.batch_stats,
        })
    }

    pub fn value(&self, v: Option<Var>) -> f64 {
        v.map_or(0.0, |v| self.tape.value(v).item())
    }

    /// Gradient of `of` with respect to every parameter, by name.
    pub fn gradients(&self, of: Var) -> Result<BTreeMap<String, Tensor>> {
        let g = self.tape.backward(of)?;
        Ok(self
            .vars
            .iter()
            .map(|(name, &v)| (name.clone(), g.wrt(&self.tape, v)))
            .collect())
    }
}

/// What [`train`] produces.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// JSON log lines, as written to `train.jsonl`.
    pub log: Vec<String>,
    pub final_metrics: Option<Metrics>,
    /// Best validation EPE and the step after which it was reached.
    pub best: Option<(usize, f64)>,
}

/// Deterministic minibatch order: a fresh seeded permutation every epoch.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5A4D_504C_4552),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

struct Log {
    lines: Vec<String>,
    file: Option<std::io::BufWriter<std::fs::File>>,
    path: std::path::PathBuf,
}

impl Log {
    fn push(&mut self, value: serde_json::Value) -> Result<()> {
        let line = value.to_string();
        if let Some(f) = self.file.as_mut() {
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(&self.path, e))?;
        }
        self.lines.push(line);
        Ok(())
    }
}

/// Runs `cfg.steps` Adam steps from `init` (or a seeded initialisation) and
/// validates periodically. With `out_dir`, writes `train.jsonl`,
/// `last.ckpt` and `best.ckpt` (lowest validation EPE).
pub fn train(
    cfg: &TrainConfig,
    train_set: &[StereoSample],
    val_set: &[StereoSample],
    init: Option<Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.len() < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds the {} training samples",
            cfg.batch_size,
            train_set.len()
        )));
    }
    let (mut params, mut adam) = match init {
        Some(c) => {
            if c.config != cfg.network {
                return Err(Error::Checkpoint(
                    "initial checkpoint was built with a different network config".into(),
                ));
            }
            super::checkpoint::check_compatible(&c.config, &c.params)?;
            (c.params, c.adam.unwrap_or_default())
        }
        None => (init_params(&cfg.network, cfg.seed)?, AdamState::default()),
    };
    let log_path = out_dir.map(|d| d.join("train.jsonl")).unwrap_or_default();
    let file = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let f = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            Some(std::io::BufWriter::new(f))
        }
        None => None,
    };
    let mut log = Log {
        lines: Vec::new(),
        file,
        path: log_path,
    };
    let mut sampler = Sampler::new(train_set.len(), cfg.seed);
    let mut best: Option<(usize, f64)> = None;
    let mut final_metrics = None;
    let save = |params: &ModelParams, adam: &AdamState, name: &str| -> Result<()> {
        if let Some(d) = out_dir {
            snapshot(cfg, params, adam).save(d.join(name))?;
        }
        Ok(())
    };

    for step in 0..=cfg.steps {
        let validate = !val_set.is_empty()
            && (step == cfg.steps
                || (cfg.eval_interval > 0 && step > 0 && step % cfg.eval_interval == 0));
        if validate {
            let m = evaluate(
                &NetworkPredictor {
                    config: &cfg.network,
                    params: &params,
                },
                val_set,
            )?;
            log.push(json!({ "step": step, "val": m }))?;
            if best.is_none_or(|(_, e)| m.epe < e) {
                best = Some((step, m.epe));
                save(&params, &adam, "best.ckpt")?;
            }
            if step == cfg.steps {
                final_metrics = Some(m);
            }
        }
        if step == cfg.steps {
            break;
        }

        let idx = sampler.next_batch(cfg.batch_size);
        let samples: Vec<&StereoSample> = idx.iter().map(|&i| &train_set[i]).collect();
        let batch = make_batch(&samples, cfg.edge_dilate)?;
        let graph = LossGraph::build(cfg, &params, &batch)?;
        let (total, disp, edge, dedge) = (
            graph.value(Some(graph.total)),
            graph.value(Some(graph.disp)),
            graph.value(graph.edge),
            graph.value(graph.dedge_disp),
        );
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                disp,
                edge,
                dedge_disp: dedge,
            });
        }
        let mut grads = graph.gradients(graph.total)?;
        let grad_norm = cfg.grad_clip.map(|c| clip_grad_norm(&mut grads, c));
        let lr = cfg.lr_at(step);
        adam_step(&mut params.tensors, &grads, &mut adam, &cfg.adam, lr)?;
        params.update_running_stats(&graph.batch_stats, cfg.bn_momentum)?;
        let mut line = json!({
            "step": step,
            "lr": lr,
            "loss": total,
            "disp": disp,
            "edge": edge,
            "dedge_disp": dedge,
        });
        if let Some(n) = grad_norm {
            line["grad_norm"] = json!(n);
        }
        log.push(line)?;
    }

    save(&params, &adam, "last.ckpt")?;
    Ok(TrainOutcome {
        checkpoint: snapshot(cfg, &params, &adam),
        log: log.lines,
        final_metrics,
        best,
    })
}

fn snapshot(cfg: &TrainConfig, params: &ModelParams, adam: &AdamState) -> Checkpoint {
    Checkpoint {
        config: cfg.network.clone(),
        params: params.clone(),
        adam: Some(adam.clone()),
    }
}
