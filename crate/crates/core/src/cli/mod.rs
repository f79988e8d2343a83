//! The `dagm` command line: dataset generation, depth-edge ground truth,
//! training, evaluation and inference.
//!
//! Results go to stdout as JSON; diagnostics go to stderr as one JSON
//! object `{"error": kind, "message": text}`. Exit codes: 0 success,
//! 2 invalid input (bad arguments, shapes or file contents), 3 I/O failure,
//! 4 checkpoint problem, 5 non-finite training loss.

mod colormap;
mod vis;

pub use colormap::COLORMAP;
pub use vis::{colorize, error_map};

use crate::data::{
    depth_edge_gt, load_split, read_pfm, read_pgm, sample_seed, synth_stereogram, write_pfm,
    write_pgm, write_ppm, write_sample, Grid, Pgm, SynthConfig, SAMPLE_SUFFIXES,
};
use crate::error::Error;
use crate::loss::MetricsAccumulator;
use crate::network::predict;
use crate::train::{
    evaluate, train, Checkpoint, GroundTruthPredictor, NetworkPredictor, Phase, Predictor,
    TrainConfig, ZeroPredictor,
};
use crate::Tensor;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "dagm",
    version,
    about = "Stereo matching with depth-edge guidance"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic stereo samples to OUT/SPLIT and print a manifest.
    GenData(GenData),
    /// Depth-edge ground truth from instance and semantic masks.
    GenGt(GenGt),
    /// Train on DATA/train, validating on DATA/val when present.
    Train(Train),
    /// Print metrics of a checkpoint (or a reference predictor) on a split.
    Eval(Eval),
    /// Predict the disparity of one stereo pair.
    Infer(Infer),
}

#[derive(clap::Args, Debug)]
pub struct GenData {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub dmax: usize,
    #[arg(long, default_value_t = 2)]
    pub objects: usize,
}

#[derive(clap::Args, Debug)]
pub struct GenGt {
    #[arg(long)]
    pub inst: PathBuf,
    #[arg(long)]
    pub sem: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub dilate: usize,
}

#[derive(clap::Args, Debug)]
pub struct Train {
    /// JSON training configuration; unspecified fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long, value_enum)]
    pub phase: Option<PhaseArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PhaseArg {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Shim {
    /// Ground truth as prediction.
    Gt,
    /// Zero disparity everywhere.
    Zero,
}

#[derive(clap::Args, Debug)]
#[command(group(clap::ArgGroup::new("model").required(true).args(["ckpt", "shim"])))]
pub struct Eval {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub shim: Option<Shim>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
}

#[derive(clap::Args, Debug)]
pub struct Infer {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
    #[arg(long)]
    pub out_disp: PathBuf,
    #[arg(long)]
    pub out_vis: Option<PathBuf>,
    /// Ground-truth disparity; enables the EPE report and the error map.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Valid-pixel mask for the ground truth (nonzero = valid).
    #[arg(long, requires = "gt")]
    pub valid: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    pub out_err: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Io { .. } => (3, "io"),
            Error::Checkpoint(_) => (4, "checkpoint"),
            Error::NonFiniteLoss { .. } => (5, "non_finite_loss"),
            Error::Format { .. } => (2, "format"),
            Error::AxisMismatch { .. } | Error::Shape { .. } => (2, "shape"),
            Error::InvalidArgument(_) | Error::Cycle => (2, "invalid_argument"),
        };
        CliError {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn invalid(message: String) -> CliError {
    CliError {
        code: 2,
        kind: "invalid_argument",
        message,
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command, writes results to
/// `out` and diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", json!({ "error": e.kind, "message": e.message }));
            e.code
        }
    }
}

/// Applies `DAGM_THREADS` to the global worker pool.
pub fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("DAGM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("DAGM_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let value = match cmd {
        Command::GenData(a) => gen_data(a)?,
        Command::GenGt(a) => gen_gt(a)?,
        Command::Train(a) => run_train(a, err)?,
        Command::Eval(a) => run_eval(a)?,
        Command::Infer(a) => run_infer(a)?,
    };
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&value).expect("json")
    )
    .map_err(|e| CliError {
        code: 3,
        kind: "io",
        message: format!("stdout: {e}"),
    })
}

fn gen_data(a: GenData) -> CliResult<serde_json::Value> {
    let cfg = SynthConfig {
        height: a.height,
        width: a.width,
        max_disparity: a.dmax,
        n_objects: a.objects,
    };
    cfg.validate()?;
    if a.split.is_empty() || a.split.contains(['/', '\\']) {
        return Err(invalid(format!("invalid split name {:?}", a.split)));
    }
    let dir = a.out.join(&a.split);
    let mut entries = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let s = synth_stereogram(sample_seed(a.seed, i as u64), &cfg)?;
        write_sample(&dir, i, &s)?;
        let files: Vec<String> = SAMPLE_SUFFIXES
            .iter()
            .map(|suf| format!("{}/{i:04}_{suf}", a.split))
            .collect();
        entries.push(json!({ "index": i, "files": files }));
    }
    Ok(json!({
        "split": a.split,
        "seed": a.seed,
        "config": cfg,
        "count": a.count,
        "samples": entries,
    }))
}

fn read_mask(path: &Path) -> CliResult<Grid<u32>> {
    let p = read_pgm(path)?;
    Ok(Grid::new(
        p.width,
        p.height,
        p.data.into_iter().map(u32::from).collect(),
    )?)
}

fn gen_gt(a: GenGt) -> CliResult<serde_json::Value> {
    let inst = read_mask(&a.inst)?;
    let sem = read_mask(&a.sem)?;
    let edges = depth_edge_gt(&inst, &sem, a.dilate)?;
    let pgm = Pgm {
        width: edges.width(),
        height: edges.height(),
        maxval: 255,
        data: edges.data().iter().map(|&e| u16::from(e) * 255).collect(),
    };
    write_pgm(&a.out, &pgm)?;
    Ok(json!({
        "out": a.out,
        "width": pgm.width,
        "height": pgm.height,
        "edge_pixels": edges.count_ones(),
    }))
}

/// Defaults, then the JSON file, then explicit flags.
pub fn train_config(a: &Train) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::from(Error::io(p, e)))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.eval_interval {
        cfg.eval_interval = v;
    }
    if let Some(p) = a.phase {
        cfg.phase = match p {
            PhaseArg::Pretrain => Phase::Pretrain,
            PhaseArg::Finetune => Phase::Finetune,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_train(a: Train, err: &mut dyn Write) -> CliResult<serde_json::Value> {
    let cfg = train_config(&a)?;
    let train_set = load_split(&a.data.join("train"))?;
    let val_dir = a.data.join("val");
    let val_set = if val_dir.is_dir() {
        load_split(&val_dir)?
    } else {
        Vec::new()
    };
    let init = a.init.as_ref().map(Checkpoint::load).transpose()?;
    let _ = writeln!(
        err,
        "training {} steps on {} samples ({} validation)",
        cfg.steps,
        train_set.len(),
        val_set.len()
    );
    let outcome = train(&cfg, &train_set, &val_set, init, Some(&a.out))?;
    std::fs::write(
        a.out.join("config.json"),
        serde_json::to_string_pretty(&cfg).expect("json"),
    )
    .map_err(|e| CliError::from(Error::io(a.out.join("config.json"), e)))?;
    Ok(json!({
        "steps": cfg.steps,
        "checkpoint": a.out.join("last.ckpt"),
        "best_checkpoint": outcome.best.map(|_| a.out.join("best.ckpt")),
        "best_step": outcome.best.map(|b| b.0),
        "best_epe": outcome.best.map(|b| b.1),
        "final": outcome.final_metrics,
        "log": a.out.join("train.jsonl"),
    }))
}

fn run_eval(a: Eval) -> CliResult<serde_json::Value> {
    let samples = load_split(&a.data.join(&a.split))?;
    let metrics = match (&a.ckpt, a.shim) {
        (Some(path), _) => {
            let ckpt = Checkpoint::load(path)?;
            let p = NetworkPredictor {
                config: &ckpt.config,
                params: &ckpt.params,
            };
            evaluate(&p, &samples)?
        }
        (None, Some(Shim::Gt)) => evaluate(&GroundTruthPredictor as &dyn Predictor, &samples)?,
        (None, Some(Shim::Zero)) => evaluate(&ZeroPredictor, &samples)?,
        (None, None) => unreachable!("clap requires --ckpt or --shim"),
    };
    Ok(serde_json::to_value(metrics).expect("json"))
}

fn read_image(path: &Path) -> CliResult<Tensor> {
    let p = read_pgm(path)?;
    if p.maxval != 255 {
        return Err(invalid(format!("{}: images must be 8-bit", path.display())));
    }
    let plane: Vec<f64> = p.data.iter().map(|&v| f64::from(v) / 255.0).collect();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Ok(Tensor::new(&[1, 3, p.height, p.width], data)?)
}

fn run_infer(a: Infer) -> CliResult<serde_json::Value> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let left = read_image(&a.left)?;
    let right = read_image(&a.right)?;
    if left.shape() != right.shape() {
        return Err(invalid(format!(
            "left image is {:?} but right image is {:?}",
            &left.shape()[2..],
            &right.shape()[2..]
        )));
    }
    let (h, w) = (left.shape()[2], left.shape()[3]);
    let disp = predict(&ckpt.config, &ckpt.params, &left, &right)?.reshape(&[h, w])?;
    write_pfm(&a.out_disp, &disp)?;
    let dmax = ckpt.config.max_disparity as f64;
    if let Some(p) = &a.out_vis {
        write_ppm(p, w, h, &colorize(&disp, dmax))?;
    }
    let mut report = json!({
        "out_disp": a.out_disp,
        "height": h,
        "width": w,
        "min": disp.data().iter().copied().fold(f64::INFINITY, f64::min),
        "max": disp.data().iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    if let Some(gt_path) = &a.gt {
        let gt = read_pfm(gt_path)?;
        if gt.shape() != disp.shape() {
            return Err(invalid(format!(
                "ground truth is {:?}, prediction is {:?}",
                gt.shape(),
                disp.shape()
            )));
        }
        let valid = match &a.valid {
            Some(p) => {
                let m = read_mask(p)?;
                Tensor::new(
                    &[h, w],
                    m.data()
                        .iter()
                        .map(|&v| f64::from(u8::from(v != 0)))
                        .collect(),
                )?
            }
            None => gt.map(|v| f64::from(u8::from(v.is_finite()))),
        };
        if valid.shape() != disp.shape() {
            return Err(invalid(
                "valid mask extent differs from the prediction".into(),
            ));
        }
        let mut acc = MetricsAccumulator::default();
        acc.add(&disp, &gt, &valid)?;
        report["metrics"] = serde_json::to_value(acc.finish()?).expect("json");
        if let Some(p) = &a.out_err {
            write_ppm(p, w, h, &error_map(&disp, &gt, &valid))?;
        }
    }
    Ok(report)
}

/// Entry point of the binary.
pub fn main() -> i32 {
    if let Err(msg) = configure_threads() {
        eprintln!("{}", json!({ "error": "invalid_argument", "message": msg }));
        return 2;
    }
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
