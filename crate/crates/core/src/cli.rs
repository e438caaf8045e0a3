//! Command-line front end. Every subcommand reads plain files, writes its
//! outputs atomically, and exits with 0 on success, 2 on bad input and 1
//! on internal failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{compose, sample_theta, AugmentationSpec, DEFAULT_MIN_BOX_RETENTION};
use crate::error::{Error, Result};
use crate::geometry::{decode_grid, GridShape};
use crate::ingest::{
    load_detections, load_labels, load_manifest, load_ppm, load_tensor, write_detections,
    write_labels, write_ppm, write_tensor,
};
use crate::loss::{LossWeights, TargetTensor};
use crate::metrics::{BinaryLabel, ConfusionCounts, DEFAULT_IOU_THRESHOLDS};
use crate::pipeline::{bench, evaluate_dataset, BenchConfig, EvalConfig};
use crate::postprocess::{filter_by_score, nms, DEFAULT_NMS_IOU};
use crate::report::{
    bench_csv, class_ap_csv, loss_svg, metrics_csv, pr_csv, pr_svg, render_confusion_table,
    train_csv,
};
use crate::trainer::{train, TrainConfig};

const EXIT_INTERNAL: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sightline",
    version,
    about = "Single-shot detector post-processing and evaluation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a dataset of detection files against labels over an IoU sweep.
    Eval(EvalArgs),
    /// Apply a score cut and non-maximum suppression to a detection file.
    Nms(NmsArgs),
    /// Apply the augmentation chain to a PPM image and its labels.
    Augment(AugmentArgs),
    /// Decode a grid tensor into detections.
    Decode(DecodeArgs),
    /// Fit a free parameter tensor to label files with gradient descent.
    TrainToy(TrainArgs),
    /// Measure preprocess + decode + NMS latency on synthetic frames.
    Bench(BenchArgs),
    /// Print a 2x2 confusion table and its derived metrics.
    Confusion(ConfusionArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_IOU_THRESHOLDS.to_vec())]
    iou_thresholds: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
    nms_iou: f64,
    #[arg(long, default_value_t = 0.0)]
    score_cut: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    class_aware: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct NmsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
    iou: f64,
    #[arg(long, default_value_t = 0.0)]
    score: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    class_aware: bool,
    /// Reject class ids at or above this count.
    #[arg(long)]
    num_classes: Option<usize>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Rotation in degrees. Sampled from [-30, 30] when omitted and a seed is set.
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    hflip: bool,
    #[arg(long, default_value_t = 1.0)]
    brightness: f64,
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
    #[arg(long, default_value_t = 1.0)]
    saturation: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_BOX_RETENTION)]
    min_retention: f64,
    #[arg(long, env = "SIGHTLINE_SEED")]
    seed: Option<u64>,
    /// Outputs go to `<prefix>.ppm` and `<prefix>.txt`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    conf_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
    nms_iou: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    class_aware: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// One label file per training sample.
    #[arg(long, required = true, num_args = 1..)]
    labels: Vec<PathBuf>,
    /// Validation label files; the training files are reused when omitted.
    #[arg(long, num_args = 1..)]
    val_labels: Vec<PathBuf>,
    #[arg(long, default_value_t = 7)]
    grid: usize,
    #[arg(long, default_value_t = 2)]
    boxes: usize,
    /// Defaults to one more than the largest class id in the labels.
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,
    #[arg(long, default_value_t = 1)]
    lr_decay_every: usize,
    #[arg(long, default_value_t = LossWeights::default().lambda_coord)]
    lambda_coord: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_noobj)]
    lambda_noobj: f64,
    #[arg(long, env = "SIGHTLINE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated `WIDTHxHEIGHT` list.
    #[arg(long, value_delimiter = ',', value_parser = parse_resolution, default_values = ["320x320", "640x640", "1280x1280"])]
    resolutions: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 32)]
    boxes: usize,
    #[arg(long, env = "SIGHTLINE_SEED", default_value_t = 0)]
    seed: u64,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Positive {
    Weapon,
    NoWeapon,
}

#[derive(Debug, Args)]
struct ConfusionArgs {
    #[arg(long)]
    tp: u64,
    #[arg(long)]
    tn: u64,
    #[arg(long)]
    fp: u64,
    #[arg(long = "fn")]
    fn_: u64,
    /// Class the counts treat as positive.
    #[arg(long, value_enum, default_value_t = Positive::Weapon)]
    positive: Positive,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let dim = |v: &str| match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("invalid dimension {v:?} in {s:?}")),
    };
    Ok((dim(w)?, dim(h)?))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_INTERNAL
            })
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Eval(a) => cmd_eval(a),
        Command::Nms(a) => cmd_nms(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Decode(a) => cmd_decode(a),
        Command::TrainToy(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Confusion(a) => cmd_confusion(a),
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "--{name} must be in [0, 1], got {v}"
        )))
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

/// Writes every file to a temporary sibling first and renames them into
/// place only once all writes succeeded.
fn commit_outputs(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut staged: Vec<PathBuf> = Vec::with_capacity(files.len());
    let cleanup = |staged: &[PathBuf]| {
        for p in staged {
            let _ = fs::remove_file(p);
        }
    };
    for (path, bytes) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            if let Err(e) = fs::create_dir_all(dir) {
                cleanup(&staged);
                return Err(Error::io(dir, e));
            }
        }
        let tmp = temp_path(path);
        let written = fs::File::create(&tmp).and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        });
        staged.push(tmp.clone());
        if let Err(e) = written {
            cleanup(&staged);
            return Err(Error::io(tmp, e));
        }
    }
    for ((path, _), tmp) in files.iter().zip(&staged) {
        if let Err(e) = fs::rename(tmp, path) {
            cleanup(&staged);
            return Err(Error::io(path, e));
        }
    }
    Ok(())
}

fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be positive".into()));
    }
    let (manifest, base) = load_manifest(&a.manifest)?;
    let cfg = EvalConfig {
        iou_thresholds: a.iou_thresholds,
        nms_iou: a.nms_iou,
        score_cut: a.score_cut,
        class_aware: a.class_aware,
        jobs: a.jobs,
    };
    let report = evaluate_dataset(&manifest, &base, &cfg)?;
    let sweep = &report.sweep;
    commit_outputs(&[
        (
            a.out_dir.join("metrics.csv"),
            metrics_csv(&sweep.rows).into_bytes(),
        ),
        (
            a.out_dir.join("pr.csv"),
            pr_csv(&sweep.pr_curve).into_bytes(),
        ),
        (
            a.out_dir.join("pr.svg"),
            pr_svg(&sweep.pr_curve)?.into_bytes(),
        ),
        (
            a.out_dir.join("class_ap.csv"),
            class_ap_csv(&sweep.class_ap, &report.class_names).into_bytes(),
        ),
    ])
}

fn cmd_nms(a: NmsArgs) -> Result<()> {
    check_unit("iou", a.iou)?;
    check_unit("score", a.score)?;
    let dets = load_detections(&a.input, a.num_classes)?;
    let kept = nms(&filter_by_score(&dets, a.score), a.iou, a.class_aware);
    print_stdout(&write_detections(&kept))
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let img = load_ppm(&a.image)?;
    let boxes = load_labels(&a.labels, None)?;
    let theta = match (a.theta, a.seed) {
        (Some(deg), _) => deg.to_radians(),
        (None, Some(seed)) => sample_theta(&mut ChaCha8Rng::seed_from_u64(seed)),
        (None, None) => 0.0,
    };
    let spec = AugmentationSpec {
        theta,
        scale: a.scale,
        hflip: a.hflip,
        brightness: a.brightness,
        contrast: a.contrast,
        saturation: a.saturation,
        min_box_retention: a.min_retention,
    };
    let (img, boxes) = compose(&img, &boxes, &spec)?;
    let mut ppm = a.out_prefix.clone().into_os_string();
    ppm.push(".ppm");
    let mut txt = a.out_prefix.into_os_string();
    txt.push(".txt");
    commit_outputs(&[
        (PathBuf::from(ppm), write_ppm(&img)),
        (PathBuf::from(txt), write_labels(&boxes).into_bytes()),
    ])
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    check_unit("conf-threshold", a.conf_threshold)?;
    check_unit("nms-iou", a.nms_iou)?;
    let tensor = load_tensor(&a.tensor)?;
    let dets = nms(
        &decode_grid(&tensor, a.conf_threshold),
        a.nms_iou,
        a.class_aware,
    );
    print_stdout(&write_detections(&dets))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let load_all = |paths: &[PathBuf]| {
        paths
            .iter()
            .map(|p| load_labels(p, a.num_classes))
            .collect::<Result<Vec<_>>>()
    };
    let train_labels = load_all(&a.labels)?;
    let val_labels = if a.val_labels.is_empty() {
        train_labels.clone()
    } else {
        load_all(&a.val_labels)?
    };
    let num_classes = match a.num_classes {
        Some(n) => n,
        None => train_labels
            .iter()
            .chain(&val_labels)
            .flatten()
            .map(|b| b.class_id + 1)
            .max()
            .unwrap_or(1),
    };
    let shape = GridShape::new(a.grid, a.boxes, num_classes)?;
    let to_targets = |set: &[Vec<_>], paths: &[PathBuf]| {
        set.iter()
            .zip(paths)
            .map(|(boxes, p)| {
                TargetTensor::from_labels(shape, boxes).map_err(|e| Error::in_file(p, e))
            })
            .collect::<Result<Vec<_>>>()
    };
    let train_set = to_targets(&train_labels, &a.labels)?;
    let val_paths = if a.val_labels.is_empty() {
        &a.labels
    } else {
        &a.val_labels
    };
    let val_set = to_targets(&val_labels, val_paths)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        total_epochs: a.epochs,
        patience: a.patience,
        lr_decay_factor: a.lr_decay,
        lr_decay_every: a.lr_decay_every,
        weights: LossWeights::new(a.lambda_coord, a.lambda_noobj)?,
        seed: a.seed,
    };
    let outcome = train(&train_set, &val_set, &cfg)?;
    commit_outputs(&[
        (
            a.out_dir.join("train.csv"),
            train_csv(&outcome.records).into_bytes(),
        ),
        (
            a.out_dir.join("loss.svg"),
            loss_svg(&outcome.records)?.into_bytes(),
        ),
        (
            a.out_dir.join("params.json"),
            write_tensor(&outcome.params).into_bytes(),
        ),
    ])?;
    let summary = match (outcome.records.last(), outcome.best_epoch) {
        (Some(last), Some(best)) => format!(
            "epochs {} final_train_loss {:e} best_epoch {} best_val_loss {:e}{}\n",
            outcome.records.len(),
            last.train_loss,
            best,
            outcome.records[best].val_loss,
            if outcome.stopped_early {
                " (early stop)"
            } else {
                ""
            }
        ),
        _ => "epochs 0\n".to_string(),
    };
    print_stdout(&summary)
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        resolutions: a.resolutions,
        iterations: a.iterations,
        synthetic_boxes: a.boxes,
        seed: a.seed,
        ..BenchConfig::default()
    };
    let report = bench(&cfg)?;
    let csv = bench_csv(&report.rows);
    match a.out {
        Some(path) => commit_outputs(&[(path, csv.into_bytes())]),
        None => print_stdout(&csv),
    }
}

fn cmd_confusion(a: ConfusionArgs) -> Result<()> {
    let counts = ConfusionCounts::new(a.tp, a.fp, a.fn_, a.tn);
    if counts.total() == 0 {
        return Err(Error::InvalidArgument("all counts are zero".into()));
    }
    let pos = match a.positive {
        Positive::Weapon => BinaryLabel::Weapon,
        Positive::NoWeapon => BinaryLabel::NoWeapon,
    };
    print_stdout(&render_confusion_table(
        &counts,
        [pos.name(), pos.other().name()],
    ))
}
