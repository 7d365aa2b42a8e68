//! Command-line front end.
//!
//! Seven subcommands cover the pipeline end to end: `synth` writes a
//! synthetic blob dataset, `augment` expands one on disk, `train` fits a
//! model and saves the best checkpoint, `eval` scores a checkpoint against
//! ground truth, `count` runs inference on bare images, `baseline` scores
//! one of the classical methods, and `report` renders training curves and
//! error overlays as PNGs.
//!
//! Every subcommand accepts `--config FILE` plus repeatable
//! `--set KEY=VALUE` overrides; dedicated flags win over both. Exit codes:
//! 0 success, 1 usage or configuration error, 2 data error, 3 numerical
//! failure.

pub mod overlay;
pub mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::baselines::{baseline_predict, BaselineMethod};
use crate::config::{load_config, RunConfig};
use crate::data::{self, Sample};
use crate::error::{Error, Result};
use crate::metrics::{image_metrics, MetricsReport};
use crate::model::Model;
use crate::postproc::{count_objects, label_components_8, CountOutcome, PostprocParams};
use crate::raster::{batch_tensor, ImageBuf, Mask};
use crate::tensor::Graph;
use crate::train::{train, EpochStats, TrainingCurves};

#[derive(Parser)]
#[command(
    name = "pidcount",
    version,
    about = "Dense tiny-object segmentation and counting",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blob dataset.
    Synth(SynthArgs),
    /// Expand a dataset on disk with the 8 flip/rotation variants.
    Augment(AugmentArgs),
    /// Train a model and keep the checkpoint with the best validation IoU.
    Train(TrainArgs),
    /// Score a checkpoint against a dataset with ground truth.
    Eval(EvalArgs),
    /// Predict object counts for a directory of images.
    Count(CountArgs),
    /// Score a classical baseline (otsu, watershed, hough) against ground truth.
    Baseline(BaselineArgs),
    /// Render training curves and error overlays as PNGs.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file with one `key = value` per line.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then the file, then each `--set` in order.
    fn resolve(&self) -> Result<RunConfig> {
        self.resolve_with_fallback(None)
    }

    /// Same, but a fallback file is read when `--config` is absent.
    fn resolve_with_fallback(&self, fallback: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, fallback) {
            (Some(path), _) => load_config(path)?,
            (None, Some(path)) if path.exists() => load_config(path)?,
            _ => RunConfig::default(),
        };
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{pair}'")))?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of images to generate.
    #[arg(long)]
    n: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Object count range per image as MIN:MAX.
    #[arg(long, value_name = "MIN:MAX")]
    counts: Option<String>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Partition into train/val/test subdirectories as A:B:C (sums to --n).
    #[arg(long, value_name = "A:B:C")]
    split: Option<String>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Input dataset directory (images/, masks/, optional counts.csv).
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory: either flat, or holding train/ and val/ subsets.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for best.ckpt, curves.csv, and resolved.cfg.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Encoder variant: pid, m1, m2, or unet.
    #[arg(long)]
    variant: Option<String>,
    /// Channel width of the first encoder level.
    #[arg(long)]
    base_width: Option<usize>,
    /// Number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Shuffle seed for training.
    #[arg(long)]
    seed: Option<u64>,
    /// Weight initialization seed.
    #[arg(long)]
    init_seed: Option<u64>,
    /// Resize all samples to this side length (0 keeps originals).
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Dataset directory with images/ and masks/.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for metrics.csv, metrics.json, and resolved.cfg.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct CountArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to run.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Directory of images (an images/ subdirectory is used when present).
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Also write the predictions as CSV here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Baseline method: otsu, watershed, or hough.
    #[arg(long)]
    method: String,
    /// Dataset directory with images/ and masks/.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for metrics.csv, metrics.json, and resolved.cfg.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training run directory holding curves.csv (and usually best.ckpt).
    #[arg(long, value_name = "DIR")]
    run: PathBuf,
    /// Output directory for the PNGs (defaults to the run directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dataset to render prediction overlays for.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Checkpoint for the overlays (defaults to RUN/best.ckpt).
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    /// Maximum number of overlay images.
    #[arg(long, default_value_t = 16)]
    limit: usize,
}

/// Parses arguments from the environment, dispatches, and returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_thread_pool();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Augment(args) => cmd_augment(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Count(args) => cmd_count(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Honors PIDCOUNT_THREADS for the per-image fan-out; silently keeps the
/// default pool when the variable is absent, malformed, or already set.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("PIDCOUNT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn parse_pair(s: &str, flag: &str) -> Result<(usize, usize)> {
    let err = || Error::Usage(format!("{flag} expects MIN:MAX, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(err)?;
    let a = a.trim().parse::<usize>().map_err(|_| err())?;
    let b = b.trim().parse::<usize>().map_err(|_| err())?;
    Ok((a, b))
}

fn parse_triple(s: &str, flag: &str) -> Result<(usize, usize, usize)> {
    let err = || Error::Usage(format!("{flag} expects A:B:C, got '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(err());
    }
    let a = parts[0].trim().parse::<usize>().map_err(|_| err())?;
    let b = parts[1].trim().parse::<usize>().map_err(|_| err())?;
    let c = parts[2].trim().parse::<usize>().map_err(|_| err())?;
    Ok((a, b, c))
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn resize_all(samples: Vec<Sample>, size: usize) -> Result<Vec<Sample>> {
    if size == 0 {
        return Ok(samples);
    }
    samples.iter().map(|s| data::resize(s, size)).collect()
}

/// Ground-truth counts for a dataset directory: counts.csv when present,
/// otherwise 8-connectivity components of each mask.
fn ground_truth_counts(dir: &Path, samples: &[Sample]) -> Result<BTreeMap<String, usize>> {
    let csv = dir.join("counts.csv");
    let mut counts = BTreeMap::new();
    if csv.exists() {
        for (id, n) in data::read_counts_csv(&csv)? {
            counts.insert(id, n);
        }
    }
    for s in samples {
        counts
            .entry(s.id.clone())
            .or_insert_with(|| label_components_8(&s.mask).count);
    }
    Ok(counts)
}

/// Runs one image through the model and post-processing.
fn predict(model: &Model<f32>, image: &ImageBuf, post: &PostprocParams) -> Result<CountOutcome> {
    let mut g = Graph::<f32>::new();
    let input = batch_tensor::<f32>(&[image])?;
    let pass = model.forward(&mut g, input)?;
    let outcomes = count_objects(g.value(pass.probs), post)?;
    Ok(outcomes.into_iter().next().expect("batch of one"))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(n) = args.n {
        cfg.apply("synth_n", &n.to_string())?;
    }
    if let Some(size) = args.size {
        cfg.apply("synth_size", &size.to_string())?;
    }
    if let Some(counts) = &args.counts {
        let (lo, hi) = parse_pair(counts, "--counts")?;
        cfg.apply("synth_count_min", &lo.to_string())?;
        cfg.apply("synth_count_max", &hi.to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.apply("synth_seed", &seed.to_string())?;
    }
    cfg.validate()?;

    let generated = data::synth_blobs(&cfg.synth)?;
    let rows: Vec<(String, usize)> =
        generated.iter().map(|(s, n)| (s.id.clone(), *n)).collect();
    let samples: Vec<Sample> = generated.into_iter().map(|(s, _)| s).collect();

    match &args.split {
        Some(spec) => {
            let (a, b, c) = parse_triple(spec, "--split")?;
            if a + b + c != samples.len() {
                return Err(Error::Usage(format!(
                    "--split {}:{}:{} sums to {}, but {} images were generated",
                    a,
                    b,
                    c,
                    a + b + c,
                    samples.len()
                )));
            }
            let names = ["train", "val", "test"];
            let bounds = [0, a, a + b, a + b + c];
            for (i, name) in names.iter().enumerate() {
                let part = &samples[bounds[i]..bounds[i + 1]];
                let part_rows = &rows[bounds[i]..bounds[i + 1]];
                let dir = args.out.join(name);
                data::save_dataset(&dir, part)?;
                data::write_counts_csv(&dir.join("counts.csv"), part_rows)?;
                println!("{}: {} images", name, part.len());
            }
        }
        None => {
            data::save_dataset(&args.out, &samples)?;
            data::write_counts_csv(&args.out.join("counts.csv"), &rows)?;
            println!("{} images", samples.len());
        }
    }
    println!(
        "wrote {} ({}x{} px, counts {}..={}, seed {})",
        args.out.display(),
        cfg.synth.image_size,
        cfg.synth.image_size,
        cfg.synth.count_range.0,
        cfg.synth.count_range.1,
        cfg.synth.seed
    );
    Ok(())
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    let (samples, warnings) = data::load_dataset(&args.data)?;
    print_warnings(&warnings);
    let counts = ground_truth_counts(&args.data, &samples)?;
    let mut out_samples = Vec::with_capacity(samples.len() * 8);
    let mut out_rows = Vec::with_capacity(samples.len() * 8);
    for s in &samples {
        let n = counts[&s.id];
        for aug in data::augment8(s)? {
            out_rows.push((aug.id.clone(), n));
            out_samples.push(aug);
        }
    }
    data::save_dataset(&args.out, &out_samples)?;
    data::write_counts_csv(&args.out.join("counts.csv"), &out_rows)?;
    println!(
        "augmented {} images to {} in {}",
        samples.len(),
        out_samples.len(),
        args.out.display()
    );
    Ok(())
}

/// Loads train and validation subsets for `train`: pre-split directories
/// when `DIR/train` exists, otherwise a seeded split of the flat dataset.
fn load_train_val(dir: &Path, cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    use crate::data::AugmentPolicy;
    if dir.join("train").is_dir() {
        let (train_raw, w1) = data::load_dataset(&dir.join("train"))?;
        let (val_raw, w2) = data::load_dataset(&dir.join("val"))?;
        print_warnings(&w1);
        print_warnings(&w2);
        let mut train_set = resize_all(train_raw, cfg.image_size)?;
        let mut val_set = resize_all(val_raw, cfg.image_size)?;
        if cfg.augment != AugmentPolicy::Off {
            let expand = |set: Vec<Sample>| -> Result<Vec<Sample>> {
                let mut out = Vec::with_capacity(set.len() * 8);
                for s in &set {
                    out.extend(data::augment8(s)?);
                }
                Ok(out)
            };
            train_set = expand(train_set)?;
            val_set = expand(val_set)?;
        }
        Ok((train_set, val_set))
    } else {
        let (samples, warnings) = data::load_dataset(dir)?;
        print_warnings(&warnings);
        let samples = resize_all(samples, cfg.image_size)?;
        let split = data::split(samples, cfg.split_seed, cfg.augment)?;
        Ok((split.train, split.val))
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(v) = &args.variant {
        cfg.apply("variant", v)?;
    }
    if let Some(v) = args.base_width {
        cfg.apply("base_width", &v.to_string())?;
    }
    if let Some(v) = args.epochs {
        cfg.apply("epochs", &v.to_string())?;
    }
    if let Some(v) = args.batch_size {
        cfg.apply("batch_size", &v.to_string())?;
    }
    if let Some(v) = args.lr {
        cfg.apply("lr", &v.to_string())?;
    }
    if let Some(v) = args.seed {
        cfg.apply("train_seed", &v.to_string())?;
    }
    if let Some(v) = args.init_seed {
        cfg.apply("init_seed", &v.to_string())?;
    }
    if let Some(v) = args.image_size {
        cfg.apply("image_size", &v.to_string())?;
    }
    cfg.validate()?;

    let (train_set, val_set) = load_train_val(&args.data, &cfg)?;
    println!(
        "training {} on {} images, validating on {}",
        cfg.model.variant.name(),
        train_set.len(),
        val_set.len()
    );

    let model = Model::<f32>::new(cfg.model, cfg.init_seed)?;
    println!("{} parameters", model.num_parameters());

    let started = Instant::now();
    let epochs = cfg.hyper.epochs;
    let progress = |s: &EpochStats| {
        println!(
            "epoch {:>3}/{} | train loss {:.4} iou {:.4} | val loss {:.4} iou {:.4}{}",
            s.epoch,
            epochs,
            s.train_loss,
            s.train_iou,
            s.val_loss,
            s.val_iou,
            if s.is_best { " *" } else { "" }
        );
    };
    let (model, curves) = train(model, &train_set, &val_set, &cfg.hyper, progress)?;

    std::fs::create_dir_all(&args.out)?;
    model.save(&args.out.join("best.ckpt"))?;
    curves.write_csv(&args.out.join("curves.csv"))?;
    cfg.write(&args.out.join("resolved.cfg"))?;
    println!(
        "best epoch {} (val iou {:.4}) in {:.1}s; wrote {}",
        curves.best_epoch,
        curves.val_iou[curves.best_epoch - 1],
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

fn print_aggregate(report: &MetricsReport) -> Result<()> {
    let agg = report.aggregate()?;
    println!("method {}", agg.method);
    println!("images {}", agg.n_images);
    println!("accuracy {:.4}", agg.accuracy);
    println!("dice {:.4}", agg.dice);
    println!("jaccard {:.4}", agg.jaccard);
    println!("precision {:.4}", agg.precision);
    match agg.counting_accuracy {
        Some(ca) => println!(
            "counting accuracy {:.4} ({} undefined)",
            ca, agg.counting_undefined_images
        ),
        None => println!("counting accuracy undefined on all images"),
    }
    println!(
        "hausdorff px {:.4} ({} degenerate)",
        agg.hausdorff_px, agg.hausdorff_degenerate_images
    );
    Ok(())
}

fn write_report_outputs(report: &MetricsReport, cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    report.write_csv(&out.join("metrics.csv"))?;
    report.write_json(&out.join("metrics.json"))?;
    cfg.write(&out.join("resolved.cfg"))?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    cfg.validate()?;
    let model = Model::<f32>::load(&args.ckpt)?;
    let (samples, warnings) = data::load_dataset(&args.data)?;
    print_warnings(&warnings);
    let counts = ground_truth_counts(&args.data, &samples)?;
    let samples = resize_all(samples, cfg.image_size)?;

    let rows = samples
        .par_iter()
        .map(|s| {
            let outcome = predict(&model, &s.image, &cfg.post)?;
            image_metrics(&s.id, &outcome.mask, &s.mask, outcome.count, counts[&s.id])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = MetricsReport::new(model.config.variant.name());
    report.rows = rows;
    write_report_outputs(&report, &cfg, &args.out)?;
    print_aggregate(&report)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_count(args: CountArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    cfg.validate()?;
    let model = Model::<f32>::load(&args.ckpt)?;
    let (images, warnings) = data::load_images(&args.data)?;
    print_warnings(&warnings);
    if images.is_empty() {
        return Err(Error::Data(format!("no images found in {}", args.data.display())));
    }

    let rows = images
        .par_iter()
        .map(|(id, image)| {
            let image = if cfg.image_size > 0 {
                let dummy = Sample {
                    id: id.clone(),
                    image: image.clone(),
                    mask: Mask::new(image.h, image.w),
                };
                data::resize(&dummy, cfg.image_size)?.image
            } else {
                image.clone()
            };
            let outcome = predict(&model, &image, &cfg.post)?;
            Ok((id.clone(), outcome.count))
        })
        .collect::<Result<Vec<(String, usize)>>>()?;

    println!("id,count");
    for (id, count) in &rows {
        println!("{id},{count}");
    }
    if let Some(path) = &args.out {
        let mut text = String::from("id,count\n");
        for (id, count) in &rows {
            text.push_str(&format!("{id},{count}\n"));
        }
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn cmd_baseline(args: BaselineArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    cfg.validate()?;
    let method = BaselineMethod::parse(&args.method)?;
    let params = cfg.baseline_params();
    let (samples, warnings) = data::load_dataset(&args.data)?;
    print_warnings(&warnings);
    let counts = ground_truth_counts(&args.data, &samples)?;
    let samples = resize_all(samples, cfg.image_size)?;

    let rows = samples
        .par_iter()
        .map(|s| {
            let (count, mask) = baseline_predict(method, &s.image, &params)?;
            image_metrics(&s.id, &mask, &s.mask, count, counts[&s.id])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = MetricsReport::new(method.name());
    report.rows = rows;
    write_report_outputs(&report, &cfg, &args.out)?;
    print_aggregate(&report)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    std::fs::create_dir_all(&out)?;

    let curves_path = args.run.join("curves.csv");
    if !curves_path.exists() {
        return Err(Error::Data(format!("{} not found", curves_path.display())));
    }
    let curves = TrainingCurves::read_csv(&curves_path)?;
    plot::line_chart(
        "LOSS",
        "LOSS",
        &[
            plot::Series {
                label: "TRAIN",
                color: plot::TRAIN_COLOR,
                values: &curves.train_loss,
            },
            plot::Series { label: "VAL", color: plot::VAL_COLOR, values: &curves.val_loss },
        ],
        &out.join("loss.png"),
    )?;
    plot::line_chart(
        "IOU",
        "IOU",
        &[
            plot::Series {
                label: "TRAIN",
                color: plot::TRAIN_COLOR,
                values: &curves.train_iou,
            },
            plot::Series { label: "VAL", color: plot::VAL_COLOR, values: &curves.val_iou },
        ],
        &out.join("iou.png"),
    )?;
    println!(
        "curves: {} epochs, best {} (val iou {:.4})",
        curves.train_loss.len(),
        curves.best_epoch,
        curves.val_iou[curves.best_epoch - 1]
    );

    if let Some(data_dir) = &args.data {
        let cfg = args
            .config
            .resolve_with_fallback(Some(&args.run.join("resolved.cfg")))?;
        cfg.validate()?;
        let ckpt = args.ckpt.clone().unwrap_or_else(|| args.run.join("best.ckpt"));
        let model = Model::<f32>::load(&ckpt)?;
        let (samples, warnings) = data::load_dataset(data_dir)?;
        print_warnings(&warnings);
        let samples = resize_all(samples, cfg.image_size)?;
        let chosen = &samples[..samples.len().min(args.limit)];
        let written = chosen
            .par_iter()
            .map(|s| {
                let outcome = predict(&model, &s.image, &cfg.post)?;
                let path = out.join(format!("overlay_{}.png", s.id));
                overlay::write_overlay(&s.image, &outcome.mask, &s.mask, &path)?;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        println!("overlays: {} images", written.len());
    }
    println!("wrote {}", out.display());
    Ok(())
}
