//! Pipeline driver: generate phantom datasets, train the dual blind-spot
//! predictors, denoise images, score results, and report classification
//! accuracy. Exit codes: 0 success, 1 runtime or data failure, 2 usage.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use checkerboard_core::{
    classify, denoise, evaluate, load_dual, load_rois, log_csv, psnr, save_dual, train_dual,
    CoreError, DatasetManifest, ImageTensor, MetricReport, NetConfig, Parity, PhantomConfig,
    RoiSet, TrainConfig, NUM_CLASSES,
};

#[derive(Parser)]
#[command(
    name = "checkerboard",
    version,
    about = "Self-supervised speckle denoising: phantom data, dual blind-spot training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic speckle dataset with manifest and ROI files
    PhantomGen(PhantomGenArgs),
    /// Train the odd/even predictor pair from a dataset manifest
    Train(TrainArgs),
    /// Denoise one image or every image in a directory
    Denoise(DenoiseArgs),
    /// Score denoised images against their noisy originals
    Evaluate(EvaluateArgs),
    /// Report classification accuracy of a trained model's encoder head
    ClassifyEval(ClassifyEvalArgs),
}

#[derive(clap::Args)]
struct PhantomGenArgs {
    /// Output directory (created if absent)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Phantoms per class
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    per_class: u64,
    /// Base seed for the dataset
    #[arg(long, value_name = "S", default_value_t = 0)]
    seed: u64,
    /// Image size as HxW, e.g. 64x64
    #[arg(long, value_name = "HxW", value_parser = parse_size, default_value = "64x64")]
    size: (usize, usize),
    /// Speckle looks (larger is milder noise)
    #[arg(long, value_name = "L", default_value_t = 4.0)]
    looks: f64,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset manifest (falls back to the config's paths.manifest)
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Run config JSON; unknown keys are rejected
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory for checkpoints and the training log
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DenoiseArgs {
    /// Model directory holding dual.json, or the index file itself
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Input image file or directory of images
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output directory (created if absent); filenames are preserved
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Directory of noisy originals
    #[arg(long, value_name = "DIR")]
    noisy: PathBuf,
    /// Directory of denoised images, paired with the originals by filename
    #[arg(long, value_name = "DIR")]
    denoised: PathBuf,
    /// ROI file as written by phantom-gen
    #[arg(long, value_name = "PATH")]
    rois: PathBuf,
    /// Directory of clean references; adds PSNR columns
    #[arg(long, value_name = "DIR")]
    clean: Option<PathBuf>,
    /// Where to write the JSON report
    #[arg(long, value_name = "PATH")]
    report: PathBuf,
}

#[derive(clap::Args)]
struct ClassifyEvalArgs {
    /// Model directory holding dual.json, or the index file itself
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Dataset manifest to score
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Which predictor's head to use
    #[arg(long, value_enum, default_value_t = PredictorArg::Odd)]
    predictor: PredictorArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Odd,
    Even,
}

impl From<PredictorArg> for Parity {
    fn from(p: PredictorArg) -> Parity {
        match p {
            PredictorArg::Odd => Parity::Odd,
            PredictorArg::Even => Parity::Even,
        }
    }
}

/// Experiment file bundling the network and optimizer settings, an
/// optional phantom recipe, and optional default paths. Unknown keys
/// are rejected so typos fail loudly.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    net: NetConfig,
    train: TrainConfig,
    #[serde(default)]
    phantom: Option<PhantomConfig>,
    #[serde(default)]
    paths: Option<RunPaths>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunPaths {
    #[serde(default)]
    manifest: Option<PathBuf>,
    #[serde(default)]
    out: Option<PathBuf>,
}

enum Failure {
    /// Bad flags or unresolvable input paths; exit 2.
    Usage(String),
    /// Errors past argument checking; exit 1.
    Runtime(String),
}

impl From<CoreError> for Failure {
    fn from(err: CoreError) -> Failure {
        Failure::Runtime(err.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    Ok((h, w))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = init_threads().and_then(|()| match cli.command {
        Command::PhantomGen(args) => cmd_phantom_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Denoise(args) => cmd_denoise(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::ClassifyEval(args) => cmd_classify_eval(args),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// CHECKERBOARD_THREADS caps the worker pool; unset means machine cores.
fn init_threads() -> CliResult<()> {
    let value = match env::var("CHECKERBOARD_THREADS") {
        Err(env::VarError::NotPresent) => return Ok(()),
        Err(env::VarError::NotUnicode(_)) => {
            return Err(usage("CHECKERBOARD_THREADS is not valid unicode"))
        }
        Ok(v) => v,
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| usage(format!("CHECKERBOARD_THREADS={value:?} is not a positive integer")))?;
    if n == 0 {
        return Err(usage("CHECKERBOARD_THREADS must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| runtime(format!("thread pool: {e}")))
}

fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

fn cmd_phantom_gen(args: PhantomGenArgs) -> CliResult<()> {
    let (height, width) = args.size;
    let config = PhantomConfig {
        height,
        width,
        speckle_looks: args.looks,
        seed: args.seed,
        ..PhantomConfig::default()
    };
    config
        .validate()
        .map_err(|e| usage(format!("bad phantom flags: {e}")))?;
    checkerboard_core::generate_manifest(args.per_class as usize, &config, &args.out)?;
    println!("{}", args.out.join("manifest.json").display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    require_exists(&args.config, "config file")?;
    let text = fs::read_to_string(&args.config)
        .map_err(|e| runtime(format!("reading {}: {e}", args.config.display())))?;
    let file: RunConfigFile = serde_json::from_str(&text)
        .map_err(|e| runtime(format!("parsing {}: {e}", args.config.display())))?;

    let paths = file.paths.unwrap_or_default();
    let manifest_path = args
        .manifest
        .or(paths.manifest)
        .ok_or_else(|| usage("no --manifest flag and no paths.manifest in the config"))?;
    let out_dir = args
        .out
        .or(paths.out)
        .ok_or_else(|| usage("no --out flag and no paths.out in the config"))?;
    require_exists(&manifest_path, "manifest")?;

    let manifest = DatasetManifest::load(&manifest_path)?;
    let (dual, log) = train_dual(&manifest, &file.net, &file.train)?;
    let index = save_dual(&dual, &out_dir)?;
    let csv_path = out_dir.join("training.csv");
    fs::write(&csv_path, log_csv(&log))
        .map_err(|e| runtime(format!("writing {}: {e}", csv_path.display())))?;
    println!("{}", index.display());
    Ok(())
}

/// Image files in `dir` as (filename, path), sorted by filename so the
/// output order never depends on directory iteration order.
fn list_images(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let entries =
        fs::read_dir(dir).map_err(|e| runtime(format!("reading {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| runtime(format!("reading {}: {e}", dir.display())))?;
        let path = entry.path();
        let is_image = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("pgm") | Some("f32")
        );
        if path.is_file() && is_image {
            let name = entry.file_name().to_string_lossy().into_owned();
            files.push((name, path));
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_denoise(args: DenoiseArgs) -> CliResult<()> {
    require_exists(&args.model, "model")?;
    require_exists(&args.input, "input")?;
    let index = if args.model.is_dir() {
        args.model.join("dual.json")
    } else {
        args.model.clone()
    };
    let dual = load_dual(&index)?;

    let inputs = if args.input.is_dir() {
        let found = list_images(&args.input)?;
        if found.is_empty() {
            return Err(runtime(format!(
                "no .pgm or .f32 images in {}",
                args.input.display()
            )));
        }
        found
    } else {
        let name = args
            .input
            .file_name()
            .ok_or_else(|| usage(format!("{} has no filename", args.input.display())))?
            .to_string_lossy()
            .into_owned();
        vec![(name, args.input.clone())]
    };

    fs::create_dir_all(&args.out)
        .map_err(|e| runtime(format!("creating {}: {e}", args.out.display())))?;
    let outputs: Vec<(String, ImageTensor)> = inputs
        .par_iter()
        .map(|(name, path)| {
            let img = ImageTensor::load(path)?;
            Ok((name.clone(), denoise(&dual, &img)?))
        })
        .collect::<Result<_, CoreError>>()?;
    for (name, img) in &outputs {
        img.save(args.out.join(name))?;
    }
    println!("wrote {} image(s) to {}", outputs.len(), args.out.display());
    Ok(())
}

/// Per-image entry of the evaluation report. `noisy` scores the original
/// against itself, so its tp and ep columns are the 1.0 reference.
#[derive(Serialize)]
struct EvalRow {
    name: String,
    noisy: MetricReport,
    denoised: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr_noisy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr_denoised: Option<f64>,
}

/// Column means over all images; cnr_db averages the per-image dB values
/// and is therefore not 10*log10 of the averaged linear column.
#[derive(Serialize)]
struct MeanRow {
    cnr_linear: f64,
    cnr_db: f64,
    msr: f64,
    tp: f64,
    ep: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr: Option<f64>,
}

#[derive(Serialize)]
struct EvalReport {
    images: usize,
    noisy_mean: MeanRow,
    denoised_mean: MeanRow,
    rows: Vec<EvalRow>,
}

fn mean_row<F: Fn(&EvalRow) -> (&MetricReport, Option<f64>)>(rows: &[EvalRow], pick: F) -> MeanRow {
    let n = rows.len() as f64;
    let mut sums = [0.0; 5];
    let mut psnr_sum = 0.0;
    let mut psnr_count = 0usize;
    for row in rows {
        let (r, p) = pick(row);
        sums[0] += r.cnr_linear;
        sums[1] += r.cnr_db;
        sums[2] += r.msr;
        sums[3] += r.tp;
        sums[4] += r.ep;
        if let Some(v) = p {
            psnr_sum += v;
            psnr_count += 1;
        }
    }
    MeanRow {
        cnr_linear: sums[0] / n,
        cnr_db: sums[1] / n,
        msr: sums[2] / n,
        tp: sums[3] / n,
        ep: sums[4] / n,
        psnr: (psnr_count == rows.len()).then(|| psnr_sum / n),
    }
}

fn mean_table(labelled: &[(&str, &MeanRow)]) -> String {
    let mut out = format!(
        "{:<10}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "method", "CNR", "CNR(dB)", "MSR", "TP", "EP", "PSNR"
    );
    for (label, row) in labelled {
        let psnr = match row.psnr {
            Some(v) => format!("{v:>8.4}"),
            None => format!("{:>8}", "-"),
        };
        out.push_str(&format!(
            "{:<10}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {}\n",
            label, row.cnr_linear, row.cnr_db, row.msr, row.tp, row.ep, psnr
        ));
    }
    out
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    require_exists(&args.noisy, "noisy directory")?;
    require_exists(&args.denoised, "denoised directory")?;
    require_exists(&args.rois, "roi file")?;
    if let Some(clean) = &args.clean {
        require_exists(clean, "clean directory")?;
    }
    let rois = RoiSet::new(load_rois(&args.rois)?)?;

    let noisy_files: BTreeMap<String, PathBuf> = list_images(&args.noisy)?.into_iter().collect();
    let denoised_files: BTreeMap<String, PathBuf> =
        list_images(&args.denoised)?.into_iter().collect();
    let paired: Vec<&String> = noisy_files
        .keys()
        .filter(|name| denoised_files.contains_key(*name))
        .collect();
    if paired.is_empty() {
        return Err(runtime(format!(
            "no filenames shared between {} and {}",
            args.noisy.display(),
            args.denoised.display()
        )));
    }

    let rows: Vec<EvalRow> = paired
        .par_iter()
        .map(|name| {
            let noisy = ImageTensor::load(&noisy_files[*name])?;
            let den = ImageTensor::load(&denoised_files[*name])?;
            let (psnr_noisy, psnr_denoised) = match &args.clean {
                None => (None, None),
                Some(dir) => {
                    let clean = ImageTensor::load(dir.join(name))?;
                    (Some(psnr(&noisy, &clean)?), Some(psnr(&den, &clean)?))
                }
            };
            Ok(EvalRow {
                name: (*name).clone(),
                noisy: evaluate(&noisy, &noisy, &rois)?,
                denoised: evaluate(&den, &noisy, &rois)?,
                psnr_noisy,
                psnr_denoised,
            })
        })
        .collect::<Result<_, CoreError>>()?;

    let report = EvalReport {
        images: rows.len(),
        noisy_mean: mean_row(&rows, |r| (&r.noisy, r.psnr_noisy)),
        denoised_mean: mean_row(&rows, |r| (&r.denoised, r.psnr_denoised)),
        rows,
    };
    let json = serde_json::to_string_pretty(&report).map_err(CoreError::from)?;
    fs::write(&args.report, json)
        .map_err(|e| runtime(format!("writing {}: {e}", args.report.display())))?;

    print!(
        "{}",
        mean_table(&[
            ("noisy", &report.noisy_mean),
            ("denoised", &report.denoised_mean),
        ])
    );
    println!("images: {}", report.images);
    println!("report: {}", args.report.display());
    Ok(())
}

/// Largest logit wins; ties resolve to the lowest class index.
fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Majority vote; ties resolve to the lowest class index.
fn majority(votes: &[usize]) -> usize {
    let mut counts = [0usize; NUM_CLASSES];
    for &v in votes {
        counts[v] += 1;
    }
    argmax(&counts.map(|c| c as f64))
}

fn cmd_classify_eval(args: ClassifyEvalArgs) -> CliResult<()> {
    require_exists(&args.model, "model")?;
    require_exists(&args.manifest, "manifest")?;
    let index = if args.model.is_dir() {
        args.model.join("dual.json")
    } else {
        args.model.clone()
    };
    let dual = load_dual(&index)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    if manifest.is_empty() {
        return Err(runtime("manifest has no records"));
    }
    let data = manifest.load_images()?;
    let parity: Parity = args.predictor.into();

    let predictions: Vec<usize> = data
        .par_iter()
        .map(|(img, _, _)| Ok(argmax(&classify(&dual, img, parity)?)))
        .collect::<Result<_, CoreError>>()?;

    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for ((_, label, _), &pred) in data.iter().zip(&predictions) {
        confusion[*label as usize][pred] += 1;
    }
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    let total = data.len();

    println!("predictor: {}", match parity {
        Parity::Odd => "odd",
        Parity::Even => "even",
    });
    println!("images: {total}");
    println!(
        "image-wise accuracy: {:.4} ({correct}/{total})",
        correct as f64 / total as f64
    );

    // Macro averages; a class never predicted counts as zero precision.
    let mut precisions = [0.0; NUM_CLASSES];
    let mut recalls = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let predicted: usize = (0..NUM_CLASSES).map(|t| confusion[t][c]).sum();
        let support: usize = confusion[c].iter().sum();
        precisions[c] = if predicted == 0 {
            0.0
        } else {
            confusion[c][c] as f64 / predicted as f64
        };
        recalls[c] = if support == 0 {
            0.0
        } else {
            confusion[c][c] as f64 / support as f64
        };
        println!(
            "class {c}: precision {:.4} recall {:.4} support {support}",
            precisions[c], recalls[c]
        );
    }
    let k = NUM_CLASSES as f64;
    println!(
        "macro precision: {:.4}  macro recall: {:.4}",
        precisions.iter().sum::<f64>() / k,
        recalls.iter().sum::<f64>() / k
    );

    // Subject vote: predicted and true labels each by majority over the
    // subject's images, so homogeneous subjects keep their own label.
    let mut by_subject: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for ((_, label, subject), &pred) in data.iter().zip(&predictions) {
        let entry = by_subject.entry(subject.as_str()).or_default();
        entry.0.push(pred);
        entry.1.push(*label as usize);
    }
    let subjects = by_subject.len();
    let subject_correct = by_subject
        .values()
        .filter(|(preds, labels)| majority(preds) == majority(labels))
        .count();
    println!("subjects: {subjects}");
    println!(
        "subject-wise accuracy: {:.4} ({subject_correct}/{subjects})",
        subject_correct as f64 / subjects as f64
    );

    println!("confusion matrix (rows true, cols predicted):");
    for row in &confusion {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
        println!("  {}", cells.join(" "));
    }
    Ok(())
}
