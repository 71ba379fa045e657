//! Command-line front end: `rga <train|eval|predict|analyze|gradcheck|params>`.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data or checkpoint,
//! 3 numeric failure, 4 failed verification.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

use crate::data::io::{load_image, load_mask, save_gray, save_rgb};
use crate::data::manifest::find_pairs;
use crate::data::{build_manifest, Augment, SampleLoader, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradCheckConfig, Precision};
use crate::metrics::{binarize, confusion, error_map, Aggregation, MetricReport};
use crate::nn::checkpoint::load_checkpoint;
use crate::nn::config::{parse_filters, ConvKind};
use crate::nn::{ModelConfig, RgaNet};
use crate::tensor::ops;
use crate::train::train_loop;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "rga", version, about = "Region-guided attention network for retinal vessel segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a key=value run config.
    Train(TrainArgs),
    /// Per-image metrics of a checkpoint on a labelled test set.
    Eval(EvalArgs),
    /// Probability and binary vessel maps for one image.
    Predict(PredictArgs),
    /// Color-coded TP/FN/FP/TN map of a prediction against ground truth.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of every parameter gradient.
    Gradcheck(GradcheckArgs),
    /// Parameter table and total count.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root with `test/{images,masks}`, or a directory holding
    /// `images/` and `masks/` directly.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for `metrics.csv` and `summary.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// Side length images and masks are resized to.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// Aggregate summed confusion counts instead of averaging per image.
    #[arg(long)]
    pub pooled: bool,
    /// Run config whose model must match the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory for `<stem>_prob.png` and `<stem>_mask.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Binary (or probability) prediction PNG.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mask PNG.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output RGB PNG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
    Both,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::Both)]
    pub precision: PrecisionArg,
    /// Elements checked per parameter group; 0 checks all of them.
    #[arg(long, default_value_t = 12)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "8,16,24,32")]
    pub filters: String,
    /// Breaks the ReLU backward pass; the check must then fail.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, default_value = "8,16,24,32")]
    pub filters: String,
    #[arg(long, default_value = "separable")]
    pub encoder_conv: String,
    #[arg(long, default_value = "standard")]
    pub decoder_conv: String,
    /// Drops the attention stages and the partial decoder.
    #[arg(long)]
    pub plain: bool,
}

/// Text to print and whether the command's own check passed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub text: String,
    pub verified: bool,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, verified: true }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Image { .. } | Error::Data(_) | Error::Checkpoint(_) | Error::Shape(_) => EXIT_DATA,
        Error::NonFinite(_) | Error::DegenerateBatch(_) | Error::TapeState(_) => EXIT_NUMERIC,
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Params(a) => cmd_params(&a),
    }
}

/// Parses arguments, runs the command, prints its output and returns the
/// process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{}", out.text);
            if out.verified {
                EXIT_OK
            } else {
                EXIT_VERIFY
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_config(path: &Path) -> Result<RunConfig> {
    RunConfig::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Trains as configured and writes `config.resolved`, `manifest.tsv`,
/// `train_log.csv`, `best.ckpt` and `last.ckpt` to `output.dir`.
pub fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    let cfg = read_config(&a.config)?;
    train_with(&cfg)
}

pub fn train_with(cfg: &RunConfig) -> Result<Outcome> {
    let root = cfg.dataset_root.as_ref().ok_or_else(|| Error::Config {
        line: 0,
        msg: "`dataset.root` is required for training".into(),
    })?;
    let mut manifest = build_manifest(root, cfg.dataset_layout, cfg.seed)?;
    manifest.size = cfg.dataset_size;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_file(&dir.join("config.resolved"), &cfg.resolved())?;
    write_file(&dir.join("manifest.tsv"), &manifest.to_text())?;
    let mut loader = SampleLoader::new(cfg.dataset_size);
    let outcome = train_loop(&manifest, &mut loader, &cfg.train_config(), Some(dir))?;
    let mut text = String::new();
    let _ = writeln!(text, "{}", crate::train::LOG_HEADER);
    for log in &outcome.logs {
        let _ = writeln!(text, "{}", log.csv_row());
    }
    let _ = writeln!(
        text,
        "best epoch {} (val loss {:.6}); outputs in {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        dir.display()
    );
    Ok(Outcome::ok(text))
}

fn load_net(checkpoint: &Path, config: Option<&Path>) -> Result<RgaNet> {
    let ckpt = load_checkpoint(checkpoint)?;
    match config {
        Some(path) => {
            let cfg = read_config(path)?;
            let mut net = RgaNet::new(cfg.model, 0)?;
            net.load_weights(&ckpt)?;
            Ok(net)
        }
        None => RgaNet::from_checkpoint(&ckpt),
    }
}

/// Writes `metrics.csv` (one row per image plus the aggregate) and
/// `summary.txt`; prints the summary.
pub fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let net = load_net(&a.checkpoint, a.config.as_deref())?;
    let test = a.data.join("test");
    let pairs = if test.join("images").is_dir() {
        find_pairs(&test)?
    } else {
        find_pairs(&a.data)?
    };
    if pairs.is_empty() {
        return Err(Error::Data(format!("no test pairs under {}", a.data.display())));
    }
    let mut loader = SampleLoader::new((a.size, a.size));
    let mut report = MetricReport::new();
    for (image, mask) in &pairs {
        let record = SampleRecord {
            image: image.clone(),
            mask: mask.clone(),
            augment: Augment::Identity,
            split: Split::Test,
        };
        let (img, gt) = loader.materialize(&record)?;
        let pred = binarize(&net.predict(&img)?, crate::metrics::DEFAULT_THRESHOLD);
        report.push(stem(image), confusion(&pred, &gt)?)?;
    }
    let mode = if a.pooled {
        Aggregation::Pooled
    } else {
        Aggregation::PerImageMean
    };
    create_dir(&a.out)?;
    write_file(&a.out.join("metrics.csv"), &report.to_csv(mode)?)?;
    let summary = report.summary(mode)?;
    write_file(&a.out.join("summary.txt"), &summary)?;
    Ok(Outcome::ok(summary))
}

/// Writes the probability map and its thresholded mask at the network
/// input resolution.
pub fn cmd_predict(a: &PredictArgs) -> Result<Outcome> {
    let net = load_net(&a.checkpoint, None)?;
    if a.size == 0 {
        return Err(Error::invalid("--size must be positive"));
    }
    let img = ops::resize_bilinear(&load_image(&a.image)?, a.size, a.size)?;
    let prob = net.predict(&img)?;
    let bin = binarize(&prob, a.threshold);
    create_dir(&a.out)?;
    let name = stem(&a.image);
    let (prob_path, mask_path) = (a.out.join(format!("{name}_prob.png")), a.out.join(format!("{name}_mask.png")));
    save_gray(&prob, &prob_path)?;
    save_gray(&bin, &mask_path)?;
    let fg = bin.sum() as usize;
    Ok(Outcome::ok(format!(
        "{}\n{}\nforeground={fg}/{}\n",
        prob_path.display(),
        mask_path.display(),
        bin.numel()
    )))
}

/// Green TP, red FN, blue FP, black TN.
pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<Outcome> {
    let (pred, gt) = (load_mask(&a.pred)?, load_mask(&a.gt)?);
    if pred.shape() != gt.shape() {
        return Err(Error::Data(format!(
            "prediction {} is {:?} but ground truth {} is {:?}",
            a.pred.display(),
            &pred.shape()[2..],
            a.gt.display(),
            &gt.shape()[2..]
        )));
    }
    save_rgb(&error_map(&pred, &gt)?, &a.out)?;
    let c = confusion(&pred, &gt)?;
    Ok(Outcome::ok(format!(
        "{}\ntp={} fn={} fp={} tn={}\n",
        a.out.display(),
        c.tp,
        c.fn_,
        c.fp,
        c.tn
    )))
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let filters = parse_filters(&a.filters)?;
    let precisions: &[Precision] = match a.precision {
        PrecisionArg::F32 => &[Precision::F32],
        PrecisionArg::F64 => &[Precision::F64],
        PrecisionArg::Both => &[Precision::F64, Precision::F32],
    };
    let mut text = String::new();
    let mut verified = true;
    for &p in precisions {
        let mut cfg = GradCheckConfig::new(p);
        cfg.model = ModelConfig::with_filters(filters);
        cfg.size = a.size;
        cfg.batch = a.batch;
        cfg.seed = a.seed;
        cfg.samples_per_group = (a.samples > 0).then_some(a.samples);
        cfg.corrupt_backward = a.corrupt_backward;
        let report = run_gradcheck(&cfg)?;
        let _ = writeln!(text, "{report}");
        verified &= report.passed();
    }
    Ok(Outcome { text, verified })
}

/// Per-tensor table, then a last line `total=<n>`.
pub fn cmd_params(a: &ParamsArgs) -> Result<Outcome> {
    let mut cfg = ModelConfig::with_filters(parse_filters(&a.filters)?);
    cfg.encoder_conv = a.encoder_conv.parse::<ConvKind>()?;
    cfg.decoder_conv = a.decoder_conv.parse::<ConvKind>()?;
    if a.plain {
        cfg.attention = false;
        cfg.partial_decoder = false;
    }
    let net = RgaNet::<f32>::build(cfg)?;
    let table = net.param_table();
    let width = table.iter().map(|(n, ..)| n.len()).max().unwrap_or(4).max(4);
    let mut text = format!("{:<width$}  {:<16}  {:>7}\n", "name", "shape", "numel");
    for (name, shape, numel) in &table {
        let _ = writeln!(text, "{name:<width$}  {:<16}  {numel:>7}", format!("{shape:?}"));
    }
    let _ = writeln!(text, "total={}", net.param_count());
    Ok(Outcome::ok(text))
}
