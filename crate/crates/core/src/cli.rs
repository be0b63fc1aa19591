//! Command-line entry point.
//!
//! Settings resolve as built-in defaults, then a `key=value` config file
//! (`--config`), then flags.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::encoding::{encode_regression, EncodingError, GridConfig};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::formats::{self, ClassList, FormatError};
use crate::gradcheck::{self, CheckKind};
use crate::losses::LossConfig;
use crate::pipeline::{self, Extractor, HeadMaps, PipelineError};
use crate::postprocess::{extract_pole_points, topk_extract, Detection, DEFAULT_THRESHOLD};
use crate::synthdata::{self, ClassStyle, SceneSpec, SynthError};
use crate::toynet::{self, Checkpoint, NetError, Topology, ToyNet, TrainConfig};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_VERIFICATION: i32 = 5;
pub const EXIT_VERSION: i32 = 6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("training diverged at iteration {0}")]
    Divergence(usize),
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Version(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Version(_) => EXIT_VERSION,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Divergence { iteration } => CliError::Divergence(iteration),
            NetError::Version(m) => CliError::Version(m),
            NetError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            NetError::InvalidConfig(m) => CliError::Usage(m.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(m) => CliError::Usage(m),
            SynthError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            SynthError::Format(f) => f.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Net(n) => n.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<EncodingError> for CliError {
    fn from(e: EncodingError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "polardet",
    version,
    about = "Oriented object detection with polar boxes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train the network on a dataset directory and write a checkpoint.
    Train(TrainArgs),
    /// Run a checkpoint (or the ground-truth targets) over images.
    Detect(DetectArgs),
    /// Score detections against annotations.
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences.
    GradCheck(GradCheckArgs),
    /// Read pole points off a heatmap CSV.
    Extract(ExtractArgs),
    /// Write the training targets of one annotation file.
    EncodeDump(EncodeDumpArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of images.
    #[arg(long)]
    pub n: Option<usize>,
    /// Exact object count per image; overrides the min/max range.
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Number of classes (at most 4).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Multiplier on every class size range.
    #[arg(long)]
    pub object_scale: Option<f64>,
    /// Noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Minimum distance between object centres in pixels.
    #[arg(long)]
    pub min_separation: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lambda_ring: Option<f64>,
    /// Loss history CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Print progress every this many iterations (0 for never).
    #[arg(long)]
    pub log_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractorKind {
    /// Connected super-threshold regions.
    Cc,
    /// Fixed number of highest peaks.
    Topk,
}

#[derive(Debug, Args)]
pub struct ExtractorArgs {
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorKind>,
    /// Binarization threshold for `cc`.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Number of peaks for `topk`.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory (`images/`, `classes.txt`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Decode the ground-truth targets instead of running a network.
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    /// Apply oriented NMS at this IoU.
    #[arg(long)]
    pub nms: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Detection file written by `detect`.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Dataset directory (`labels/`, `classes.txt`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// IoU threshold; repeat for several.
    #[arg(long)]
    pub iou: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Restrict to these checks: focal, smooth-l1, ring, regression, network.
    #[arg(long)]
    pub loss: Vec<CheckKind>,
    /// Random points per loss.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub loss_tol: Option<f64>,
    #[arg(long)]
    pub net_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    /// Heatmap CSV (`channel,<c>` headers followed by rows).
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Args)]
pub struct EncodeDumpArgs {
    #[command(flatten)]
    pub common: Common,
    /// Annotation file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Class list file; defaults to `class0`, `class1`, ...
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

/// Config-file values under flags.
struct Settings {
    file: HashMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut file = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1))
                })?;
                file.insert(k.trim().replace('_', "-"), v.trim().to_string());
            }
        }
        Ok(Self { file })
    }

    fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config value {key}={v} is not valid"))),
        }
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.opt(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("--{key} is required")))
    }
}

/// Parses `args` (program name first) and runs the command. Text meant for
/// the user is written to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            let _ = write!(stdout, "{e}");
            CliError::Usage(String::new())
        }
        _ => CliError::Usage(e.to_string()),
    });
    let cli = match cli {
        Err(CliError::Usage(m)) if m.is_empty() => return Ok(()),
        other => other?,
    };
    let mut out = String::new();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, &mut out),
        Command::Train(a) => cmd_train(a, &mut out),
        Command::Detect(a) => cmd_detect(a, &mut out),
        Command::Eval(a) => cmd_eval(a, &mut out),
        Command::GradCheck(a) => cmd_grad_check(a, &mut out),
        Command::Extract(a) => cmd_extract(a, &mut out),
        Command::EncodeDump(a) => cmd_encode_dump(a, &mut out),
    };
    let _ = stdout.write_all(out.as_bytes());
    result
}

/// Runs the process command line and returns the exit code.
pub fn main_exit_code() -> i32 {
    let mut stdout = std::io::stdout();
    match run(std::env::args_os(), &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Class styles cycled by `synth --classes`.
const CLASS_STYLES: [ClassStyle; 4] = [
    ClassStyle {
        width: (20.0, 28.0),
        height: (8.0, 12.0),
        intensity: 0.9,
    },
    ClassStyle {
        width: (14.0, 20.0),
        height: (12.0, 18.0),
        intensity: 0.55,
    },
    ClassStyle {
        width: (24.0, 30.0),
        height: (5.0, 8.0),
        intensity: 0.7,
    },
    ClassStyle {
        width: (10.0, 14.0),
        height: (10.0, 14.0),
        intensity: 0.4,
    },
];

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn cmd_synth(a: SynthArgs, out: &mut String) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let n: usize = s.require(a.n, "n")?;
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let dir: PathBuf = s.require(a.common.out, "out")?;
    let num_classes: usize = s.get(a.classes, "classes", 2)?;
    if !(1..=CLASS_STYLES.len()).contains(&num_classes) {
        return Err(CliError::Usage(format!(
            "--classes must be 1 to {}",
            CLASS_STYLES.len()
        )));
    }
    let scale: f64 = s.get(a.object_scale, "object-scale", 1.0)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CliError::Usage("--object-scale must be positive".into()));
    }
    let desk = SceneSpec::desk(0);
    let exact = s.opt(a.objects, "objects")?;
    let min_objects = exact.map_or_else(
        || s.get(a.min_objects, "min-objects", desk.num_objects.0),
        Ok,
    )?;
    let max_objects = exact.map_or_else(
        || s.get(a.max_objects, "max-objects", desk.num_objects.1),
        Ok,
    )?;
    let classes = CLASS_STYLES[..num_classes]
        .iter()
        .map(|c| ClassStyle {
            width: (c.width.0 * scale, c.width.1 * scale),
            height: (c.height.0 * scale, c.height.1 * scale),
            ..*c
        })
        .collect();
    let spec = SceneSpec {
        width: s.get(a.width, "width", desk.width)?,
        height: s.get(a.height, "height", desk.height)?,
        num_objects: (min_objects, max_objects),
        classes,
        background: desk.background,
        noise: s.get(a.noise, "noise", desk.noise)?,
        seed: s.get(a.common.seed, "seed", 0)?,
        min_separation: s.opt(a.min_separation, "min-separation")?,
        stride: desk.stride,
    };
    let dataset = synthdata::generate_dataset(&spec, n)?;
    let class_list = ClassList::numbered(num_classes);
    let manifest = synthdata::write_dataset(&dir, &dataset, &class_list).map_err(|e| match e {
        SynthError::Io(source) => CliError::Io {
            path: dir.clone(),
            source,
        },
        other => other.into(),
    })?;
    let spec_json = serde_json::to_string_pretty(&spec).expect("scene spec serializes");
    write_file(&dir.join("scene.json"), &spec_json)?;
    let _ = writeln!(out, "{}", manifest.display());
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<synthdata::LoadedDataset, CliError> {
    synthdata::read_dataset(dir).map_err(|e| match e {
        SynthError::Io(source) => CliError::Io {
            path: dir.to_path_buf(),
            source,
        },
        SynthError::Format(FormatError::Io(source)) => CliError::Io {
            path: dir.to_path_buf(),
            source,
        },
        other => other.into(),
    })
}

fn grid_for(data: &synthdata::LoadedDataset) -> Result<GridConfig, CliError> {
    let first = data
        .samples
        .first()
        .ok_or_else(|| CliError::Usage("dataset has no images".into()))?;
    let (w, h) = (first.image.width, first.image.height);
    if data
        .samples
        .iter()
        .any(|s| s.image.width != w || s.image.height != h)
    {
        return Err(CliError::Usage("all images must share one size".into()));
    }
    GridConfig::new(w, h, toynet::OUTPUT_STRIDE, data.classes.len())
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_train(a: TrainArgs, out: &mut String) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let data_dir: PathBuf = s.require(a.data, "data")?;
    let ckpt_path: PathBuf = s.require(a.common.out, "out")?;
    let defaults = TrainConfig::default();
    let seed = s.get(a.common.seed, "seed", defaults.seed)?;
    let train_cfg = TrainConfig {
        learning_rate: s.get(a.lr, "lr", defaults.learning_rate)?,
        batch_size: s.get(a.batch, "batch", defaults.batch_size)?,
        iterations: s.get(a.iters, "iters", defaults.iterations)?,
        seed,
        ..defaults
    };
    train_cfg.validate()?;
    let loss_cfg = LossConfig {
        lambda_ring: s.get(
            a.lambda_ring,
            "lambda-ring",
            LossConfig::default().lambda_ring,
        )?,
        ..LossConfig::default()
    };
    let history_path = s
        .opt(a.history, "history")?
        .unwrap_or_else(|| ckpt_path.with_extension("loss.csv"));
    let log_every: usize = s.get(a.log_every, "log-every", 0)?;

    let data = load_dataset(&data_dir)?;
    let grid = grid_for(&data)?;
    let examples = data
        .samples
        .iter()
        .map(|sample| pipeline::training_example(sample, &grid))
        .collect::<Result<Vec<_>, _>>()?;
    let prior = pipeline::mean_grid_radius(&data.samples, grid.stride);
    let mut net = ToyNet::new(Topology::new(data.classes.len()), seed, prior);
    let history =
        toynet::train_with_progress(&examples, &mut net, &train_cfg, &loss_cfg, |i, l| {
            if log_every > 0 && i % log_every == 0 {
                eprintln!(
                    "iter {i} loss {:.6} pole {:.6} regression {:.6}",
                    l.total, l.pole, l.regression
                );
            }
        })?;

    let ckpt = Checkpoint::new(&net, grid.width, grid.height, train_cfg, loss_cfg);
    if let Some(dir) = ckpt_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    ckpt.save(&ckpt_path).map_err(|e| match e {
        NetError::Io(source) => CliError::Io {
            path: ckpt_path.clone(),
            source,
        },
        other => other.into(),
    })?;
    let mut csv = String::from("iteration,total,pole,regression\n");
    for (i, l) in history.iterations.iter().enumerate() {
        let _ = writeln!(csv, "{i},{:e},{:e},{:e}", l.total, l.pole, l.regression);
    }
    write_file(&history_path, &csv)?;
    let _ = writeln!(out, "{}", ckpt_path.display());
    Ok(())
}

fn resolve_extractor(s: &Settings, a: &ExtractorArgs) -> Result<Extractor, CliError> {
    let kind = match s.opt(
        a.extractor.map(|k| format!("{k:?}").to_lowercase()),
        "extractor",
    )? {
        None => ExtractorKind::Cc,
        Some(v) => ExtractorKind::from_str(&v, true)
            .map_err(|_| CliError::Usage(format!("unknown extractor {v:?}")))?,
    };
    Ok(match kind {
        ExtractorKind::Cc => {
            let threshold = s.get(a.threshold, "threshold", DEFAULT_THRESHOLD)?;
            if !(0.0..=1.0).contains(&threshold) {
                return Err(CliError::Usage("--threshold must lie in [0, 1]".into()));
            }
            Extractor::Components { threshold }
        }
        ExtractorKind::Topk => Extractor::TopK {
            k: s.get(a.k, "k", 100)?,
        },
    })
}

pub fn cmd_detect(a: DetectArgs, out: &mut String) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let data_dir: PathBuf = s.require(a.data, "data")?;
    let out_path: PathBuf = s.require(a.common.out, "out")?;
    let extractor = resolve_extractor(&s, &a.extractor)?;
    let nms: Option<f64> = s.opt(a.nms, "nms")?;
    let oracle = a.oracle || s.get(None, "oracle", false)?;
    let data = load_dataset(&data_dir)?;
    let grid = grid_for(&data)?;

    let net = if oracle {
        None
    } else {
        let path: PathBuf = s.require(a.checkpoint, "checkpoint")?;
        let ckpt = Checkpoint::load(&path).map_err(|e| match e {
            NetError::Io(source) => CliError::Io {
                path: path.clone(),
                source,
            },
            other => other.into(),
        })?;
        if ckpt.topology.num_classes != data.classes.len() {
            return Err(CliError::Version(format!(
                "checkpoint predicts {} classes but the dataset declares {}",
                ckpt.topology.num_classes,
                data.classes.len()
            )));
        }
        Some(ckpt.network()?)
    };

    let mut records = Vec::new();
    let mut dropped = 0;
    for (name, sample) in data.names.iter().zip(&data.samples) {
        let heads = match &net {
            Some(net) => pipeline::run_network(net, &sample.image)?,
            None => HeadMaps::from_targets(&pipeline::encode_sample(sample, &grid)?),
        };
        let decoded = pipeline::detect_from_heads(&heads, &grid, extractor, nms);
        dropped += decoded.dropped;
        for det in &decoded.detections {
            records.push(formats::record_from_detection(name, det, &data.classes)?);
        }
    }
    write_file(&out_path, &formats::format_detections(&records))?;
    let _ = writeln!(
        out,
        "{} detections ({dropped} invalid boxes dropped)",
        records.len()
    );
    Ok(())
}

/// Detections grouped per dataset image, in dataset order.
fn detections_by_image(
    text: &str,
    names: &[String],
    classes: &ClassList,
) -> Result<Vec<Vec<Detection>>, CliError> {
    let parsed = formats::parse_detections(text);
    if let Some(w) = parsed.warnings.first() {
        return Err(CliError::Other(format!(
            "detections line {}: {}",
            w.line, w.message
        )));
    }
    let index: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut grouped = vec![Vec::new(); names.len()];
    for rec in &parsed.records {
        let i = *index.get(rec.image_id.as_str()).ok_or_else(|| {
            CliError::Other(format!("detection for unknown image {:?}", rec.image_id))
        })?;
        grouped[i].push(formats::detection_from_record(rec, classes)?);
    }
    Ok(grouped)
}

fn report_rows(report: &EvalReport, classes: &ClassList, csv: &mut String) {
    for c in &report.classes {
        let name = classes.name(c.class_id).unwrap_or("?");
        let _ = writeln!(
            csv,
            "{},{name},{:.6},{},{},{}",
            report.iou_threshold, c.ap, c.true_positives, c.false_positives, c.num_gt
        );
    }
    let _ = writeln!(csv, "{},mAP,{:.6},,,", report.iou_threshold, report.map);
}

pub fn pr_curve_file_name(class_name: &str, iou: f64) -> String {
    format!("pr_{class_name}_iou{iou:.2}.csv")
}

pub fn cmd_eval(a: EvalArgs, out: &mut String) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let det_path: PathBuf = s.require(a.detections, "detections")?;
    let data_dir: PathBuf = s.require(a.data, "data")?;
    let out_dir: PathBuf = s.require(a.common.out, "out")?;
    let ious = if a.iou.is_empty() {
        match s.file.get("iou") {
            Some(v) => v
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Usage(format!("config value iou={v} is not valid")))?,
            None => vec![0.5],
        }
    } else {
        a.iou
    };
    if ious.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(CliError::Usage("--iou must lie in (0, 1]".into()));
    }
    let data = load_dataset(&data_dir)?;
    let detections = detections_by_image(&read_file(&det_path)?, &data.names, &data.classes)?;
    let truth: Vec<_> = data.samples.iter().map(|s| s.annotations.clone()).collect();

    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let mut csv = String::from("iou,class,ap,true_positives,false_positives,num_gt\n");
    for &iou in &ious {
        let report = evaluate(&detections, &truth, data.classes.len(), iou)?;
        report_rows(&report, &data.classes, &mut csv);
        for c in &report.classes {
            let name = data.classes.name(c.class_id)?;
            let mut pr = String::from("threshold,recall,precision\n");
            for p in &c.curve {
                let _ = writeln!(pr, "{:.6},{:.6},{:.6}", p.threshold, p.recall, p.precision);
            }
            write_file(&out_dir.join(pr_curve_file_name(name, iou)), &pr)?;
        }
        let _ = writeln!(out, "mAP@{iou} = {:.6}", report.map);
        for c in &report.classes {
            let _ = writeln!(out, "  {}: AP {:.6}", data.classes.name(c.class_id)?, c.ap);
        }
    }
    write_file(&out_dir.join("report.csv"), &csv)?;
    Ok(())
}

pub fn cmd_grad_check(a: GradCheckArgs, out: &mut String) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let kinds = if a.loss.is_empty() {
        match s.file.get("loss") {
            Some(v) => v
                .split(',')
                .map(|t| t.trim().parse::<CheckKind>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(CliError::Usage)?,
            None => CheckKind::ALL.to_vec(),
        }
    } else {
        a.loss
    };
    let points = s.get(a.points, "points", 1000)?;
    let loss_tol = s.get(a.loss_tol, "loss-tol", gradcheck::LOSS_TOLERANCE)?;
    let net_tol = s.get(a.net_tol, "net-tol", gradcheck::NETWORK_TOLERANCE)?;
    let seed = s.get(a.common.seed, "seed", 0)?;
    let results: Vec<_> = kinds
        .iter()
        .map(|&k| gradcheck::run_check(k, points, seed, loss_tol, net_tol))
        .collect();
    let csv = gradcheck::results_csv(&results);
    match s.opt(a.common.out, "out")? {
        Some(path) => write_file(&path, &csv)?,
        None => out.push_str(&csv),
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({:e} > {:e})", r.kind, r.max_rel_error, r.tolerance))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

pub fn cmd_extract(a: ExtractArgs, out: &mut String) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let path: PathBuf = s.require(a.heatmap, "heatmap")?;
    let heatmap = formats::parse_heatmap_csv(&read_file(&path)?)?;
    let poles = match resolve_extractor(&s, &a.extractor)? {
        Extractor::Components { threshold } => extract_pole_points(&heatmap, threshold),
        Extractor::TopK { k } => topk_extract(&heatmap, k),
    };
    let mut csv = String::from("class,cell_x,cell_y,score\n");
    for p in &poles {
        let _ = writeln!(
            csv,
            "{},{},{},{:.6}",
            p.class_id, p.cell_x, p.cell_y, p.score
        );
    }
    match s.opt(a.common.out, "out")? {
        Some(path) => write_file(&path, &csv)?,
        None => out.push_str(&csv),
    }
    Ok(())
}

pub fn cmd_encode_dump(a: EncodeDumpArgs, out: &mut String) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let labels: PathBuf = s.require(a.labels, "labels")?;
    let out_dir: PathBuf = s.require(a.common.out, "out")?;
    let parsed = formats::parse_annotations(&read_file(&labels)?);
    for w in &parsed.warnings {
        eprintln!("warning: {}:{}: {}", labels.display(), w.line, w.message);
    }
    let classes = match s.opt(a.classes, "classes")? {
        Some(p) => ClassList::parse(&read_file(&p)?),
        None => {
            let mut names: Vec<&str> = Vec::new();
            for r in &parsed.records {
                if !names.contains(&r.class_name.as_str()) {
                    names.push(&r.class_name);
                }
            }
            names.sort_unstable();
            ClassList::new(names)
        }
    };
    let grid = GridConfig::new(
        s.require(a.width, "width")?,
        s.require(a.height, "height")?,
        s.get(a.stride, "stride", GridConfig::DEFAULT_STRIDE)?,
        classes.len().max(1),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let quads = parsed
        .records
        .iter()
        .map(|r| formats::quad_from_record(r, &classes))
        .collect::<Result<Vec<_>, _>>()?;
    let boxes = pipeline::polar_boxes(&quads).map_err(|e| CliError::Other(e.to_string()))?;
    let encoded = encode_regression(&boxes, &grid)?;

    let mut reg = String::from("class,cell_x,cell_y,rho,theta1,theta2\n");
    for c in &encoded.pole_cells {
        let (x, y) = (c.cell_x, c.cell_y);
        let _ = writeln!(
            reg,
            "{},{x},{y},{:.9},{:.9},{:.9}",
            c.class_id,
            encoded.rho_plane.get(x, y),
            encoded.theta1_plane.get(x, y),
            encoded.theta2_plane.get(x, y)
        );
    }
    write_file(
        &out_dir.join("heatmap.csv"),
        &formats::format_heatmap_csv(&encoded.heatmap_target),
    )?;
    write_file(&out_dir.join("regression.csv"), &reg)?;
    let _ = writeln!(
        out,
        "{} objects encoded on a {}x{} grid",
        boxes.len(),
        grid.grid_width(),
        grid.grid_height()
    );
    Ok(())
}
