//! Configuration and commands behind the `nusa` binary.
//!
//! Every command reads an optional flat `key = value` config file, applies
//! command-line overrides and writes its artifacts atomically into the
//! `--out` directory. [`run`] parses arguments and maps failures to exit
//! codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{knn_fit, pca_fit, OutlierScorer};
use crate::data::{
    enumerate_class_combinations, generate_gaussian_classes, load_csv, load_features_csv,
    split_known_unknown, LabeledDataset, SplitSpec, DEFAULT_LABEL_COLUMN,
};
use crate::error::{NusaError, Result};
use crate::eval::{
    average_curves, histogram, invert_scores, method_metrics, normalize_scores, scored_samples,
    Curve, MethodMetrics, DEFAULT_GRID_SIZE,
};
use crate::io::write_atomic;
use crate::linalg::DenseVector;
use crate::network::{accuracy, train, Activation, Network, TrainConfig, TrainHistory};
use crate::nusa::{
    aggregate_scores, detect_batch, null_space_perturbation, percentile, Aggregation,
    LayerSelector, NusaConfig, NusaSign, DEFAULT_THRESHOLD_PERCENTILE,
};
use crate::rng::Rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Exit code for a failure of the given kind.
pub fn exit_code(err: &NusaError) -> i32 {
    match err {
        NusaError::Config(_) | NusaError::InvalidInput(_) | NusaError::Unsupported(_) => EXIT_USAGE,
        NusaError::Numeric(_) | NusaError::Degenerate(_) => EXIT_NUMERIC,
        NusaError::DimensionMismatch { .. }
        | NusaError::LabelOutOfRange { .. }
        | NusaError::EmptyDataset
        | NusaError::UndefinedMetric(_)
        | NusaError::Parse { .. }
        | NusaError::Io { .. }
        | NusaError::Json(_) => EXIT_DATA,
    }
}

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic {
        num_classes: usize,
        dim: usize,
        separation: f64,
        samples_per_class: usize,
    },
}

/// All experiment settings. Loaded from a flat `key = value` file; `#`
/// starts a comment.
///
/// | key | default |
/// |-----|---------|
/// | `data` | unset (synthetic) |
/// | `label_column` | `label` |
/// | `synthetic_classes` | 10 |
/// | `synthetic_dim` | 64 |
/// | `synthetic_separation` | 4.0 |
/// | `synthetic_samples_per_class` | 100 |
/// | `hidden` | `32` (comma-separated widths) |
/// | `activation` | `sigmoid` |
/// | `batch_size` | 25 |
/// | `learning_rate` | 0.01 |
/// | `epochs` | 200 |
/// | `early_stop_patience` | 10 |
/// | `lambda` | 0.1 |
/// | `nusa_sign` | `maximize_inlier_score` |
/// | `nusa_layers` | `auto` |
/// | `aggregation` | `mean` |
/// | `threshold_percentile` | 5 |
/// | `train_fraction` | 0.8 |
/// | `num_known` | 5 |
/// | `knn_k` | 5 |
/// | `pca_components` | `auto` |
/// | `grid_size` | 101 |
/// | `histogram_bins` | 20 |
/// | `seed` | 0 |
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub label_column: String,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    pub threshold_percentile: f64,
    pub train_fraction: f64,
    pub num_known: usize,
    pub knn_k: usize,
    pub pca_components: Option<usize>,
    pub grid_size: usize,
    pub histogram_bins: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic {
                num_classes: 10,
                dim: 64,
                separation: 4.0,
                samples_per_class: 100,
            },
            label_column: DEFAULT_LABEL_COLUMN.to_string(),
            hidden: vec![32],
            activation: Activation::Sigmoid,
            train: TrainConfig::default(),
            threshold_percentile: DEFAULT_THRESHOLD_PERCENTILE,
            train_fraction: 0.8,
            num_known: 5,
            knn_k: 5,
            pca_components: None,
            grid_size: DEFAULT_GRID_SIZE,
            histogram_bins: 20,
            seed: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| NusaError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                NusaError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(NusaError::Config(format!(
                    "line {}: duplicate key {key:?}",
                    n + 1
                )));
            }
        }
        let mut cfg = ExperimentConfig::default();
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NusaError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one setting. Unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let synth = |cfg: &mut Self| -> (usize, usize, f64, usize) {
            match cfg.data {
                DataSource::Synthetic {
                    num_classes,
                    dim,
                    separation,
                    samples_per_class,
                } => (num_classes, dim, separation, samples_per_class),
                DataSource::Csv(_) => (10, 64, 4.0, 100),
            }
        };
        let set_synth = |cfg: &mut Self, s: (usize, usize, f64, usize)| {
            if !matches!(cfg.data, DataSource::Csv(_)) {
                cfg.data = DataSource::Synthetic {
                    num_classes: s.0,
                    dim: s.1,
                    separation: s.2,
                    samples_per_class: s.3,
                };
            }
        };
        match key {
            "data" => self.data = DataSource::Csv(PathBuf::from(value)),
            "label_column" => self.label_column = value.to_string(),
            "synthetic_classes" => {
                let mut s = synth(self);
                s.0 = parse_value(key, value)?;
                set_synth(self, s);
            }
            "synthetic_dim" => {
                let mut s = synth(self);
                s.1 = parse_value(key, value)?;
                set_synth(self, s);
            }
            "synthetic_separation" => {
                let mut s = synth(self);
                s.2 = parse_value(key, value)?;
                set_synth(self, s);
            }
            "synthetic_samples_per_class" => {
                let mut s = synth(self);
                s.3 = parse_value(key, value)?;
                set_synth(self, s);
            }
            "hidden" => self.hidden = parse_list(key, value)?,
            "activation" => self.activation = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "learning_rate" => self.train.learning_rate = parse_value(key, value)?,
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "early_stop_patience" => self.train.early_stop_patience = parse_value(key, value)?,
            "lambda" => self.train.nusa.lambda = parse_value(key, value)?,
            "nusa_sign" => self.train.nusa.sign = parse_value::<NusaSign>(key, value)?,
            "nusa_layers" => self.train.nusa.layers = parse_value::<LayerSelector>(key, value)?,
            "aggregation" => self.train.nusa.aggregation = parse_value::<Aggregation>(key, value)?,
            "threshold_percentile" => self.threshold_percentile = parse_value(key, value)?,
            "train_fraction" => self.train_fraction = parse_value(key, value)?,
            "num_known" => self.num_known = parse_value(key, value)?,
            "knn_k" => self.knn_k = parse_value(key, value)?,
            "pca_components" => {
                self.pca_components = match value {
                    "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "grid_size" => self.grid_size = parse_value(key, value)?,
            "histogram_bins" => self.histogram_bins = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(NusaError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NusaError::Config(msg));
        if let DataSource::Synthetic {
            num_classes,
            dim,
            separation,
            samples_per_class,
        } = self.data
        {
            if num_classes < 2 || dim == 0 || samples_per_class == 0 {
                return bad(
                    "synthetic data needs at least 2 classes, dim ≥ 1 and samples ≥ 1".into(),
                );
            }
            if !(separation > 0.0 && separation.is_finite()) {
                return bad(format!(
                    "synthetic_separation must be positive, got {separation}"
                ));
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if !(0.0..=100.0).contains(&self.threshold_percentile) {
            return bad(format!(
                "threshold_percentile must be in [0, 100], got {}",
                self.threshold_percentile
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if self.grid_size < 2 || self.histogram_bins == 0 {
            return bad("grid_size must be ≥ 2 and histogram_bins ≥ 1".into());
        }
        self.train
            .validate()
            .map_err(|e| NusaError::Config(e.to_string()))
    }

    /// Loads the CSV dataset or generates the synthetic one.
    pub fn load_data(&self) -> Result<LabeledDataset> {
        match &self.data {
            DataSource::Csv(path) => load_csv(path, &self.label_column),
            DataSource::Synthetic {
                num_classes,
                dim,
                separation,
                samples_per_class,
            } => generate_gaussian_classes(
                *num_classes,
                *dim,
                *separation,
                *samples_per_class,
                stream_seed(self.seed, STREAM_DATA),
            ),
        }
    }
}

const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_COMBINATION: u64 = 5;

/// Seed of an independent stream derived from the master seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    Rng::derived(seed, stream).next_u64()
}

/// The untrained network [`train_network`] starts from.
pub fn initial_network(
    input_dim: usize,
    num_classes: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Network> {
    let mut rng = Rng::new(stream_seed(seed, STREAM_INIT));
    Network::random(
        input_dim,
        &cfg.hidden,
        num_classes,
        cfg.activation,
        &mut rng,
    )
}

/// Trains a fresh network on `data` with `cfg`'s settings, all randomness
/// derived from `seed`.
pub fn train_network(
    data: &LabeledDataset,
    cfg: &ExperimentConfig,
    nusa: &NusaConfig,
    seed: u64,
) -> Result<(Network, TrainHistory)> {
    let net = initial_network(data.dim(), data.num_classes(), cfg, seed)?;
    let tc = TrainConfig {
        rng_seed: stream_seed(seed, STREAM_TRAIN),
        nusa: nusa.clone(),
        ..cfg.train.clone()
    };
    train(net, data, &tc)
}

#[derive(Debug, Parser)]
#[command(
    name = "nusa",
    version,
    about = "Classifiers with built-in null space outlier detection"
)]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and write the model and training history.
    Train(TrainArgs),
    /// Score samples and flag outliers with a trained model.
    Detect(DetectArgs),
    /// Run every known/unknown class combination and compare detectors.
    Sweep(SweepArgs),
    /// Show that null-space perturbations leave the output unchanged.
    DemoNullspace(DemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Labeled CSV dataset (overrides the config's data source).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// NuSA weight (overrides the config).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Also train with this λ on the same data and seed, and report the
    /// accuracy difference.
    #[arg(long)]
    pub compare_with: Option<f64>,
    /// Comma-separated known classes: train on their training split and
    /// report held-out accuracy.
    #[arg(long, value_delimiter = ',')]
    pub known: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model JSON written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Feature CSV; a label column, if present, is ignored.
    #[arg(long)]
    pub data: PathBuf,
    /// A number, or `auto` to calibrate against `--calibration`.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub threshold: String,
    /// Feature CSV of known-good samples used by `--threshold auto`.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of known classes per combination (overrides the config).
    #[arg(long)]
    pub num_known: Option<usize>,
    /// Run only the first N combinations in lexicographic order.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model JSON written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Feature CSV; a label column, if present, is ignored.
    #[arg(long)]
    pub data: PathBuf,
    /// Row of `--data` to perturb.
    #[arg(long, default_value_t = 0)]
    pub sample_index: usize,
    /// Norm of the added null-space perturbation.
    #[arg(long, default_value_t = 1000.0)]
    pub magnitude: f64,
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    lambda: f64,
    epochs_run: usize,
    stopped_early: bool,
    final_loss: f64,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
    mean_train_nusa: f64,
}

fn train_once(
    cfg: &ExperimentConfig,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    lambda: f64,
) -> Result<(Network, TrainHistory, TrainSummary)> {
    let nusa = NusaConfig {
        lambda,
        ..cfg.train.nusa.clone()
    };
    let (net, hist) = train_network(train_set, cfg, &nusa, cfg.seed)?;
    let last = hist
        .last()
        .ok_or_else(|| NusaError::Config("epochs must be at least 1".into()))?;
    let scores = aggregate_scores(&net, train_set.features(), &nusa)?;
    let summary = TrainSummary {
        lambda,
        epochs_run: hist.epochs.len(),
        stopped_early: hist.stopped_early,
        final_loss: last.loss,
        train_accuracy: accuracy(&net, train_set)?,
        test_accuracy: test_set.map(|t| accuracy(&net, t)).transpose()?,
        mean_train_nusa: scores.iter().sum::<f64>() / scores.len() as f64,
    };
    Ok((net, hist, summary))
}

fn print_summary(out: &mut dyn Write, tag: &str, s: &TrainSummary) -> std::io::Result<()> {
    write!(
        out,
        "{tag}: lambda {} epochs {} loss {:.6} train_accuracy {:.4}",
        s.lambda, s.epochs_run, s.final_loss, s.train_accuracy
    )?;
    if let Some(t) = s.test_accuracy {
        write!(out, " test_accuracy {t:.4}")?;
    }
    writeln!(out, " mean_nusa {:.4}", s.mean_train_nusa)
}

/// Writes `model.json`, `history.csv` and `train_metrics.json`; with
/// `--compare-with` also `model_compare.json` and `history_compare.csv`.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(d) = &args.data {
        cfg.data = DataSource::Csv(d.clone());
    }
    if let Some(l) = args.lambda {
        cfg.train.nusa.lambda = l;
    }
    cfg.validate()?;
    let data = cfg.load_data()?;
    let (train_set, test_set) = match &args.known {
        Some(known) => {
            let spec = SplitSpec::new(
                data.num_classes(),
                known,
                cfg.train_fraction,
                stream_seed(cfg.seed, STREAM_SPLIT),
            )?;
            let split = split_known_unknown(&data, &spec)?;
            (split.train, Some(split.test_inliers))
        }
        None => (data, None),
    };

    let dir = &args.common.out;
    let (net, hist, summary) =
        train_once(&cfg, &train_set, test_set.as_ref(), cfg.train.nusa.lambda)?;
    net.save(&dir.join("model.json"))?;
    write_atomic(&dir.join("history.csv"), hist.to_csv().as_bytes())?;
    let io = |e| NusaError::io("stdout", e);
    print_summary(out, "model", &summary).map_err(io)?;

    let mut metrics = vec![summary];
    if let Some(other) = args.compare_with {
        let (net2, hist2, s2) = train_once(&cfg, &train_set, test_set.as_ref(), other)?;
        net2.save(&dir.join("model_compare.json"))?;
        write_atomic(&dir.join("history_compare.csv"), hist2.to_csv().as_bytes())?;
        print_summary(out, "compare", &s2).map_err(io)?;
        let (a, b) = match (metrics[0].test_accuracy, s2.test_accuracy) {
            (Some(a), Some(b)) => (a, b),
            _ => (metrics[0].train_accuracy, s2.train_accuracy),
        };
        writeln!(out, "accuracy difference (model - compare): {:+.4}", a - b).map_err(io)?;
        metrics.push(s2);
    }
    write_json(&dir.join("train_metrics.json"), &metrics)
}

/// Writes `scores.csv` with `index,nusa_score,predicted_class,is_outlier`.
pub fn cmd_detect(args: &DetectArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let net = Network::load(&args.model)?;
    let xs = load_features_csv(&args.data, &cfg.label_column)?;
    if xs.is_empty() {
        return Err(NusaError::EmptyDataset);
    }
    let nusa = &cfg.train.nusa;
    let threshold = match args.threshold.as_str() {
        "auto" => {
            let path = args.calibration.as_ref().ok_or_else(|| {
                NusaError::Config("--threshold auto requires --calibration".into())
            })?;
            let cal = load_features_csv(path, &cfg.label_column)?;
            if cal.is_empty() {
                return Err(NusaError::EmptyDataset);
            }
            percentile(
                &aggregate_scores(&net, &cal, nusa)?,
                cfg.threshold_percentile,
            )?
        }
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| {
                NusaError::Config(format!("--threshold: expected a number or auto, got {t:?}"))
            })?,
    };
    let reports = detect_batch(&net, &xs, threshold, nusa)?;
    let mut csv = String::from("index,nusa_score,predicted_class,is_outlier\n");
    for (i, r) in reports.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{}\n",
            r.aggregate_score, r.predicted_class, r.is_outlier as u8
        ));
    }
    write_atomic(&args.common.out.join("scores.csv"), csv.as_bytes())?;
    let flagged = reports.iter().filter(|r| r.is_outlier).count();
    writeln!(
        out,
        "threshold {threshold}: {flagged} of {} samples flagged as outliers",
        reports.len()
    )
    .map_err(|e| NusaError::io("stdout", e))
}

pub const SWEEP_METHODS: [&str; 3] = ["nusa", "knn", "pca"];

#[derive(Debug, Clone, Serialize)]
pub struct CombinationRecord {
    pub index: usize,
    pub known_classes: Vec<usize>,
    pub unknown_classes: Vec<usize>,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    pub methods: Vec<MethodMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_pr_auc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub num_known: usize,
    pub num_combinations: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub mean_test_accuracy: Option<f64>,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Serialize)]
struct SweepDocument<'a> {
    summary: &'a SweepSummary,
    records: &'a [CombinationRecord],
}

struct CombinationResult {
    record: CombinationRecord,
    curves: Vec<(Curve, Curve)>,
    /// Normalized (inlier, outlier) scores per method.
    scores: Vec<(Vec<f64>, Vec<f64>)>,
}

fn run_combination(
    data: &LabeledDataset,
    cfg: &ExperimentConfig,
    index: usize,
    known: &[usize],
) -> Result<CombinationResult> {
    let seed = stream_seed(cfg.seed, STREAM_COMBINATION.wrapping_add(index as u64 * 16));
    let spec = SplitSpec::new(
        data.num_classes(),
        known,
        cfg.train_fraction,
        stream_seed(seed, STREAM_SPLIT),
    )?;
    let split = split_known_unknown(data, &spec)?;
    let (net, _) = train_network(&split.train, cfg, &cfg.train.nusa, seed)?;
    let test_accuracy = accuracy(&net, &split.test_inliers)?;

    let inl = split.test_inliers.features();
    let outl = split.test_outliers.features();
    let n_in = inl.len();
    let test: Vec<DenseVector> = inl.iter().chain(outl).cloned().collect();

    let nusa_raw = aggregate_scores(&net, &test, &cfg.train.nusa)?;
    let nusa = invert_scores(&normalize_scores(&nusa_raw)?);
    let knn = knn_fit(&split.train, cfg.knn_k.min(split.train.len()))?;
    let pca = pca_fit(&split.train, cfg.pca_components)?;
    let knn_scores = normalize_scores(&knn.score_all(&test)?)?;
    let pca_scores = normalize_scores(&pca.score_all(&test)?)?;

    let mut methods = Vec::new();
    let mut curves = Vec::new();
    let mut scores = Vec::new();
    for (name, s) in SWEEP_METHODS.iter().zip([nusa, knn_scores, pca_scores]) {
        let (inliers, outliers) = s.split_at(n_in);
        let (m, roc, pr) = method_metrics(name, &scored_samples(inliers, outliers))?;
        methods.push(m);
        curves.push((roc, pr));
        scores.push((inliers.to_vec(), outliers.to_vec()));
    }
    Ok(CombinationResult {
        record: CombinationRecord {
            index,
            known_classes: spec.known_classes.clone(),
            unknown_classes: spec.unknown_classes.clone(),
            status: "ok",
            error: None,
            test_accuracy: Some(test_accuracy),
            methods,
        },
        curves,
        scores,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Writes `metrics.json`, `combinations/combination_NNNN.json`, and per
/// method `roc_<m>.csv`, `pr_<m>.csv`, `hist_<m>_known.csv`,
/// `hist_<m>_unknown.csv`. Failed combinations are recorded and skipped;
/// the command fails only if every combination fails.
pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<SweepSummary> {
    let mut cfg = load_config(&args.common)?;
    if let Some(k) = args.num_known {
        cfg.num_known = k;
    }
    cfg.validate()?;
    let data = cfg.load_data()?;
    let mut combos = enumerate_class_combinations(data.num_classes(), cfg.num_known)?;
    if let Some(limit) = args.limit {
        combos.truncate(limit);
    }
    if combos.is_empty() {
        return Err(NusaError::Config("--limit 0 leaves nothing to run".into()));
    }
    log::info!("running {} combinations", combos.len());

    let results: Vec<(usize, Result<CombinationResult>)> = combos
        .par_iter()
        .enumerate()
        .map(|(i, known)| (i, run_combination(&data, &cfg, i, known)))
        .collect();

    let dir = &args.common.out;
    let mut records = Vec::new();
    let mut ok = Vec::new();
    let mut first_err = None;
    for (i, res) in results {
        let record = match res {
            Ok(r) => {
                let rec = r.record.clone();
                ok.push(r);
                rec
            }
            Err(e) => {
                log::warn!("combination {i} failed: {e}");
                let unknown = (0..data.num_classes())
                    .filter(|c| !combos[i].contains(c))
                    .collect();
                let rec = CombinationRecord {
                    index: i,
                    known_classes: combos[i].clone(),
                    unknown_classes: unknown,
                    status: "failed",
                    error: Some(e.to_string()),
                    test_accuracy: None,
                    methods: Vec::new(),
                };
                first_err.get_or_insert(e);
                rec
            }
        };
        write_json(
            &dir.join("combinations")
                .join(format!("combination_{i:04}.json")),
            &record,
        )?;
        records.push(record);
    }
    if ok.is_empty() {
        return Err(first_err.expect("at least one combination ran"));
    }

    let mut method_summaries = Vec::new();
    for (m, name) in SWEEP_METHODS.iter().enumerate() {
        let aucs: Vec<f64> = ok.iter().map(|r| r.record.methods[m].auc).collect();
        let pr_aucs: Vec<f64> = ok.iter().map(|r| r.record.methods[m].pr_auc).collect();
        let (mean_auc, std_auc) = mean_std(&aucs);
        method_summaries.push(MethodSummary {
            method: name.to_string(),
            mean_auc,
            std_auc,
            mean_pr_auc: mean_std(&pr_aucs).0,
        });

        let rocs: Vec<Curve> = ok.iter().map(|r| r.curves[m].0.clone()).collect();
        let prs: Vec<Curve> = ok.iter().map(|r| r.curves[m].1.clone()).collect();
        write_atomic(
            &dir.join(format!("roc_{name}.csv")),
            average_curves(&rocs, cfg.grid_size)?.to_csv().as_bytes(),
        )?;
        write_atomic(
            &dir.join(format!("pr_{name}.csv")),
            average_curves(&prs, cfg.grid_size)?.to_csv().as_bytes(),
        )?;
        let known: Vec<f64> = ok
            .iter()
            .flat_map(|r| r.scores[m].0.iter().copied())
            .collect();
        let unknown: Vec<f64> = ok
            .iter()
            .flat_map(|r| r.scores[m].1.iter().copied())
            .collect();
        for (tag, s) in [("known", known), ("unknown", unknown)] {
            let h = histogram(&s, cfg.histogram_bins, (0.0, 1.0))?;
            write_atomic(
                &dir.join(format!("hist_{name}_{tag}.csv")),
                h.to_csv().as_bytes(),
            )?;
        }
    }
    let accs: Vec<f64> = ok.iter().filter_map(|r| r.record.test_accuracy).collect();
    let summary = SweepSummary {
        num_known: cfg.num_known,
        num_combinations: records.len(),
        succeeded: ok.len(),
        failed: records.len() - ok.len(),
        mean_test_accuracy: Some(mean_std(&accs).0),
        methods: method_summaries,
    };
    write_json(
        &dir.join("metrics.json"),
        &SweepDocument {
            summary: &summary,
            records: &records,
        },
    )?;
    let io = |e| NusaError::io("stdout", e);
    writeln!(
        out,
        "{} combinations ({} failed), mean test accuracy {:.4}",
        summary.num_combinations,
        summary.failed,
        summary.mean_test_accuracy.unwrap_or(f64::NAN)
    )
    .map_err(io)?;
    for m in &summary.methods {
        writeln!(
            out,
            "{:>5}: AUC {:.4} ± {:.4}, PR-AUC {:.4}",
            m.method, m.mean_auc, m.std_auc, m.mean_pr_auc
        )
        .map_err(io)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub original: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub max_delta: f64,
    pub perturbation_norm: f64,
}

/// Writes `perturbed.csv` holding the perturbed sample.
pub fn cmd_demo_nullspace(args: &DemoArgs, out: &mut dyn Write) -> Result<DemoOutcome> {
    let cfg = load_config(&args.common)?;
    let net = Network::load(&args.model)?;
    let xs = load_features_csv(&args.data, &cfg.label_column)?;
    let x = xs.get(args.sample_index).ok_or_else(|| {
        NusaError::Config(format!(
            "--sample-index {} out of range for {} samples",
            args.sample_index,
            xs.len()
        ))
    })?;
    let xp = null_space_perturbation(&net, x, args.magnitude, cfg.seed)?;
    let (_, p0) = net.predict(x)?;
    let (_, p1) = net.predict(&xp)?;
    let max_delta = p0
        .as_slice()
        .iter()
        .zip(p1.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let perturbation_norm = x
        .as_slice()
        .iter()
        .zip(xp.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();

    let header: Vec<String> = (0..xp.dim()).map(|i| format!("f{i}")).collect();
    let row: Vec<String> = xp.as_slice().iter().map(|v| v.to_string()).collect();
    let csv = format!("{}\n{}\n", header.join(","), row.join(","));
    write_atomic(&args.common.out.join("perturbed.csv"), csv.as_bytes())?;

    let fmt = |v: &[f64]| {
        v.iter()
            .map(|p| format!("{p:.9}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let io = |e| NusaError::io("stdout", e);
    writeln!(out, "original output:  {}", fmt(p0.as_slice())).map_err(io)?;
    writeln!(out, "perturbed output: {}", fmt(p1.as_slice())).map_err(io)?;
    writeln!(out, "max abs delta: {max_delta:e}").map_err(io)?;
    writeln!(out, "perturbation norm: {perturbation_norm}").map_err(io)?;
    Ok(DemoOutcome {
        original: p0.into_vec(),
        perturbed: p1.into_vec(),
        max_delta,
        perturbation_norm,
    })
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Detect(a) => cmd_detect(a, out),
        Command::Sweep(a) => cmd_sweep(a, out).map(|_| ()),
        Command::DemoNullspace(a) => cmd_demo_nullspace(a, out).map(|_| ()),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
