//! Command implementations behind the `submatch` binary.
//!
//! Each command is a function of its input files and flags. Paths inside an
//! experiment config are resolved against the working directory. The raw
//! config is echoed into every JSON artifact.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset_io::{self, Manifest, Split};
use crate::error::Error;
use crate::eval::{evaluate, EvalReport};
use crate::graph::{build_dataset, DatasetKind, GeneratorConfig, Graph, GraphSizes, Sample, SplitCounts};
use crate::model::{discretize, forward, Checkpoint, ModelConfig, ModelParams};
use crate::oracle::{find_all_isomorphisms, IsoMapping};
use crate::train::{history_csv, train_with_progress, HistoryRow, TrainConfig};

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, arguments or input files. Exit code 2.
    #[error("{0}")]
    Invalid(Error),
    /// Failure while running a valid request. Exit code 1.
    #[error("{0}")]
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn invalid(msg: impl Into<String>) -> CliError {
        CliError::Invalid(Error::InvalidArgument(msg.into()))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

trait Classify<T> {
    fn invalid(self) -> CliResult<T>;
    fn runtime(self) -> CliResult<T>;
}

impl<T> Classify<T> for crate::Result<T> {
    fn invalid(self) -> CliResult<T> {
        self.map_err(CliError::Invalid)
    }
    fn runtime(self) -> CliResult<T> {
        self.map_err(CliError::Runtime)
    }
}

fn default_dataset_dir() -> PathBuf {
    PathBuf::from("data")
}
fn default_checkpoint() -> PathBuf {
    PathBuf::from("checkpoint.json")
}
fn default_history() -> PathBuf {
    PathBuf::from("history.csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    #[serde(default = "default_dataset_dir")]
    pub dataset_dir: PathBuf,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
    #[serde(default = "default_history")]
    pub history: PathBuf,
    /// Evaluation report written by `train` on the test split, if set.
    #[serde(default)]
    pub report: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset_dir: default_dataset_dir(),
            checkpoint: default_checkpoint(),
            history: default_history(),
            report: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub generator: GeneratorConfig,
    pub sizes: GraphSizes,
    pub counts: SplitCounts,
    /// Defaults to the standard three-layer model for the feature encoding.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl ExperimentConfig {
    pub fn model_config(&self) -> ModelConfig {
        self.model
            .clone()
            .unwrap_or_else(|| ModelConfig::standard(self.generator.feature_dim()))
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.generator.validate()?;
        if self.sizes.query == 0 {
            return Err(Error::InvalidArgument("query size must be at least 1".into()));
        }
        if self.sizes.query > self.sizes.data {
            return Err(Error::InvalidArgument(format!(
                "query size {} exceeds data size {}",
                self.sizes.query, self.sizes.data
            )));
        }
        let model = self.model_config();
        model.validate()?;
        if model.input_dim() != self.generator.feature_dim() {
            return Err(Error::InvalidArgument(format!(
                "model input dim {} does not match feature dim {}",
                model.input_dim(),
                self.generator.feature_dim()
            )));
        }
        self.train.validate()
    }
}

/// A parsed config together with the JSON it was read from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: Value,
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let raw: Value = dataset_io::read_json(path).invalid()?;
    let config: ExperimentConfig = serde_json::from_value(raw.clone())
        .map_err(|e| CliError::Invalid(Error::Json {
            context: path.display().to_string(),
            source: e,
        }))?;
    config.validate().invalid()?;
    Ok(LoadedConfig { config, raw })
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::Runtime(Error::Io {
                path: dir.to_path_buf(),
                source: e,
            }))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::Runtime(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenSummary {
    pub dataset_dir: PathBuf,
    pub counts: SplitCounts,
}

/// Generates the dataset described by the config into `paths.dataset_dir`.
pub fn cmd_gen(config_path: &Path) -> CliResult<GenSummary> {
    let LoadedConfig { config, raw } = load_config(config_path)?;
    let dataset = build_dataset(config.dataset, &config.generator, config.sizes, config.counts).invalid()?;
    let manifest = Manifest {
        kind: config.dataset,
        generator: config.generator.clone(),
        sizes: config.sizes,
        counts: config.counts,
        feature_dim: config.generator.feature_dim(),
        experiment: Some(raw),
    };
    dataset_io::write_dataset(&config.paths.dataset_dir, &dataset, &manifest).runtime()?;
    Ok(GenSummary {
        dataset_dir: config.paths.dataset_dir,
        counts: config.counts,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub best_iteration: usize,
    pub best_validation_loss: Option<f64>,
    pub final_train_loss: f64,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub test_report: Option<EvalReport>,
}

fn check_feature_dim(samples: &[Sample], model: &ModelConfig, what: &str) -> CliResult<()> {
    for (i, s) in samples.iter().enumerate() {
        for g in [&s.query, &s.data] {
            if g.feature_dim() != model.input_dim() {
                return Err(CliError::invalid(format!(
                    "{what} sample {i} has feature dim {} but the model expects {}",
                    g.feature_dim(),
                    model.input_dim()
                )));
            }
        }
    }
    Ok(())
}

/// Trains on the generated dataset and writes the best checkpoint and the
/// loss history. `progress` sees each validated history row.
pub fn cmd_train(config_path: &Path, progress: impl FnMut(&HistoryRow)) -> CliResult<TrainSummary> {
    let LoadedConfig { config, raw } = load_config(config_path)?;
    let model_cfg = config.model_config();
    let dir = &config.paths.dataset_dir;
    let dataset = dataset_io::read_dataset(dir).runtime()?;
    check_feature_dim(&dataset.train, &model_cfg, "train")?;
    check_feature_dim(&dataset.valid, &model_cfg, "valid")?;

    let outcome = train_with_progress(&dataset.train, &dataset.valid, &model_cfg, &config.train, progress)
        .map_err(|e| match e {
            Error::InvalidArgument(_) => CliError::Invalid(e),
            other => CliError::Runtime(other),
        })?;
    let checkpoint = Checkpoint {
        config: model_cfg.clone(),
        seed: config.train.seed,
        params: outcome.best,
        iteration: outcome.best_iteration,
        validation_loss: outcome.best_validation_loss,
        experiment: Some(raw.clone()),
    };
    ensure_parent(&config.paths.checkpoint)?;
    checkpoint.save(&config.paths.checkpoint).runtime()?;
    write_text(&config.paths.history, &history_csv(&outcome.history))?;

    let test_report = match &config.paths.report {
        Some(path) if !dataset.test.is_empty() => {
            check_feature_dim(&dataset.test, &model_cfg, "test")?;
            let report = evaluate(&dataset.test, &checkpoint.params, &model_cfg, false).runtime()?;
            write_report(path, Some(raw), &report)?;
            Some(report)
        }
        _ => None,
    };
    Ok(TrainSummary {
        best_iteration: outcome.best_iteration,
        best_validation_loss: outcome.best_validation_loss,
        final_train_loss: outcome.history.last().map_or(f64::NAN, |r| r.train_loss),
        checkpoint: config.paths.checkpoint,
        history: config.paths.history,
        test_report,
    })
}

#[derive(Serialize)]
struct ReportArtifact<'a> {
    config: Option<Value>,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn write_report(path: &Path, config: Option<Value>, report: &EvalReport) -> CliResult<()> {
    let text = serde_json::to_string_pretty(&ReportArtifact { config, report })
        .map_err(|e| CliError::Runtime(Error::Json {
            context: "report".into(),
            source: e,
        }))?;
    write_text(path, &(text + "\n"))
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Split used when the dataset path is a directory.
    pub split: Option<String>,
    pub oracle_aware: bool,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

fn parse_split(name: &str) -> CliResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(CliError::invalid(format!(
            "unknown split `{other}` (expected train, valid or test)"
        ))),
    }
}

/// Reads samples from a JSON-lines file, or from one split of a dataset
/// directory.
pub fn load_samples(path: &Path, split: Option<&str>) -> CliResult<Vec<Sample>> {
    let file = if path.is_dir() {
        parse_split(split.unwrap_or("test"))?.path_in(path)
    } else {
        path.to_path_buf()
    };
    dataset_io::read_samples(&file).map_err(|e| match e {
        Error::Json { .. } => CliError::Invalid(e),
        other => CliError::Runtime(other),
    })
}

/// Scores a checkpoint on a dataset and optionally writes JSON/CSV reports.
pub fn cmd_eval(checkpoint_path: &Path, dataset: &Path, opts: &EvalOptions) -> CliResult<EvalReport> {
    let checkpoint = Checkpoint::load(checkpoint_path).map_err(|e| match e {
        Error::Io { .. } => CliError::Runtime(e),
        other => CliError::Invalid(other),
    })?;
    let samples = load_samples(dataset, opts.split.as_deref())?;
    if samples.is_empty() {
        return Err(CliError::invalid(format!("{} holds no samples", dataset.display())));
    }
    check_feature_dim(&samples, &checkpoint.config, "dataset")?;
    let report = evaluate(&samples, &checkpoint.params, &checkpoint.config, opts.oracle_aware).runtime()?;
    if let Some(path) = &opts.report {
        write_report(path, checkpoint.experiment.clone(), &report)?;
    }
    if let Some(path) = &opts.csv {
        write_text(path, &report.per_sample_csv())?;
    }
    Ok(report)
}

fn read_graph(path: &Path) -> CliResult<Graph> {
    dataset_io::read_json(path).map_err(|e| match e {
        Error::Io { .. } => CliError::Runtime(e),
        other => CliError::Invalid(other),
    })
}

/// All exact embeddings of the query file's graph in the data file's graph.
pub fn cmd_oracle(query: &Path, data: &Path, limit: Option<usize>) -> CliResult<Vec<IsoMapping>> {
    let q = read_graph(query)?;
    let g = read_graph(data)?;
    Ok(find_all_isomorphisms(&q, &g, limit))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub sizes: GraphSizes,
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

/// Timing of forward plus discretisation on freshly generated test
/// samples. Uses the checkpoint's weights if given, otherwise a seeded
/// initialisation of the configured model.
pub fn cmd_bench(config_path: &Path, checkpoint: Option<&Path>, samples: usize, warmup: usize) -> CliResult<BenchReport> {
    if samples == 0 {
        return Err(CliError::invalid("bench needs at least one sample"));
    }
    let LoadedConfig { config, .. } = load_config(config_path)?;
    let (model_cfg, params) = match checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path).invalid()?;
            (ck.config, ck.params)
        }
        None => {
            let cfg = config.model_config();
            let params = ModelParams::init(&cfg).invalid()?;
            (cfg, params)
        }
    };
    let counts = SplitCounts {
        train: 0,
        valid: 0,
        test: samples,
    };
    let data = build_dataset(config.dataset, &config.generator, config.sizes, counts).invalid()?;
    check_feature_dim(&data.test, &model_cfg, "bench")?;
    let run = |s: &Sample| -> CliResult<f64> {
        let start = Instant::now();
        let out = forward(s, &params, &model_cfg).runtime()?;
        discretize(&out.op).runtime()?;
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    for s in data.test.iter().cycle().take(warmup) {
        run(s)?;
    }
    let mut times = data.test.iter().map(run).collect::<CliResult<Vec<f64>>>()?;
    times.sort_by(f64::total_cmp);
    let pick = |q: f64| times[((times.len() - 1) as f64 * q).round() as usize];
    Ok(BenchReport {
        sizes: config.sizes,
        samples,
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        median_ms: pick(0.5),
        p95_ms: pick(0.95),
        max_ms: times[times.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let text = r#"{
            "dataset": "dataset1",
            "generator": {"edge_prob": 0.5, "max_label": 10, "seed": 1},
            "sizes": {"data": 6, "query": 3},
            "counts": {"train": 2, "valid": 1, "test": 1}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model_config(), ModelConfig::standard(1));
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.paths, Paths::default());

        let mut bad = cfg.clone();
        bad.sizes.query = 7;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.model = Some(ModelConfig::standard(11));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::invalid("x").exit_code(), 2);
        assert_eq!(CliError::Runtime(Error::InvalidArgument("x".into())).exit_code(), 1);
    }
}
