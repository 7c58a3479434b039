//! The `train`, `eval`, `plot` and `diagnose` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use rlab_core::data::{load_idx, synth_gaussians};
use rlab_core::diagnostics::{
    self, best_pgd_epoch, clean_accuracy, detect_co, read_metrics_csv, robust_accuracy, MetricsWriter,
};
use rlab_core::training::{train, RunOptions};
use rlab_core::{CoEvent, Dataset, EpochMetrics, EvalProtocol, Model, ModelParams, TrainResult};

use crate::config::{ConfigError, DataSource, RunConfig};
use crate::plot::{render_svg, PlotSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<rlab_core::Error> for CliError {
    fn from(e: rlab_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn runtime(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

pub const MNIST_TRAIN: [&str; 2] = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"];
pub const MNIST_TEST: [&str; 2] = ["t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

/// Training set (after `train_subset`) and the full test set.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let (train, test) = match &cfg.data {
        DataSource::Mnist { dir } => {
            let load = |files: [&str; 2]| {
                load_idx(&dir.join(files[0]), &dir.join(files[1])).map_err(|e| runtime("loading MNIST", e))
            };
            (load(MNIST_TRAIN)?, load(MNIST_TEST)?)
        }
        DataSource::Synthetic {
            per_class,
            dim,
            separation,
        } => (
            synth_gaussians(*per_class, *dim, *separation, cfg.subset_seed)?,
            synth_gaussians(*per_class, *dim, *separation, cfg.subset_seed.wrapping_add(1))?,
        ),
    };
    Ok((train.subset(cfg.train_subset, cfg.subset_seed), test))
}

pub fn eval_protocol(cfg: &RunConfig) -> EvalProtocol {
    EvalProtocol {
        eps: cfg.eval_eps,
        alpha: cfg.eval_alpha,
        pgd_steps: cfg.eval_pgd_steps,
        pgd_restarts: cfg.eval_restarts,
        seed: cfg.train.seed,
        split: "test".into(),
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_FILE: &str = "resolved-config.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch-{epoch:03}.ckpt"))
}

/// Runs training and writes the resolved config, metrics CSV (one row
/// appended per epoch), checkpoints and JSON summary into `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainResult, CliError> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out.join("checkpoints")).map_err(|e| runtime(&format!("creating {}", out.display()), e))?;
    fs::write(out.join(RESOLVED_FILE), cfg.resolved()).map_err(|e| runtime("writing resolved config", e))?;
    let (train_set, test) = load_datasets(cfg)?;
    let eval_set = test.subset(cfg.eval_subset, cfg.subset_seed);
    let spec = cfg.model_spec();
    let mut writer = MetricsWriter::create(&out.join(METRICS_FILE))?;
    let mut rows: Vec<EpochMetrics> = Vec::new();
    let passes = cfg.train.passes();
    let interval = cfg.checkpoint_interval;
    let mut sink = |m: &EpochMetrics, model: &Model| -> rlab_core::Result<Option<PathBuf>> {
        writer.push(m)?;
        rows.push(m.clone());
        diagnostics::write_summary_json(&rows, &out.join(SUMMARY_FILE))?;
        eprintln!(
            "epoch {}/{passes}  std {:.4}  fgsm {:.4}  pgd {:.4}  logit_l2 {:.4}",
            m.epoch, m.std_acc, m.fgsm_acc, m.pgd_acc, m.logit_l2_mean
        );
        let due = if interval == 0 { m.epoch == passes } else { m.epoch.is_multiple_of(interval) || m.epoch == passes };
        if !due {
            return Ok(None);
        }
        let path = checkpoint_path(out, m.epoch);
        model.params().save(&path)?;
        Ok(Some(path))
    };
    let options = RunOptions {
        record_wall_time: cfg.record_wall_time,
    };
    let result = train(&cfg.train, &spec, &train_set, &eval_set, &eval_protocol(cfg), options, &mut sink)?;
    result.params.save(&out.join(FINAL_CHECKPOINT))?;
    Ok(result)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AttackResult {
    pub attack: String,
    pub robust_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EvalReport {
    pub checkpoint: String,
    pub examples: usize,
    pub eps: f64,
    pub alpha: f64,
    pub clean_accuracy: f64,
    pub attacks: Vec<AttackResult>,
}

/// Clean accuracy and robust accuracy under every configured attack on the
/// test set (or its `eval_full_subset` subsample).
pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let params = ModelParams::load(checkpoint).map_err(|e| runtime(&format!("reading {}", checkpoint.display()), e))?;
    let model = Model::new(cfg.model_spec(), params)?;
    let (_, test) = load_datasets(cfg)?;
    let test = test.subset(cfg.eval_full_subset, cfg.subset_seed);
    let mut attacks = Vec::new();
    for name in &cfg.eval_budgets {
        let budget = name.budget(cfg.eval_eps, cfg.eval_alpha);
        attacks.push(AttackResult {
            attack: name.to_string(),
            robust_accuracy: robust_accuracy(&model, &test, &budget, cfg.train.seed)?,
        });
    }
    let report = EvalReport {
        checkpoint: checkpoint.display().to_string(),
        examples: test.len(),
        eps: cfg.eval_eps,
        alpha: cfg.eval_alpha,
        clean_accuracy: clean_accuracy(&model, &test)?,
        attacks,
    };
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    fs::create_dir_all(&cfg.out_dir).map_err(|e| runtime("creating output directory", e))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(cfg.out_dir.join(format!("eval-{stem}.json")), format!("{json}\n"))
        .map_err(|e| runtime("writing eval report", e))?;
    Ok(report)
}

pub fn cmd_plot(spec: &PlotSpec) -> Result<String, CliError> {
    let mut runs = Vec::new();
    for (label, path) in &spec.inputs {
        let rows = read_metrics_csv(path).map_err(|e| runtime(&format!("reading {}", path.display()), e))?;
        runs.push((label.clone(), rows));
    }
    let svg = render_svg(&runs, spec.series, &spec.title).map_err(CliError::Runtime)?;
    fs::write(&spec.output, &svg).map_err(|e| runtime(&format!("writing {}", spec.output.display()), e))?;
    Ok(svg)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Diagnosis {
    pub epochs: usize,
    pub co_events: Vec<CoEvent>,
    pub best_pgd_epoch: Option<usize>,
    pub final_pgd_acc: Option<f64>,
}

pub fn cmd_diagnose(metrics: &Path) -> Result<Diagnosis, CliError> {
    let rows = read_metrics_csv(metrics).map_err(|e| runtime(&format!("reading {}", metrics.display()), e))?;
    Ok(Diagnosis {
        epochs: rows.len(),
        co_events: detect_co(&rows),
        best_pgd_epoch: best_pgd_epoch(&rows),
        final_pgd_acc: rows.last().map(|m| m.pgd_acc),
    })
}
