//! Per-epoch robustness measurement, catastrophic-overfitting detection and
//! the metrics CSV / JSON summary formats.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::attacks::{self, AttackLoss, InitMode, LinfBudget};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Model, ModelParams, ModelSpec};
use crate::rng::{Domain, StreamKey};
use crate::tensor::Tensor;

/// Examples per forward/attack chunk during evaluation.
pub const EVAL_CHUNK: usize = 100;
pub const CO_PGD_DROP: f64 = 0.20;
pub const CO_FGSM_PGD_GAP: f64 = 0.40;
pub const LOG_OFFSET: f64 = 1e-12;
/// Iterations of the PGD attack paired with FGSM in the logit distance.
pub const LOGIT_PGD_STEPS: usize = 7;

pub const CSV_HEADER: [&str; 10] = [
    "epoch",
    "split",
    "std_acc",
    "fgsm_acc",
    "pgd_acc",
    "fgsm_loss",
    "pgd_loss",
    "logit_l2_mean",
    "lr",
    "wall_time_s",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub std_acc: f64,
    pub fgsm_acc: f64,
    pub pgd_acc: f64,
    pub fgsm_loss: f64,
    pub pgd_loss: f64,
    pub logit_l2_mean: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

impl EpochMetrics {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::InvalidArgument(format!("{what} = {v} out of range"));
        for (name, v) in [("std_acc", self.std_acc), ("fgsm_acc", self.fgsm_acc), ("pgd_acc", self.pgd_acc)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(name, v));
            }
        }
        for (name, v) in [
            ("fgsm_loss", self.fgsm_loss),
            ("pgd_loss", self.pgd_loss),
            ("logit_l2_mean", self.logit_l2_mean),
            ("lr", self.lr),
            ("wall_time_s", self.wall_time_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(name, v));
            }
        }
        Ok(())
    }
}

/// A flagged catastrophic-overfitting epoch. Drops and gaps are in accuracy units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoEvent {
    pub epoch: usize,
    pub pgd_drop: f64,
    pub fgsm_pgd_gap: f64,
}

/// Flags epoch `t` when PGD accuracy fell by at least [`CO_PGD_DROP`] since
/// `t − 1` and FGSM accuracy exceeds PGD accuracy by at least [`CO_FGSM_PGD_GAP`].
pub fn detect_co(metrics: &[EpochMetrics]) -> Vec<CoEvent> {
    metrics
        .windows(2)
        .filter_map(|w| {
            let drop = w[0].pgd_acc - w[1].pgd_acc;
            let gap = w[1].fgsm_acc - w[1].pgd_acc;
            (drop >= CO_PGD_DROP && gap >= CO_FGSM_PGD_GAP).then(|| CoEvent {
                epoch: w[1].epoch,
                pgd_drop: drop,
                fgsm_pgd_gap: gap,
            })
        })
        .collect()
}

/// Epoch with the highest PGD accuracy (earliest on ties).
pub fn best_pgd_epoch(metrics: &[EpochMetrics]) -> Option<usize> {
    metrics
        .iter()
        .fold(None::<&EpochMetrics>, |best, m| match best {
            Some(b) if b.pgd_acc >= m.pgd_acc => Some(b),
            _ => Some(m),
        })
        .map(|m| m.epoch)
}

fn chunks(ds: &Dataset) -> impl Iterator<Item = (usize, Tensor, &[usize])> {
    let n = ds.len();
    (0..n.div_ceil(EVAL_CHUNK)).map(move |c| {
        let (lo, hi) = (c * EVAL_CHUNK, ((c + 1) * EVAL_CHUNK).min(n));
        (c, ds.images().slice_rows(lo, hi), &ds.labels()[lo..hi])
    })
}

fn correct(pred: &[usize], y: &[usize]) -> usize {
    pred.iter().zip(y).filter(|(p, t)| p == t).count()
}

pub fn clean_accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    let mut hits = 0;
    for (_, x, y) in chunks(ds) {
        hits += correct(&model.predict(&x)?, y);
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// Fraction of examples the multi-restart attack fails to flip. Chunk `c`
/// draws its noise from `(seed, EvalNoise, epoch = 0, batch = c)`.
pub fn robust_accuracy(model: &Model, ds: &Dataset, budget: &LinfBudget, seed: u64) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("robust accuracy of an empty dataset".into()));
    }
    let mut held = 0;
    for (c, x, y) in chunks(ds) {
        let key = StreamKey::new(seed, Domain::EvalNoise).batch(c as u64);
        let out = attacks::multi_restart(model, &x, y, budget, key)?;
        held += out.success.iter().filter(|s| !**s).count();
    }
    Ok(held as f64 / ds.len() as f64)
}

/// Settings of the per-epoch measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    pub eps: f64,
    pub alpha: f64,
    pub pgd_steps: usize,
    pub pgd_restarts: usize,
    pub seed: u64,
    pub split: String,
}

impl EvalProtocol {
    pub fn pgd_budget(&self) -> LinfBudget {
        LinfBudget::eval(self.eps, self.alpha, self.pgd_steps, self.pgd_restarts, AttackLoss::CrossEntropy)
    }

    /// Zero-init PGD-7 used for the FGSM/PGD logit distance.
    pub fn logit_budget(&self) -> LinfBudget {
        LinfBudget {
            eps: self.eps,
            alpha: self.alpha,
            steps: LOGIT_PGD_STEPS,
            restarts: 1,
            init: InitMode::Zero,
            loss: AttackLoss::CrossEntropy,
        }
    }
}

/// Clean, FGSM and PGD accuracy and loss plus the mean logit distance on `ds`.
/// `lr` and `wall_time_s` are left at zero for the caller to fill.
pub fn evaluate_epoch(model: &Model, ds: &Dataset, protocol: &EvalProtocol, epoch: usize) -> Result<EpochMetrics> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let pgd_budget = protocol.pgd_budget();
    pgd_budget.validate()?;
    let logit_budget = protocol.logit_budget();
    let (mut std_hits, mut fgsm_hits, mut pgd_hits) = (0, 0, 0);
    let (mut fgsm_loss, mut pgd_loss, mut l2) = (0.0, 0.0, 0.0);
    for (c, x, y) in chunks(ds) {
        std_hits += correct(&model.predict(&x)?, y);
        let f = attacks::fgsm(model, &x, y, protocol.eps)?;
        fgsm_hits += f.success.iter().filter(|s| !**s).count();
        fgsm_loss += f.loss.iter().sum::<f64>();
        let key = StreamKey::new(protocol.seed, Domain::EvalNoise).epoch(epoch as u64).batch(c as u64);
        let p = attacks::multi_restart(model, &x, y, &pgd_budget, key)?;
        pgd_hits += p.success.iter().filter(|s| !**s).count();
        pgd_loss += p.loss.iter().sum::<f64>();
        let x_pgd7 = attacks::pgd_example(model, &x, y, &logit_budget, key)?;
        let (per, _) = attacks::logit_distance(model, &f.x_adv, &x_pgd7)?;
        l2 += per.iter().sum::<f64>();
    }
    let n = ds.len() as f64;
    Ok(EpochMetrics {
        epoch,
        split: protocol.split.clone(),
        std_acc: std_hits as f64 / n,
        fgsm_acc: fgsm_hits as f64 / n,
        pgd_acc: pgd_hits as f64 / n,
        fgsm_loss: fgsm_loss / n,
        pgd_loss: pgd_loss / n,
        logit_l2_mean: l2 / n,
        lr: 0.0,
        wall_time_s: 0.0,
    })
}

/// Mean FGSM / PGD-7 logit distance on `ds` for a model.
pub fn mean_logit_distance(model: &Model, ds: &Dataset, eps: f64, alpha: f64) -> Result<f64> {
    let budget = EvalProtocol {
        eps,
        alpha,
        pgd_steps: 1,
        pgd_restarts: 1,
        seed: 0,
        split: String::new(),
    }
    .logit_budget();
    let mut total = 0.0;
    for (_, x, y) in chunks(ds) {
        let xf = attacks::fgsm_example(model, &x, y, eps)?;
        let xp = attacks::pgd_example(model, &x, y, &budget, StreamKey::new(0, Domain::EvalNoise))?;
        total += attacks::logit_distance(model, &xf, &xp)?.0.iter().sum::<f64>();
    }
    Ok(total / ds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergencePoint {
    pub raw: f64,
    /// `ln(raw + 1e-12)`.
    pub log: f64,
}

/// Logit distance per checkpoint (in the given order) on a fixed evaluation set.
pub fn logit_divergence_curve(
    spec: &ModelSpec,
    checkpoints: &[ModelParams],
    ds: &Dataset,
    eps: f64,
    alpha: f64,
) -> Result<Vec<DivergencePoint>> {
    checkpoints
        .iter()
        .map(|p| {
            let model = Model::new(spec.clone(), p.clone())?;
            let raw = mean_logit_distance(&model, ds, eps, alpha)?;
            Ok(DivergencePoint {
                raw,
                log: (raw + LOG_OFFSET).ln(),
            })
        })
        .collect()
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn record(m: &EpochMetrics) -> Vec<String> {
    let mut out = vec![m.epoch.to_string(), m.split.clone()];
    out.extend(
        [m.std_acc, m.fgsm_acc, m.pgd_acc, m.fgsm_loss, m.pgd_loss, m.logit_l2_mean, m.lr, m.wall_time_s]
            .into_iter()
            .map(fmt_real),
    );
    out
}

/// Appends rows to a metrics CSV, flushing after each one so a killed run
/// leaves every completed epoch on disk.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Creates (truncating) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(File::create(path)?);
        inner.write_record(CSV_HEADER)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    /// Opens an existing file for appending without rewriting the header.
    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(MetricsWriter {
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn push(&mut self, m: &EpochMetrics) -> Result<()> {
        self.inner.write_record(record(m))?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_metrics_csv(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for m in metrics {
        w.push(m)?;
    }
    Ok(())
}

pub fn metrics_to_string(metrics: &[EpochMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for m in metrics {
        w.write_record(record(m))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    parse_metrics(File::open(path)?)
}

pub fn parse_metrics(source: impl std::io::Read) -> Result<Vec<EpochMetrics>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
    let mut rows = rd.records();
    match rows.next() {
        Some(Ok(h)) if h.iter().eq(CSV_HEADER) => {}
        Some(Ok(_)) => {
            return Err(Error::MetricsRow {
                line: 1,
                reason: format!("header must be `{}`", CSV_HEADER.join(",")),
            })
        }
        Some(Err(e)) => return Err(e.into()),
        None => return Err(Error::MetricsRow { line: 1, reason: "missing header".into() }),
    }
    let mut out = Vec::new();
    for (i, rec) in rows.enumerate() {
        let line = i as u64 + 2;
        let rec = rec?;
        let err = |reason: String| Error::MetricsRow { line, reason };
        if rec.len() != CSV_HEADER.len() {
            return Err(err(format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len())));
        }
        let real = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|_| err(format!("{} `{}` is not a number", CSV_HEADER[k], &rec[k])))
        };
        let m = EpochMetrics {
            epoch: rec[0]
                .parse()
                .map_err(|_| err(format!("epoch `{}` is not an integer", &rec[0])))?,
            split: rec[1].to_string(),
            std_acc: real(2)?,
            fgsm_acc: real(3)?,
            pgd_acc: real(4)?,
            fgsm_loss: real(5)?,
            pgd_loss: real(6)?,
            logit_l2_mean: real(7)?,
            lr: real(8)?,
            wall_time_s: real(9)?,
        };
        m.validate().map_err(|e| err(e.to_string()))?;
        out.push(m);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Summary<'a> {
    final_metrics: Option<&'a EpochMetrics>,
    co_events: Vec<CoEvent>,
    best_pgd_epoch: Option<usize>,
}

/// JSON with the last row, the detector output and the best-PGD epoch.
pub fn summary_json(metrics: &[EpochMetrics]) -> String {
    let s = Summary {
        final_metrics: metrics.last(),
        co_events: detect_co(metrics),
        best_pgd_epoch: best_pgd_epoch(metrics),
    };
    serde_json::to_string_pretty(&s).expect("summary serializes")
}

pub fn write_summary_json(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(summary_json(metrics).as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
