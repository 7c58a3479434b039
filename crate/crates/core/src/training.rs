//! Training methods: standard, FGSM, FAST-FGSM, PGD, FREE and FGSMPR
//! (FGSM training plus a PGD logit-pairing regularizer).

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use crate::attacks::{self, AttackLoss, InitMode, LinfBudget};
use crate::autograd::{Tape, Var};
use crate::data::{batches, BatchPlan, Dataset};
use crate::diagnostics::{evaluate_epoch, EpochMetrics, EvalProtocol};
use crate::error::{Error, Result};
use crate::models::{Model, ModelParams, ModelSpec, Sgd};
use crate::rng::{Domain, StreamKey};
use crate::tensor::{sign, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Standard,
    Fgsm,
    FastFgsm,
    Pgd,
    Free,
    Fgsmpr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Standard,
        Method::Fgsm,
        Method::FastFgsm,
        Method::Pgd,
        Method::Free,
        Method::Fgsmpr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Fgsm => "fgsm",
            Method::FastFgsm => "fast_fgsm",
            Method::Pgd => "pgd",
            Method::Free => "free",
            Method::Fgsmpr => "fgsmpr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// Step size of the FGSM example inside FGSMPR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgsmStep {
    Eps,
    AlphaTrain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub eps: f64,
    /// Step of FAST-FGSM and PGD training; `None` picks the method default.
    pub alpha_train: Option<f64>,
    pub pgd_train_steps: usize,
    /// Initialization of FAST-FGSM and PGD training perturbations.
    pub train_init: InitMode,
    pub lambda: f64,
    pub reg_steps: usize,
    pub reg_examples: usize,
    pub fgsmpr_step: FgsmStep,
    pub free_replays: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        TrainConfig {
            method,
            eps: 0.3,
            alpha_train: None,
            pgd_train_steps: 40,
            train_init: InitMode::Uniform,
            lambda: 0.1,
            reg_steps: 3,
            reg_examples: 1,
            fgsmpr_step: FgsmStep::Eps,
            free_replays: 8,
            epochs: 20,
            batch_size: 100,
            lr: 0.01,
            momentum: 0.9,
            seed,
        }
    }

    /// `1.25·ε` for FAST-FGSM, `2.5·ε/K` for PGD, `ε` otherwise.
    pub fn resolved_alpha_train(&self) -> f64 {
        self.alpha_train.unwrap_or(match self.method {
            Method::FastFgsm => 1.25 * self.eps,
            Method::Pgd => 2.5 * self.eps / self.pgd_train_steps as f64,
            _ => self.eps,
        })
    }

    /// Passes over the data: `ceil(epochs / free_replays)` for FREE, else `epochs`.
    pub fn passes(&self) -> usize {
        match self.method {
            Method::Free => self.epochs.div_ceil(self.free_replays),
            _ => self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.eps > 0.0 && self.eps.is_finite()) && self.method != Method::Standard {
            return bad(format!("eps {} must be > 0", self.eps));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("eps {} must be >= 0", self.eps));
        }
        if let Some(a) = self.alpha_train {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("alpha_train {a} must be > 0"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        if self.reg_examples == 0 || self.reg_examples > self.batch_size {
            return bad(format!("reg_examples {} must be in 1..=batch_size", self.reg_examples));
        }
        for (name, v) in [
            ("pgd_train_steps", self.pgd_train_steps),
            ("reg_steps", self.reg_steps),
            ("free_replays", self.free_replays),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        Sgd::new(self.lr, self.momentum).map(|_| ())
    }
}

/// Receives each epoch's metrics and model; returns a checkpoint path if it wrote one.
pub trait EpochSink {
    fn epoch_end(&mut self, metrics: &EpochMetrics, model: &Model) -> Result<Option<PathBuf>>;
}

impl EpochSink for () {
    fn epoch_end(&mut self, _: &EpochMetrics, _: &Model) -> Result<Option<PathBuf>> {
        Ok(None)
    }
}

impl<F: FnMut(&EpochMetrics, &Model) -> Result<Option<PathBuf>>> EpochSink for F {
    fn epoch_end(&mut self, metrics: &EpochMetrics, model: &Model) -> Result<Option<PathBuf>> {
        self(metrics, model)
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
    pub checkpoints: Vec<PathBuf>,
    /// SGD updates applied (one per batch; one per replay for FREE).
    pub updates: u64,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Measured seconds per epoch, training plus evaluation.
    pub timings: Vec<f64>,
}

/// Options that affect bookkeeping but not the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Write measured wall time into the metrics. Off keeps the CSV byte-reproducible.
    pub record_wall_time: bool,
}

/// `λ · mean_i ‖f(x_fgsm_i) − f(x_pgd_i)‖₂`, recorded on `tape` and
/// differentiable in the parameter vars.
pub fn reg_loss(
    tape: &mut Tape,
    model: &Model,
    params: &[Var],
    x_fgsm_sel: &Tensor,
    x_pgd_sel: &Tensor,
    lambda: f64,
) -> Result<Var> {
    if x_fgsm_sel.rank() == 0 || x_fgsm_sel.shape()[0] == 0 {
        return Err(Error::InvalidArgument("regularizer needs at least one example".into()));
    }
    if x_fgsm_sel.shape() != x_pgd_sel.shape() {
        return Err(Error::shape(
            "reg_loss",
            format!("{:?} vs {:?}", x_fgsm_sel.shape(), x_pgd_sel.shape()),
        ));
    }
    let xf = tape.constant(x_fgsm_sel.clone())?;
    let xp = tape.constant(x_pgd_sel.clone())?;
    let zf = model.forward(tape, params, xf)?;
    let zp = model.forward(tape, params, xp)?;
    let sq = tape.l2_sq_distance(zf, zp)?;
    let dist = tape.sqrt(sq)?;
    let mean = tape.mean(dist)?;
    tape.scale(mean, lambda)
}

/// Scalar value of [`reg_loss`] at the model's current parameters.
pub fn reg_loss_value(model: &Model, x_fgsm_sel: &Tensor, x_pgd_sel: &Tensor, lambda: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, false)?;
    let v = reg_loss(&mut tape, model, &params, x_fgsm_sel, x_pgd_sel, lambda)?;
    Ok(tape.value(v).item())
}

/// The FGSMPR total loss `CE(f(x_fgsm), y) + reg_loss` for fixed adversarial
/// inputs; the regularizer uses the first `x_pgd_sel.rows()` FGSM examples.
pub fn fgsmpr_total_loss(
    tape: &mut Tape,
    model: &Model,
    params: &[Var],
    x_fgsm: &Tensor,
    y: &[usize],
    x_pgd_sel: Option<&Tensor>,
    lambda: f64,
) -> Result<Var> {
    let xf = tape.constant(x_fgsm.clone())?;
    let logits = model.forward(tape, params, xf)?;
    let ce = tape.softmax_cross_entropy(logits, y)?;
    let fgsm_loss = tape.mean(ce)?;
    match x_pgd_sel {
        Some(xp) => {
            let sel = x_fgsm.slice_rows(0, xp.shape()[0]);
            let reg = reg_loss(tape, model, params, &sel, xp, lambda)?;
            tape.add(fgsm_loss, reg)
        }
        None => Ok(fgsm_loss),
    }
}

/// Regularizer PGD: zero init, `reg_steps` iterations of size `ε/K`.
pub fn reg_budget(config: &TrainConfig) -> LinfBudget {
    LinfBudget {
        eps: config.eps,
        alpha: config.eps / config.reg_steps as f64,
        steps: config.reg_steps,
        restarts: 1,
        init: InitMode::Zero,
        loss: AttackLoss::CrossEntropy,
    }
}

fn ce_step(model: &mut Model, sgd: &mut Sgd, x: &Tensor, y: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true)?;
    let total = fgsmpr_total_loss(&mut tape, model, &params, x, y, None, 0.0)?;
    apply(model, sgd, &tape, &params, total)
}

fn apply(model: &mut Model, sgd: &mut Sgd, tape: &Tape, params: &[Var], total: Var) -> Result<f64> {
    let loss = tape.value(total).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "total_loss" });
    }
    let mut grads = tape.backward(total)?;
    let grads = model.collect_grads(&mut grads, params);
    sgd.step(model.params_mut(), &grads)?;
    Ok(loss)
}

/// One FGSMPR update on a batch; with `λ = 0` this is exactly an FGSM-AT update.
fn fgsmpr_step(model: &mut Model, sgd: &mut Sgd, config: &TrainConfig, x: &Tensor, y: &[usize]) -> Result<f64> {
    let step = match config.fgsmpr_step {
        FgsmStep::Eps => config.eps,
        FgsmStep::AlphaTrain => config.resolved_alpha_train(),
    };
    let x_fgsm = fgsm_within(model, x, y, step, config.eps)?;
    if config.lambda == 0.0 {
        return ce_step(model, sgd, &x_fgsm, y);
    }
    let m = config.reg_examples.min(y.len());
    let x_sel = x.slice_rows(0, m);
    let x_pgd = attacks::pgd_from(model, &x_sel, &y[..m], x_sel.clone(), &reg_budget(config))?;
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true)?;
    let total = fgsmpr_total_loss(&mut tape, model, &params, &x_fgsm, y, Some(&x_pgd), config.lambda)?;
    apply(model, sgd, &tape, &params, total)
}

/// FGSM with step `step`, projected back into the `eps` ball when `step > eps`.
fn fgsm_within(model: &Model, x: &Tensor, y: &[usize], step: f64, eps: f64) -> Result<Tensor> {
    if step <= eps {
        return attacks::fgsm_example(model, x, y, step);
    }
    let budget = LinfBudget {
        eps,
        alpha: step,
        steps: 1,
        restarts: 1,
        init: InitMode::Zero,
        loss: AttackLoss::CrossEntropy,
    };
    attacks::pgd_from(model, x, y, x.clone(), &budget)
}

/// Persistent FREE perturbation, reused across batches.
struct FreeState {
    delta: Tensor,
}

impl FreeState {
    fn replay(
        &mut self,
        model: &mut Model,
        sgd: &mut Sgd,
        config: &TrainConfig,
        x: &Tensor,
        y: &[usize],
    ) -> Result<f64> {
        let b = y.len();
        let row = x.row_len();
        let mut total_loss = 0.0;
        for _ in 0..config.free_replays {
            let mut x_in = x.clone();
            for (v, d) in x_in.data_mut().iter_mut().zip(&self.delta.data()[..b * row]) {
                *v = (*v + d).clamp(0.0, 1.0);
            }
            let mut tape = Tape::new();
            let params = model.bind(&mut tape, true)?;
            let xv = tape.param(x_in)?;
            let logits = model.forward(&mut tape, &params, xv)?;
            let ce = tape.softmax_cross_entropy(logits, y)?;
            let loss = tape.mean(ce)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "total_loss" });
            }
            let mut grads = tape.backward(loss)?;
            let gx = grads.take(xv).expect("input is differentiable");
            let gp = model.collect_grads(&mut grads, &params);
            sgd.step(model.params_mut(), &gp)?;
            for (d, g) in self.delta.data_mut()[..b * row].iter_mut().zip(gx.data()) {
                *d = (*d + config.eps * sign(*g)).clamp(-config.eps, config.eps);
            }
            total_loss += value;
        }
        Ok(total_loss / config.free_replays as f64)
    }
}

/// Runs `config.method` on `train`, evaluating on `eval` after every epoch.
pub fn train(
    config: &TrainConfig,
    spec: &ModelSpec,
    train: &Dataset,
    eval: &Dataset,
    protocol: &EvalProtocol,
    options: RunOptions,
    sink: &mut dyn EpochSink,
) -> Result<TrainResult> {
    config.validate()?;
    if train.example_shape() != spec.input_shape() {
        return Err(Error::shape(
            "train",
            format!("data {:?} vs model input {:?}", train.example_shape(), spec.input_shape()),
        ));
    }
    let mut model = Model::init(spec.clone(), config.seed);
    let mut sgd = Sgd::new(config.lr, config.momentum)?;
    let mut free = FreeState {
        delta: Tensor::zeros(&[&[config.batch_size][..], spec.input_shape()].concat()),
    };
    let alpha_train = config.resolved_alpha_train();
    let train_budget = |steps| LinfBudget {
        eps: config.eps,
        alpha: alpha_train,
        steps,
        restarts: 1,
        init: config.train_init,
        loss: AttackLoss::CrossEntropy,
    };
    let mut result = TrainResult {
        params: model.params().clone(),
        metrics: Vec::new(),
        checkpoints: Vec::new(),
        updates: 0,
        train_loss: Vec::new(),
        timings: Vec::new(),
    };
    for epoch in 1..=config.passes() {
        let started = Instant::now();
        let plan = BatchPlan {
            batch_size: config.batch_size.min(train.len()),
            seed: config.seed,
            drop_last: false,
            epoch_index: epoch as u64,
        };
        let (mut loss_sum, mut n_batches) = (0.0, 0usize);
        for batch in batches(train, plan)? {
            let (x, y) = (&batch.x, &batch.y[..]);
            let noise = StreamKey::new(config.seed, Domain::TrainNoise)
                .epoch(epoch as u64)
                .batch(batch.index as u64);
            let loss = match config.method {
                Method::Standard => ce_step(&mut model, &mut sgd, x, y)?,
                Method::Fgsm => {
                    let x_adv = attacks::fgsm_example(&model, x, y, config.eps)?;
                    ce_step(&mut model, &mut sgd, &x_adv, y)?
                }
                Method::FastFgsm => {
                    let x_adv = attacks::pgd_example(&model, x, y, &train_budget(1), noise)?;
                    ce_step(&mut model, &mut sgd, &x_adv, y)?
                }
                Method::Pgd => {
                    let x_adv = attacks::pgd_example(&model, x, y, &train_budget(config.pgd_train_steps), noise)?;
                    ce_step(&mut model, &mut sgd, &x_adv, y)?
                }
                Method::Free => free.replay(&mut model, &mut sgd, config, x, y)?,
                Method::Fgsmpr => fgsmpr_step(&mut model, &mut sgd, config, x, y)?,
            };
            loss_sum += loss;
            n_batches += 1;
        }
        let mut metrics = evaluate_epoch(&model, eval, protocol, epoch)?;
        let elapsed = started.elapsed().as_secs_f64();
        metrics.lr = config.lr;
        if options.record_wall_time {
            metrics.wall_time_s = elapsed;
        }
        if let Some(path) = sink.epoch_end(&metrics, &model)? {
            result.checkpoints.push(path);
        }
        result.metrics.push(metrics);
        result.train_loss.push(loss_sum / n_batches as f64);
        result.timings.push(elapsed);
    }
    result.updates = sgd.updates();
    result.params = model.into_params();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussians;
    use crate::gradcheck::grad_check;

    fn protocol() -> EvalProtocol {
        EvalProtocol {
            eps: 0.1,
            alpha: 0.05,
            pgd_steps: 3,
            pgd_restarts: 1,
            seed: 5,
            split: "test".into(),
        }
    }

    fn quick(method: Method) -> TrainConfig {
        TrainConfig {
            eps: 0.1,
            epochs: 2,
            batch_size: 16,
            lr: 0.05,
            free_replays: 2,
            pgd_train_steps: 3,
            ..TrainConfig::new(method, 11)
        }
    }

    fn run(config: &TrainConfig) -> TrainResult {
        let train_ds = synth_gaussians(24, 6, 0.6, 1).unwrap();
        let eval_ds = synth_gaussians(10, 6, 0.6, 2).unwrap();
        let spec = ModelSpec::mlp(6, &[8], 2).unwrap();
        train(config, &spec, &train_ds, &eval_ds, &protocol(), RunOptions::default(), &mut ()).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("madry".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::new(Method::Fgsmpr, 0);
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { lambda: -1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { reg_examples: 101, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { eps: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { eps: 0.0, method: Method::Standard, ..ok }.validate().is_ok());
    }

    #[test]
    fn alpha_defaults() {
        let fast = TrainConfig::new(Method::FastFgsm, 0);
        assert!((fast.resolved_alpha_train() - 0.375).abs() < 1e-15);
        let pgd = TrainConfig::new(Method::Pgd, 0);
        assert!((pgd.resolved_alpha_train() - 0.01875).abs() < 1e-15);
        let fixed = TrainConfig { alpha_train: Some(0.2), ..fast };
        assert_eq!(fixed.resolved_alpha_train(), 0.2);
    }

    #[test]
    fn update_counts_per_method() {
        // 48 examples, batch 16 -> 3 batches per pass
        for m in Method::ALL {
            let r = run(&quick(m));
            let expected = match m {
                Method::Free => 1 * 3 * 2,
                _ => 2 * 3,
            };
            assert_eq!(r.updates, expected, "{m}");
            assert_eq!(r.metrics.len(), r.train_loss.len());
            assert!(r.train_loss.iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn lambda_zero_matches_fgsm_exactly() {
        let pr = run(&TrainConfig { lambda: 0.0, ..quick(Method::Fgsmpr) });
        let fg = run(&quick(Method::Fgsm));
        assert_eq!(pr.params, fg.params);
        assert_eq!(pr.metrics, fg.metrics);
    }

    #[test]
    fn degenerate_variants_reduce_to_fgsm() {
        let fg = run(&quick(Method::Fgsm));
        let fast = run(&TrainConfig {
            train_init: InitMode::Zero,
            alpha_train: Some(0.1),
            ..quick(Method::FastFgsm)
        });
        assert_eq!(fast.params, fg.params);
        let pgd1 = run(&TrainConfig {
            train_init: InitMode::Zero,
            alpha_train: Some(0.1),
            pgd_train_steps: 1,
            ..quick(Method::Pgd)
        });
        assert_eq!(pgd1.params, fg.params);
    }

    #[test]
    fn training_is_deterministic() {
        let a = run(&quick(Method::Fgsmpr));
        let b = run(&quick(Method::Fgsmpr));
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics, b.metrics);
        assert!(a.metrics.iter().all(|m| m.wall_time_s == 0.0));
    }

    #[test]
    fn eps_zero_fgsm_is_standard_training() {
        let train_ds = synth_gaussians(8, 3, 0.6, 1).unwrap();
        let spec = ModelSpec::mlp(3, &[4], 2).unwrap();
        let mut a = Model::init(spec.clone(), 1);
        let mut b = a.clone();
        let (mut sa, mut sb) = (Sgd::new(0.1, 0.9).unwrap(), Sgd::new(0.1, 0.9).unwrap());
        let (x, y) = (train_ds.images(), train_ds.labels());
        for _ in 0..3 {
            let x_adv = attacks::fgsm_example(&a, x, y, 0.0).unwrap();
            let la = ce_step(&mut a, &mut sa, &x_adv, y).unwrap();
            let lb = ce_step(&mut b, &mut sb, x, y).unwrap();
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn reg_loss_examples() {
        let spec = ModelSpec::mlp(4, &[5], 3).unwrap();
        let model = Model::init(spec, 3);
        let a = Tensor::full(&[2, 4], 0.3);
        let b = Tensor::full(&[2, 4], 0.6);
        assert_eq!(reg_loss_value(&model, &a, &a, 0.7).unwrap(), 0.0);
        assert_eq!(reg_loss_value(&model, &a, &b, 0.0).unwrap(), 0.0);
        let za = model.logits(&a).unwrap();
        let zb = model.logits(&b).unwrap();
        let d: f64 = za.row(0).iter().zip(zb.row(0)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        assert!((reg_loss_value(&model, &a, &b, 0.5).unwrap() - 0.5 * d).abs() < 1e-12);
        assert!(reg_loss_value(&model, &Tensor::full(&[1, 4], 0.3), &b, 0.5).is_err());
    }

    #[test]
    fn reg_loss_gradient_matches_finite_differences() {
        let spec = ModelSpec::mlp(4, &[5], 3).unwrap();
        let model = Model::init(spec, 8);
        let a = Tensor::new(vec![2, 4], vec![0.1, 0.9, 0.4, 0.3, 0.8, 0.2, 0.5, 0.7]).unwrap();
        let b = a.map(|v| (v + 0.25).min(1.0));
        let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
        for (k, name) in names.iter().enumerate() {
            let point = model.params().get(name).unwrap().clone();
            let report = grad_check(
                |tape, p| {
                    let mut params = model.bind(tape, false)?;
                    params[k] = p;
                    reg_loss(tape, &model, &params, &a, &b, 0.3)
                },
                &point,
                1e-5,
                0,
            )
            .unwrap();
            assert!(report.passed, "{name}: {report:?}");
        }
    }

    #[test]
    fn free_perturbation_stays_in_ball() {
        let config = quick(Method::Free);
        let ds = synth_gaussians(8, 3, 0.6, 1).unwrap();
        let mut model = Model::init(ModelSpec::mlp(3, &[4], 2).unwrap(), 1);
        let mut sgd = Sgd::new(0.05, 0.9).unwrap();
        let mut state = FreeState {
            delta: Tensor::zeros(&[16, 3]),
        };
        for _ in 0..3 {
            state.replay(&mut model, &mut sgd, &config, ds.images(), ds.labels()).unwrap();
            assert!(state.delta.max_abs() <= config.eps);
        }
        assert_eq!(sgd.updates(), 3 * config.free_replays as u64);
    }
}
