//! L∞ attacks: FGSM, PGD (cross-entropy or CW margin), multi-restart
//! worst-case search, and the FGSM/PGD logit distance.
//!
//! Projection is always "clip δ into [−ε, ε], then clamp x + δ into [0, 1]".
//! Every function here is pure in its inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng::{uniform_fill, StreamKey};
use crate::tensor::{sign, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Zero,
    Uniform,
}

/// Objective the attacker ascends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackLoss {
    CrossEntropy,
    CwMargin,
}

/// An L∞ attack specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinfBudget {
    pub eps: f64,
    pub alpha: f64,
    pub steps: usize,
    pub restarts: usize,
    pub init: InitMode,
    pub loss: AttackLoss,
}

impl LinfBudget {
    /// Checks ranges. `eps = 0` is accepted and makes every attack the identity.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps {} must be >= 0", self.eps)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha {} must be > 0", self.alpha)));
        }
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("steps and restarts must be >= 1".into()));
        }
        if self.restarts > 1 && self.init != InitMode::Uniform {
            return Err(Error::InvalidArgument(
                "multiple restarts need uniform random initialization".into(),
            ));
        }
        Ok(())
    }

    /// Evaluation-style budget: uniform init, `steps` iterations, `restarts` restarts.
    pub fn eval(eps: f64, alpha: f64, steps: usize, restarts: usize, loss: AttackLoss) -> Self {
        LinfBudget {
            eps,
            alpha,
            steps,
            restarts,
            init: InitMode::Uniform,
            loss,
        }
    }

    /// `PGD-K-N` for cross-entropy, `CW-K-N` for the margin loss.
    pub fn name(&self) -> String {
        let prefix = match self.loss {
            AttackLoss::CrossEntropy => "PGD",
            AttackLoss::CwMargin => "CW",
        };
        format!("{prefix}-{}-{}", self.steps, self.restarts)
    }
}

/// Shape of a named evaluation attack, `PGD-K-N` or `CW-K-N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackName {
    pub loss: AttackLoss,
    pub steps: usize,
    pub restarts: usize,
}

impl AttackName {
    pub fn budget(&self, eps: f64, alpha: f64) -> LinfBudget {
        LinfBudget::eval(eps, alpha, self.steps, self.restarts, self.loss)
    }
}

impl FromStr for AttackName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("attack `{s}` is not PGD-K-N or CW-K-N"));
        let mut parts = s.trim().split('-');
        let loss = match parts.next().map(str::to_ascii_uppercase).as_deref() {
            Some("PGD") => AttackLoss::CrossEntropy,
            Some("CW") => AttackLoss::CwMargin,
            _ => return Err(bad()),
        };
        let steps: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let restarts: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() || steps == 0 || restarts == 0 {
            return Err(bad());
        }
        Ok(AttackName { loss, steps, restarts })
    }
}

impl fmt::Display for AttackName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.loss {
            AttackLoss::CrossEntropy => "PGD",
            AttackLoss::CwMargin => "CW",
        };
        write!(f, "{prefix}-{}-{}", self.steps, self.restarts)
    }
}

/// Result of attacking a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub x_adv: Tensor,
    /// `x_adv − x`.
    pub delta: Tensor,
    /// Per example: the model misclassifies `x_adv`.
    pub success: Vec<bool>,
    /// Per example: the attack objective at `x_adv`.
    pub loss: Vec<f64>,
}

fn check_batch(model: &Model, x: &Tensor, y: &[usize]) -> Result<()> {
    if x.rank() < 2 || x.shape()[0] != y.len() {
        return Err(Error::shape(
            "attack",
            format!("batch {:?} with {} labels", x.shape(), y.len()),
        ));
    }
    if x.shape()[1..] != *model.spec().input_shape() {
        return Err(Error::shape(
            "attack",
            format!("batch {:?} vs model input {:?}", x.shape(), model.spec().input_shape()),
        ));
    }
    Ok(())
}

/// Per-example objective values and their summed gradient w.r.t. the input.
///
/// The parameters enter the tape as constants, so no weight gradients are formed.
pub fn input_gradient(model: &Model, x: &Tensor, y: &[usize], loss: AttackLoss) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, false)?;
    let xv = tape.param(x.clone())?;
    let logits = model.forward(&mut tape, &params, xv)?;
    let per_example = objective(&mut tape, logits, y, loss)?;
    let losses = tape.value(per_example).data().to_vec();
    let total = tape.sum(per_example)?;
    let grad = tape.backward(total)?.take(xv).expect("input is differentiable");
    Ok((grad, losses))
}

pub(crate) fn objective(
    tape: &mut Tape,
    logits: crate::autograd::Var,
    y: &[usize],
    loss: AttackLoss,
) -> Result<crate::autograd::Var> {
    match loss {
        AttackLoss::CrossEntropy => tape.softmax_cross_entropy(logits, y),
        AttackLoss::CwMargin => tape.cw_margin(logits, y),
    }
}

/// Evaluates success and objective at an adversarial batch.
fn outcome(model: &Model, x: &Tensor, y: &[usize], x_adv: Tensor, loss: AttackLoss) -> Result<AttackOutcome> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, false)?;
    let xv = tape.constant(x_adv.clone())?;
    let logits = model.forward(&mut tape, &params, xv)?;
    let pred = tape.value(logits).argmax_rows();
    let per_example = objective(&mut tape, logits, y, loss)?;
    let delta = x_adv.zip_map(x, |a, b| a - b)?;
    Ok(AttackOutcome {
        success: pred.iter().zip(y).map(|(p, t)| p != t).collect(),
        loss: tape.value(per_example).data().to_vec(),
        x_adv,
        delta,
    })
}

/// FGSM adversarial batch `clamp(x + ε·sign(∇ₓ CE), 0, 1)` from one gradient evaluation.
pub fn fgsm_example(model: &Model, x: &Tensor, y: &[usize], eps: f64) -> Result<Tensor> {
    check_batch(model, x, y)?;
    let (g, _) = input_gradient(model, x, y, AttackLoss::CrossEntropy)?;
    let mut out = x.clone();
    for (xv, gv) in out.data_mut().iter_mut().zip(g.data()) {
        *xv = (*xv + eps * sign(*gv)).clamp(0.0, 1.0);
    }
    Ok(out)
}

pub fn fgsm(model: &Model, x: &Tensor, y: &[usize], eps: f64) -> Result<AttackOutcome> {
    let x_adv = fgsm_example(model, x, y, eps)?;
    outcome(model, x, y, x_adv, AttackLoss::CrossEntropy)
}

/// Starting point of PGD: `x` itself, or `x` plus uniform noise in the ε-box,
/// clamped to `[0, 1]`. The noise for the whole batch comes from `key`.
pub fn pgd_start(x: &Tensor, eps: f64, init: InitMode, key: StreamKey) -> Tensor {
    match init {
        InitMode::Zero => x.clone(),
        InitMode::Uniform => {
            let mut noise = vec![0.0; x.len()];
            uniform_fill(&mut key.rng(), &mut noise, eps);
            let mut out = x.clone();
            for (v, n) in out.data_mut().iter_mut().zip(&noise) {
                *v = (*v + n.clamp(-eps, eps)).clamp(0.0, 1.0);
            }
            out
        }
    }
}

/// One projected signed-gradient step applied in place to `x_adv`.
pub fn pgd_step(x: &Tensor, x_adv: &mut Tensor, grad: &Tensor, alpha: f64, eps: f64) {
    for ((xa, &x0), &g) in x_adv.data_mut().iter_mut().zip(x.data()).zip(grad.data()) {
        let delta = ((*xa - x0) + alpha * sign(g)).clamp(-eps, eps);
        *xa = (x0 + delta).clamp(0.0, 1.0);
    }
}

/// Runs PGD from `start` and returns the final iterate (no best-iterate tracking).
pub fn pgd_from(
    model: &Model,
    x: &Tensor,
    y: &[usize],
    start: Tensor,
    budget: &LinfBudget,
) -> Result<Tensor> {
    let mut x_adv = start;
    for _ in 0..budget.steps {
        let (g, _) = input_gradient(model, &x_adv, y, budget.loss)?;
        pgd_step(x, &mut x_adv, &g, budget.alpha, budget.eps);
    }
    Ok(x_adv)
}

/// PGD adversarial batch; `key` feeds the uniform initialization.
pub fn pgd_example(model: &Model, x: &Tensor, y: &[usize], budget: &LinfBudget, key: StreamKey) -> Result<Tensor> {
    check_batch(model, x, y)?;
    budget.validate()?;
    let start = pgd_start(x, budget.eps, budget.init, key);
    pgd_from(model, x, y, start, budget)
}

/// Single-run PGD (restarts are ignored; see [`multi_restart`]).
pub fn pgd(model: &Model, x: &Tensor, y: &[usize], budget: &LinfBudget, key: StreamKey) -> Result<AttackOutcome> {
    let single = LinfBudget { restarts: 1, ..*budget };
    let x_adv = pgd_example(model, x, y, &single, key)?;
    outcome(model, x, y, x_adv, budget.loss)
}

/// Worst case over `budget.restarts` PGD runs.
///
/// Restart `r` draws its initialization from `key.restart(r)`, so the first
/// `N` restarts are the same whatever the total count. Per example the first
/// restart that flips the prediction is kept, otherwise the restart with the
/// largest objective. Restarts after the first only revisit examples that are
/// still classified correctly.
pub fn multi_restart(
    model: &Model,
    x: &Tensor,
    y: &[usize],
    budget: &LinfBudget,
    key: StreamKey,
) -> Result<AttackOutcome> {
    budget.validate()?;
    let mut best = pgd(model, x, y, budget, key.restart(0))?;
    for r in 1..budget.restarts {
        let pending: Vec<usize> = (0..y.len()).filter(|&i| !best.success[i]).collect();
        if pending.is_empty() {
            break;
        }
        // noise is drawn for the full batch and then subset, so an example's
        // start does not depend on which others are still pending
        let start = pgd_start(x, budget.eps, budget.init, key.restart(r as u64)).select_rows(&pending);
        let xs = x.select_rows(&pending);
        let ys: Vec<usize> = pending.iter().map(|&i| y[i]).collect();
        let x_adv = pgd_from(model, &xs, &ys, start, budget)?;
        let trial = outcome(model, &xs, &ys, x_adv, budget.loss)?;
        let row = x.row_len();
        for (k, &i) in pending.iter().enumerate() {
            if trial.success[k] || trial.loss[k] > best.loss[i] {
                best.success[i] = trial.success[k];
                best.loss[i] = trial.loss[k];
                best.x_adv.data_mut()[i * row..(i + 1) * row].copy_from_slice(trial.x_adv.row(k));
                best.delta.data_mut()[i * row..(i + 1) * row].copy_from_slice(trial.delta.row(k));
            }
        }
    }
    Ok(best)
}

/// Untargeted margin `max_{j≠y} z_j − z_y` per row of `logits`.
pub fn cw_margin_loss(logits: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone())?;
    let m = tape.cw_margin(z, y)?;
    Ok(tape.value(m).data().to_vec())
}

/// `‖f(x_fgsm) − f(x_pgd)‖₂` per example, and the batch mean.
pub fn logit_distance(model: &Model, x_fgsm: &Tensor, x_pgd: &Tensor) -> Result<(Vec<f64>, f64)> {
    if x_fgsm.shape() != x_pgd.shape() {
        return Err(Error::shape(
            "logit_distance",
            format!("{:?} vs {:?}", x_fgsm.shape(), x_pgd.shape()),
        ));
    }
    let a = model.logits(x_fgsm)?;
    let b = model.logits(x_pgd)?;
    let per: Vec<f64> = (0..a.rows())
        .map(|i| {
            a.row(i)
                .iter()
                .zip(b.row(i))
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((per, mean))
}
