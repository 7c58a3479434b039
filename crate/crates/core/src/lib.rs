//! Core of the adversarial-training laboratory.
//!
//! * [`autograd`]: tape-based reverse-mode differentiation over [`Tensor`]s,
//!   with [`gradcheck`] for finite-difference verification.
//! * [`models`]: layered classifiers, initialization, SGD and checkpoints.
//! * [`data`]: IDX ingestion, a synthetic Gaussian dataset and seeded batching.
//! * [`attacks`]: FGSM, PGD, CW-margin PGD, multi-restart evaluation and the
//!   FGSM/PGD logit distance.
//! * [`training`]: standard, FGSM, FAST-FGSM, PGD, FREE and FGSMPR training.
//! * [`diagnostics`]: per-epoch robustness metrics, catastrophic-overfitting
//!   detection and the metrics CSV format.

pub mod attacks;
pub mod autograd;
pub mod data;
pub mod diagnostics;
mod error;
pub mod gradcheck;
mod linalg;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autograd::{Gradients, Tape, Var};

pub use error::{Error, Result};

pub use tensor::Tensor;

pub use models::{Layer, Model, ModelParams, ModelSpec};
pub use attacks::{AttackLoss, AttackName, AttackOutcome, InitMode, LinfBudget};
pub use data::{BatchPlan, Dataset};
pub use diagnostics::{CoEvent, EpochMetrics, EvalProtocol};
pub use training::{Method, TrainConfig, TrainResult};
