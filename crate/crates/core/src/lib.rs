//! Fairness-encouraging training losses built on conditional value-at-risk.
//!
//! The crate provides:
//!
//! * [`losses`]: empirical CVaR objectives, the exact order-statistic λ solver,
//!   the demographic-agnostic (DAG-FDD) and demographic-aware (DAW-FDD) losses
//!   and their per-sample subgradient weights.
//! * [`model`]: logistic regression and a one-hidden-layer MLP with binary
//!   cross-entropy and hand-written backward passes.
//! * [`metrics`]: detection metrics (AUC, FPR, TPR, ACC) and group fairness
//!   metrics (G_FPR, F_FPR, F_EO).
//! * [`data`]: a seeded synthetic generator for group-imbalanced data, CSV I/O
//!   and stratified splitting.
//! * [`trainer`]: minibatch subgradient training and the hyperparameter sweep.
//! * [`verify`]: self-contained property checks used by the `verify` command.
//!
//! The numerical core is generic over the scalar type (see [`Scalar`]); the
//! aliases below fix it to `f64` or `f32`.

pub mod data;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod trainer;
pub mod verify;

pub use scalar::Scalar;

pub type LossVector64 = losses::LossVector<f64>;
pub type LossVector32 = losses::LossVector<f32>;
pub type CvarParams64 = losses::CvarParams<f64>;
pub type CvarParams32 = losses::CvarParams<f32>;
pub type LambdaSolution64 = losses::LambdaSolution<f64>;
pub type LambdaSolution32 = losses::LambdaSolution<f32>;
pub type LossBreakdown64 = losses::LossBreakdown<f64>;
pub type LossBreakdown32 = losses::LossBreakdown<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type Prediction64 = model::Prediction<f64>;
pub type Prediction32 = model::Prediction<f32>;
pub type EvalRecord64 = metrics::EvalRecord<f64>;
pub type EvalRecord32 = metrics::EvalRecord<f32>;
