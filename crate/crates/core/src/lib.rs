//! Binary classification under extreme class imbalance.
//!
//! The crate provides an asymmetric sigmoid output unit with a learnable
//! decision threshold ([`activation`]), an approximated G-Mean loss
//! ([`losses`]), soft-confusion-matrix telemetry ([`metrics`]), a small
//! perceptron trained full-batch ([`network`], [`trainer`]) and a repeated
//! stratified cross-validation harness with paired significance testing
//! ([`experiment`], [`stats`]).
//!
//! Data-parallel inner loops use rayon behind the default `parallel`
//! feature; without it everything runs sequentially with identical results.

pub mod activation;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod network;
pub mod par;
pub mod seed;
pub mod stats;
pub mod trainer;

pub use activation::AstraParams;
pub use data::{Dataset, FoldPlan};
pub use error::{Error, Result};
pub use experiment::{CvConfig, CvReport, RunResult};
pub use losses::LossKind;
pub use matrix::Matrix;
pub use metrics::{ApproxCM, CountCM};
pub use network::Mlp;
pub use trainer::TrainConfig;
