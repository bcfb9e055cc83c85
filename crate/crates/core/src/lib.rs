//! Target-modification losses for learning with noisy labels.
//!
//! The crate covers categorical cross entropy and its modified-target
//! variants (label smoothing, confidence penalty, bootstrapping, label
//! correction and ProSelfLC with an annealed-temperature self knowledge),
//! calibration metrics, label-noise injection and a small deterministic
//! trainer used to study learning dynamics on synthetic data.

pub mod calibration;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod model;
pub mod noise;
pub mod prob;
pub mod target;
pub mod train;

pub use error::{Error, Result};
pub use loss::{LossBreakdown, LossContext, Objective};
pub use prob::{ConfidenceMode, Logits, OneHot, ProbDist};
pub use target::{LocalTrust, ModKind, TargetDist, TrustParams};
