//! Tracking of fluctuating qubit relaxation rates.
//!
//! The crate provides the full pipeline around a constant-memory Bayesian
//! estimator for the relaxation rate of a qubit probed with single-shot
//! measurements:
//!
//! * [`estimator`] — the gamma-posterior estimator with adaptive waiting times,
//! * [`optimizer`] — locally optimal waiting times from binomial statistics,
//! * [`sim`] — a synthetic qubit whose decay rate is driven by telegraph
//!   fluctuators,
//! * [`baselines`] — nonadaptive exponential-fit and fixed-`tau` MAP references,
//! * [`oracle`] — exact-posterior mixtures, KL diagnostics, and binomial
//!   validation tests,
//! * [`noise`] — Welch PSD, Allan deviation, multi-component noise fits, and
//!   the switch-event detector.

pub mod baselines;
pub mod estimator;
pub mod noise;
pub mod numeric;
pub mod optimizer;
pub mod oracle;
pub mod rng;
pub mod sim;

pub use estimator::{
    AdaptivePolicy, EstimationConfig, EstimationRun, GammaPosterior, MeasurementSource,
    ProbeRecord, SpamModel,
};
