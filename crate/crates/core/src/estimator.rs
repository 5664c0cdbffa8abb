//! Adaptive Bayesian estimation of the qubit decay rate.
//!
//! The belief over the decay rate `Γ₁` is a two-parameter gamma distribution
//! `p(Γ₁) ∝ Γ₁^(k-1) e^(-θΓ₁)`. After every single-shot outcome the exact
//! posterior (prior times the binary-outcome likelihood) is projected back
//! onto the gamma family by matching its first two moments; the update reads
//! and writes only `(k, θ)`, so the estimator memory is constant per shot.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    /// The observed outcome has probability zero under the prior; this
    /// indicates a mis-specified SPAM model rather than a numerical glitch.
    #[error("outcome m={m} at tau={tau_s}s has zero probability under the prior")]
    ZeroEvidence { m: u8, tau_s: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Misclassification probabilities of the single-shot readout.
///
/// `alpha` is the probability of reading `|0⟩` when the true state is `|1⟩`,
/// `beta` the probability of reading `|1⟩` when the true state is `|0⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpamModel {
    pub alpha: f64,
    pub beta: f64,
}

impl SpamModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, EstimatorError> {
        if !(0.0..1.0).contains(&alpha) || !(0.0..1.0).contains(&beta) || alpha + beta >= 1.0 {
            return Err(EstimatorError::InvalidParameter(format!(
                "SPAM probabilities must satisfy 0 <= alpha,beta < 1 and alpha+beta < 1, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub const fn ideal() -> Self {
        Self { alpha: 0.0, beta: 0.0 }
    }

    /// Likelihood coefficients of the outcome `m`: `P(m) = a_m - b_m e^(-Γτ)`.
    pub fn coefficients(&self, m: u8) -> (f64, f64) {
        let m = f64::from(m.min(1));
        let a = (1.0 - m) * (1.0 - self.beta) + m * self.beta;
        let b = (1.0 - 2.0 * m) * (1.0 - self.alpha - self.beta);
        (a, b)
    }
}

/// Probability of measuring outcome `m` after waiting `tau` at decay rate
/// `gamma1`, including misclassification.
pub fn likelihood(m: u8, gamma1: f64, tau: f64, spam: &SpamModel) -> f64 {
    let (a, b) = spam.coefficients(m);
    a - b * (-gamma1 * tau).exp()
}

/// Gamma belief state over the decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPosterior {
    /// Shape parameter (dimensionless).
    pub k: f64,
    /// Parameter multiplying `Γ₁` in the exponent (seconds); mean rate `k/θ`.
    pub theta: f64,
}

impl GammaPosterior {
    pub fn new(k: f64, theta: f64) -> Result<Self, EstimatorError> {
        if !(k > 0.0) || !(theta > 0.0) {
            return Err(EstimatorError::InvalidParameter(format!(
                "gamma parameters must be positive, got (k={k}, theta={theta})"
            )));
        }
        Ok(Self { k, theta })
    }

    /// Mean decay rate `⟨Γ₁⟩ = k/θ` in 1/s.
    pub fn mean_rate(&self) -> f64 {
        self.k / self.theta
    }

    /// Rate variance `k/θ²`.
    pub fn rate_variance(&self) -> f64 {
        self.k / (self.theta * self.theta)
    }

    /// Point estimate `T̂₁ = 1/⟨Γ₁⟩ = θ/k` in seconds.
    pub fn t1_hat(&self) -> f64 {
        self.theta / self.k
    }

    /// Reported standard deviation of the `T̂₁` estimate, `θ·k^(-3/2)`.
    pub fn t1_std(&self) -> f64 {
        self.theta * self.k.powf(-1.5)
    }

    pub fn pdf(&self, gamma1: f64) -> f64 {
        if gamma1 <= 0.0 {
            return 0.0;
        }
        let log_pdf = self.k * self.theta.ln() - statrs::function::gamma::ln_gamma(self.k)
            + (self.k - 1.0) * gamma1.ln()
            - self.theta * gamma1;
        log_pdf.exp()
    }

    /// Quantile of the rate distribution.
    pub fn rate_quantile(&self, p: f64) -> f64 {
        let dist = Gamma::new(self.k, self.theta).expect("valid gamma");
        dist.inverse_cdf(p)
    }
}

/// Equal-tailed credible interval for `T₁ = 1/Γ₁` at the given level,
/// obtained from the gamma quantiles of the rate (inverted and swapped).
pub fn credible_interval(posterior: &GammaPosterior, level: f64) -> (f64, f64) {
    assert!(level > 0.0 && level < 1.0, "level must be in (0,1)");
    let lo_q = posterior.rate_quantile(0.5 + level / 2.0);
    let hi_q = posterior.rate_quantile(0.5 - level / 2.0);
    (1.0 / lo_q, 1.0 / hi_q)
}

/// One probing cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub tau: f64,
    pub outcome: u8,
    /// Cumulative wall-clock at shot start (s).
    pub lab_time: f64,
    pub rep_index: usize,
    pub shot_index: usize,
}

/// Waiting-time policy `τ = clamp(c·T̂₁, τ_min, τ_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptivePolicy {
    pub c: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl AdaptivePolicy {
    /// Upper bound of the useful prefactor range; the optimum of the
    /// binomial-statistics objective never exceeds `2 + W(-2e^{-2})`.
    pub const C_MAX: f64 = 1.59;

    pub fn new(c: f64, tau_min: f64, tau_max: f64) -> Result<Self, EstimatorError> {
        if !(c > 0.0 && c <= Self::C_MAX) {
            return Err(EstimatorError::InvalidParameter(format!(
                "prefactor c must be in (0, {}], got {c}",
                Self::C_MAX
            )));
        }
        if !(tau_min > 0.0 && tau_min < tau_max) {
            return Err(EstimatorError::InvalidParameter(format!(
                "need 0 < tau_min < tau_max, got ({tau_min}, {tau_max})"
            )));
        }
        Ok(Self { c, tau_min, tau_max })
    }

    /// Default clamp bounds: 1 µs to 5 ms.
    pub fn with_default_bounds(c: f64) -> Result<Self, EstimatorError> {
        Self::new(c, 1e-6, 5e-3)
    }
}

/// Waiting time for the next probe cycle.
pub fn next_tau(posterior: &GammaPosterior, policy: &AdaptivePolicy) -> f64 {
    (policy.c * posterior.t1_hat()).clamp(policy.tau_min, policy.tau_max)
}

/// Posterior mean and second moment of the rate after observing `m` at `tau`.
///
/// With `r = θ/(θ+τ)` the exact posterior is the two-term gamma mixture of
/// `(a_m - b_m e^{-λτ})·prior`; its moments reduce to ratios of
/// `a_m - b_m r^n` for consecutive powers `n`.
fn posterior_moments(
    prior: &GammaPosterior,
    m: u8,
    tau: f64,
    spam: &SpamModel,
) -> Result<(f64, f64), EstimatorError> {
    let (a, b) = spam.coefficients(m);
    let (k, theta) = (prior.k, prior.theta);
    let r = theta / (theta + tau);

    // a = 0 means m = 1 with beta = 0: exact conjugacy, Gamma(k, θ+τ).
    if a == 0.0 {
        if b >= 0.0 {
            return Err(EstimatorError::ZeroEvidence { m, tau_s: tau });
        }
        let mean = k / (theta + tau);
        let second = (k + k * k) / ((theta + tau) * (theta + tau));
        return Ok((mean, second));
    }

    let rk = r.powf(k);
    let g0 = a - b * rk; // evidence, P(m) under the prior
    if !(g0 > 0.0) || !g0.is_finite() {
        return Err(EstimatorError::ZeroEvidence { m, tau_s: tau });
    }
    let g1 = a - b * rk * r;
    let g2 = a - b * rk * r * r;
    let mean = k / theta * g1 / g0;
    let second = mean * (1.0 + k) / theta * g2 / g1;
    Ok((mean, second))
}

/// Moment-matched Bayesian update: the gamma distribution sharing the mean
/// and variance of the exact posterior after outcome `m` at waiting time
/// `tau`. Constant memory: only `(k, θ)` are read and written.
pub fn update(
    prior: &GammaPosterior,
    m: u8,
    tau: f64,
    spam: &SpamModel,
) -> Result<GammaPosterior, EstimatorError> {
    let (mean, second) = posterior_moments(prior, m, tau, spam)?;
    let var = second - mean * mean;
    if !(var > 0.0) || !mean.is_finite() {
        return Err(EstimatorError::ZeroEvidence { m, tau_s: tau });
    }
    Ok(GammaPosterior {
        k: mean * mean / var,
        theta: mean / var,
    })
}

/// Anything that can answer single-shot queries while keeping its own clock.
pub trait MeasurementSource {
    /// Run one probe cycle with waiting time `tau`, returning the classified
    /// outcome. The source advances its lab time by `tau` plus the per-cycle
    /// idle time.
    fn single_shot(&mut self, tau: f64) -> u8;

    /// Cumulative wall-clock time in seconds.
    fn lab_time(&self) -> f64;
}

/// Configuration of one estimation repetition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub prior: GammaPosterior,
    pub spam: SpamModel,
    pub policy: AdaptivePolicy,
    pub n_shots: usize,
}

/// One completed estimation repetition.
#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub config: EstimationConfig,
    pub rep_index: usize,
    /// Posterior after each of the `n_shots` updates.
    pub posterior_trace: Vec<GammaPosterior>,
    pub records: Vec<ProbeRecord>,
    pub start_time: f64,
    pub end_time: f64,
}

impl EstimationRun {
    pub fn final_posterior(&self) -> GammaPosterior {
        *self.posterior_trace.last().unwrap_or(&self.config.prior)
    }

    /// Total lab time spent in this repetition.
    pub fn elapsed(&self) -> f64 {
        self.end_time - self.start_time
    }
}

/// Run `config.n_shots` probe cycles against `source`, starting from the
/// configured prior. Each cycle queries the adaptive waiting time, obtains
/// one outcome, and applies one moment-matched update.
pub fn run_estimation(
    source: &mut dyn MeasurementSource,
    config: &EstimationConfig,
    rep_index: usize,
) -> Result<EstimationRun, EstimatorError> {
    let mut posterior = config.prior;
    let mut posterior_trace = Vec::with_capacity(config.n_shots);
    let mut records = Vec::with_capacity(config.n_shots);
    let start_time = source.lab_time();
    for shot_index in 0..config.n_shots {
        let tau = next_tau(&posterior, &config.policy);
        let lab_time = source.lab_time();
        let outcome = source.single_shot(tau);
        posterior = update(&posterior, outcome, tau, &config.spam)?;
        posterior_trace.push(posterior);
        records.push(ProbeRecord {
            tau,
            outcome,
            lab_time,
            rep_index,
            shot_index,
        });
    }
    Ok(EstimationRun {
        config: *config,
        rep_index,
        posterior_trace,
        records,
        start_time,
        end_time: source.lab_time(),
    })
}

/// Repeated independent estimations: the prior is reset at the start of
/// every repetition. Repetitions that hit `ZeroEvidence` are flagged and
/// excluded from the returned runs.
pub fn run_repetitions(
    source: &mut dyn MeasurementSource,
    config: &EstimationConfig,
    reps: usize,
) -> (Vec<EstimationRun>, usize) {
    let mut runs = Vec::with_capacity(reps);
    let mut aborted = 0;
    for rep in 0..reps {
        match run_estimation(source, config, rep) {
            Ok(run) => runs.push(run),
            Err(EstimatorError::ZeroEvidence { .. }) => aborted += 1,
            Err(e) => panic!("unexpected estimation failure: {e}"),
        }
    }
    (runs, aborted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::adaptive_simpson;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const US: f64 = 1e-6;

    #[test]
    fn likelihood_no_decay_no_error() {
        let spam = SpamModel::ideal();
        for gamma in [10.0, 5e3, 1e5] {
            assert_eq!(likelihood(1, gamma, 0.0, &spam), 1.0);
        }
    }

    #[test]
    fn likelihood_at_one_lifetime_matches_validation_value() {
        // Supplement validation setup: tau = T1, alpha = 0.105, beta = 0.14.
        let spam = SpamModel::new(0.105, 0.14).unwrap();
        let gamma = 1.0 / (100.0 * US);
        let p = likelihood(1, gamma, 100.0 * US, &spam);
        assert_relative_eq!(p, 0.14 + (1.0 - 0.105 - 0.14) * (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(p, 0.418, epsilon = 5e-4);
    }

    #[test]
    fn likelihood_m0_direct_arithmetic() {
        let spam = SpamModel::new(0.11, 0.14).unwrap();
        let gamma = 1.0 / (100.0 * US);
        let p = likelihood(0, gamma, 100.0 * US, &spam);
        assert_relative_eq!(p, 1.0 - (0.14 + 0.75 * (-1.0f64).exp()), epsilon = 1e-12);
    }

    #[test]
    fn conjugate_update_m1_no_spam() {
        let prior = GammaPosterior::new(3.0, 450.0 * US).unwrap();
        let post = update(&prior, 1, 100.0 * US, &SpamModel::ideal()).unwrap();
        assert_relative_eq!(post.k, 3.0, max_relative = 1e-12);
        assert_relative_eq!(post.theta, 550.0 * US, max_relative = 1e-12);
    }

    /// Quadrature oracle for the posterior moments, independent of the
    /// mixture algebra used by `update`.
    fn quadrature_moments(prior: &GammaPosterior, m: u8, tau: f64, spam: &SpamModel) -> (f64, f64) {
        let upper = 60.0 / prior.theta;
        let joint = |lam: f64| prior.pdf(lam) * likelihood(m, lam, tau, spam);
        let z = adaptive_simpson(&joint, 0.0, upper, 1e-13);
        let m1 = adaptive_simpson(&|lam| lam * joint(lam), 0.0, upper, 1e-13) / z;
        let m2 = adaptive_simpson(&|lam| lam * lam * joint(lam), 0.0, upper, 1e-13) / z;
        (m1, m2 - m1 * m1)
    }

    #[test]
    fn update_matches_quadrature_oracle() {
        let prior = GammaPosterior::new(3.0, 450.0 * US).unwrap();
        let spam = SpamModel::new(0.11, 0.14).unwrap();
        let tau = 229.0 * US;
        let post = update(&prior, 0, tau, &spam).unwrap();
        let (mean, var) = quadrature_moments(&prior, 0, tau, &spam);
        assert_relative_eq!(post.mean_rate(), mean, max_relative = 1e-6);
        assert_relative_eq!(post.rate_variance(), var, max_relative = 1e-6);
    }

    #[test]
    fn zero_evidence_is_an_error() {
        // m=0 at tau=0 with alpha=0 can only come from misclassification.
        let prior = GammaPosterior::new(3.0, 450.0 * US).unwrap();
        let spam = SpamModel::new(0.0, 0.14).unwrap();
        let err = update(&prior, 0, 0.0, &spam).unwrap_err();
        assert!(matches!(err, EstimatorError::ZeroEvidence { m: 0, .. }));
    }

    #[test]
    fn next_tau_formula_and_clamp() {
        let p = GammaPosterior::new(3.0, 450.0 * US).unwrap();
        let policy = AdaptivePolicy::new(0.51, 1e-6, 5e-3).unwrap();
        assert_relative_eq!(next_tau(&p, &policy), 76.5 * US, max_relative = 1e-12);
        let clamped = AdaptivePolicy::new(1.0, 1e-6, 120.0 * US).unwrap();
        assert_relative_eq!(next_tau(&p, &clamped), 120.0 * US, max_relative = 1e-12);
    }

    #[test]
    fn credible_interval_narrows_with_level_and_matches_inverse_cdf() {
        let p = GammaPosterior::new(3.0, 450.0 * US).unwrap();
        let (lo1, hi1) = credible_interval(&p, 0.90);
        let (lo2, hi2) = credible_interval(&p, 0.50);
        let (lo3, hi3) = credible_interval(&p, 1e-9);
        assert!(lo1 < lo2 && lo2 < lo3 && hi3 < hi2 && hi2 < hi1);
        // level -> 0 collapses onto the median of T1.
        assert_relative_eq!(lo3, hi3, max_relative = 1e-6);
        // Paper-scale check for the (3, 450 us) prior (reported as ~[80, 630] us).
        let (lo, hi) = credible_interval(&p, 0.90);
        assert!((lo - 80.0 * US).abs() / (80.0 * US) < 0.15, "lo = {lo}");
        assert!((hi - 630.0 * US).abs() / (630.0 * US) < 0.15, "hi = {hi}");
    }

    #[test]
    fn credible_interval_endpoint_matches_quadrature_cdf() {
        let p = GammaPosterior::new(4.2, 300.0 * US).unwrap();
        let (lo, hi) = credible_interval(&p, 0.90);
        // CDF of the rate at the inverted endpoints via quadrature.
        let cdf = |x: f64| adaptive_simpson(&|lam| p.pdf(lam), 0.0, x, 1e-13);
        assert_relative_eq!(cdf(1.0 / lo), 0.95, epsilon = 1e-6);
        assert_relative_eq!(cdf(1.0 / hi), 0.05, epsilon = 1e-6);
    }

    #[test]
    fn pdf_normalizes() {
        for (k, theta) in [(1.0, 1e-4), (3.0, 450.0 * US), (20.0, 2e-3)] {
            let p = GammaPosterior::new(k, theta).unwrap();
            let z = adaptive_simpson(&|lam| p.pdf(lam), 0.0, 200.0 / theta, 1e-10);
            assert_relative_eq!(z, 1.0, epsilon = 1e-8);
        }
    }

    struct ConjugateSource {
        t: f64,
    }
    impl MeasurementSource for ConjugateSource {
        fn single_shot(&mut self, tau: f64) -> u8 {
            self.t += tau;
            1
        }
        fn lab_time(&self) -> f64 {
            self.t
        }
    }

    #[test]
    fn run_estimation_conjugate_chain() {
        // Gamma1 = 0 and no SPAM: every outcome is 1, so the posterior mean
        // is k0/(θ0 + Στ) and decreases monotonically.
        let config = EstimationConfig {
            prior: GammaPosterior::new(3.0, 450.0 * US).unwrap(),
            spam: SpamModel::ideal(),
            policy: AdaptivePolicy::new(0.5, 1e-6, 5e-3).unwrap(),
            n_shots: 30,
        };
        let mut source = ConjugateSource { t: 0.0 };
        let run = run_estimation(&mut source, &config, 0).unwrap();
        assert_eq!(run.records.len(), 30);
        assert_eq!(run.posterior_trace.len(), 30);
        let total_tau: f64 = run.records.iter().map(|r| r.tau).sum();
        let last = run.final_posterior();
        assert_relative_eq!(last.k, 3.0, max_relative = 1e-9);
        assert_relative_eq!(last.theta, 450.0 * US + total_tau, max_relative = 1e-9);
        for w in run.posterior_trace.windows(2) {
            assert!(w[1].mean_rate() < w[0].mean_rate());
        }
        // Lab-time stamps non-decreasing.
        for w in run.records.windows(2) {
            assert!(w[1].lab_time >= w[0].lab_time);
        }
    }

    proptest! {
        #[test]
        fn likelihood_normalizes(
            gamma in 1.0f64..1e5,
            tau in 1e-7f64..1e-2,
            alpha in 0.0f64..0.4,
            beta in 0.0f64..0.4,
        ) {
            prop_assume!(alpha + beta < 0.95);
            let spam = SpamModel::new(alpha, beta).unwrap();
            let p0 = likelihood(0, gamma, tau, &spam);
            let p1 = likelihood(1, gamma, tau, &spam);
            prop_assert!((p0 + p1 - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&p0));
        }

        #[test]
        fn update_shifts_mean_monotonically(
            k in 1.0f64..40.0,
            theta in 1e-5f64..1e-2,
            tau_over_theta in 0.01f64..10.0,
            alpha in 0.0f64..0.3,
            beta in 0.0f64..0.3,
        ) {
            prop_assume!(alpha + beta < 0.9);
            // Keep the posterior shift resolvable in f64: the update moves
            // the mean by O((theta/(theta+tau))^k) relative to the prior.
            prop_assume!(k * (1.0 + tau_over_theta).ln() < 25.0);
            let prior = GammaPosterior::new(k, theta).unwrap();
            let spam = SpamModel::new(alpha, beta).unwrap();
            let tau = tau_over_theta * theta;
            let up = update(&prior, 1, tau, &spam).unwrap();
            let down = update(&prior, 0, tau, &spam).unwrap();
            prop_assert!(up.mean_rate() < prior.mean_rate());
            prop_assert!(down.mean_rate() > prior.mean_rate());
        }
    }
}
