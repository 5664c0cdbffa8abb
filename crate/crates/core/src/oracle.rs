//! Ground-truth machinery for validating the moment-matched estimator.
//!
//! After `N` shots the exact posterior is a signed linear combination of at
//! most `2^N` gamma densities sharing the prior shape; expanding the product
//! of likelihood terms against the gamma prior gives the weights in closed
//! form. This module exposes that mixture, KL divergences of the gamma and
//! truncated-normal moment-matched approximations, the frequentist
//! uncertainty limit, and the weak/strong binomial validation tests.

use crate::estimator::{
    run_estimation, EstimationConfig, EstimationRun, GammaPosterior, MeasurementSource, SpamModel,
};
use crate::numeric::adaptive_simpson;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Gamma, Normal};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("{n} shots would expand into 2^{n} mixture terms; limit is 20")]
    TooManyShots { n: usize },
    #[error("record sequence has zero probability under the prior")]
    ZeroEvidence,
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
}

/// Exact posterior as a signed mixture of gamma densities with common shape.
#[derive(Debug, Clone)]
pub struct GammaMixture {
    /// Shared shape parameter (the prior's `k`).
    pub k: f64,
    /// `(normalized signed weight, theta)` per component; weights sum to 1.
    pub components: Vec<(f64, f64)>,
}

impl GammaMixture {
    pub fn mean(&self) -> f64 {
        self.k * self.components.iter().map(|(w, th)| w / th).sum::<f64>()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let second = self.k * (self.k + 1.0)
            * self.components.iter().map(|(w, th)| w / (th * th)).sum::<f64>();
        second - m * m
    }

    pub fn pdf(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        let lg = ln_gamma(self.k);
        self.components
            .iter()
            .map(|(w, th)| {
                w * (self.k * th.ln() - lg + (self.k - 1.0) * lambda.ln() - th * lambda).exp()
            })
            .sum()
    }

    pub fn cdf(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        self.components
            .iter()
            .map(|(w, th)| w * gamma_lr(self.k, th * lambda))
            .sum()
    }

    /// Moment-matched gamma approximant.
    pub fn moment_matched_gamma(&self) -> GammaPosterior {
        let m = self.mean();
        let v = self.variance();
        GammaPosterior { k: m * m / v, theta: m / v }
    }

    /// Rate value below which all but `eps` of the mixture mass lies,
    /// bounded by the widest component.
    pub fn upper_rate(&self, eps: f64) -> f64 {
        let theta_min = self
            .components
            .iter()
            .map(|&(_, th)| th)
            .fold(f64::INFINITY, f64::min);
        let dist = Gamma::new(self.k, theta_min).expect("valid gamma");
        dist.inverse_cdf(1.0 - eps)
    }
}

/// Exact posterior of a gamma prior after a sequence of `(tau, m)` records.
pub fn exact_posterior(
    prior: &GammaPosterior,
    records: &[(f64, u8)],
    spam: &SpamModel,
) -> Result<GammaMixture, OracleError> {
    if records.len() > 20 {
        return Err(OracleError::TooManyShots { n: records.len() });
    }
    // Fold the likelihood product into (coefficient, accumulated tau) terms.
    let mut terms: Vec<(f64, f64)> = vec![(1.0, 0.0)];
    for &(tau, m) in records {
        let (a, b) = spam.coefficients(m);
        let mut next = Vec::with_capacity(terms.len() * 2);
        for &(coef, tau_sum) in &terms {
            if a != 0.0 {
                next.push((coef * a, tau_sum));
            }
            next.push((coef * -b, tau_sum + tau));
        }
        terms = next;
    }
    // Integrating each term against the prior gives weight
    // coef * (theta0/(theta0+T))^k0 on a Gamma(k0, theta0+T) component.
    let (k0, theta0) = (prior.k, prior.theta);
    let mut components: Vec<(f64, f64)> = terms
        .into_iter()
        .map(|(coef, tau_sum)| {
            let theta = theta0 + tau_sum;
            (coef * (theta0 / theta).powf(k0), theta)
        })
        .collect();
    let norm: f64 = components.iter().map(|(w, _)| w).sum();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(OracleError::ZeroEvidence);
    }
    for c in &mut components {
        c.0 /= norm;
    }
    Ok(GammaMixture { k: k0, components })
}

/// A moment-matched approximant of the exact posterior.
#[derive(Debug, Clone, Copy)]
pub enum Approximant {
    Gamma(GammaPosterior),
    /// Normal with parameters `(mu, sigma)` truncated to the positive axis.
    TruncatedNormal { mu: f64, sigma: f64 },
}

impl Approximant {
    pub fn pdf(&self, lambda: f64) -> f64 {
        match self {
            Approximant::Gamma(g) => g.pdf(lambda),
            Approximant::TruncatedNormal { mu, sigma } => {
                if lambda < 0.0 {
                    return 0.0;
                }
                let n = Normal::new(0.0, 1.0).unwrap();
                let z = 1.0 - n.cdf(-mu / sigma);
                let u = (lambda - mu) / sigma;
                (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt() * z)
            }
        }
    }
}

/// Truncated normal on `[0, ∞)` whose mean and variance match the targets.
///
/// With `a = -mu/sigma` and `h = φ(a)/(1-Φ(a))`, the moments satisfy
/// `mean = sigma(h - a)` and `var = sigma²(1 + a·h - h²)`, so the ratio
/// `var/mean²` depends on `a` alone and increases monotonically from 0
/// (untruncated) toward 1 (exponential tail); bisect on `a`.
pub fn truncated_normal_matching(mean: f64, variance: f64) -> Approximant {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let ratio_at = |a: f64| {
        let z = std_normal.cdf(-a); // 1 - Φ(a), computed without cancellation
        let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let h = phi / z.max(f64::MIN_POSITIVE);
        (1.0 + a * h - h * h) / (h - a).powi(2)
    };
    let target = variance / (mean * mean);
    let (mut lo, mut hi) = (-35.0, 35.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let z = std_normal.cdf(-a);
    let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let h = phi / z.max(f64::MIN_POSITIVE);
    let sigma = mean / (h - a);
    Approximant::TruncatedNormal { mu: -a * sigma, sigma }
}

/// KL divergence `D(p_exact || q)` in nats by adaptive quadrature over the
/// rate axis, covering all but 1e-10 of the exact mass.
pub fn kl_divergence(p_exact: &GammaMixture, q: &Approximant) -> Result<f64, OracleError> {
    let upper = p_exact.upper_rate(1e-11);
    let integrand = |lam: f64| {
        let p = p_exact.pdf(lam);
        if p <= 0.0 {
            return 0.0;
        }
        let qv = q.pdf(lam).max(1e-300);
        p * (p / qv).ln()
    };
    let v = adaptive_simpson(&integrand, 0.0, upper, 1e-8);
    if !v.is_finite() {
        return Err(OracleError::QuadratureFailure(format!(
            "non-finite KL over (0, {upper})"
        )));
    }
    Ok(v)
}

/// One cell of a KL scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlCell {
    pub k: f64,
    pub tau_over_theta: f64,
    pub spam: f64,
    pub m: u8,
    pub kl_gamma: Option<f64>,
    pub kl_truncated_normal: Option<f64>,
}

/// KL of both approximants over a `(k, τ/θ, α=β)` grid for outcome `m`.
/// The scan fixes `θ = 1`; KL is invariant under the rescaling.
pub fn kl_scan(k_grid: &[f64], tau_over_theta_grid: &[f64], spam_grid: &[f64], m: u8) -> Vec<KlCell> {
    let mut cells = Vec::new();
    for &k in k_grid {
        for &eps in spam_grid {
            let spam = SpamModel { alpha: eps, beta: eps };
            let prior = GammaPosterior { k, theta: 1.0 };
            for &tot in tau_over_theta_grid {
                let cell = exact_posterior(&prior, &[(tot, m)], &spam)
                    .ok()
                    .map(|mixture| {
                        let gamma_app = Approximant::Gamma(mixture.moment_matched_gamma());
                        let tn_app =
                            truncated_normal_matching(mixture.mean(), mixture.variance());
                        (
                            kl_divergence(&mixture, &gamma_app).ok(),
                            kl_divergence(&mixture, &tn_app).ok(),
                        )
                    });
                let (kl_gamma, kl_truncated_normal) = cell.unwrap_or((None, None));
                cells.push(KlCell { k, tau_over_theta: tot, spam: eps, m, kl_gamma, kl_truncated_normal });
            }
        }
    }
    cells
}

/// Frequentist lower bound on the `T̂₁` uncertainty for a total time budget
/// `T`: `δT̂₁ ≈ T₁·sqrt(T₁/T)`.
pub fn frequentist_limit(t1: f64, total_time: f64) -> f64 {
    assert!(total_time > 0.0);
    t1 * (t1 / total_time).sqrt()
}

/// Configuration of the weak/strong binomial validation tests.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BinomialTest {
    pub n_test: usize,
    /// Relative margin of the tested hypothesis, `T₁ ⋛ (1+q)·T̂₁`.
    pub q: f64,
    pub level: f64,
}

/// Probability of measuring `m = 1` at waiting time `T̂₁` when the true
/// lifetime is `(1+q)·T̂₁`.
pub fn validation_probability(q: f64, spam: &SpamModel) -> f64 {
    spam.beta + (1.0 - spam.alpha - spam.beta) * (-1.0 / (1.0 + q)).exp()
}

/// Largest `s` with `P(S >= s) >= level` under `Binomial(n, p)`.
pub fn binomial_lower_threshold(n: usize, p: f64, level: f64) -> usize {
    if level >= 1.0 {
        return 0;
    }
    let dist = Binomial::new(p, n as u64).expect("valid binomial");
    let mut s_weak = 0;
    for s in 0..=n as u64 {
        let tail = if s == 0 { 1.0 } else { 1.0 - dist.cdf(s - 1) };
        if tail >= level {
            s_weak = s;
        } else {
            break;
        }
    }
    s_weak as usize
}

/// Smallest `s` with `P(S <= s) >= level` under `Binomial(n, p)`.
pub fn binomial_upper_threshold(n: usize, p: f64, level: f64) -> usize {
    if level >= 1.0 {
        return n;
    }
    let dist = Binomial::new(p, n as u64).expect("valid binomial");
    for s in 0..=n as u64 {
        if dist.cdf(s) >= level {
            return s as usize;
        }
    }
    n
}

/// Thresholds `(S_weak, S_strong)` of the weak and strong tests for the
/// hypothesis `T₁ > (1+q)·T̂₁` with `n_test` validation shots at `τ = T̂₁`.
pub fn weak_strong_thresholds(test: &BinomialTest, spam: &SpamModel) -> (usize, usize) {
    let p = validation_probability(test.q, spam);
    (
        binomial_lower_threshold(test.n_test, p, test.level),
        binomial_upper_threshold(test.n_test, p, test.level),
    )
}

/// Pass rates within one `T̂₁` stratum of the validation protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumReport {
    pub t1_lo: f64,
    pub t1_hi: f64,
    pub count: usize,
    /// Weak/strong pass rates of "T₁ > (1-q)·T̂₁".
    pub weak_gt: f64,
    pub strong_gt: f64,
    /// Weak/strong pass rates of "T₁ < (1+q)·T̂₁".
    pub weak_lt: f64,
    pub strong_lt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mean_m_val: Vec<f64>,
    pub strata: Vec<StratumReport>,
}

/// Interleaved adaptive estimation and validation: after each adaptive
/// repetition, `n_test` shots at `τ = T̂₁` feed the weak/strong tests for
/// `T₁ > (1-q)·T̂₁` and `T₁ < (1+q)·T̂₁`, stratified by `T̂₁`.
pub fn run_validation_protocol(
    source: &mut dyn MeasurementSource,
    config: &EstimationConfig,
    n_test: usize,
    reps: usize,
    q: f64,
    level: f64,
) -> ValidationReport {
    const US: f64 = 1e-6;
    let strata_edges: Vec<(f64, f64)> =
        (0..5).map(|i| (100.0 * US + 50.0 * US * i as f64, 150.0 * US + 50.0 * US * i as f64)).collect();
    let mut mean_m_val = Vec::with_capacity(reps);
    // Per stratum: count and pass counters (weak_gt, strong_gt, weak_lt, strong_lt).
    let mut tallies = vec![(0usize, [0usize; 4]); strata_edges.len()];

    for rep in 0..reps {
        let Ok(run) = run_estimation(source, config, rep) else { continue };
        let t1_hat = run.final_posterior().t1_hat();
        if n_test == 0 {
            continue;
        }
        let successes: usize = (0..n_test)
            .map(|_| usize::from(source.single_shot(t1_hat)))
            .sum();
        mean_m_val.push(successes as f64 / n_test as f64);

        let Some(stratum) = strata_edges.iter().position(|&(lo, hi)| t1_hat >= lo && t1_hat < hi)
        else {
            continue;
        };
        let test_gt = BinomialTest { n_test, q: -q, level };
        let (s_weak_gt, s_strong_gt) = weak_strong_thresholds(&test_gt, &config.spam);
        let test_lt = BinomialTest { n_test, q, level };
        let (s_weak_lt, s_strong_lt) = weak_strong_thresholds(&test_lt, &config.spam);

        let entry = &mut tallies[stratum];
        entry.0 += 1;
        // T1 > (1-q)T̂₁: low S is evidence against, high S confirms.
        entry.1[0] += usize::from(successes >= s_weak_gt);
        entry.1[1] += usize::from(successes > s_strong_gt);
        // T1 < (1+q)T̂₁: mirrored.
        entry.1[2] += usize::from(successes <= s_strong_lt);
        entry.1[3] += usize::from(successes < s_weak_lt);
    }

    let strata = strata_edges
        .iter()
        .zip(&tallies)
        .map(|(&(lo, hi), &(count, passes))| {
            let rate = |x: usize| if count > 0 { x as f64 / count as f64 } else { f64::NAN };
            StratumReport {
                t1_lo: lo,
                t1_hi: hi,
                count,
                weak_gt: rate(passes[0]),
                strong_gt: rate(passes[1]),
                weak_lt: rate(passes[2]),
                strong_lt: rate(passes[3]),
            }
        })
        .collect();
    ValidationReport { mean_m_val, strata }
}

/// Frequentist-limit comparison over repeated adaptive runs: per-run ratio
/// of the posterior `δT̂₁` to the limit at the run's elapsed time.
pub fn limit_ratios(runs: &[EstimationRun]) -> Vec<f64> {
    runs.iter()
        .map(|run| {
            let p = run.final_posterior();
            p.t1_std() / frequentist_limit(p.t1_hat(), run.elapsed())
        })
        .collect()
}
