//! Locally optimal probing waiting times from binomial statistics.
//!
//! For a fixed waiting time `τ` the single-shot outcomes are binomial with
//! `p = β + (1-α-β)e^(-Γ₁τ)`. Propagating the binomial standard deviation of
//! `p̂` through to the rate estimate gives an expected uncertainty that can be
//! minimized over `τ`, either per unit total time (finite idle time `t` per
//! cycle) or per shot (N-limited). A handful of limits have Lambert-W closed
//! forms; everything else is bracketed 1-D minimization.

use crate::estimator::SpamModel;
use crate::numeric::golden_section_min;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("argument {0} below the Lambert branch point -1/e")]
    LambertDomain(f64),
    #[error("objective undefined at tau={0}: outcome probability is degenerate")]
    DegenerateObjective(f64),
    #[error("objective is monotone on the bracket; boundary value tau={tau}, objective={objective}")]
    NoMinimum { tau: f64, objective: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Time budget of an estimation: exactly one of total time or shot count
/// governs the regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExperimentBudget {
    /// Total wall-clock budget `T` with per-cycle idle time `t`.
    TotalTime { total: f64, idle: f64 },
    /// Fixed number of shots, idle time irrelevant (t -> infinity limit).
    ShotCount { n: usize },
}

/// Result of a waiting-time optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauOptimum {
    pub tau_opt: f64,
    /// Dimensionless prefactor `c = τ_opt·Γ₁`.
    pub c_opt: f64,
    /// Expected normalized standard deviation of the rate estimate at the
    /// optimum.
    pub objective_value: f64,
    /// Set when the optimum sits exactly at the Lambert branch point
    /// (`τ_opt = 0`, e.g. zero idle time and no SPAM).
    pub degenerate: bool,
}

/// Expected standard deviation of the rate estimate for probing at fixed
/// `tau` under the given budget.
pub fn expected_sigma(
    tau: f64,
    gamma1: f64,
    budget: &ExperimentBudget,
    spam: &SpamModel,
) -> Result<f64, OptimizerError> {
    if !(tau > 0.0) {
        return Err(OptimizerError::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    let a = 1.0 - spam.alpha - spam.beta;
    let decay = (-gamma1 * tau).exp();
    let p = spam.beta + a * decay;
    let var = p * (1.0 - p);
    if var <= 0.0 {
        return Err(OptimizerError::DegenerateObjective(tau));
    }
    let per_shot = var.sqrt() / (a * tau * decay);
    Ok(match budget {
        ExperimentBudget::TotalTime { total, idle } => per_shot * ((tau + idle) / total).sqrt(),
        ExperimentBudget::ShotCount { n } => per_shot / (*n as f64).sqrt(),
    })
}

/// Principal branch of the Lambert W function, `W(x)·e^(W(x)) = x` for
/// `x >= -1/e`. Halley iteration with a branch-point series start.
pub fn lambert_w0(x: f64) -> Result<f64, OptimizerError> {
    let inv_e = (-1.0f64).exp();
    if x < -inv_e - 1e-15 {
        return Err(OptimizerError::LambertDomain(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut w = if x < -inv_e + 0.05 {
        // Series around the branch point: W = -1 + p - p^2/3 + ...,
        // p = sqrt(2(e x + 1)).
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        if p == 0.0 {
            return Ok(-1.0);
        }
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 0.0 {
        // Maclaurin start; converges under Halley for x in (-1/e, 0).
        x - x * x + 1.5 * x * x * x
    } else if x < std::f64::consts::E {
        let lx = (1.0 + x).max(1e-300).ln();
        lx * (1.0 - lx.ln() / (2.0 + lx))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..60 {
        let ew = w.exp();
        let f = w * ew - x;
        let denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0);
        if denom == 0.0 {
            break;
        }
        let dw = f / denom;
        if !dw.is_finite() {
            break;
        }
        w -= dw;
        if dw.abs() <= 1e-14 * w.abs().max(1.0) {
            break;
        }
    }
    Ok(w)
}

/// Cases with a closed-form optimal waiting time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedFormCase {
    /// Shot-limited, no SPAM: `τΓ₁ = 2 + W(-2e^{-2}) ≈ 1.5936`.
    NLimitedNoSpam,
    /// Shot-limited with `β = 0`: `τΓ₁ = 2 + W(2(α-1)e^{-2})`.
    NLimitedBeta0 { alpha: f64 },
    /// Zero idle time with `β = 0`: `τΓ₁ = 1 + W((α-1)/e)`.
    T0Beta0 { alpha: f64 },
}

pub fn tau_opt_closed_form(case: ClosedFormCase, gamma1: f64) -> Result<TauOptimum, OptimizerError> {
    let (c, degenerate, budget_spam): (f64, bool, Option<(ExperimentBudget, SpamModel)>) = match case {
        ClosedFormCase::NLimitedNoSpam => {
            let c = 2.0 + lambert_w0(-2.0 * (-2.0f64).exp())?;
            (c, false, Some((ExperimentBudget::ShotCount { n: 1 }, SpamModel::ideal())))
        }
        ClosedFormCase::NLimitedBeta0 { alpha } => {
            if alpha >= 1.0 {
                return Err(OptimizerError::InvalidParameter(format!("alpha must be < 1, got {alpha}")));
            }
            let c = 2.0 + lambert_w0(2.0 * (alpha - 1.0) * (-2.0f64).exp())?;
            let spam = SpamModel::new(alpha, 0.0)
                .map_err(|e| OptimizerError::InvalidParameter(e.to_string()))?;
            (c, false, Some((ExperimentBudget::ShotCount { n: 1 }, spam)))
        }
        ClosedFormCase::T0Beta0 { alpha } => {
            if alpha >= 1.0 {
                return Err(OptimizerError::InvalidParameter(format!("alpha must be < 1, got {alpha}")));
            }
            let c = 1.0 + lambert_w0((alpha - 1.0) / std::f64::consts::E)?;
            // At alpha = 0 the optimum sits exactly at the branch point.
            let degenerate = c.abs() < 1e-9;
            (c.max(0.0), degenerate, None)
        }
    };
    let tau_opt = c / gamma1;
    let objective_value = match (&budget_spam, degenerate) {
        (Some((budget, spam)), false) => expected_sigma(tau_opt, gamma1, budget, spam)?,
        _ => f64::NAN,
    };
    Ok(TauOptimum { tau_opt, c_opt: c, objective_value, degenerate })
}

/// Numeric minimization of [`expected_sigma`] over
/// `τ ∈ [1e-3, 20]/Γ₁` (defaults) by golden-section search.
pub fn tau_opt_numeric(
    gamma1: f64,
    budget: &ExperimentBudget,
    spam: &SpamModel,
) -> Result<TauOptimum, OptimizerError> {
    tau_opt_numeric_bracketed(gamma1, budget, spam, 1e-3 / gamma1, 20.0 / gamma1)
}

pub fn tau_opt_numeric_bracketed(
    gamma1: f64,
    budget: &ExperimentBudget,
    spam: &SpamModel,
    tau_lo: f64,
    tau_hi: f64,
) -> Result<TauOptimum, OptimizerError> {
    let obj = |tau: f64| expected_sigma(tau, gamma1, budget, spam).unwrap_or(f64::INFINITY);
    let (tau_opt, objective_value) = golden_section_min(obj, tau_lo, tau_hi, 1e-8);
    // Monotone objective: the minimizer collapses onto a bracket edge.
    let edge = (tau_opt - tau_lo).abs() < 2.0 * 1e-8 * tau_hi
        || (tau_hi - tau_opt).abs() < 2.0 * 1e-8 * tau_hi;
    if edge {
        return Err(OptimizerError::NoMinimum { tau: tau_opt, objective: objective_value });
    }
    Ok(TauOptimum {
        tau_opt,
        c_opt: tau_opt * gamma1,
        objective_value,
        degenerate: false,
    })
}

/// One row of the exported prefactor lookup table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CTableRow {
    pub gamma1_per_s: f64,
    pub idle_s: f64,
    /// `None` when the objective had no interior minimum for this cell.
    pub c_opt: Option<f64>,
}

/// Lookup table of optimal prefactors over a `(Γ₁, idle time)` grid, for a
/// fixed unit time budget (the optimum does not depend on `T`).
pub fn export_c_table(gamma1_grid: &[f64], t_grid: &[f64], spam: &SpamModel) -> Vec<CTableRow> {
    let mut rows = Vec::with_capacity(gamma1_grid.len() * t_grid.len());
    for &gamma1 in gamma1_grid {
        for &idle in t_grid {
            let budget = ExperimentBudget::TotalTime { total: 1.0, idle };
            let c_opt = tau_opt_numeric(gamma1, &budget, spam).ok().map(|o| o.c_opt);
            rows.push(CTableRow { gamma1_per_s: gamma1, idle_s: idle, c_opt });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const US: f64 = 1e-6;

    #[test]
    fn lambert_basics() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_relative_eq!(lambert_w0(std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-12);
        let w = lambert_w0(-2.0 * (-2.0f64).exp()).unwrap();
        assert_relative_eq!(w, -0.40637, epsilon = 1e-5);
        assert!(lambert_w0(-1.0).is_err());
    }

    #[test]
    fn n_limited_no_spam_closed_form() {
        let opt = tau_opt_closed_form(ClosedFormCase::NLimitedNoSpam, 1.0).unwrap();
        assert_relative_eq!(opt.tau_opt, 1.5936, epsilon = 1e-4);
        assert!(opt.c_opt <= 1.59 + 0.005);
    }

    #[test]
    fn n_limited_uncertainty_formula_and_minimum() {
        // alpha = beta = 0, N-limited: sigma = sqrt(e^{Gt} - 1)/(t sqrt(N)).
        let spam = SpamModel::ideal();
        let budget = ExperimentBudget::ShotCount { n: 100 };
        for tau in [0.3, 1.0, 2.5] {
            let s = expected_sigma(tau, 1.0, &budget, &spam).unwrap();
            let expect = ((tau.exp() - 1.0).sqrt()) / (tau * 10.0);
            assert_relative_eq!(s, expect, max_relative = 1e-12);
        }
        // Minimal value ~ 1.24 Gamma1/sqrt(N).
        let opt = tau_opt_numeric(1.0, &budget, &spam).unwrap();
        assert_relative_eq!(opt.objective_value, 1.24 / 10.0, epsilon = 2e-3);
    }

    #[test]
    fn t0_beta0_branch_point_is_degenerate() {
        let opt = tau_opt_closed_form(ClosedFormCase::T0Beta0 { alpha: 0.0 }, 1.0).unwrap();
        assert!(opt.degenerate);
        assert_relative_eq!(opt.tau_opt, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_idle_no_spam_has_no_interior_minimum() {
        // The objective decreases monotonically toward tau -> 0.
        let spam = SpamModel::ideal();
        let budget = ExperimentBudget::TotalTime { total: 1.0, idle: 0.0 };
        let err = tau_opt_numeric(1.0, &budget, &spam).unwrap_err();
        assert!(matches!(err, OptimizerError::NoMinimum { .. }));
    }

    #[test]
    fn closed_form_matches_numeric_beta0() {
        for alpha in [0.05, 0.11] {
            let spam = SpamModel::new(alpha, 0.0).unwrap();
            let closed = tau_opt_closed_form(ClosedFormCase::NLimitedBeta0 { alpha }, 1.0).unwrap();
            let numeric =
                tau_opt_numeric(1.0, &ExperimentBudget::ShotCount { n: 1 }, &spam).unwrap();
            assert_relative_eq!(closed.tau_opt, numeric.tau_opt, max_relative = 1e-6);
        }
    }

    #[test]
    fn paper_prefactors_at_reference_t1() {
        // Reference T1 = 100 us. The 0.51 point tracks the error-free
        // objective; the 0.98 point the alpha = 0.11, beta = 0.14 one.
        let gamma1 = 1.0 / (100.0 * US);
        let c_fast = tau_opt_numeric(
            gamma1,
            &ExperimentBudget::TotalTime { total: 1.0, idle: 23.2 * US },
            &SpamModel::ideal(),
        )
        .unwrap()
        .c_opt;
        assert!((c_fast - 0.51).abs() < 0.05, "c = {c_fast}");
        let c_slow = tau_opt_numeric(
            gamma1,
            &ExperimentBudget::TotalTime { total: 1.0, idle: 345.0 * US },
            &SpamModel::new(0.11, 0.14).unwrap(),
        )
        .unwrap()
        .c_opt;
        assert!((c_slow - 0.98).abs() < 0.05, "c = {c_slow}");
    }

    #[test]
    fn c_table_monotone_in_idle_and_bounded() {
        let spam = SpamModel::new(0.11, 0.14).unwrap();
        let gammas = [1.0 / (100.0 * US), 1.0 / (350.0 * US)];
        let idles: Vec<f64> = (0..8).map(|i| (i as f64 + 1.0) * 20.0 * US).collect();
        let table = export_c_table(&gammas, &idles, &spam);
        for chunk in table.chunks(idles.len()) {
            let cs: Vec<f64> = chunk.iter().map(|r| r.c_opt.unwrap()).collect();
            for w in cs.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "c not monotone in idle: {cs:?}");
            }
            for &c in &cs {
                assert!(c > 0.0 && c <= 1.59 + 1e-6);
            }
        }
        // Single cell consistency.
        let single = tau_opt_numeric(
            gammas[0],
            &ExperimentBudget::TotalTime { total: 1.0, idle: idles[0] },
            &spam,
        )
        .unwrap();
        assert_relative_eq!(table[0].c_opt.unwrap(), single.c_opt, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn lambert_round_trip(x in -0.367f64..100.0) {
            let w = lambert_w0(x).unwrap();
            prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn scale_invariance(gamma1 in 10.0f64..1e5, idle_scaled in 0.05f64..5.0) {
            // tau_opt(Gamma1, t) = tau_opt(1, Gamma1 t)/Gamma1.
            let spam = SpamModel::new(0.05, 0.03).unwrap();
            let a = tau_opt_numeric(
                gamma1,
                &ExperimentBudget::TotalTime { total: 1.0, idle: idle_scaled / gamma1 },
                &spam,
            ).unwrap();
            let b = tau_opt_numeric(
                1.0,
                &ExperimentBudget::TotalTime { total: 1.0, idle: idle_scaled },
                &spam,
            ).unwrap();
            prop_assert!((a.tau_opt - b.tau_opt / gamma1).abs() < 1e-5 * b.tau_opt / gamma1);
        }

        #[test]
        fn optimum_beats_neighbors(idle_scaled in 0.01f64..5.0) {
            let spam = SpamModel::new(0.11, 0.14).unwrap();
            let budget = ExperimentBudget::TotalTime { total: 1.0, idle: idle_scaled };
            let opt = tau_opt_numeric(1.0, &budget, &spam).unwrap();
            let half = expected_sigma(0.5 * opt.tau_opt, 1.0, &budget, &spam).unwrap();
            let twice = expected_sigma(2.0 * opt.tau_opt, 1.0, &budget, &spam).unwrap();
            prop_assert!(opt.objective_value <= half && opt.objective_value <= twice);
        }
    }
}
