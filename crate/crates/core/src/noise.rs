//! Spectral characterization of lifetime fluctuations.
//!
//! Turns a sequence of per-repetition lifetime estimates into a uniformly
//! sampled trace, computes its Welch PSD and overlapped Allan deviation,
//! fits a white + 1/f + Lorentzian noise model jointly to both in log
//! space, and detects discrete lifetime switches with binomial
//! verification tests on held-out shots.

use crate::estimator::{likelihood, EstimationRun, SpamModel};
use crate::numeric::{levenberg_marquardt, moving_mean};
use crate::oracle::{binomial_lower_threshold, binomial_upper_threshold};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("trace of {n} samples is too short (need at least {min})")]
    TraceTooShort { n: usize, min: usize },
    #[error("averaging time {tau}s exceeds a third of the trace span {span}s")]
    TauTooLong { tau: f64, span: f64 },
    #[error("fit diverged: {0}")]
    FitDiverged(String),
}

/// Uniformly sampled lifetime trace with optional per-sample uncertainty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniformTrace {
    pub values: Vec<f64>,
    pub dt: f64,
    pub sigma: Option<Vec<f64>>,
    pub t0: f64,
}

impl UniformTrace {
    pub fn new(values: Vec<f64>, dt: f64) -> Self {
        UniformTrace { values, dt, sigma: None, t0: 0.0 }
    }

    pub fn span(&self) -> f64 {
        self.values.len() as f64 * self.dt
    }

    pub fn variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

/// Resample per-repetition estimates onto the mean repetition period by
/// nearest-sample assignment.
pub fn runs_to_trace(runs: &[EstimationRun]) -> Result<UniformTrace, NoiseError> {
    if runs.len() < 2 {
        return Err(NoiseError::TraceTooShort { n: runs.len(), min: 2 });
    }
    let mids: Vec<f64> = runs.iter().map(|r| 0.5 * (r.start_time + r.end_time)).collect();
    let t1s: Vec<f64> = runs.iter().map(|r| r.final_posterior().t1_hat()).collect();
    let stds: Vec<f64> = runs.iter().map(|r| r.final_posterior().t1_std()).collect();
    let dt = (mids[mids.len() - 1] - mids[0]) / (mids.len() - 1) as f64;
    let mut values = Vec::with_capacity(runs.len());
    let mut sigma = Vec::with_capacity(runs.len());
    let mut j = 0;
    for i in 0..runs.len() {
        let t = mids[0] + i as f64 * dt;
        while j + 1 < mids.len() && (mids[j + 1] - t).abs() <= (mids[j] - t).abs() {
            j += 1;
        }
        values.push(t1s[j]);
        sigma.push(stds[j]);
    }
    Ok(UniformTrace { values, dt, sigma: Some(sigma), t0: mids[0] })
}

/// One-sided power spectral density estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Psd {
    pub freq: Vec<f64>,
    pub psd: Vec<f64>,
}

/// Welch PSD: Hann window, 50% overlap, per-segment mean removal. The
/// default segment length is an eighth of the trace.
pub fn welch_psd(trace: &UniformTrace, segment_len: Option<usize>) -> Result<Psd, NoiseError> {
    let n = trace.values.len();
    if n < 16 {
        return Err(NoiseError::TraceTooShort { n, min: 16 });
    }
    let seg = segment_len.unwrap_or(n / 8).clamp(8, n);
    let hop = seg / 2;
    let window: Vec<f64> = (0..seg)
        .map(|i| {
            let x = std::f64::consts::PI * i as f64 / seg as f64;
            x.sin().powi(2)
        })
        .collect();
    let win_power: f64 = window.iter().map(|w| w * w).sum();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(seg);
    let n_bins = seg / 2;
    let mut acc = vec![0.0; n_bins];
    let mut n_segments = 0usize;
    let mut start = 0;
    while start + seg <= n {
        let chunk = &trace.values[start..start + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        let mut buf: Vec<Complex<f64>> = chunk
            .iter()
            .zip(&window)
            .map(|(&v, &w)| Complex::new((v - mean) * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for k in 1..=n_bins {
            let factor = if k == n_bins && seg % 2 == 0 { 1.0 } else { 2.0 };
            acc[k - 1] += factor * buf[k].norm_sqr();
        }
        n_segments += 1;
        start += hop;
    }
    let scale = trace.dt / (win_power * n_segments as f64);
    let freq = (1..=n_bins).map(|k| k as f64 / (seg as f64 * trace.dt)).collect();
    let psd = acc.into_iter().map(|a| a * scale).collect();
    Ok(Psd { freq, psd })
}

/// One point of an Allan deviation curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AllanPoint {
    pub tau: f64,
    pub adev: f64,
    pub n_samples: usize,
}

/// Overlapped Allan deviation at the requested averaging times (each
/// rounded to a multiple of the sample period).
pub fn allan_deviation(trace: &UniformTrace, taus: &[f64]) -> Result<Vec<AllanPoint>, NoiseError> {
    let n = trace.values.len();
    if n < 16 {
        return Err(NoiseError::TraceTooShort { n, min: 16 });
    }
    let span = trace.span();
    let mut cumsum = vec![0.0; n + 1];
    for (i, &v) in trace.values.iter().enumerate() {
        cumsum[i + 1] = cumsum[i] + v;
    }
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        if tau > span / 3.0 {
            return Err(NoiseError::TauTooLong { tau, span });
        }
        let m = ((tau / trace.dt).round() as usize).max(1);
        if 2 * m >= n {
            continue;
        }
        let avg = |i: usize| (cumsum[i + m] - cumsum[i]) / m as f64;
        let count = n - 2 * m + 1;
        let sum: f64 = (0..count).map(|i| (avg(i + m) - avg(i)).powi(2)).sum();
        points.push(AllanPoint {
            tau: m as f64 * trace.dt,
            adev: (sum / (2.0 * count as f64)).sqrt(),
            n_samples: count,
        });
    }
    Ok(points)
}

/// Logarithmically spaced averaging times covering the usable range of a
/// trace, deduplicated after rounding to the sample period.
pub fn default_allan_taus(trace: &UniformTrace, n_points: usize) -> Vec<f64> {
    let lo = trace.dt;
    let hi = trace.span() / 3.0;
    let mut taus = Vec::new();
    let mut last_m = 0usize;
    for i in 0..n_points {
        let tau = lo * (hi / lo).powf(i as f64 / (n_points - 1).max(1) as f64);
        let m = (tau / trace.dt).round() as usize;
        if m as f64 * trace.dt > hi {
            break;
        }
        if m > last_m {
            taus.push(m as f64 * trace.dt);
            last_m = m;
        }
    }
    taus
}

/// A single telegraph (Lorentzian) noise component: `amplitude` is the
/// process variance and `gamma` the corner (total switching) rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Lorentzian {
    pub amplitude: f64,
    pub gamma: f64,
}

/// White + 1/f + Lorentzian noise model shared by the PSD and Allan fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseModel {
    /// One-sided white PSD level (units of value^2 / Hz).
    pub a_white: f64,
    /// 1/f amplitude: PSD contribution `a_one_over_f / f`.
    pub a_one_over_f: f64,
    pub lorentzians: Vec<Lorentzian>,
}

impl NoiseModel {
    pub fn psd(&self, f: f64) -> f64 {
        let omega = 2.0 * std::f64::consts::PI * f;
        self.a_white
            + self.a_one_over_f / f
            + self
                .lorentzians
                .iter()
                .map(|l| 4.0 * l.amplitude * l.gamma / (l.gamma * l.gamma + omega * omega))
                .sum::<f64>()
    }

    pub fn allan_var(&self, tau: f64) -> f64 {
        self.a_white / (2.0 * tau)
            + 2.0 * std::f64::consts::LN_2 * self.a_one_over_f
            + self
                .lorentzians
                .iter()
                .map(|l| lorentzian_allan_dev(l, tau, false).powi(2))
                .sum::<f64>()
    }

    pub fn allan_dev(&self, tau: f64) -> f64 {
        self.allan_var(tau).sqrt()
    }
}

/// Allan deviation of a single telegraph component,
/// `sqrt(A)/(γτ) · sqrt(4e^{-γτ} - e^{-2γτ} + 2γτ - 3)`.
///
/// `as_printed` selects a legacy variant with the prefactor multiplied by
/// `(γτ)²`, kept only for comparison against older reports.
pub fn lorentzian_allan_dev(l: &Lorentzian, tau: f64, as_printed: bool) -> f64 {
    let x = l.gamma * tau;
    let bracket = if x < 1e-3 {
        // Series expansion; the closed form cancels catastrophically here.
        2.0 * x.powi(3) / 3.0 - 0.5 * x.powi(4) + 7.0 / 30.0 * x.powi(5)
    } else {
        4.0 * (-x).exp() - (-2.0 * x).exp() + 2.0 * x - 3.0
    };
    let base = (l.amplitude * bracket).sqrt();
    if as_printed {
        base * x
    } else {
        base / x
    }
}

/// Result of the joint PSD + Allan model fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseFit {
    pub model: NoiseModel,
    /// Standard errors in the same order as the packed log-parameters:
    /// `[a_white, a_one_over_f, (amplitude, gamma)...]`, as relative errors.
    pub rel_std_errors: Vec<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    /// All amplitudes collapsed to the floor; the trace carries no
    /// resolvable noise.
    pub degenerate: bool,
    /// Adding the last Lorentzian reduced the residual norm by < 5%; its
    /// presence is not supported by the data.
    pub model_selection_ambiguous: bool,
}

const AMP_FLOOR_REL: f64 = 1e-12;

fn pack(model: &NoiseModel) -> Vec<f64> {
    let mut p = vec![model.a_white.ln(), model.a_one_over_f.ln()];
    for l in &model.lorentzians {
        p.push(l.amplitude.ln());
        p.push(l.gamma.ln());
    }
    p
}

fn unpack(p: &[f64]) -> NoiseModel {
    NoiseModel {
        a_white: p[0].exp(),
        a_one_over_f: p[1].exp(),
        lorentzians: p[2..]
            .chunks(2)
            .map(|c| Lorentzian { amplitude: c[0].exp(), gamma: c[1].exp() })
            .collect(),
    }
}

fn fit_once(
    psd: &Psd,
    allan: &[AllanPoint],
    init: &NoiseModel,
    allan_weight: f64,
) -> Result<NoiseFit, NoiseError> {
    let peak = psd.psd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        // A constant trace has no spectral content to fit.
        return Ok(NoiseFit {
            model: NoiseModel { a_white: 0.0, a_one_over_f: 0.0, lorentzians: Vec::new() },
            rel_std_errors: Vec::new(),
            residual_norm: 0.0,
            converged: true,
            degenerate: true,
            model_selection_ambiguous: false,
        });
    }
    let floor = (peak * AMP_FLOOR_REL).max(1e-300);
    let n_res = psd.freq.len() + allan.len();
    let w = allan_weight.sqrt();
    let residuals = |p: &[f64], out: &mut [f64]| {
        let model = unpack(p);
        let mut i = 0;
        for (f, s) in psd.freq.iter().zip(&psd.psd) {
            out[i] = (model.psd(*f).max(floor) / s.max(floor)).ln();
            i += 1;
        }
        for pt in allan {
            out[i] =
                w * (model.allan_var(pt.tau).max(floor) / (pt.adev * pt.adev).max(floor)).ln();
            i += 1;
        }
    };
    let fit = levenberg_marquardt(residuals, &pack(init), n_res, 400);
    if !fit.params.iter().all(|p| p.is_finite()) {
        return Err(NoiseError::FitDiverged("non-finite parameters".into()));
    }
    let model = unpack(&fit.params);
    let degenerate = model.a_white < floor
        && model.a_one_over_f * psd.freq[0] < floor
        && model.lorentzians.iter().all(|l| l.amplitude < floor);
    Ok(NoiseFit {
        model,
        rel_std_errors: fit.covariance_diag.iter().map(|v| v.max(0.0).sqrt()).collect(),
        residual_norm: fit.residual_norm,
        converged: fit.converged,
        degenerate,
        model_selection_ambiguous: false,
    })
}

/// Initial guesses from the data: white level from the high-frequency PSD
/// tail, 1/f amplitude from the low-frequency tail, Lorentzian corners
/// from local maxima of the Allan curve.
fn initial_model(psd: &Psd, allan: &[AllanPoint], n_lorentzians: usize) -> NoiseModel {
    let nf = psd.freq.len();
    let tail = &psd.psd[nf - (nf / 4).max(1)..];
    let a_white = median(tail).max(1e-300);
    let head_n = (nf / 4).max(1);
    let head: Vec<f64> = (0..head_n)
        .map(|i| ((psd.psd[i] - a_white) * psd.freq[i]).max(0.0))
        .collect();
    let a_one_over_f = median(&head).max(a_white * psd.freq[0]).max(1e-300);

    // Candidate corners from Allan local maxima, most prominent first.
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for i in 1..allan.len().saturating_sub(1) {
        if allan[i].adev > allan[i - 1].adev && allan[i].adev >= allan[i + 1].adev {
            peaks.push((allan[i].adev, allan[i].tau));
        }
    }
    peaks.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mid_tau = allan[allan.len() / 2].tau;
    let mut lorentzians = Vec::with_capacity(n_lorentzians);
    for j in 0..n_lorentzians {
        let (adev, tau) = peaks
            .get(j)
            .copied()
            .unwrap_or((median(&allan.iter().map(|p| p.adev).collect::<Vec<_>>()), mid_tau * 3f64.powi(j as i32)));
        // The telegraph Allan curve peaks near γτ ≈ 1.89 at ~0.62·sqrt(A).
        lorentzians.push(Lorentzian { amplitude: (adev / 0.62).powi(2).max(1e-300), gamma: 1.89 / tau });
    }
    NoiseModel { a_white, a_one_over_f, lorentzians }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s[s.len() / 2]
}

/// Joint log-space fit of the noise model to a PSD and an Allan curve.
/// `allan_weight` scales the Allan residuals relative to the PSD ones.
pub fn fit_noise_model(
    psd: &Psd,
    allan: &[AllanPoint],
    n_lorentzians: usize,
    allan_weight: f64,
) -> Result<NoiseFit, NoiseError> {
    if psd.freq.is_empty() || allan.is_empty() {
        return Err(NoiseError::TraceTooShort { n: 0, min: 1 });
    }
    let init = initial_model(psd, allan, n_lorentzians);
    let mut fit = fit_once(psd, allan, &init, allan_weight)?;
    if n_lorentzians > 0 {
        let reduced_init = NoiseModel {
            lorentzians: init.lorentzians[..n_lorentzians - 1].to_vec(),
            ..init
        };
        if let Ok(reduced) = fit_once(psd, allan, &reduced_init, allan_weight) {
            if fit.residual_norm > 0.95 * reduced.residual_norm {
                fit.model_selection_ambiguous = true;
            }
        }
    }
    Ok(fit)
}

/// PSD, Allan curve, and model fit of one analysis window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowAnalysis {
    pub start_time: f64,
    pub psd: Psd,
    pub allan: Vec<AllanPoint>,
    /// `None` when the fit failed in this window.
    pub fit: Option<NoiseFit>,
}

/// Sliding-window spectral analysis with a single-Lorentzian model per
/// window; per-window fit failures are reported as gaps.
pub fn windowed_analysis(
    trace: &UniformTrace,
    window_len: f64,
    overlap_frac: f64,
    allan_weight: f64,
) -> Result<Vec<WindowAnalysis>, NoiseError> {
    let m = ((window_len / trace.dt).round() as usize).max(16);
    if m > trace.values.len() {
        return Err(NoiseError::TraceTooShort { n: trace.values.len(), min: m });
    }
    let hop = ((m as f64 * (1.0 - overlap_frac)).round() as usize).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start + m <= trace.values.len() {
        let sub = UniformTrace {
            values: trace.values[start..start + m].to_vec(),
            dt: trace.dt,
            sigma: None,
            t0: trace.t0 + start as f64 * trace.dt,
        };
        let psd = welch_psd(&sub, None)?;
        let allan = allan_deviation(&sub, &default_allan_taus(&sub, 24))?;
        let fit = fit_noise_model(&psd, &allan, 1, allan_weight).ok();
        out.push(WindowAnalysis { start_time: sub.t0, psd, allan, fit });
        start += hop;
    }
    Ok(out)
}

/// Moving mean of a trace with a `mean ± movmean(σ)/√window` uncertainty
/// band from the per-sample uncertainties.
pub struct MeanBand {
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
}

pub fn moving_mean_band(values: &[f64], sigma: &[f64], window: usize) -> MeanBand {
    let mean = moving_mean(values, window);
    let half_width = moving_mean(sigma, window)
        .into_iter()
        .map(|s| s / (window as f64).sqrt())
        .collect();
    MeanBand { mean, half_width }
}

/// One repetition's summary fed to the switch detector.
#[derive(Debug, Clone)]
pub struct RepSummary {
    pub t_start: f64,
    pub t_end: f64,
    pub t1_hat: f64,
    /// `(tau, outcome)` shots of this repetition.
    pub shots: Vec<(f64, u8)>,
}

impl RepSummary {
    pub fn from_run(run: &EstimationRun) -> Self {
        RepSummary {
            t_start: run.start_time,
            t_end: run.end_time,
            t1_hat: run.final_posterior().t1_hat(),
            shots: run.records.iter().map(|r| (r.tau, r.outcome)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SwitchDetectorConfig {
    /// Length of the comparison intervals in seconds.
    pub interval_len: f64,
    /// Both interval means must fall inside this lifetime band.
    pub band: (f64, f64),
    /// Minimum jump between interval means to consider.
    pub min_jump: f64,
    /// One-sided confidence level of each verification test.
    pub level: f64,
}

impl Default for SwitchDetectorConfig {
    fn default() -> Self {
        SwitchDetectorConfig {
            interval_len: 0.2,
            band: (100e-6, 400e-6),
            min_jump: 100e-6,
            level: 0.975,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwitchReport {
    pub n_intervals: usize,
    pub n_pairs: usize,
    pub n_filtered: usize,
    pub n_verified: usize,
    pub filtered_rate: f64,
    pub verified_rate: f64,
    pub events_per_second: f64,
    /// Boundary times of the verified switches.
    pub event_times: Vec<f64>,
}

struct Interval {
    t_start: f64,
    t_end: f64,
    train_mean: f64,
    test_shots: Vec<(f64, u8)>,
}

/// Detect discrete lifetime switches: repetitions are grouped into fixed
/// intervals (split at repetition boundaries), alternate repetitions form
/// train/test halves, candidate pairs of adjacent intervals are filtered
/// by the train means, and each candidate is verified by two one-sided
/// binomial tests on the held-out test shots.
pub fn detect_switches(
    reps: &[RepSummary],
    spam: &SpamModel,
    cfg: &SwitchDetectorConfig,
) -> SwitchReport {
    let mut intervals: Vec<Interval> = Vec::new();
    if !reps.is_empty() {
        let t0 = reps[0].t_start;
        let mut by_index: Vec<(usize, &RepSummary)> = reps
            .iter()
            .map(|r| (((r.t_start - t0) / cfg.interval_len).floor() as usize, r))
            .collect();
        by_index.sort_by_key(|(idx, _)| *idx);
        let mut i = 0;
        while i < by_index.len() {
            let idx = by_index[i].0;
            let mut group = Vec::new();
            while i < by_index.len() && by_index[i].0 == idx {
                group.push(by_index[i].1);
                i += 1;
            }
            if group.len() < 2 {
                continue;
            }
            let train: Vec<&&RepSummary> = group.iter().step_by(2).collect();
            let train_mean = train.iter().map(|r| r.t1_hat).sum::<f64>() / train.len() as f64;
            let test_shots: Vec<(f64, u8)> = group
                .iter()
                .skip(1)
                .step_by(2)
                .flat_map(|r| r.shots.iter().copied())
                .collect();
            intervals.push(Interval {
                t_start: t0 + idx as f64 * cfg.interval_len,
                t_end: t0 + (idx + 1) as f64 * cfg.interval_len,
                train_mean,
                test_shots,
            });
        }
    }

    let mut n_pairs = 0;
    let mut n_filtered = 0;
    let mut event_times = Vec::new();
    for pair in intervals.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if (b.t_start - a.t_end).abs() > 1e-9 {
            continue; // not adjacent in lab time
        }
        n_pairs += 1;
        let in_band = |t: f64| t >= cfg.band.0 && t <= cfg.band.1;
        if !in_band(a.train_mean) || !in_band(b.train_mean) {
            continue;
        }
        if (a.train_mean - b.train_mean).abs() <= cfg.min_jump {
            continue;
        }
        n_filtered += 1;
        let (low, high) = if a.train_mean < b.train_mean { (a, b) } else { (b, a) };
        if low.test_shots.is_empty() || high.test_shots.is_empty() {
            continue;
        }
        // Test 1: reject "the low interval's lifetime is at least the high
        // mean" — its test shots survive too rarely for that.
        let p_low: f64 = low
            .test_shots
            .iter()
            .map(|&(tau, _)| likelihood(1, 1.0 / high.train_mean, tau, spam))
            .sum::<f64>()
            / low.test_shots.len() as f64;
        let s_low: usize = low.test_shots.iter().map(|&(_, m)| m as usize).sum();
        let reject_low =
            s_low < binomial_lower_threshold(low.test_shots.len(), p_low, cfg.level);
        // Test 2: reject "the high interval's lifetime is at most the low
        // mean" — its test shots survive too often for that.
        let p_high: f64 = high
            .test_shots
            .iter()
            .map(|&(tau, _)| likelihood(1, 1.0 / low.train_mean, tau, spam))
            .sum::<f64>()
            / high.test_shots.len() as f64;
        let s_high: usize = high.test_shots.iter().map(|&(_, m)| m as usize).sum();
        let reject_high =
            s_high > binomial_upper_threshold(high.test_shots.len(), p_high, cfg.level);
        if reject_low && reject_high {
            event_times.push(a.t_end);
        }
    }

    let span = intervals.last().map(|i| i.t_end).unwrap_or(0.0)
        - intervals.first().map(|i| i.t_start).unwrap_or(0.0);
    let n_verified = event_times.len();
    SwitchReport {
        n_intervals: intervals.len(),
        n_pairs,
        n_filtered,
        n_verified,
        filtered_rate: if n_pairs > 0 { n_filtered as f64 / n_pairs as f64 } else { 0.0 },
        verified_rate: if n_pairs > 0 { n_verified as f64 / n_pairs as f64 } else { 0.0 },
        events_per_second: if span > 0.0 { n_verified as f64 / span } else { 0.0 },
        event_times,
    }
}

/// Synthesize a Gaussian trace whose one-sided PSD follows `spectrum`, by
/// drawing independent spectral amplitudes and inverse-transforming.
pub fn synthesize_trace<R: Rng>(
    n: usize,
    dt: f64,
    spectrum: impl Fn(f64) -> f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let n_bins = n / 2;
    for k in 1..=n_bins {
        let f = k as f64 / (n as f64 * dt);
        let scale = (spectrum(f) * n as f64 / (2.0 * dt)).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let z = if k == n_bins && n % 2 == 0 {
            Complex::new(re * 2f64.sqrt(), 0.0)
        } else {
            Complex::new(re, im)
        };
        buf[k] = z * Complex::new(scale / 2f64.sqrt(), 0.0);
        if k != n_bins || n % 2 != 0 {
            buf[n - k] = buf[k].conj();
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::sim::{Fluctuator, ProcessState, RateProcess};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn white_trace(n: usize, dt: f64, var: f64, seed: u64) -> UniformTrace {
        let mut rng = stream_rng(seed, 0);
        let values = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * var.sqrt())
            .collect();
        UniformTrace::new(values, dt)
    }

    #[test]
    fn welch_parseval_white_noise() {
        let trace = white_trace(1 << 14, 0.01, 4.0, 11);
        let psd = welch_psd(&trace, None).unwrap();
        let df = psd.freq[1] - psd.freq[0];
        let total: f64 = psd.psd.iter().sum::<f64>() * df;
        assert_relative_eq!(total, trace.variance(), max_relative = 0.05);
    }

    #[test]
    fn white_allan_slope() {
        let trace = white_trace(1 << 15, 0.01, 1.0, 7);
        let pts = allan_deviation(&trace, &[0.01, 0.04, 0.16, 0.64]).unwrap();
        // sigma^2 = A_w / (2 tau) with A_w = 2 var dt.
        for p in &pts {
            let expect = (2.0 * 1.0 * 0.01 / (2.0 * p.tau)).sqrt();
            assert_relative_eq!(p.adev, expect, max_relative = 0.1);
        }
        // Log-log slope near -1/2.
        let slope = (pts[3].adev / pts[0].adev).ln() / (pts[3].tau / pts[0].tau).ln();
        assert_relative_eq!(slope, -0.5, epsilon = 0.05);
    }

    #[test]
    fn one_over_f_allan_plateau() {
        let a = 3.0;
        let mut rng = stream_rng(21, 0);
        let values = synthesize_trace(1 << 15, 0.01, |f| a / f, &mut rng);
        let trace = UniformTrace::new(values, 0.01);
        let expect = (2.0 * a * std::f64::consts::LN_2).sqrt();
        let pts = allan_deviation(&trace, &[0.1, 0.4, 1.6, 6.4, 25.6]).unwrap();
        for p in &pts {
            assert_relative_eq!(p.adev, expect, max_relative = 0.2);
        }
    }

    #[test]
    fn synthesized_psd_matches_request() {
        let mut rng = stream_rng(33, 0);
        let values = synthesize_trace(1 << 14, 0.01, |_| 2.5, &mut rng);
        let trace = UniformTrace::new(values, 0.01);
        let psd = welch_psd(&trace, None).unwrap();
        let mean_psd: f64 = psd.psd.iter().sum::<f64>() / psd.psd.len() as f64;
        assert_relative_eq!(mean_psd, 2.5, max_relative = 0.1);
    }

    fn telegraph_trace(gamma: f64, amp: f64, n: usize, dt: f64, seed: u64) -> UniformTrace {
        // Symmetric two-level process with variance amp and corner rate gamma.
        let step = 2.0 * amp.sqrt();
        let process = RateProcess::with_fluctuators(
            0.0,
            vec![Fluctuator { rate_up: gamma / 2.0, rate_down: gamma / 2.0, delta_gamma: step }],
        );
        let mut state = ProcessState::new(process, &mut stream_rng(seed, 0));
        let mut rng = stream_rng(seed, 1);
        let values = (0..n)
            .map(|_| {
                state.evolve(dt, &mut rng);
                state.gamma() - step / 2.0
            })
            .collect();
        UniformTrace::new(values, dt)
    }

    #[test]
    fn telegraph_allan_matches_model() {
        let (gamma, amp) = (2.0, 1.0);
        let trace = telegraph_trace(gamma, amp, 1 << 16, 0.02, 5);
        let l = Lorentzian { amplitude: amp, gamma };
        let pts = allan_deviation(&trace, &[0.1, 0.5, 1.0, 2.0, 5.0]).unwrap();
        for p in &pts {
            let expect = lorentzian_allan_dev(&l, p.tau, false);
            assert_relative_eq!(p.adev, expect, max_relative = 0.12);
        }
    }

    #[test]
    fn telegraph_psd_matches_lorentzian() {
        // Keep the corner rate and the compared bands far below Nyquist so
        // that aliasing of the 1/f² tail stays inside the tolerance.
        let (gamma, amp) = (20.0, 1.0);
        let trace = telegraph_trace(gamma, amp, 1 << 17, 0.002, 9);
        let psd = welch_psd(&trace, Some(2048)).unwrap();
        let l = Lorentzian { amplitude: amp, gamma };
        let model = NoiseModel { a_white: 0.0, a_one_over_f: 0.0, lorentzians: vec![l] };
        // Compare band-averaged PSD against the model below ~50 Hz.
        for band in psd.freq.chunks(100).zip(psd.psd.chunks(100)).take(2) {
            let data: f64 = band.1.iter().sum::<f64>() / band.1.len() as f64;
            let expect: f64 =
                band.0.iter().map(|&f| model.psd(f)).sum::<f64>() / band.0.len() as f64;
            assert_relative_eq!(data, expect, max_relative = 0.15);
        }
    }

    #[test]
    fn lorentzian_allan_small_tau_series_is_continuous() {
        // The series branch must agree with the closed form at the same tau,
        // evaluated just below the switchover where both are accurate.
        let l = Lorentzian { amplitude: 2.0, gamma: 1.0 };
        let x = 5e-4;
        let series = lorentzian_allan_dev(&l, x / l.gamma, false);
        let direct = {
            let bracket = 4.0 * (-x).exp() - (-2.0 * x).exp() + 2.0 * x - 3.0;
            (l.amplitude * bracket).sqrt() / x
        };
        assert_relative_eq!(series, direct, max_relative = 1e-4);
        // As-printed variant differs by (gamma tau)^2.
        let tau = 0.5;
        let ratio = lorentzian_allan_dev(&l, tau, true) / lorentzian_allan_dev(&l, tau, false);
        assert_relative_eq!(ratio, (l.gamma * tau).powi(2), max_relative = 1e-12);
    }

    #[test]
    fn fit_recovers_synthetic_model() {
        let truth = NoiseModel {
            a_white: 1.0,
            a_one_over_f: 0.5,
            lorentzians: vec![Lorentzian { amplitude: 30.0, gamma: 3.0 }],
        };
        let mut rng = stream_rng(17, 0);
        let values = synthesize_trace(1 << 15, 0.01, |f| truth.psd(f), &mut rng);
        let trace = UniformTrace::new(values, 0.01);
        let psd = welch_psd(&trace, None).unwrap();
        let allan = allan_deviation(&trace, &default_allan_taus(&trace, 30)).unwrap();
        let fit = fit_noise_model(&psd, &allan, 1, 1.0).unwrap();
        assert!(!fit.degenerate);
        assert_relative_eq!(fit.model.lorentzians[0].gamma, truth.lorentzians[0].gamma, max_relative = 0.2);
        assert_relative_eq!(fit.model.lorentzians[0].amplitude, truth.lorentzians[0].amplitude, max_relative = 0.3);
        assert_relative_eq!(fit.model.a_white, truth.a_white, max_relative = 0.3);
    }

    #[test]
    fn fit_is_idempotent_on_model_curves() {
        let truth = NoiseModel {
            a_white: 1.0,
            a_one_over_f: 0.2,
            lorentzians: vec![Lorentzian { amplitude: 20.0, gamma: 2.0 }],
        };
        let freq: Vec<f64> = (1..=200).map(|k| k as f64 * 0.05).collect();
        let psd = Psd { freq: freq.clone(), psd: freq.iter().map(|&f| truth.psd(f)).collect() };
        let taus: Vec<f64> = (0..20).map(|i| 0.05 * 1.4f64.powi(i)).collect();
        let allan: Vec<AllanPoint> = taus
            .iter()
            .map(|&tau| AllanPoint { tau, adev: truth.allan_dev(tau), n_samples: 100 })
            .collect();
        let fit = fit_noise_model(&psd, &allan, 1, 1.0).unwrap();
        assert_relative_eq!(fit.model.a_white, truth.a_white, max_relative = 1e-4);
        assert_relative_eq!(fit.model.a_one_over_f, truth.a_one_over_f, max_relative = 1e-4);
        assert_relative_eq!(fit.model.lorentzians[0].amplitude, truth.lorentzians[0].amplitude, max_relative = 1e-4);
        assert_relative_eq!(fit.model.lorentzians[0].gamma, truth.lorentzians[0].gamma, max_relative = 1e-4);
        // A second fit from the first fit's curves lands on the same model.
        let psd2 = Psd { freq: freq.clone(), psd: freq.iter().map(|&f| fit.model.psd(f)).collect() };
        let allan2: Vec<AllanPoint> = taus
            .iter()
            .map(|&tau| AllanPoint { tau, adev: fit.model.allan_dev(tau), n_samples: 100 })
            .collect();
        let fit2 = fit_noise_model(&psd2, &allan2, 1, 1.0).unwrap();
        assert_relative_eq!(fit2.model.a_white, fit.model.a_white, max_relative = 1e-4);
        assert_relative_eq!(fit2.model.lorentzians[0].gamma, fit.model.lorentzians[0].gamma, max_relative = 1e-4);
    }

    #[test]
    fn degenerate_on_constant_trace() {
        let trace = UniformTrace::new(vec![1.0; 4096], 0.01);
        let psd = welch_psd(&trace, None).unwrap();
        let allan = allan_deviation(&trace, &[0.05, 0.2, 1.0]).unwrap();
        // Allan of a constant trace is exactly zero; the fit must flag it.
        assert!(allan.iter().all(|p| p.adev == 0.0));
        let fit = fit_noise_model(&psd, &allan, 1, 1.0);
        match fit {
            Ok(f) => assert!(f.degenerate),
            Err(NoiseError::FitDiverged(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn tau_too_long_rejected() {
        let trace = white_trace(1024, 0.01, 1.0, 3);
        let err = allan_deviation(&trace, &[5.0]).unwrap_err();
        assert!(matches!(err, NoiseError::TauTooLong { .. }));
    }

    #[test]
    fn moving_mean_band_scales_with_window() {
        let band = moving_mean_band(&[1.0; 100], &[0.5; 100], 25);
        assert_relative_eq!(band.mean[50], 1.0, max_relative = 1e-12);
        assert_relative_eq!(band.half_width[50], 0.5 / 5.0, max_relative = 1e-12);
    }

    #[test]
    fn detector_ignores_out_of_band_and_small_jumps() {
        let spam = SpamModel::new(0.1, 0.1).unwrap();
        let mk_rep = |t: f64, t1: f64| RepSummary {
            t_start: t,
            t_end: t + 0.01,
            t1_hat: t1,
            shots: vec![(t1, 1); 20],
        };
        // Two intervals, means 150us and 160us: jump below threshold.
        let mut reps = Vec::new();
        for i in 0..10 {
            reps.push(mk_rep(i as f64 * 0.02, 150e-6));
        }
        for i in 0..10 {
            reps.push(mk_rep(0.2 + i as f64 * 0.02, 160e-6));
        }
        let report = detect_switches(&reps, &spam, &SwitchDetectorConfig::default());
        assert_eq!(report.n_intervals, 2);
        assert_eq!(report.n_filtered, 0);
        // Means far outside the band are filtered too.
        let reps_oob: Vec<RepSummary> = reps
            .iter()
            .map(|r| RepSummary { t1_hat: r.t1_hat + 500e-6, ..r.clone() })
            .collect();
        let report = detect_switches(&reps_oob, &spam, &SwitchDetectorConfig::default());
        assert_eq!(report.n_filtered, 0);
    }

    #[test]
    fn detector_verifies_a_clear_switch() {
        let spam = SpamModel::ideal();
        // Left interval: lifetime 150us, right: 320us; shots at tau = t1hat
        // with deterministic outcome rates emulated by alternating outcomes.
        let mut rng = stream_rng(41, 0);
        let mut mk_rep = |t: f64, t1: f64| {
            let tau = 200e-6;
            let p = (-(tau) / t1 as f64).exp();
            let shots: Vec<(f64, u8)> =
                (0..30).map(|_| (tau, u8::from(rng.gen::<f64>() < p))).collect();
            RepSummary { t_start: t, t_end: t + 0.01, t1_hat: t1, shots }
        };
        let mut reps = Vec::new();
        for i in 0..18 {
            reps.push(mk_rep(i as f64 * 0.011, 150e-6));
        }
        for i in 0..18 {
            reps.push(mk_rep(0.2 + i as f64 * 0.011, 320e-6));
        }
        let report = detect_switches(&reps, &spam, &SwitchDetectorConfig::default());
        assert_eq!(report.n_filtered, 1);
        assert_eq!(report.n_verified, 1);
        assert_relative_eq!(report.event_times[0], 0.2, epsilon = 1e-9);
    }

    #[test]
    fn trace_resampling_preserves_order_and_dt() {
        use crate::estimator::{AdaptivePolicy, EstimationConfig, GammaPosterior};
        use crate::sim::QubitSimulator;
        let config = EstimationConfig {
            prior: GammaPosterior::new(3.0, 450e-6).unwrap(),
            spam: SpamModel::new(0.05, 0.05).unwrap(),
            policy: AdaptivePolicy::with_default_bounds(0.5).unwrap(),
            n_shots: 20,
        };
        let mut sim = QubitSimulator::new(
            RateProcess::constant(1.0 / 200e-6),
            config.spam,
            100e-6,
            stream_rng(3, 0),
        );
        let (runs, _) = crate::estimator::run_repetitions(&mut sim, &config, 50);
        let trace = runs_to_trace(&runs).unwrap();
        assert_eq!(trace.values.len(), 50);
        assert!(trace.dt > 0.0);
        assert!(trace.sigma.as_ref().unwrap().iter().all(|s| *s > 0.0));
    }
}
