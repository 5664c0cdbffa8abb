//! Experiment configuration: a TOML file with optional blocks layered on
//! top of a named preset, resolved to concrete parameters before any run.

use serde::{Deserialize, Serialize};
use t1track::estimator::{AdaptivePolicy, EstimationConfig, GammaPosterior, SpamModel};
use t1track::sim::{make_paper_preset, Fluctuator, QubitSimulator, RateProcess};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub preset: Option<String>,
    /// Number of estimation repetitions for the run-based commands.
    pub reps: Option<usize>,
    pub prior: Option<PriorCfg>,
    pub spam: Option<SpamCfg>,
    pub policy: Option<PolicyCfg>,
    pub simulator: Option<SimCfg>,
    pub budget: Option<BudgetCfg>,
    pub track: Option<TrackCfg>,
    pub interleave: Option<InterleaveCfg>,
    pub compare: Option<CompareCfg>,
    pub spam_sweep: Option<SpamSweepCfg>,
    pub kl_scan: Option<KlScanCfg>,
    pub opt_tau: Option<OptTauCfg>,
    pub analyze: Option<AnalyzeCfg>,
    pub detect: Option<DetectCfg>,
    pub validate: Option<ValidateCfg>,
    pub freq_limit: Option<FreqLimitCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorCfg {
    pub k: f64,
    pub theta_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpamCfg {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCfg {
    pub c: f64,
    #[serde(default = "default_tau_min")]
    pub tau_min_s: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max_s: f64,
}

fn default_tau_min() -> f64 {
    1e-6
}
fn default_tau_max() -> f64 {
    5e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluctuatorCfg {
    pub rate_up_per_s: f64,
    pub rate_down_per_s: f64,
    pub delta_gamma_per_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimCfg {
    /// Baseline relaxation rate with all fluctuators off.
    pub gamma_base_per_s: f64,
    #[serde(default)]
    pub fluctuators: Vec<FluctuatorCfg>,
    pub idle_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetCfg {
    pub n_shots: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackCfg {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

fn default_window() -> usize {
    50
}
fn default_ci_level() -> f64 {
    0.9
}

impl Default for TrackCfg {
    fn default() -> Self {
        TrackCfg { window: default_window(), ci_level: default_ci_level() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterleaveCfg {
    #[serde(default = "default_sweep_max")]
    pub sweep_max_s: f64,
    #[serde(default = "default_sweep_points")]
    pub sweep_points: usize,
    #[serde(default = "default_shots_per_point")]
    pub shots_per_point: usize,
}

fn default_sweep_max() -> f64 {
    600e-6
}
fn default_sweep_points() -> usize {
    25
}
fn default_shots_per_point() -> usize {
    2
}

impl Default for InterleaveCfg {
    fn default() -> Self {
        InterleaveCfg {
            sweep_max_s: default_sweep_max(),
            sweep_points: default_sweep_points(),
            shots_per_point: default_shots_per_point(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareCfg {
    pub t1_grid_s: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub fixed_taus_s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpamSweepCfg {
    pub true_alpha: f64,
    pub alpha_est_grid: Vec<f64>,
    pub t1_grid_s: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlScanCfg {
    pub k_grid: Vec<f64>,
    pub tau_over_theta_grid: Vec<f64>,
    pub spam_grid: Vec<f64>,
    #[serde(default = "default_m1")]
    pub m: u8,
}

fn default_m1() -> u8 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptTauCfg {
    pub gamma1_grid_per_s: Vec<f64>,
    pub idle_grid_s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTraceCfg {
    pub n: usize,
    pub dt_s: f64,
    pub a_white: f64,
    pub a_one_over_f: f64,
    #[serde(default)]
    pub lorentzians: Vec<LorentzianCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LorentzianCfg {
    pub amplitude: f64,
    pub gamma_per_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeCfg {
    /// Trace CSV path (lab_time_s, t1_hat_s[, dt1_std_s]); mutually
    /// exclusive with `synthetic`.
    pub input: Option<String>,
    pub synthetic: Option<SyntheticTraceCfg>,
    #[serde(default = "default_one")]
    pub n_lorentzians: usize,
    #[serde(default = "default_one_f64")]
    pub allan_weight: f64,
    #[serde(default = "default_allan_points")]
    pub allan_points: usize,
    /// Window length in seconds for the sliding-window analysis; omit to
    /// fit the whole trace once.
    pub window_len_s: Option<f64>,
    #[serde(default)]
    pub allan_as_printed: bool,
}

fn default_one() -> usize {
    1
}
fn default_one_f64() -> f64 {
    1.0
}
fn default_allan_points() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectCfg {
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    #[serde(default = "default_band_lo")]
    pub band_lo_s: f64,
    #[serde(default = "default_band_hi")]
    pub band_hi_s: f64,
    #[serde(default = "default_min_jump")]
    pub min_jump_s: f64,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_interval() -> f64 {
    0.2
}
fn default_band_lo() -> f64 {
    100e-6
}
fn default_band_hi() -> f64 {
    400e-6
}
fn default_min_jump() -> f64 {
    100e-6
}
fn default_level() -> f64 {
    0.975
}

impl Default for DetectCfg {
    fn default() -> Self {
        DetectCfg {
            interval_s: default_interval(),
            band_lo_s: default_band_lo(),
            band_hi_s: default_band_hi(),
            min_jump_s: default_min_jump(),
            level: default_level(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateCfg {
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_val_level")]
    pub level: f64,
}

fn default_n_test() -> usize {
    200
}
fn default_q() -> f64 {
    0.2
}
fn default_val_level() -> f64 {
    0.95
}

impl Default for ValidateCfg {
    fn default() -> Self {
        ValidateCfg { n_test: default_n_test(), q: default_q(), level: default_val_level() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreqLimitCfg {
    #[serde(default = "default_fl_reps")]
    pub reps: usize,
    #[serde(default = "default_fl_shots")]
    pub n_shots: usize,
}

fn default_fl_reps() -> usize {
    1000
}
fn default_fl_shots() -> usize {
    30
}

impl Default for FreqLimitCfg {
    fn default() -> Self {
        FreqLimitCfg { reps: default_fl_reps(), n_shots: default_fl_shots() }
    }
}

/// Fully concrete configuration: every parameter the run uses, after the
/// preset and explicit blocks have been merged. Round-trippable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub reps: usize,
    pub preset: Option<String>,
    pub prior: PriorCfg,
    pub spam: SpamCfg,
    pub policy: PolicyCfg,
    pub simulator: SimCfg,
    pub n_shots: usize,
    pub track: TrackCfg,
    pub interleave: InterleaveCfg,
    pub compare: Option<CompareCfg>,
    pub spam_sweep: Option<SpamSweepCfg>,
    pub kl_scan: Option<KlScanCfg>,
    pub opt_tau: Option<OptTauCfg>,
    pub analyze: Option<AnalyzeCfg>,
    pub detect: DetectCfg,
    pub validate: ValidateCfg,
    pub freq_limit: FreqLimitCfg,
}

pub fn resolve(
    file: FileConfig,
    cli_seed: Option<u64>,
    cli_preset: Option<String>,
) -> Result<ResolvedConfig, CliError> {
    let preset_name = cli_preset.or(file.preset);
    let bundle = match &preset_name {
        Some(name) => Some(
            make_paper_preset(name).map_err(|e| CliError::Config(e.to_string()))?,
        ),
        None => None,
    };

    let prior = file
        .prior
        .or_else(|| bundle.as_ref().map(|b| PriorCfg { k: b.prior_k, theta_s: b.prior_theta }))
        .ok_or_else(|| CliError::Config("no prior block and no preset".into()))?;
    let spam = file
        .spam
        .or_else(|| {
            bundle.as_ref().map(|b| SpamCfg { alpha: b.spam.alpha, beta: b.spam.beta })
        })
        .ok_or_else(|| CliError::Config("no spam block and no preset".into()))?;
    let policy = file
        .policy
        .or_else(|| {
            bundle.as_ref().map(|b| PolicyCfg {
                c: b.policy_c,
                tau_min_s: default_tau_min(),
                tau_max_s: default_tau_max(),
            })
        })
        .ok_or_else(|| CliError::Config("no policy block and no preset".into()))?;
    let simulator = file
        .simulator
        .or_else(|| {
            bundle.as_ref().map(|b| SimCfg {
                gamma_base_per_s: b.process.gamma_base,
                fluctuators: b
                    .process
                    .fluctuators
                    .iter()
                    .map(|f| FluctuatorCfg {
                        rate_up_per_s: f.rate_up,
                        rate_down_per_s: f.rate_down,
                        delta_gamma_per_s: f.delta_gamma,
                    })
                    .collect(),
                idle_s: b.idle_time,
            })
        })
        .ok_or_else(|| CliError::Config("no simulator block and no preset".into()))?;
    let n_shots = file
        .budget
        .map(|b| b.n_shots)
        .or_else(|| bundle.as_ref().map(|b| b.n_shots))
        .ok_or_else(|| CliError::Config("no budget block and no preset".into()))?;

    let resolved = ResolvedConfig {
        seed: cli_seed.or(file.seed).unwrap_or(0),
        reps: file.reps.unwrap_or(100),
        preset: preset_name,
        prior,
        spam,
        policy,
        simulator,
        n_shots,
        track: file.track.unwrap_or_default(),
        interleave: file.interleave.unwrap_or_default(),
        compare: file.compare,
        spam_sweep: file.spam_sweep,
        kl_scan: file.kl_scan,
        opt_tau: file.opt_tau,
        analyze: file.analyze,
        detect: file.detect.unwrap_or_default(),
        validate: file.validate.unwrap_or_default(),
        freq_limit: file.freq_limit.unwrap_or_default(),
    };
    // Validate the numeric blocks eagerly so bad configs exit with code 2
    // before any work runs.
    resolved.estimation_config()?;
    Ok(resolved)
}

impl ResolvedConfig {
    pub fn estimation_config(&self) -> Result<EstimationConfig, CliError> {
        let prior = GammaPosterior::new(self.prior.k, self.prior.theta_s)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let spam = SpamModel::new(self.spam.alpha, self.spam.beta)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let policy =
            AdaptivePolicy::new(self.policy.c, self.policy.tau_min_s, self.policy.tau_max_s)
                .map_err(|e| CliError::Config(e.to_string()))?;
        if self.n_shots == 0 {
            return Err(CliError::Config("n_shots must be positive".into()));
        }
        Ok(EstimationConfig { prior, spam, policy, n_shots: self.n_shots })
    }

    pub fn rate_process(&self) -> RateProcess {
        RateProcess::with_fluctuators(
            self.simulator.gamma_base_per_s,
            self.simulator
                .fluctuators
                .iter()
                .map(|f| Fluctuator {
                    rate_up: f.rate_up_per_s,
                    rate_down: f.rate_down_per_s,
                    delta_gamma: f.delta_gamma_per_s,
                })
                .collect(),
        )
    }

    pub fn simulator(&self, stream: u64) -> Result<QubitSimulator, CliError> {
        let spam = SpamModel::new(self.spam.alpha, self.spam.beta)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(QubitSimulator::new(
            self.rate_process(),
            spam,
            self.simulator.idle_s,
            t1track::rng::stream_rng(self.seed, stream),
        ))
    }
}
