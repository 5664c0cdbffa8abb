//! Synthetic measurement source.
//!
//! The qubit decay rate is a stochastic process: a base rate plus a set of
//! telegraph fluctuators, each contributing `delta_gamma` while on. Evolution
//! is exact piecewise-constant (exponential holding times, event-queue
//! merge), and the survival probability over a wait uses the time-averaged
//! rate over that window, matching what the estimator actually measures when
//! the rate fluctuates during the wait.

use crate::estimator::{MeasurementSource, SpamModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

/// A two-state telegraph fluctuator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Fluctuator {
    /// off -> on switching rate (1/s).
    pub rate_up: f64,
    /// on -> off switching rate (1/s).
    pub rate_down: f64,
    /// Rate added to the qubit decay rate while on (1/s).
    pub delta_gamma: f64,
}

impl Fluctuator {
    pub fn symmetric(rate: f64, delta_gamma: f64) -> Self {
        Self { rate_up: rate, rate_down: rate, delta_gamma }
    }

    /// Stationary probability of the on state.
    pub fn on_probability(&self) -> f64 {
        self.rate_up / (self.rate_up + self.rate_down)
    }
}

/// One switching event in a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub fluctuator: usize,
    pub now_on: bool,
}

/// Decay-rate process: base rate plus telegraph fluctuators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateProcess {
    pub gamma_base: f64,
    pub fluctuators: Vec<Fluctuator>,
}

impl RateProcess {
    pub fn constant(gamma_base: f64) -> Self {
        Self { gamma_base, fluctuators: Vec::new() }
    }

    pub fn with_fluctuators(gamma_base: f64, fluctuators: Vec<Fluctuator>) -> Self {
        Self { gamma_base, fluctuators }
    }

    /// Ensemble approximating 1/f noise: `count` fluctuators with switching
    /// rates log-uniform over `[gamma_lo, gamma_hi]` and equal `delta_gamma`.
    pub fn with_one_over_f_ensemble(
        gamma_base: f64,
        count: usize,
        gamma_lo: f64,
        gamma_hi: f64,
        delta_gamma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fluctuators = (0..count)
            .map(|_| {
                let u: f64 = rng.gen();
                let rate = gamma_lo * (gamma_hi / gamma_lo).powf(u);
                // Split the total corner rate evenly between up and down.
                Fluctuator::symmetric(rate / 2.0, delta_gamma)
            })
            .collect();
        Self { gamma_base, fluctuators }
    }
}

/// Live state of a rate process: which fluctuators are on and when each
/// switches next, in absolute lab time.
#[derive(Debug, Clone)]
pub struct ProcessState {
    process: RateProcess,
    on: Vec<bool>,
    next_switch: Vec<f64>,
    time: f64,
}

impl ProcessState {
    /// Initialize at `time = 0` with each fluctuator drawn from its
    /// stationary distribution.
    pub fn new(process: RateProcess, rng: &mut ChaCha8Rng) -> Self {
        let n = process.fluctuators.len();
        let mut on = Vec::with_capacity(n);
        let mut next_switch = Vec::with_capacity(n);
        for f in &process.fluctuators {
            let is_on = rng.gen::<f64>() < f.on_probability();
            on.push(is_on);
            next_switch.push(sample_dwell(f, is_on, rng));
        }
        Self { process, on, next_switch, time: 0.0 }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Instantaneous decay rate.
    pub fn gamma(&self) -> f64 {
        let extra: f64 = self
            .process
            .fluctuators
            .iter()
            .zip(&self.on)
            .filter(|(_, &is_on)| is_on)
            .map(|(f, _)| f.delta_gamma)
            .sum();
        self.process.gamma_base + extra
    }

    /// Advance to `self.time + duration`, returning `(events, gamma_bar)`
    /// where `gamma_bar` is the exact time average of the rate over the
    /// window, computed from the piecewise-constant segments.
    pub fn evolve(&mut self, duration: f64, rng: &mut ChaCha8Rng) -> (Vec<SwitchEvent>, f64) {
        assert!(duration >= 0.0);
        let end = self.time + duration;
        let mut events = Vec::new();
        let mut integral = 0.0;
        if duration == 0.0 {
            return (events, self.gamma());
        }
        loop {
            // Earliest pending switch.
            let next = self
                .next_switch
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, t)| t <= end)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match next {
                Some((idx, t_switch)) => {
                    integral += self.gamma() * (t_switch - self.time);
                    self.time = t_switch;
                    self.on[idx] = !self.on[idx];
                    let f = &self.process.fluctuators[idx];
                    self.next_switch[idx] = t_switch + sample_dwell_from(f, self.on[idx], rng);
                    events.push(SwitchEvent { time: t_switch, fluctuator: idx, now_on: self.on[idx] });
                }
                None => {
                    integral += self.gamma() * (end - self.time);
                    self.time = end;
                    break;
                }
            }
        }
        (events, integral / duration)
    }
}

fn sample_dwell(f: &Fluctuator, is_on: bool, rng: &mut ChaCha8Rng) -> f64 {
    sample_dwell_from(f, is_on, rng)
}

fn sample_dwell_from(f: &Fluctuator, is_on: bool, rng: &mut ChaCha8Rng) -> f64 {
    let rate = if is_on { f.rate_down } else { f.rate_up };
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    -u.ln() / rate
}

/// Per-cycle timing: lab clock and the fixed idle overhead (initialization,
/// readout, update) added to every shot.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShotClock {
    pub idle_time: f64,
}

/// The simulated qubit: rate process, SPAM, clock, and its own RNG stream.
pub struct QubitSimulator {
    state: ProcessState,
    spam: SpamModel,
    idle_time: f64,
    rng: ChaCha8Rng,
    /// Ground-truth switch events recorded during shots (for oracles).
    pub record_truth: bool,
    pub truth_events: Vec<SwitchEvent>,
}

impl QubitSimulator {
    pub fn new(process: RateProcess, spam: SpamModel, idle_time: f64, mut rng: ChaCha8Rng) -> Self {
        let state = ProcessState::new(process, &mut rng);
        Self {
            state,
            spam,
            idle_time,
            rng,
            record_truth: false,
            truth_events: Vec::new(),
        }
    }

    pub fn spam(&self) -> SpamModel {
        self.spam
    }

    pub fn idle_time(&self) -> f64 {
        self.idle_time
    }

    /// Instantaneous true decay rate (ground truth for oracles).
    pub fn true_gamma(&self) -> f64 {
        self.state.gamma()
    }
}

impl MeasurementSource for QubitSimulator {
    fn single_shot(&mut self, tau: f64) -> u8 {
        // Survival over the wait uses the exact time-averaged rate.
        let (events, gamma_bar) = self.state.evolve(tau, &mut self.rng);
        if self.record_truth {
            self.truth_events.extend(events);
        }
        let p_survive = (-gamma_bar * tau).exp();
        let survived = self.rng.gen::<f64>() < p_survive;
        let outcome = if survived {
            // True |1>: misread as |0> with probability alpha.
            u8::from(self.rng.gen::<f64>() >= self.spam.alpha)
        } else {
            // True |0>: misread as |1> with probability beta.
            u8::from(self.rng.gen::<f64>() < self.spam.beta)
        };
        // Idle time advances the fluctuators but no decay is recorded;
        // readout error is already folded into SPAM.
        let (events, _) = self.state.evolve(self.idle_time, &mut self.rng);
        if self.record_truth {
            self.truth_events.extend(events);
        }
        outcome
    }

    fn lab_time(&self) -> f64 {
        self.state.time()
    }
}

/// Parameter bundle of a documented experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresetBundle {
    pub name: String,
    pub process: RateProcess,
    pub spam: SpamModel,
    pub prior_k: f64,
    pub prior_theta: f64,
    pub policy_c: f64,
    pub idle_time: f64,
    pub n_shots: usize,
}

/// Documented experiment presets.
///
/// `fig1f` single-estimation demo, `fig2_track` fast tracking with telegraph
/// switching, `fig2_interleaved` the interleaved validation run,
/// `fig3_72h_scaled` the long-trace configuration scaled to desk runtimes,
/// and `q2` the second-qubit replication.
pub fn make_paper_preset(name: &str) -> Result<PresetBundle, SimError> {
    const US: f64 = 1e-6;
    let bundle = match name {
        "fig1f" => PresetBundle {
            name: name.into(),
            process: RateProcess::constant(1.0 / (190.0 * US)),
            spam: SpamModel { alpha: 0.11, beta: 0.14 },
            prior_k: 3.0,
            prior_theta: 450.0 * US,
            policy_c: 0.51,
            idle_time: 23.2 * US,
            n_shots: 50,
        },
        "fig2_track" => PresetBundle {
            name: name.into(),
            // Telegraph between ~100 us and ~500 us with tens-of-ms dwells.
            process: RateProcess::with_fluctuators(
                1.0 / (500.0 * US),
                vec![Fluctuator::symmetric(20.0, 1.0 / (100.0 * US) - 1.0 / (500.0 * US))],
            ),
            spam: SpamModel { alpha: 0.11, beta: 0.14 },
            prior_k: 3.0,
            prior_theta: 450.0 * US,
            policy_c: 0.51,
            idle_time: 23.2 * US,
            n_shots: 100,
        },
        "fig2_interleaved" => PresetBundle {
            name: name.into(),
            process: RateProcess::constant(1.0 / (136.7 * US)),
            spam: SpamModel { alpha: 0.11, beta: 0.14 },
            prior_k: 3.0,
            prior_theta: 450.0 * US,
            policy_c: 0.98,
            idle_time: 345.0 * US,
            n_shots: 50,
        },
        "fig3_72h_scaled" => PresetBundle {
            name: name.into(),
            // Base near 1/170 us with one slow and one fast fluctuator; the
            // lab trace itself is not reproducible, only its statistics.
            process: RateProcess::with_fluctuators(
                1.0 / (250.0 * US),
                vec![
                    Fluctuator::symmetric(0.046, 1.0 / (120.0 * US) - 1.0 / (250.0 * US)),
                    Fluctuator::symmetric(10.0, 1.0 / (180.0 * US) - 1.0 / (250.0 * US)),
                ],
            ),
            spam: SpamModel { alpha: 0.12, beta: 0.12 },
            prior_k: 3.0,
            prior_theta: 600.0 * US,
            policy_c: 0.53,
            idle_time: 10.5 * US,
            n_shots: 49,
        },
        "q2" => PresetBundle {
            name: name.into(),
            process: RateProcess::with_fluctuators(
                1.0 / (300.0 * US),
                vec![Fluctuator::symmetric(25.0, 1.0 / (150.0 * US) - 1.0 / (300.0 * US))],
            ),
            spam: SpamModel { alpha: 0.12, beta: 0.13 },
            prior_k: 3.0,
            prior_theta: 550.0 * US,
            policy_c: 1.0,
            idle_time: 11.0 * US,
            n_shots: 29,
        },
        other => return Err(SimError::UnknownPreset(other.into())),
    };
    Ok(bundle)
}
