//! One function per subcommand: thin orchestration over the library,
//! emitting machine-readable data files plus JSON summaries.

use serde::Serialize;
use std::io::Write;

use t1track::baselines::{compare_study, fit_exponential, EstimatorKind};
use t1track::estimator::{
    credible_interval, run_estimation, EstimationRun, MeasurementSource, SpamModel,
};
use t1track::noise::{
    allan_deviation, default_allan_taus, detect_switches, fit_noise_model, lorentzian_allan_dev,
    moving_mean_band, synthesize_trace, welch_psd, windowed_analysis, Lorentzian, NoiseModel,
    RepSummary, SwitchDetectorConfig, UniformTrace,
};
use t1track::optimizer::{export_c_table, tau_opt_closed_form, ClosedFormCase};
use t1track::oracle::{frequentist_limit, kl_scan, run_validation_protocol};
use t1track::rng::stream_rng;

use crate::config::ResolvedConfig;
use crate::output::{fmt, OutputDir};
use crate::CliError;

fn write_trace_csv(
    out: &OutputDir,
    name: &str,
    runs: &[EstimationRun],
    ci_level: f64,
) -> Result<(), CliError> {
    let mut w = out.csv(name, "lab_time_s,k,theta_s,t1_hat_s,ci_lo_s,ci_hi_s")?;
    for run in runs {
        let p = run.final_posterior();
        let (lo, hi) = credible_interval(&p, ci_level);
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt(run.end_time),
            fmt(p.k),
            fmt(p.theta),
            fmt(p.t1_hat()),
            fmt(lo),
            fmt(hi)
        )?;
    }
    Ok(())
}

fn write_shots_csv(out: &OutputDir, name: &str, runs: &[EstimationRun]) -> Result<(), CliError> {
    let mut w = out.csv(name, "rep_index,shot_index,lab_time_s,tau_s,outcome")?;
    for run in runs {
        for rec in &run.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                rec.rep_index,
                rec.shot_index,
                fmt(rec.lab_time),
                fmt(rec.tau),
                rec.outcome
            )?;
        }
    }
    Ok(())
}

pub fn cmd_track(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let cfg = res.estimation_config()?;
    let mut sim = res.simulator(0)?;
    let mut runs = Vec::new();
    let mut truth: Vec<(f64, f64)> = Vec::new();
    let mut aborted = 0usize;
    for rep in 0..res.reps {
        match run_estimation(&mut sim, &cfg, rep) {
            Ok(run) => {
                truth.push((sim.lab_time(), sim.true_gamma()));
                runs.push(run);
            }
            Err(_) => aborted += 1,
        }
    }

    write_shots_csv(out, "shots.csv", &runs)?;
    write_trace_csv(out, "trace.csv", &runs, res.track.ci_level)?;

    let mut w = out.csv("truth.csv", "time_s,gamma1_per_s")?;
    for (t, g) in &truth {
        writeln!(w, "{},{}", fmt(*t), fmt(*g))?;
    }

    let t1s: Vec<f64> = runs.iter().map(|r| r.final_posterior().t1_hat()).collect();
    let stds: Vec<f64> = runs.iter().map(|r| r.final_posterior().t1_std()).collect();
    let window = res.track.window.min(t1s.len().max(1));
    let band = moving_mean_band(&t1s, &stds, window);
    let mut w = out.csv("moving_mean.csv", "lab_time_s,mean_t1_s,half_width_s")?;
    for (i, run) in runs.iter().enumerate() {
        writeln!(w, "{},{},{}", fmt(run.end_time), fmt(band.mean[i]), fmt(band.half_width[i]))?;
    }

    #[derive(Serialize)]
    struct Summary {
        reps_completed: usize,
        aborted: usize,
        mean_t1_s: Option<f64>,
        window: usize,
    }
    let mean_t1 =
        (!t1s.is_empty()).then(|| t1s.iter().sum::<f64>() / t1s.len() as f64);
    out.json(
        "summary.json",
        &Summary { reps_completed: runs.len(), aborted, mean_t1_s: mean_t1, window },
    )
}

pub fn cmd_interleave(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let cfg = res.estimation_config()?;
    let il = &res.interleave;
    let mut sim = res.simulator(0)?;
    let taus: Vec<f64> = (1..=il.sweep_points)
        .map(|i| i as f64 * il.sweep_max_s / il.sweep_points as f64)
        .collect();
    let mut counts = vec![0usize; il.sweep_points];
    let mut runs = Vec::new();
    for rep in 0..res.reps {
        if let Ok(run) = run_estimation(&mut sim, &cfg, rep) {
            runs.push(run);
        }
        for (i, &tau) in taus.iter().enumerate() {
            for _ in 0..il.shots_per_point {
                counts[i] += usize::from(sim.single_shot(tau));
            }
        }
    }

    write_trace_csv(out, "adaptive_trace.csv", &runs, res.track.ci_level)?;
    let shots_per_point = il.shots_per_point * res.reps;
    let fractions: Vec<f64> = counts
        .iter()
        .map(|&c| if shots_per_point > 0 { c as f64 / shots_per_point as f64 } else { 0.0 })
        .collect();
    let mut w = out.csv("sweep.csv", "tau_s,fraction,shots")?;
    if res.reps > 0 {
        for (tau, frac) in taus.iter().zip(&fractions) {
            writeln!(w, "{},{},{}", fmt(*tau), fmt(*frac), shots_per_point)?;
        }
    }

    #[derive(Serialize)]
    struct Report {
        reps: usize,
        adaptive_mean_t1_s: Option<f64>,
        adaptive_se_s: Option<f64>,
        sweep_t1_s: Option<f64>,
        sweep_t1_std_s: Option<f64>,
        agreement_sigma: Option<f64>,
    }
    let mut report = Report {
        reps: res.reps,
        adaptive_mean_t1_s: None,
        adaptive_se_s: None,
        sweep_t1_s: None,
        sweep_t1_std_s: None,
        agreement_sigma: None,
    };
    if res.reps > 0 && !runs.is_empty() {
        let t1s: Vec<f64> = runs.iter().map(|r| r.final_posterior().t1_hat()).collect();
        let n = t1s.len() as f64;
        let mean = t1s.iter().sum::<f64>() / n;
        let var = t1s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = (var / n).sqrt();
        let fit = fit_exponential(&taus, &fractions, shots_per_point)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let agreement =
            (mean - fit.t1).abs() / (se * se + fit.t1_std * fit.t1_std).sqrt();
        report.adaptive_mean_t1_s = Some(mean);
        report.adaptive_se_s = Some(se);
        report.sweep_t1_s = Some(fit.t1);
        report.sweep_t1_std_s = Some(fit.t1_std);
        report.agreement_sigma = Some(agreement);
    }
    out.json("interleave.json", &report)
}

pub fn cmd_compare(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let ccfg = res
        .compare
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [compare] block".into()))?;
    let cfg = res.estimation_config()?;
    let mut policies = vec![EstimatorKind::Adaptive];
    policies.extend(ccfg.fixed_taus_s.iter().map(|&t| EstimatorKind::FixedTau(t)));
    let rows = compare_study(
        &ccfg.t1_grid_s,
        ccfg.trials,
        res.n_shots,
        &cfg.spam,
        &cfg.spam,
        &cfg.prior,
        &policies,
        res.seed,
    );
    let mut w = out.csv("metrics.csv", "true_t1_s,estimator,mare,msre,bias")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt(r.true_t1),
            r.estimator,
            fmt(r.mare),
            fmt(r.msre),
            fmt(r.bias)
        )?;
    }
    #[derive(Serialize)]
    struct Summary {
        trials: usize,
        n_estimators: usize,
        n_grid: usize,
    }
    out.json(
        "summary.json",
        &Summary { trials: ccfg.trials, n_estimators: policies.len(), n_grid: ccfg.t1_grid_s.len() },
    )
}

pub fn cmd_spam_sweep(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let scfg = res
        .spam_sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [spam_sweep] block".into()))?;
    let cfg = res.estimation_config()?;
    let spam_true = SpamModel::new(scfg.true_alpha, scfg.true_alpha)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut w = out.csv("metrics.csv", "alpha_est,true_t1_s,mare,msre,bias")?;
    for (i, &alpha_est) in scfg.alpha_est_grid.iter().enumerate() {
        let spam_est = SpamModel::new(alpha_est, alpha_est)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let rows = compare_study(
            &scfg.t1_grid_s,
            scfg.trials,
            res.n_shots,
            &spam_true,
            &spam_est,
            &cfg.prior,
            &[EstimatorKind::Adaptive],
            res.seed.wrapping_add(i as u64),
        );
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt(alpha_est),
                fmt(r.true_t1),
                fmt(r.mare),
                fmt(r.msre),
                fmt(r.bias)
            )?;
        }
    }
    Ok(())
}

pub fn cmd_kl_scan(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let kcfg = res
        .kl_scan
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [kl_scan] block".into()))?;
    let cells = kl_scan(&kcfg.k_grid, &kcfg.tau_over_theta_grid, &kcfg.spam_grid, kcfg.m);
    let mut w = out.csv("kl_scan.csv", "k,tau_over_theta,spam,m,kl_gamma,kl_truncated_normal")?;
    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    for c in &cells {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt(c.k),
            fmt(c.tau_over_theta),
            fmt(c.spam),
            c.m,
            opt(c.kl_gamma),
            opt(c.kl_truncated_normal)
        )?;
    }
    Ok(())
}

pub fn cmd_opt_tau(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let ocfg = res
        .opt_tau
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [opt_tau] block".into()))?;
    let cfg = res.estimation_config()?;
    let rows = export_c_table(&ocfg.gamma1_grid_per_s, &ocfg.idle_grid_s, &cfg.spam);
    let mut w = out.csv("c_table.csv", "gamma1_per_s,idle_s,c_opt")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{}",
            fmt(r.gamma1_per_s),
            fmt(r.idle_s),
            r.c_opt.map(fmt).unwrap_or_default()
        )?;
    }

    #[derive(Serialize)]
    struct ClosedForms {
        c_shot_limited_no_spam: f64,
        c_shot_limited_beta0: f64,
        c_zero_idle_beta0: f64,
        alpha: f64,
    }
    let num = |case| {
        tau_opt_closed_form(case, 1.0)
            .map(|o| o.c_opt)
            .map_err(|e| CliError::Numerical(e.to_string()))
    };
    out.json(
        "closed_forms.json",
        &ClosedForms {
            c_shot_limited_no_spam: num(ClosedFormCase::NLimitedNoSpam)?,
            c_shot_limited_beta0: num(ClosedFormCase::NLimitedBeta0 { alpha: cfg.spam.alpha })?,
            c_zero_idle_beta0: num(ClosedFormCase::T0Beta0 { alpha: cfg.spam.alpha })?,
            alpha: cfg.spam.alpha,
        },
    )
}

fn load_trace_csv(path: &str) -> Result<UniformTrace, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{path}: {e}")))?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut sigma = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("lab_time") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 2 {
            return Err(CliError::Config(format!("bad trace row: {line}")));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad number {s:?}: {e}")))
        };
        times.push(parse(cols[0])?);
        values.push(parse(cols[1])?);
        if cols.len() > 2 {
            sigma.push(parse(cols[2])?);
        }
    }
    if values.len() < 2 {
        return Err(CliError::Config("trace needs at least 2 rows".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    Ok(UniformTrace {
        values,
        dt,
        sigma: (sigma.len() == times.len()).then_some(sigma),
        t0: times[0],
    })
}

pub fn cmd_analyze(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let acfg = res
        .analyze
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [analyze] block".into()))?;
    let trace = match (&acfg.input, &acfg.synthetic) {
        (Some(path), None) => load_trace_csv(path)?,
        (None, Some(s)) => {
            let model = NoiseModel {
                a_white: s.a_white,
                a_one_over_f: s.a_one_over_f,
                lorentzians: s
                    .lorentzians
                    .iter()
                    .map(|l| Lorentzian { amplitude: l.amplitude, gamma: l.gamma_per_s })
                    .collect(),
            };
            let mut rng = stream_rng(res.seed, 0);
            UniformTrace::new(synthesize_trace(s.n, s.dt_s, |f| model.psd(f), &mut rng), s.dt_s)
        }
        _ => {
            return Err(CliError::Config(
                "[analyze] needs exactly one of `input` or `synthetic`".into(),
            ))
        }
    };

    let psd = welch_psd(&trace, None).map_err(|e| CliError::Numerical(e.to_string()))?;
    let allan = allan_deviation(&trace, &default_allan_taus(&trace, acfg.allan_points))
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let mut w = out.csv("psd.csv", "freq_hz,psd_s3")?;
    for (f, s) in psd.freq.iter().zip(&psd.psd) {
        writeln!(w, "{},{}", fmt(*f), fmt(*s))?;
    }
    let mut w = out.csv("allan.csv", "tau_s,adev_s,n_samples")?;
    for p in &allan {
        writeln!(w, "{},{},{}", fmt(p.tau), fmt(p.adev), p.n_samples)?;
    }

    let fit = fit_noise_model(&psd, &allan, acfg.n_lorentzians, acfg.allan_weight)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    out.json("fit.json", &fit)?;

    // Fitted-model Allan curve, optionally with the legacy as-printed
    // Lorentzian prefactor, for overplotting against allan.csv.
    let mut w = out.csv("model_allan.csv", "tau_s,adev_model_s")?;
    for p in &allan {
        let var = fit.model.a_white / (2.0 * p.tau)
            + 2.0 * std::f64::consts::LN_2 * fit.model.a_one_over_f
            + fit
                .model
                .lorentzians
                .iter()
                .map(|l| lorentzian_allan_dev(l, p.tau, acfg.allan_as_printed).powi(2))
                .sum::<f64>();
        writeln!(w, "{},{}", fmt(p.tau), fmt(var.sqrt()))?;
    }

    if let Some(window_len) = acfg.window_len_s {
        let windows = windowed_analysis(&trace, window_len, 0.5, acfg.allan_weight)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        #[derive(Serialize)]
        struct WindowRow {
            start_time_s: f64,
            gamma_per_s: Option<f64>,
            amplitude: Option<f64>,
            a_white: Option<f64>,
        }
        #[derive(Serialize)]
        struct Windows {
            windows: Vec<WindowRow>,
        }
        let rows = windows
            .iter()
            .map(|w| WindowRow {
                start_time_s: w.start_time,
                gamma_per_s: w.fit.as_ref().and_then(|f| f.model.lorentzians.first()).map(|l| l.gamma),
                amplitude: w.fit.as_ref().and_then(|f| f.model.lorentzians.first()).map(|l| l.amplitude),
                a_white: w.fit.as_ref().map(|f| f.model.a_white),
            })
            .collect();
        out.json("windows.json", &Windows { windows: rows })?;
    }
    Ok(())
}

pub fn cmd_detect(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let cfg = res.estimation_config()?;
    let mut sim = res.simulator(0)?;
    sim.record_truth = true;
    let mut reps = Vec::new();
    for rep in 0..res.reps {
        if let Ok(run) = run_estimation(&mut sim, &cfg, rep) {
            reps.push(RepSummary::from_run(&run));
        }
    }
    let dcfg = SwitchDetectorConfig {
        interval_len: res.detect.interval_s,
        band: (res.detect.band_lo_s, res.detect.band_hi_s),
        min_jump: res.detect.min_jump_s,
        level: res.detect.level,
    };
    let report = detect_switches(&reps, &cfg.spam, &dcfg);

    #[derive(Serialize)]
    struct Events {
        #[serde(flatten)]
        report: t1track::noise::SwitchReport,
        ground_truth_events: usize,
        duration_s: f64,
        ground_truth_rate_per_s: f64,
    }
    let duration = sim.lab_time();
    let truth = sim.truth_events.len();
    out.json(
        "events.json",
        &Events {
            report,
            ground_truth_events: truth,
            duration_s: duration,
            ground_truth_rate_per_s: if duration > 0.0 { truth as f64 / duration } else { 0.0 },
        },
    )
}

pub fn cmd_validate(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let cfg = res.estimation_config()?;
    let mut sim = res.simulator(0)?;
    let vcfg = &res.validate;
    let report =
        run_validation_protocol(&mut sim, &cfg, vcfg.n_test, res.reps, vcfg.q, vcfg.level);
    let mut w =
        out.csv("strata.csv", "t1_lo_s,t1_hi_s,count,weak_gt,strong_gt,weak_lt,strong_lt")?;
    for s in &report.strata {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt(s.t1_lo),
            fmt(s.t1_hi),
            s.count,
            fmt(s.weak_gt),
            fmt(s.strong_gt),
            fmt(s.weak_lt),
            fmt(s.strong_lt)
        )?;
    }
    out.json("validation.json", &report)
}

pub fn cmd_freq_limit(res: &ResolvedConfig, out: &OutputDir) -> Result<(), CliError> {
    let mut cfg = res.estimation_config()?;
    let fcfg = &res.freq_limit;
    cfg.n_shots = fcfg.n_shots;
    let mut w = out.csv("freq_limit.csv", "rep,t1_hat_s,dt1_s,elapsed_s,ratio")?;
    let mut ratios = Vec::with_capacity(fcfg.reps);
    for rep in 0..fcfg.reps {
        let mut sim = res.simulator(rep as u64)?;
        let Ok(run) = run_estimation(&mut sim, &cfg, rep) else { continue };
        let p = run.final_posterior();
        let elapsed = run.elapsed();
        let ratio = p.t1_std() / frequentist_limit(p.t1_hat(), elapsed);
        writeln!(
            w,
            "{},{},{},{},{}",
            rep,
            fmt(p.t1_hat()),
            fmt(p.t1_std()),
            fmt(elapsed),
            fmt(ratio)
        )?;
        ratios.push(ratio);
    }
    #[derive(Serialize)]
    struct Summary {
        reps_completed: usize,
        mean_ratio: Option<f64>,
    }
    let mean = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    out.json("summary.json", &Summary { reps_completed: ratios.len(), mean_ratio: mean })
}
