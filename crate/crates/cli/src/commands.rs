//! Subcommand implementations: orchestration of the core pipelines plus
//! result persistence.

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use magnon_qnd_core::detection::{
    calibrate_amplitude, error_budget, fit_metrics, improved_device_projection, plan_sweep,
    run_protocol, run_sweep, DetectionScheme, DetectorMetrics, PipelineConfig,
};
use magnon_qnd_core::dynamics::{
    evolve, ramsey_evolve, standard_channels, DensityMatrix, EffectiveHamiltonian, RamseyConfig,
};
use magnon_qnd_core::readout::bound_readout_fidelity;
use magnon_qnd_core::spectra::{
    fit_spectrum, gambetta_spectrum, normalized_fft_spectrum, GambettaSpectrumParams,
    SpectrumFit, SpectrumFrame,
};
use magnon_qnd_core::units::{to_hz, NS};
use magnon_qnd_core::SystemParams;

use crate::config::RunConfig;
use crate::output::{regression_compare, RunWriter, Tolerances};

fn scheme_from_config(cfg: &RunConfig, system: &SystemParams) -> Result<DetectionScheme> {
    Ok(match cfg.protocol.scheme.as_str() {
        "x_pi_0" => DetectionScheme::at_least_one_magnon(),
        "x_pi_1" => DetectionScheme::exactly_one_magnon(system.chi_qm),
        other => bail!("unknown scheme {other}"),
    })
}

fn metrics_json(m: &DetectorMetrics) -> Value {
    json!({
        "scheme": m.scheme,
        "tau_pi_ns": m.tau_pi / NS,
        "dark_count": m.dark_count,
        "efficiency": m.efficiency,
        "fit_stderr": m.efficiency_stderr,
        "fit_intercept": m.intercept,
        "fit_intercept_stderr": m.intercept_stderr,
    })
}

/// One detection pipeline: plan, calibrate, sweep, fit.
pub fn cmd_detect(cfg: &RunConfig, writer: &RunWriter) -> Result<()> {
    let system = cfg.system_params();
    let pipe = cfg.pipeline();
    let scheme = scheme_from_config(cfg, &system)?;
    let tau_pi = cfg.protocol.tau_pi_ns * NS;

    let plan = plan_sweep(&system, &pipe)?;
    // The pulse amplitude is always calibrated on the bare-qubit resonance.
    let reference = DetectionScheme::at_least_one_magnon();
    let amplitude = calibrate_amplitude(&system, &reference, tau_pi, &pipe)?;
    let sweep = run_sweep(&system, &scheme, amplitude, &plan, tau_pi, &pipe)?;
    let metrics = fit_metrics(&sweep)?;

    let rows: Vec<Vec<f64>> = sweep
        .points
        .iter()
        .map(|p| vec![tau_pi / NS, to_hz(p.drive_amplitude), p.n_bar, p.p_click])
        .collect();
    writer.write_csv(
        "sweep.csv",
        &["tau_pi_ns", "drive_amplitude_hz", "n_bar_m", "p_click"],
        &rows,
    )?;
    writer.write_json("metrics.json", &metrics_json(&metrics))?;

    if cfg.emit_trajectory {
        let dark = run_protocol(
            &system,
            &scheme,
            amplitude,
            0.0,
            tau_pi,
            pipe.dark_magnon_levels,
            &pipe,
        )?;
        let text = writer.provenance().csv_header() + &dark.trajectory.to_csv();
        std::fs::write(writer.path("trajectory.csv"), text)?;
    }
    println!(
        "detect: scheme {} tau_pi {} ns: dark count {:.4}, efficiency {:.4}",
        metrics.scheme,
        cfg.protocol.tau_pi_ns,
        metrics.dark_count,
        metrics.efficiency
    );
    Ok(())
}

/// Detector metrics over the detection-time grid, optionally alongside the
/// improved device.
pub fn cmd_sweep_tau(cfg: &RunConfig, writer: &RunWriter) -> Result<()> {
    let system = cfg.system_params();
    let pipe = cfg.pipeline();
    let scheme = scheme_from_config(cfg, &system)?;
    let taus: Vec<f64> = cfg.protocol.tau_grid_ns.iter().map(|t| t * NS).collect();

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    if cfg.protocol.improved_device {
        let proj = improved_device_projection(&system, &taus, &pipe)?;
        for (tau, base, improved) in proj {
            rows.push(vec![
                tau / NS,
                0.0,
                base.dark_count,
                base.efficiency,
                base.efficiency_stderr,
            ]);
            rows.push(vec![
                tau / NS,
                1.0,
                improved.dark_count,
                improved.efficiency,
                improved.efficiency_stderr,
            ]);
            summaries.push(json!({
                "tau_pi_ns": tau / NS,
                "base": metrics_json(&base),
                "improved": metrics_json(&improved),
            }));
        }
    } else {
        let plan = plan_sweep(&system, &pipe)?;
        for &tau in &taus {
            let amplitude = calibrate_amplitude(&system, &scheme, tau, &pipe)?;
            let metrics = fit_metrics(&run_sweep(&system, &scheme, amplitude, &plan, tau, &pipe)?)?;
            rows.push(vec![
                tau / NS,
                0.0,
                metrics.dark_count,
                metrics.efficiency,
                metrics.efficiency_stderr,
            ]);
            summaries.push(metrics_json(&metrics));
        }
    }
    writer.write_csv(
        "sweep_tau.csv",
        &["tau_pi_ns", "improved_device", "dark_count", "efficiency", "efficiency_stderr"],
        &rows,
    )?;
    writer.write_json("metrics.json", &json!({ "sweep": summaries }))?;
    println!("sweep-tau: {} detection times written", taus.len());
    Ok(())
}

/// Error budget at the configured detection time.
pub fn cmd_budget(cfg: &RunConfig, writer: &RunWriter) -> Result<()> {
    let system = cfg.system_params();
    let pipe = cfg.pipeline();
    let tau_pi = cfg.protocol.tau_pi_ns * NS;
    let report = error_budget(&system, tau_pi, &pipe)?;

    let mut text = writer.provenance().csv_header();
    text.push_str("source,delta_dark_count,delta_inefficiency\n");
    for row in &report.rows {
        text.push_str(&format!(
            "{},{},{}\n",
            row.source,
            crate::output::fmt_f64(row.delta_dark_count),
            crate::output::fmt_f64(row.delta_inefficiency)
        ));
    }
    std::fs::write(writer.path("budget.csv"), text)?;
    writer.write_json("metrics.json", &serde_json::to_value(&report)?)?;
    println!(
        "budget at tau_pi {} ns: dark count {:.4}, inefficiency {:.4}",
        cfg.protocol.tau_pi_ns,
        report.full.dark_count,
        1.0 - report.full.efficiency
    );
    for row in &report.rows {
        println!(
            "  {:<16} delta_dark {:+.4}  delta_ineff {:+.4}",
            row.source, row.delta_dark_count, row.delta_inefficiency
        );
    }
    Ok(())
}

/// Simulated control-error curve against the readout delay.
pub fn eps_pi_scan(
    system: &SystemParams,
    pipe: &PipelineConfig,
    tau_pi: f64,
    cap: f64,
    step: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let reference = DetectionScheme::at_least_one_magnon();
    let amplitude = calibrate_amplitude(system, &reference, tau_pi, pipe)?;
    let mut schedule = pipe.schedule(system, 0.0, amplitude, tau_pi);
    schedule.delta_t_r = cap;
    let h = EffectiveHamiltonian::from_system(system, pipe.n_levels_qubit, pipe.dark_magnon_levels);
    let channels = standard_channels(system, pipe.n_levels_qubit, pipe.dark_magnon_levels)?;
    let rho0 = DensityMatrix::thermal_qubit_vacuum(
        system.qubit.eps_ini,
        pipe.n_levels_qubit,
        pipe.dark_magnon_levels,
    );
    let n = (cap / step).round() as usize;
    let mut grid = vec![0.0];
    grid.extend((0..=n).map(|k| schedule.readout_start + k as f64 * step));
    let traj = evolve(&rho0, &schedule, &h, &channels, &grid, &pipe.integrator)?;
    let delays: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    let eps_pi: Vec<f64> =
        (0..=n).map(|k| 1.0 - system.qubit.eps_ini - traj.p_e()[k + 1]).collect();
    Ok((delays, eps_pi))
}

/// Readout-error bounds from the delay scan, plus the sensitivity of the
/// detector metrics to the delay choice.
pub fn cmd_readout_bounds(cfg: &RunConfig, writer: &RunWriter) -> Result<()> {
    let system = cfg.system_params();
    let pipe = cfg.pipeline();
    let tau_cal = cfg.readout_bounds.tau_pi_ns * NS;
    let cap = cfg.readout_bounds.delay_cap_ns * NS;
    let step = cfg.readout_bounds.step_ns * NS;

    let (delays, eps_pi) = eps_pi_scan(&system, &pipe, tau_cal, cap, step)?;
    let bounds = bound_readout_fidelity(&system.measured, &delays, &eps_pi)?;

    let rows: Vec<Vec<f64>> = bounds
        .scan
        .iter()
        .map(|p| vec![p.delta_t_r / NS, p.eps_pi, p.eps_g, p.eps_e, p.fidelity])
        .collect();
    writer.write_csv(
        "bounds_scan.csv",
        &["delta_t_r_ns", "eps_pi", "eps_g", "eps_e", "fidelity"],
        &rows,
    )?;

    // Metric sensitivity between the delay bounds at the protocol detection
    // time: rerun the pipeline with the readout model at each bound.
    let scheme = scheme_from_config(cfg, &system)?;
    let tau_pi = cfg.protocol.tau_pi_ns * NS;
    let plan = plan_sweep(&system, &pipe)?;
    let at_bound = |model: &magnon_qnd_core::readout::ReadoutModel| -> Result<DetectorMetrics> {
        let mut sys = system.clone();
        sys.readout = model.clone();
        let amplitude = calibrate_amplitude(&sys, &scheme, tau_pi, &pipe)?;
        Ok(fit_metrics(&run_sweep(&sys, &scheme, amplitude, &plan, tau_pi, &pipe)?)?)
    };
    let metrics_lo = at_bound(&bounds.model_at_zero)?;
    let metrics_hi = at_bound(&bounds.model_at_max)?;

    let summary = json!({
        "f_r_min": bounds.f_r_min,
        "f_r_max": bounds.f_r_max,
        "delta_t_r_max_ns": bounds.delta_t_r_max / NS,
        "midrange": {
            "delta_t_r_ns": bounds.midrange.delta_t_r / NS,
            "eps_g": bounds.midrange.eps_g,
            "eps_e": bounds.midrange.eps_e,
            "fidelity": bounds.midrange.fidelity(),
        },
        "model_at_zero": {"eps_g": bounds.model_at_zero.eps_g, "eps_e": bounds.model_at_zero.eps_e},
        "model_at_max": {"eps_g": bounds.model_at_max.eps_g, "eps_e": bounds.model_at_max.eps_e},
        "sensitivity": {
            "tau_pi_ns": tau_pi / NS,
            "dark_count_spread": (metrics_lo.dark_count - metrics_hi.dark_count).abs(),
            "efficiency_spread": (metrics_lo.efficiency - metrics_hi.efficiency).abs(),
        },
    });
    writer.write_json("bounds.json", &summary)?;
    println!(
        "readout-bounds: F_r in [{:.3}, {:.3}], max delay {:.0} ns, midrange eps = ({:.4}, {:.4})",
        bounds.f_r_min,
        bounds.f_r_max,
        bounds.delta_t_r_max / NS,
        bounds.midrange.eps_g,
        bounds.midrange.eps_e
    );
    Ok(())
}

/// Pi-pulse amplitude calibration across the detection-time grid.
pub fn cmd_calibrate(cfg: &RunConfig, writer: &RunWriter) -> Result<()> {
    let system = cfg.system_params();
    let pipe = cfg.pipeline();
    let scheme = scheme_from_config(cfg, &system)?;
    let mut rows = Vec::new();
    for tau_ns in &cfg.protocol.tau_grid_ns {
        let tau = tau_ns * NS;
        let h = EffectiveHamiltonian::from_system(
            &system,
            pipe.n_levels_qubit,
            pipe.dark_magnon_levels,
        )
        .with_delta_s(scheme.delta_s);
        let channels =
            standard_channels(&system, pipe.n_levels_qubit, pipe.dark_magnon_levels)?;
        let template = pipe.schedule(&system, 0.0, 1.0, tau);
        let cal = magnon_qnd_core::pulses::calibrate_pi_amplitude(
            &system,
            &h,
            &channels,
            &template,
            &pipe.integrator,
        )?;
        rows.push(vec![*tau_ns, to_hz(cal.amplitude), cal.residual_p_g]);
    }
    writer.write_csv(
        "calibration.csv",
        &["tau_pi_ns", "omega_pi_hz", "residual_p_g"],
        &rows,
    )?;
    println!("calibrate: {} detection times written", rows.len());
    Ok(())
}

/// Closed-form qubit spectrum, optionally cross-checked against a simulated
/// Ramsey sequence.
pub fn cmd_spectrum(cfg: &RunConfig, writer: &RunWriter) -> Result<()> {
    let system = cfg.system_params();
    let pipe = cfg.pipeline();
    let sect = &cfg.spectrum;
    let delta_s = sect.delta_s_hz * std::f64::consts::TAU;

    let params = GambettaSpectrumParams {
        gamma_q: system.qubit.gamma_q(),
        gamma_m: system.magnon.gamma_m,
        chi_qm: system.chi_qm,
        delta_d: system.delta_d,
        n_bar_g: sect.n_bar,
    };
    let span = sect.span_hz * std::f64::consts::TAU;
    let grid: Vec<f64> = (0..sect.n_points)
        .map(|k| -span / 2.0 + span * k as f64 / (sect.n_points - 1) as f64)
        .collect();
    let s = gambetta_spectrum(&grid, &params, SpectrumFrame::Rotating { delta_s })?;
    let rows: Vec<Vec<f64>> =
        grid.iter().zip(&s).map(|(w, v)| vec![to_hz(*w), *v]).collect();
    writer.write_csv("spectrum.csv", &["omega_over_2pi_hz", "value"], &rows)?;

    if sect.simulate_ramsey {
        let h = EffectiveHamiltonian::from_system(&system, pipe.n_levels_qubit, 8)
            .with_delta_s(delta_s);
        let pi_dur = sect.pi_half_duration_ns * NS;
        // pi/2 amplitude from the pulse area: half the pi-pulse area over the
        // symmetric Ramsey pulse window.
        let probe = magnon_qnd_core::pulses::GaussianPulse::new(1.0, 0.0, pi_dur);
        let unit_area = probe.unit_area_within(-3.0 * pi_dur, 3.0 * pi_dur);
        let ramsey = RamseyConfig {
            delta_s,
            pi_half_duration: pi_dur,
            pi_half_amplitude: std::f64::consts::PI / (4.0 * unit_area),
            drive_amplitude: params.drive_amplitude(),
            settle_time: 500e-9,
            readout_delay: system.readout.delta_t_r,
        };
        let dt = sect.ramsey_dt_ns * NS;
        let n = (sect.ramsey_tau_max_us * 1e-6 / dt).round() as usize;
        let taus: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let series = ramsey_evolve(&system, &h, &ramsey, &taus[1..], &pipe.integrator)?;
        let mut full = vec![(0.0, series[0].1)];
        full.extend_from_slice(&series);
        let rows: Vec<Vec<f64>> = full.iter().map(|(t, p)| vec![t / NS, *p]).collect();
        writer.write_csv("ramsey.csv", &["tau_ns", "p_e"], &rows)?;

        let tau_axis: Vec<f64> = full.iter().map(|(t, _)| *t).collect();
        let p_axis: Vec<f64> = full.iter().map(|(_, p)| *p).collect();
        let (omega, spec) = normalized_fft_spectrum(&tau_axis, &p_axis)?;
        let rows: Vec<Vec<f64>> =
            omega.iter().zip(&spec).map(|(w, v)| vec![to_hz(*w), *v]).collect();
        writer.write_csv("ramsey_spectrum.csv", &["omega_over_2pi_hz", "value"], &rows)?;

        // Fit preprocessing: remove the mean so the zero-frequency component
        // does not leak into the peaks, and reference the transform phase to
        // the pulse centers (the precession effectively runs from the center
        // of the first pi/2 window to the center of the second, one window
        // beyond the nominal free-evolution time); otherwise the one-sided
        // transform mixes dispersion into the absorption lines. Fit on the
        // signed axis (rotating-frame peaks sit at negative detunings for
        // delta_s < 0).
        let mean = p_axis.iter().sum::<f64>() / p_axis.len() as f64;
        let centered: Vec<f64> = p_axis.iter().map(|p| p - mean).collect();
        let t_shift = 2.0 * magnon_qnd_core::pulses::SUPPORT_FACTOR * pi_dur;
        let n_tau = tau_axis.len();
        let dt_tau = tau_axis[1] - tau_axis[0];
        let mut omega_c = Vec::new();
        let mut spec_c = Vec::new();
        for k in 0..n_tau / 2 + 1 {
            let w = std::f64::consts::TAU * k as f64 / (n_tau as f64 * dt_tau);
            let s: f64 = centered
                .iter()
                .zip(&tau_axis)
                .map(|(c, t)| c * (w * (t + t_shift)).cos())
                .sum();
            omega_c.push(w);
            spec_c.push(s);
        }
        let smax = spec_c.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(1e-300);
        for s in &mut spec_c {
            *s /= smax;
        }
        let lo = 1.0e6 * std::f64::consts::TAU;
        let signed: Vec<f64> = omega_c.iter().filter(|w| **w > lo).map(|w| -*w).collect();
        let data: Vec<f64> =
            omega_c.iter().zip(&spec_c).filter(|(w, _)| **w > lo).map(|(_, v)| *v).collect();
        // Stage the fit: solve scale and offset exactly against the model at
        // the nominal parameters, then release everything.
        let guess = GambettaSpectrumParams {
            gamma_q: system.qubit.gamma_q(),
            gamma_m: system.magnon.gamma_m,
            chi_qm: system.chi_qm,
            delta_d: system.delta_d,
            n_bar_g: sect.n_bar.max(0.05),
        };
        let model0 = gambetta_spectrum(&signed, &guess, SpectrumFrame::Rotating { delta_s })?;
        let n = model0.len() as f64;
        let sm: f64 = model0.iter().sum();
        let smm: f64 = model0.iter().map(|m| m * m).sum();
        let sd: f64 = data.iter().sum();
        let smd: f64 = model0.iter().zip(&data).map(|(m, d)| m * d).sum();
        let det = smm * n - sm * sm;
        let (scale0, offset0) = if det.abs() > 1e-300 {
            ((smd * n - sm * sd) / det, (smm * sd - sm * smd) / det)
        } else {
            (1.0, 0.0)
        };
        let init = SpectrumFit {
            delta_s,
            gamma_m: system.magnon.gamma_m,
            chi_qm: system.chi_qm,
            n_bar: sect.n_bar.max(0.05),
            scale: scale0,
            offset: offset0,
            stderr: vec![],
            cost: 0.0,
            iterations: 0,
        };
        let fit = fit_spectrum(&signed, &data, system.qubit.gamma_q(), system.delta_d, &init)?;
        writer.write_json(
            "ramsey_fit.json",
            &json!({
                "delta_s_hz": to_hz(fit.delta_s),
                "gamma_m_hz": to_hz(fit.gamma_m),
                "chi_qm_hz": to_hz(fit.chi_qm),
                "n_bar": fit.n_bar,
                "cost": fit.cost,
            }),
        )?;
        println!(
            "spectrum: ramsey fit gamma_m {:.3} MHz, chi {:.3} MHz, n_bar {:.3}",
            to_hz(fit.gamma_m) / 1e6,
            to_hz(fit.chi_qm) / 1e6,
            fit.n_bar
        );
    } else {
        println!("spectrum: {} model points written", sect.n_points);
    }
    Ok(())
}

/// Compare a result file against a baseline with per-field tolerances.
pub fn cmd_compare(
    result_path: &std::path::Path,
    baseline_path: &std::path::Path,
    tol_path: Option<&std::path::Path>,
    abs: f64,
    rel: f64,
) -> Result<()> {
    let result: Value = serde_json::from_str(
        &std::fs::read_to_string(result_path)
            .with_context(|| format!("reading {}", result_path.display()))?,
    )?;
    let baseline: Value = serde_json::from_str(
        &std::fs::read_to_string(baseline_path)
            .with_context(|| format!("reading {}", baseline_path.display()))?,
    )?;
    let mut tol = match tol_path {
        Some(p) => serde_json::from_str(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => Tolerances::default(),
    };
    if tol_path.is_none() {
        tol.abs = abs;
        tol.rel = rel;
    }
    let violations = regression_compare(&result, &baseline, &tol)?;
    if violations.is_empty() {
        println!("compare: PASS ({} vs {})", result_path.display(), baseline_path.display());
        Ok(())
    } else {
        for v in &violations {
            println!(
                "compare: FAIL field {} = {} vs baseline {} (allowed abs {}, rel {})",
                v.field, v.result, v.baseline, v.allowed_abs, v.allowed_rel
            );
        }
        Err(anyhow!(
            "{}",
            serde_json::to_string(&json!({
                "error": "regression comparison failed",
                "violations": violations,
            }))
            .unwrap()
        ))
    }
}
