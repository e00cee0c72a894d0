//! Single-magnon detection protocols: conditional-excitation runs, weighted
//! magnon population, dark-count/efficiency extraction, the error budget, and
//! the improved-device projection.
//!
//! Detection probability model: a click is measuring the qubit in the scheme's
//! click state after the conditional excitation. Fitting the click probability
//! against 1 - exp(-n) (the probability of at least one magnon in a coherent
//! state) yields the quantum efficiency as the slope and the dark count as the
//! zero-drive point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evolve, standard_channels, DensityMatrix, EffectiveHamiltonian, Trajectory,
};
use crate::error::{Error, Result};
use crate::fit::linear_least_squares;
use crate::integrate::IntegratorConfig;
use crate::pulses::{calibrate_pi_amplitude, PulseSchedule};
use crate::readout::apply_readout_correction;
use crate::system::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickState {
    Ground,
    Excited,
}

/// A detection scheme: which qubit state counts as a click, and the control
/// detuning Delta_s = omega_q0 - omega_s of the conditional excitation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionScheme {
    pub click_state: ClickState,
    pub delta_s: f64,
    pub label: String,
}

impl DetectionScheme {
    /// X_pi^0: excite on magnon vacuum, click = ground state.
    pub fn at_least_one_magnon() -> Self {
        Self { click_state: ClickState::Ground, delta_s: 0.0, label: "x_pi_0".into() }
    }

    /// X_pi^1: excite at omega_q^1 = omega_q^0 + 2 chi, click = excited state.
    pub fn exactly_one_magnon(chi_qm: f64) -> Self {
        Self { click_state: ClickState::Excited, delta_s: -2.0 * chi_qm, label: "x_pi_1".into() }
    }

    /// Generalized scheme at an arbitrary control detuning; the click state is
    /// classified from the dark run (p_g(0) <= 1/2 clicks on ground).
    pub fn generalized(delta_s: f64, dark_p_g: f64) -> Self {
        let click_state =
            if dark_p_g <= 0.5 { ClickState::Ground } else { ClickState::Excited };
        Self { click_state, delta_s, label: "generalized".into() }
    }

    pub fn click_probability(&self, p_g_corrected: f64) -> f64 {
        match self.click_state {
            ClickState::Ground => p_g_corrected,
            ClickState::Excited => 1.0 - p_g_corrected,
        }
    }
}

/// Numerical knobs for the protocol pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_levels_qubit: usize,
    /// Magnon truncation for undriven (dark/calibration) runs.
    pub dark_magnon_levels: usize,
    /// Baseline magnon truncation for driven runs.
    pub base_magnon_levels: usize,
    /// Cap for the automatically raised driven-run truncation.
    pub max_magnon_levels: usize,
    pub n_amplitudes: usize,
    /// Weighted-population target of the strongest sweep point at the
    /// reference detection time.
    pub n_bar_max: f64,
    /// Reference detection time fixing the shared amplitude grid.
    pub tau_ref: f64,
    /// Envelope support half-width in units of the pulse duration.
    pub pulse_support_factor: f64,
    pub integrator: IntegratorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_levels_qubit: 3,
            dark_magnon_levels: 3,
            base_magnon_levels: 8,
            max_magnon_levels: 28,
            n_amplitudes: 8,
            n_bar_max: 1.5,
            tau_ref: 200e-9,
            pulse_support_factor: crate::pulses::LEAD_FACTOR,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Protocol schedule with this pipeline's support convention.
    pub fn schedule(
        &self,
        system: &SystemParams,
        omega_d: f64,
        omega_s: f64,
        tau_pi: f64,
    ) -> PulseSchedule {
        PulseSchedule::protocol_with_support(
            omega_d,
            system.tau_d,
            omega_s,
            tau_pi,
            system.readout.delta_t_r,
            self.pulse_support_factor,
        )
    }
}

/// Magnon population weighted by the qubit control envelope:
/// integral of n(t) Omega_s(t) dt over [0, t_r], normalized by the pulse
/// integral, by trapezoid on the trajectory grid.
pub fn weighted_magnon_population(traj: &Trajectory, schedule: &PulseSchedule) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::Grid("trajectory too short for quadrature".into()));
    }
    let t_r = schedule.t_r();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..traj.len() - 1 {
        let (t0, t1) = (traj.times[k], traj.times[k + 1]);
        if t0 >= t_r {
            break;
        }
        let dt = t1.min(t_r) - t0;
        let w0 = schedule.qubit.envelope(t0);
        let w1 = schedule.qubit.envelope(t1.min(t_r));
        num += 0.5 * dt * (traj.magnon[k] * w0 + traj.magnon[k + 1] * w1);
        den += 0.5 * dt * (w0 + w1);
    }
    if den <= 0.0 {
        return Err(Error::Grid(
            "qubit pulse has no overlap with the trajectory window".into(),
        ));
    }
    Ok(num / den)
}

/// Outcome of one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    /// Click probability after readout correction.
    pub p_click: f64,
    /// Corrected ground-state probability.
    pub p_g: f64,
    /// Folded ideal ground-state probability at the readout instant.
    pub p_tilde_g: f64,
    /// Weighted magnon population.
    pub n_bar: f64,
    /// Peak instantaneous magnon population (truncation diagnostics).
    pub peak_n_bar: f64,
    pub trajectory: Trajectory,
    pub schedule: PulseSchedule,
}

/// Run the full detection protocol: evolve, fold |f> into the excited branch,
/// apply the readout correction, and form the weighted magnon population.
pub fn run_protocol(
    system: &SystemParams,
    scheme: &DetectionScheme,
    omega_s_amplitude: f64,
    omega_d_amplitude: f64,
    tau_pi: f64,
    n_magnon_levels: usize,
    pipe: &PipelineConfig,
) -> Result<ProtocolOutcome> {
    let h = EffectiveHamiltonian::from_system(system, pipe.n_levels_qubit, n_magnon_levels)
        .with_delta_s(scheme.delta_s);
    let channels = standard_channels(system, pipe.n_levels_qubit, n_magnon_levels)?;
    let schedule = pipe.schedule(system, omega_d_amplitude, omega_s_amplitude, tau_pi);
    let rho0 = DensityMatrix::thermal_qubit_vacuum(
        system.qubit.eps_ini,
        pipe.n_levels_qubit,
        n_magnon_levels,
    );
    let grid = schedule.output_grid();
    let trajectory = evolve(&rho0, &schedule, &h, &channels, &grid, &pipe.integrator)?;
    let p_tilde_g = trajectory.folded_p_g(trajectory.len() - 1);
    let p_g = apply_readout_correction(p_tilde_g.clamp(0.0, 1.0), &system.readout)?;
    let n_bar = weighted_magnon_population(&trajectory, &schedule)?;
    let peak_n_bar = trajectory.magnon.iter().cloned().fold(0.0, f64::max);
    Ok(ProtocolOutcome {
        p_click: scheme.click_probability(p_g),
        p_g,
        p_tilde_g,
        n_bar,
        peak_n_bar,
        trajectory,
        schedule,
    })
}

/// Calibrate the pi-pulse amplitude for a scheme and detection time.
pub fn calibrate_amplitude(
    system: &SystemParams,
    scheme: &DetectionScheme,
    tau_pi: f64,
    pipe: &PipelineConfig,
) -> Result<f64> {
    let h = EffectiveHamiltonian::from_system(
        system,
        pipe.n_levels_qubit,
        pipe.dark_magnon_levels,
    )
    .with_delta_s(scheme.delta_s);
    let channels = standard_channels(system, pipe.n_levels_qubit, pipe.dark_magnon_levels)?;
    let template = pipe.schedule(system, 0.0, 1.0, tau_pi);
    let cal = calibrate_pi_amplitude(system, &h, &channels, &template, &pipe.integrator)?;
    Ok(cal.amplitude)
}

/// Shared drive-amplitude grid for efficiency sweeps, fixed at the reference
/// detection time, with a magnon truncation adequate for the peak population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPlan {
    /// Nonzero drive amplitudes, ascending (the dark point is implicit).
    pub amplitudes: Vec<f64>,
    pub n_magnon_levels: usize,
    /// Predicted peak instantaneous population at the strongest amplitude.
    pub predicted_peak: f64,
}

/// Solve for the amplitude grid reaching `n_bar_max` (weighted) at the
/// reference detection time. The magnon response is linear, so one probe run
/// plus one refinement run pin the scale.
pub fn plan_sweep(system: &SystemParams, pipe: &PipelineConfig) -> Result<SweepPlan> {
    let scheme = DetectionScheme::at_least_one_magnon();
    let amp = calibrate_amplitude(system, &scheme, pipe.tau_ref, pipe)?;

    let probe_amp = crate::units::from_mhz(0.5);
    let probe = run_protocol(
        system,
        &scheme,
        amp,
        probe_amp,
        pipe.tau_ref,
        pipe.base_magnon_levels,
        pipe,
    )?;
    if probe.n_bar <= 0.0 {
        return Err(Error::Inconsistent("probe run produced no magnon population".into()));
    }
    let mut omega_max = probe_amp * (pipe.n_bar_max / probe.n_bar).sqrt();
    let mut peak = probe.peak_n_bar * (omega_max / probe_amp).powi(2);
    let levels = levels_for_peak(peak, pipe);
    // One refinement at the solved amplitude with the adequate truncation.
    let refine = run_protocol(system, &scheme, amp, omega_max, pipe.tau_ref, levels, pipe)?;
    omega_max *= (pipe.n_bar_max / refine.n_bar).sqrt();
    peak = refine.peak_n_bar * (omega_max / refine.schedule.magnon.amplitude).powi(2);
    let n_magnon_levels = levels_for_peak(peak, pipe);

    let n = pipe.n_amplitudes;
    let amplitudes = (1..=n).map(|j| omega_max * j as f64 / n as f64).collect();
    Ok(SweepPlan { amplitudes, n_magnon_levels, predicted_peak: peak })
}

fn levels_for_peak(peak: f64, pipe: &PipelineConfig) -> usize {
    let needed = (peak + 5.0 * peak.sqrt() + 4.0).ceil() as usize;
    needed.clamp(pipe.base_magnon_levels, pipe.max_magnon_levels)
}

/// One sweep point: drive amplitude, weighted population, click probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub drive_amplitude: f64,
    pub n_bar: f64,
    pub p_click: f64,
}

/// Efficiency sweep: click probability against the weighted population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub scheme: String,
    pub click_state: ClickState,
    pub tau_pi: f64,
    pub points: Vec<SweepPoint>,
}

/// Run the amplitude sweep (the zero-amplitude dark point first, then the
/// plan's grid). Points run in parallel; ordering follows the grid.
pub fn run_sweep(
    system: &SystemParams,
    scheme: &DetectionScheme,
    omega_s_amplitude: f64,
    plan: &SweepPlan,
    tau_pi: f64,
    pipe: &PipelineConfig,
) -> Result<SweepResult> {
    let mut amplitudes = vec![0.0];
    amplitudes.extend_from_slice(&plan.amplitudes);
    let outcomes: Result<Vec<SweepPoint>> = amplitudes
        .par_iter()
        .map(|&omega_d| {
            let levels = if omega_d == 0.0 {
                pipe.dark_magnon_levels
            } else {
                plan.n_magnon_levels
            };
            let out =
                run_protocol(system, scheme, omega_s_amplitude, omega_d, tau_pi, levels, pipe)?;
            Ok(SweepPoint { drive_amplitude: omega_d, n_bar: out.n_bar, p_click: out.p_click })
        })
        .collect();
    Ok(SweepResult {
        scheme: scheme.label.clone(),
        click_state: scheme.click_state,
        tau_pi,
        points: outcomes?,
    })
}

/// Detector metrics for one scheme and detection time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub scheme: String,
    pub click_state: ClickState,
    pub tau_pi: f64,
    /// Click probability of the zero-drive run.
    pub dark_count: f64,
    /// Fitted slope against 1 - exp(-n_bar).
    pub efficiency: f64,
    pub efficiency_stderr: f64,
    /// Fitted intercept (consistency diagnostic against `dark_count`).
    pub intercept: f64,
    pub intercept_stderr: f64,
}

/// Fit click probability against 1 - exp(-n_bar) with intercept.
///
/// Both schemes use this single fitting function; for the exactly-one-magnon
/// scheme the click probability is p_e, whose slope is the negated slope of
/// the corresponding p_g data (the small-population identification).
pub fn fit_metrics(sweep: &SweepResult) -> Result<DetectorMetrics> {
    if sweep.points.len() < 3 {
        return Err(Error::Fit("need at least 3 sweep points".into()));
    }
    let dark = sweep
        .points
        .iter()
        .find(|p| p.drive_amplitude == 0.0)
        .ok_or_else(|| Error::Fit("sweep must include the zero-drive point".into()))?;
    let spread = sweep.points.iter().map(|p| p.n_bar).fold(f64::NEG_INFINITY, f64::max)
        - sweep.points.iter().map(|p| p.n_bar).fold(f64::INFINITY, f64::min);
    if spread < 1e-12 {
        return Err(Error::Fit("degenerate sweep: all populations equal".into()));
    }
    let n = sweep.points.len();
    let x = nalgebra::DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            1.0 - (-sweep.points[i].n_bar).exp()
        } else {
            1.0
        }
    });
    let y = nalgebra::DVector::from_fn(n, |i, _| sweep.points[i].p_click);
    let (beta, stderr, _) = linear_least_squares(&x, &y)?;
    Ok(DetectorMetrics {
        scheme: sweep.scheme.clone(),
        click_state: sweep.click_state,
        tau_pi: sweep.tau_pi,
        dark_count: dark.p_click,
        efficiency: beta[0],
        efficiency_stderr: stderr[0],
        intercept: beta[1],
        intercept_stderr: stderr[1],
    })
}

/// Calibrate, sweep, and fit one scheme at one detection time.
pub fn detect(
    system: &SystemParams,
    scheme: &DetectionScheme,
    plan: &SweepPlan,
    tau_pi: f64,
    pipe: &PipelineConfig,
) -> Result<(DetectorMetrics, SweepResult)> {
    let amp = calibrate_amplitude(system, scheme, tau_pi, pipe)?;
    let sweep = run_sweep(system, scheme, amp, plan, tau_pi, pipe)?;
    let metrics = fit_metrics(&sweep)?;
    Ok((metrics, sweep))
}

/// One error-budget row: metric shifts attributed to a source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetRow {
    pub source: String,
    pub delta_dark_count: f64,
    pub delta_inefficiency: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetReport {
    pub tau_pi: f64,
    pub full: DetectorMetrics,
    pub without_initialization: DetectorMetrics,
    pub without_decoherence: DetectorMetrics,
    pub without_readout: DetectorMetrics,
    pub entanglement_only: DetectorMetrics,
    pub rows: Vec<BudgetRow>,
}

/// System variants for the error budget. Removing the initialization error
/// empties the initial excited population only; the thermal channels stay
/// (the device temperature is unchanged).
pub fn without_initialization(system: &SystemParams) -> SystemParams {
    let mut s = system.clone();
    s.qubit.eps_ini = 0.0;
    s
}

pub fn without_decoherence(system: &SystemParams) -> SystemParams {
    let mut s = system.clone();
    s.qubit.t1 = f64::INFINITY;
    s.qubit.t2_star = f64::INFINITY;
    s
}

pub fn without_readout(system: &SystemParams) -> SystemParams {
    let mut s = system.clone();
    s.readout.eps_g = 0.0;
    s.readout.eps_e = 0.0;
    s
}

/// Error budget at a fixed detection time: rerun the full pipeline with each
/// error source disabled and difference the metrics. The entanglement error
/// is the inefficiency with initialization, decoherence, and readout errors
/// all disabled.
pub fn error_budget(
    system: &SystemParams,
    tau_pi: f64,
    pipe: &PipelineConfig,
) -> Result<BudgetReport> {
    let scheme = DetectionScheme::at_least_one_magnon();
    let plan = plan_sweep(system, pipe)?;

    let run = |sys: &SystemParams, amp: f64| -> Result<DetectorMetrics> {
        let sweep = run_sweep(sys, &scheme, amp, &plan, tau_pi, pipe)?;
        fit_metrics(&sweep)
    };

    let amp_full = calibrate_amplitude(system, &scheme, tau_pi, pipe)?;
    let full = run(system, amp_full)?;

    let sys_no_ini = without_initialization(system);
    let amp_no_ini = calibrate_amplitude(&sys_no_ini, &scheme, tau_pi, pipe)?;
    let no_ini = run(&sys_no_ini, amp_no_ini)?;

    let sys_no_dec = without_decoherence(system);
    let amp_no_dec = calibrate_amplitude(&sys_no_dec, &scheme, tau_pi, pipe)?;
    let no_dec = run(&sys_no_dec, amp_no_dec)?;

    // Readout errors do not enter the calibration or the dynamics.
    let sys_no_ro = without_readout(system);
    let no_ro = run(&sys_no_ro, amp_full)?;

    let sys_ent = without_readout(&without_decoherence(&without_initialization(system)));
    let amp_ent = calibrate_amplitude(&sys_ent, &scheme, tau_pi, pipe)?;
    let ent = run(&sys_ent, amp_ent)?;

    let rows = vec![
        BudgetRow {
            source: "initialization".into(),
            delta_dark_count: full.dark_count - no_ini.dark_count,
            delta_inefficiency: no_ini.efficiency - full.efficiency,
        },
        BudgetRow {
            source: "decoherence".into(),
            delta_dark_count: full.dark_count - no_dec.dark_count,
            delta_inefficiency: no_dec.efficiency - full.efficiency,
        },
        BudgetRow {
            source: "readout".into(),
            delta_dark_count: full.dark_count - no_ro.dark_count,
            delta_inefficiency: no_ro.efficiency - full.efficiency,
        },
        BudgetRow {
            source: "entanglement".into(),
            delta_dark_count: f64::NAN,
            delta_inefficiency: 1.0 - ent.efficiency,
        },
    ];
    Ok(BudgetReport {
        tau_pi,
        full,
        without_initialization: no_ini,
        without_decoherence: no_dec,
        without_readout: no_ro,
        entanglement_only: ent,
        rows,
    })
}

/// Metrics over a detection-time grid for the base device and the improved
/// device, sharing the amplitude grid (the magnon response is identical).
pub fn improved_device_projection(
    system: &SystemParams,
    tau_grid: &[f64],
    pipe: &PipelineConfig,
) -> Result<Vec<(f64, DetectorMetrics, DetectorMetrics)>> {
    let improved = system.improved_device();
    let plan = plan_sweep(system, pipe)?;
    let scheme = DetectionScheme::at_least_one_magnon();
    tau_grid
        .iter()
        .map(|&tau| {
            let amp_base = calibrate_amplitude(system, &scheme, tau, pipe)?;
            let base =
                fit_metrics(&run_sweep(system, &scheme, amp_base, &plan, tau, pipe)?)?;
            let amp_imp = calibrate_amplitude(&improved, &scheme, tau, pipe)?;
            let imp =
                fit_metrics(&run_sweep(&improved, &scheme, amp_imp, &plan, tau, pipe)?)?;
            Ok((tau, base, imp))
        })
        .collect()
}

/// One point of the generalized-detection frequency sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralizedPoint {
    /// Control frequency (rad/s).
    pub omega_s: f64,
    pub delta_s: f64,
    pub click_state: ClickState,
    pub dark_count: f64,
    pub efficiency: f64,
}

/// Sweep the control frequency with the pulse amplitude fixed from the
/// calibration at omega_s = omega_q0, classifying the click state per
/// frequency from the dark run.
pub fn generalized_sweep(
    system: &SystemParams,
    delta_s_grid: &[f64],
    tau_pi: f64,
    pipe: &PipelineConfig,
) -> Result<Vec<GeneralizedPoint>> {
    let reference = DetectionScheme::at_least_one_magnon();
    let amp = calibrate_amplitude(system, &reference, tau_pi, pipe)?;
    let plan = plan_sweep(system, pipe)?;
    delta_s_grid
        .iter()
        .map(|&delta_s| {
            let probe = DetectionScheme {
                click_state: ClickState::Ground,
                delta_s,
                label: "generalized".into(),
            };
            let dark = run_protocol(
                system,
                &probe,
                amp,
                0.0,
                tau_pi,
                pipe.dark_magnon_levels,
                pipe,
            )?;
            let scheme = DetectionScheme::generalized(delta_s, dark.p_g);
            let sweep = run_sweep(system, &scheme, amp, &plan, tau_pi, pipe)?;
            let metrics = fit_metrics(&sweep)?;
            Ok(GeneralizedPoint {
                omega_s: system.qubit.omega_q0 - delta_s,
                delta_s,
                click_state: scheme.click_state,
                dark_count: metrics.dark_count,
                efficiency: metrics.efficiency,
            })
        })
        .collect()
}

/// Remove the spurious efficiency from a measured sweep using the
/// no-conditional-excitation reference:
/// p_i(n) = p_i'(n) + (2 p_e - 1)(p_i0(n) - p_i0(0)).
pub fn spurious_efficiency_correction(
    p_prime: &SweepResult,
    p_zero: &SweepResult,
    qubit_polarization: f64,
) -> Result<SweepResult> {
    if p_prime.points.len() != p_zero.points.len() {
        return Err(Error::Grid("sweeps have different lengths".into()));
    }
    let base = p_zero
        .points
        .iter()
        .find(|p| p.drive_amplitude == 0.0)
        .ok_or_else(|| Error::Grid("reference sweep lacks the zero-drive point".into()))?
        .p_click;
    let points = p_prime
        .points
        .iter()
        .zip(&p_zero.points)
        .map(|(a, b)| {
            let scale = a.n_bar.abs().max(b.n_bar.abs()).max(1e-12);
            if (a.n_bar - b.n_bar).abs() > 1e-6 * scale {
                return Err(Error::Grid(format!(
                    "population grids disagree: {} vs {}",
                    a.n_bar, b.n_bar
                )));
            }
            Ok(SweepPoint {
                drive_amplitude: a.drive_amplitude,
                n_bar: a.n_bar,
                p_click: a.p_click + qubit_polarization * (b.p_click - base),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        scheme: p_prime.scheme.clone(),
        click_state: p_prime.click_state,
        tau_pi: p_prime.tau_pi,
        points,
    })
}
