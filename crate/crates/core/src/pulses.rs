//! Gaussian drive envelopes, protocol timing, and numerical pi-pulse
//! calibration.
//!
//! Envelopes follow Omega exp(-pi (t - t0)^2 / tau^2), whose untruncated area
//! is exactly Omega tau. A pulse of duration tau occupies a waveform slot of
//! exactly tau: the envelope is evaluated on [center - tau/2, center + tau/2]
//! and is zero outside, the way the generator plays it. In the standard
//! protocol the qubit pulse is delayed from the magnon pulse by
//! (tau_pi + tau_d)/2, so the slots abut, and the readout pulse starts at the
//! end of the qubit slot, t_s + tau_pi/2. The delay scan of the readout-error
//! bound and the dark-count budget both hinge on the pulse being complete
//! when the readout pulse starts.

use serde::{Deserialize, Serialize};

use crate::dynamics::{CollapseChannel, DriveOp, DriveTerm, EffectiveHamiltonian};
use crate::dynamics::{evolve_folded_ground_probability, DensityMatrix, DriveEnvelope};
use crate::error::{Error, Result};
use crate::integrate::IntegratorConfig;
use crate::system::SystemParams;

/// Standalone pulses evaluate their envelope out to 1.5 durations from the
/// center, where it has fallen below 1e-3 of peak.
pub const SUPPORT_FACTOR: f64 = 1.5;

/// Protocol pulses rise softly from this many durations before their center;
/// the trailing side is cut at the slot boundary half a duration past the
/// center, where the next waveform takes over the sequence.
pub const LEAD_FACTOR: f64 = 0.75;

/// Pure Gaussian envelope amplitude * exp(-pi (t-center)^2 / duration^2).
pub fn gaussian_envelope(t: f64, amplitude: f64, center: f64, duration: f64) -> f64 {
    let u = (t - center) / duration;
    amplitude * (-std::f64::consts::PI * u * u).exp()
}

/// A Gaussian pulse with finite, possibly asymmetric support: the waveform
/// plays on [center - support_before, center + support_after] and is zero
/// outside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPulse {
    pub amplitude: f64,
    pub center: f64,
    pub duration: f64,
    pub support_before: f64,
    pub support_after: f64,
}

impl GaussianPulse {
    /// Symmetric support of +-1.5 durations.
    pub fn new(amplitude: f64, center: f64, duration: f64) -> Self {
        Self {
            amplitude,
            center,
            duration,
            support_before: SUPPORT_FACTOR * duration,
            support_after: SUPPORT_FACTOR * duration,
        }
    }

    pub fn envelope(&self, t: f64) -> f64 {
        if t < self.center - self.support_before || t > self.center + self.support_after {
            0.0
        } else {
            gaussian_envelope(t, self.amplitude, self.center, self.duration)
        }
    }

    /// Untruncated analytic area amplitude * duration.
    pub fn area(&self) -> f64 {
        self.amplitude * self.duration
    }

    /// Area delivered on [t_min, t_max] for unit amplitude, by quadrature of
    /// the supported envelope.
    pub fn unit_area_within(&self, t_min: f64, t_max: f64) -> f64 {
        let a = t_min.max(self.center - self.support_before);
        let b = t_max.min(self.center + self.support_after);
        if b <= a {
            return 0.0;
        }
        // Composite Simpson on a fine grid.
        let n = 2000;
        let h = (b - a) / n as f64;
        let f = |t: f64| gaussian_envelope(t, 1.0, self.center, self.duration);
        let mut s = f(a) + f(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + k as f64 * h);
        }
        s * h / 3.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::InvalidParameter("pulse duration must be positive".into()));
        }
        if self.amplitude < 0.0 {
            return Err(Error::InvalidParameter("pulse amplitude must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Timed drive envelopes for the detection protocol plus the readout marker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub magnon: GaussianPulse,
    pub qubit: GaussianPulse,
    /// Start of the readout pulse.
    pub readout_start: f64,
    /// Delay between readout-pulse start and the effective measurement.
    pub delta_t_r: f64,
}

impl PulseSchedule {
    /// Standard protocol: the qubit pulse is delayed from the magnon pulse by
    /// (tau_pi + tau_d)/2, so each waveform's nominal slot ends where the
    /// next begins; the readout pulse starts at the end of the qubit slot.
    /// Each envelope has a soft leading edge (played from 1.5 durations
    /// before its center) and is cut at its slot end, where the next waveform
    /// takes over the channel. t = 0 is where the magnon envelope begins.
    pub fn protocol(
        omega_d: f64,
        tau_d: f64,
        omega_s: f64,
        tau_pi: f64,
        delta_t_r: f64,
    ) -> Self {
        Self::protocol_with_support(omega_d, tau_d, omega_s, tau_pi, delta_t_r, LEAD_FACTOR)
    }

    /// Standard protocol with an explicit leading-edge support (in units of
    /// the duration). Trailing edges stay at the slot boundaries (half a
    /// duration past each center).
    pub fn protocol_with_support(
        omega_d: f64,
        tau_d: f64,
        omega_s: f64,
        tau_pi: f64,
        delta_t_r: f64,
        lead_factor: f64,
    ) -> Self {
        let lead = lead_factor.max(0.5);
        let t_d = lead * tau_d;
        let t_s = t_d + (tau_pi + tau_d) / 2.0;
        let mut magnon = GaussianPulse::new(omega_d, t_d, tau_d);
        magnon.support_before = lead * tau_d;
        magnon.support_after = 0.5 * tau_d;
        let mut qubit = GaussianPulse::new(omega_s, t_s, tau_pi);
        qubit.support_before = lead * tau_pi;
        qubit.support_after = 0.5 * tau_pi;
        Self { magnon, qubit, readout_start: t_s + tau_pi / 2.0, delta_t_r }
    }

    /// Effective measurement instant.
    pub fn t_r(&self) -> f64 {
        self.readout_start + self.delta_t_r
    }

    /// Whether the schedule satisfies the standard relative timing
    /// t_s - t_d = (tau_pi + tau_d)/2.
    pub fn has_protocol_timing(&self) -> bool {
        let expected = (self.qubit.duration + self.magnon.duration) / 2.0;
        ((self.qubit.center - self.magnon.center) - expected).abs() < 1e-15
    }

    pub fn validate(&self) -> Result<()> {
        self.magnon.validate()?;
        self.qubit.validate()?;
        if self.delta_t_r < 0.0 {
            return Err(Error::InvalidParameter("readout delay must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn with_qubit_amplitude(mut self, omega_s: f64) -> Self {
        self.qubit.amplitude = omega_s;
        self
    }

    pub fn with_magnon_amplitude(mut self, omega_d: f64) -> Self {
        self.magnon.amplitude = omega_d;
        self
    }

    /// Drive terms for the Lindblad generator.
    pub fn drive_terms(&self) -> Vec<DriveTerm> {
        vec![
            DriveTerm {
                envelope: DriveEnvelope::Gaussian(self.magnon.clone()),
                op: DriveOp::Magnon,
            },
            DriveTerm {
                envelope: DriveEnvelope::Gaussian(self.qubit.clone()),
                op: DriveOp::Qubit,
            },
        ]
    }

    /// Uniform output grid from 0 to t_r, resolving the shortest pulse.
    pub fn output_grid(&self) -> Vec<f64> {
        let dt = (self.qubit.duration / 40.0).clamp(0.1e-9, 1.0e-9);
        let t_r = self.t_r();
        let n = (t_r / dt).ceil() as usize;
        let mut grid: Vec<f64> = (0..=n).map(|k| k as f64 * t_r / n as f64).collect();
        // Guard against roundoff on the last point.
        *grid.last_mut().unwrap() = t_r;
        grid
    }
}

/// Mean magnon number from the displacement calibration, (lambda A_d)^2.
pub fn displacement_amplitude_for_population(lambda: f64, a_d: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    if a_d < 0.0 {
        return Err(Error::InvalidParameter("drive amplitude must be nonnegative".into()));
    }
    Ok((lambda * a_d) * (lambda * a_d))
}

/// Result of the pi-amplitude calibration.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationResult {
    /// Calibrated drive amplitude (rad/s).
    pub amplitude: f64,
    /// Residual ground-state probability at the readout instant.
    pub residual_p_g: f64,
}

/// Calibrate the qubit pulse amplitude by minimizing the folded ground-state
/// probability p~_g(t_r) of a protocol run on the given schedule with the
/// magnon drive off.
///
/// Golden-section search around the two-level area estimate
/// pi / (2 * delivered area), to 1e-4 relative tolerance.
pub fn calibrate_pi_amplitude(
    system: &SystemParams,
    hamiltonian: &EffectiveHamiltonian,
    channels: &[CollapseChannel],
    template: &PulseSchedule,
    integ: &IntegratorConfig,
) -> Result<CalibrationResult> {
    let schedule = template.clone().with_magnon_amplitude(0.0);
    schedule.validate()?;
    // Area the envelope delivers before the measurement instant, per unit
    // amplitude: centers the bracket even when the pulse is cut by t_r.
    let delivered = schedule.qubit.unit_area_within(0.0, schedule.t_r());
    if delivered <= 0.0 {
        return Err(Error::Bracket("qubit pulse has no support before t_r".into()));
    }
    let omega_guess = std::f64::consts::PI / (2.0 * delivered);

    let rho0 = DensityMatrix::thermal_qubit_vacuum(
        system.qubit.eps_ini,
        hamiltonian.n_qubit,
        hamiltonian.n_magnon,
    );
    let objective = |omega: f64| -> Result<f64> {
        let s = schedule.clone().with_qubit_amplitude(omega);
        evolve_folded_ground_probability(&rho0, &s, hamiltonian, channels, integ)
    };

    // Short strong pulses shift the transition (Stark shift off the higher
    // transmon levels), pushing the optimum well above the two-level area
    // estimate; bracket generously but stay below the 3 pi area.
    let (mut a, mut b) = (0.5 * omega_guess, 2.5 * omega_guess);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = objective(x1)?;
    let mut f2 = objective(x2)?;
    while (b - a) > 1e-4 * omega_guess {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = objective(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = objective(x2)?;
        }
    }
    let (amplitude, residual_p_g) = if f1 < f2 { (x1, f1) } else { (x2, f2) };
    let edge = ((amplitude - 0.5 * omega_guess) / omega_guess)
        .min((2.5 * omega_guess - amplitude) / omega_guess);
    if edge < 0.005 {
        return Err(Error::Bracket(format!(
            "calibrated amplitude sits at the bracket edge (found {:.3e} rad/s, \
             estimate {:.3e} rad/s)",
            amplitude, omega_guess
        )));
    }
    Ok(CalibrationResult { amplitude, residual_p_g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn envelope_peak_and_plug_in_values() {
        let (amp, c, tau) = (2.5e6, 100e-9, 40e-9);
        assert_relative_eq!(gaussian_envelope(c, amp, c, tau), amp);
        let edge = gaussian_envelope(c + tau, amp, c, tau);
        assert_relative_eq!(edge, amp * (-std::f64::consts::PI).exp(), max_relative = 1e-12);
    }

    #[test]
    fn envelope_area_is_amplitude_times_duration() {
        // Quadrature oracle over +-5 durations.
        let (amp, c, tau) = (3.7e6, 0.0, 120e-9);
        let n = 200_000;
        let (lo, hi) = (c - 5.0 * tau, c + 5.0 * tau);
        let h = (hi - lo) / n as f64;
        let mut area = 0.0;
        for k in 0..n {
            let t0 = lo + k as f64 * h;
            area += 0.5 * h * (gaussian_envelope(t0, amp, c, tau) + gaussian_envelope(t0 + h, amp, c, tau));
        }
        assert_relative_eq!(area, amp * tau, max_relative = 1e-6);
    }

    #[test]
    fn envelope_symmetry() {
        let p = GaussianPulse::new(1.0, 55e-9, 30e-9);
        for k in 1..50 {
            let d = k as f64 * 1e-9;
            assert_relative_eq!(
                p.envelope(p.center + d),
                p.envelope(p.center - d),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn protocol_timing_invariant() {
        let s = PulseSchedule::protocol(1.0, 200e-9, 1.0, 120e-9, 31e-9);
        assert!(s.has_protocol_timing());
        assert_relative_eq!(s.qubit.center - s.magnon.center, (120e-9 + 200e-9) / 2.0);
        // Readout pulse begins where the qubit pulse's nominal window ends.
        assert_relative_eq!(s.readout_start, s.qubit.center + 60e-9);
        assert_relative_eq!(s.t_r(), s.readout_start + 31e-9);
    }

    #[test]
    fn protocol_support_windows() {
        // Symmetric standalone pulse: +-1.5 durations.
        let p = GaussianPulse::new(1.0, 0.0, 100e-9);
        assert_eq!(p.envelope(151e-9), 0.0);
        assert!(p.envelope(149e-9) > 0.0);
        assert_eq!(p.envelope(-151e-9), 0.0);

        // Protocol pulses: soft leading edge, cut at the slot end where the
        // next waveform takes over.
        let s = PulseSchedule::protocol(1.0, 200e-9, 1.0, 100e-9, 31e-9);
        let q = &s.qubit;
        assert!(q.envelope(q.center - 0.99 * LEAD_FACTOR * q.duration) > 0.0);
        assert_eq!(q.envelope(q.center - 1.01 * LEAD_FACTOR * q.duration), 0.0);
        assert!(q.envelope(q.center + 0.49 * q.duration) > 0.0);
        assert_eq!(q.envelope(q.center + 0.51 * q.duration), 0.0);
        // The slot-end cut leaves exp(-pi/4) of peak.
        assert_relative_eq!(
            q.envelope(q.center + 0.4999 * q.duration),
            (-std::f64::consts::PI / 4.0).exp(),
            max_relative = 1e-3
        );
    }

    #[test]
    fn displacement_population_examples() {
        assert_relative_eq!(displacement_amplitude_for_population(5.0, 0.0).unwrap(), 0.0);
        // lambda = 5.0 sqrt(magnons)/V at A_d = 0.2 V gives one magnon.
        assert_relative_eq!(displacement_amplitude_for_population(5.0, 0.2).unwrap(), 1.0);
        let n1 = displacement_amplitude_for_population(5.0, 0.1).unwrap();
        let n2 = displacement_amplitude_for_population(5.0, 0.2).unwrap();
        assert_relative_eq!(n2, 4.0 * n1);
        assert!(displacement_amplitude_for_population(0.0, 0.1).is_err());
    }
}
