//! Closed-form spectrum models and fits: cavity transmission across the
//! magnon avoided crossing, the dressed-dephasing qubit spectrum under a
//! continuous magnon drive, Ramsey FFT normalization, the pulse-convolved
//! calibration spectrum, and the magnon-population/lifetime calibrations.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, FitOptions};

/// Cavity-transmission model parameters (all rad/s).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransmissionModelParams {
    pub omega_c: f64,
    pub kappa_c: f64,
    pub kappa_in: f64,
    pub kappa_out: f64,
    pub omega_m: f64,
    pub gamma_m: f64,
    pub g_mc: f64,
}

/// Normalized transmission amplitude |t|/|t0| of the cavity mode coupled to
/// the Kittel mode:
/// (kappa_c/2) / |i(w - w_c) - kappa_c/2 + |g|^2 / (i(w - w_m) - gamma_m/2)|.
pub fn cavity_transmission(omega: f64, p: &TransmissionModelParams) -> Result<f64> {
    if !(p.gamma_m > 0.0) {
        return Err(Error::InvalidParameter("gamma_m must be positive".into()));
    }
    let denom = C64::new(-p.kappa_c / 2.0, omega - p.omega_c)
        + C64::new(p.g_mc * p.g_mc, 0.0) / C64::new(-p.gamma_m / 2.0, omega - p.omega_m);
    Ok((p.kappa_c / 2.0) / denom.norm())
}

/// Per-current fit of the avoided-crossing transmission spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct CrossingLineFit {
    pub current: f64,
    pub omega_c: f64,
    pub omega_m: f64,
    pub gamma_m: f64,
    pub g_mc: f64,
}

/// Coil calibration from transmission spectra at several coil currents:
/// per-current fits of (omega_c, omega_m, gamma_m, g) with kappa_c fixed,
/// then a linear fit omega_m(I) = omega_m(0) + xi I.
pub struct CoilCalibration {
    pub lines: Vec<CrossingLineFit>,
    pub omega_m0: f64,
    pub xi: f64,
}

pub fn fit_avoided_crossing(
    spectra: &[(f64, Vec<(f64, f64)>)],
    kappa_c: f64,
    kappa_in: f64,
    kappa_out: f64,
    init: &TransmissionModelParams,
) -> Result<CoilCalibration> {
    if spectra.len() < 2 {
        return Err(Error::Fit("need at least two coil currents".into()));
    }
    // Fit in MHz relative to the initial cavity frequency; mixing rad/s
    // frequencies with MHz-scale linewidths conditions the Jacobian badly.
    let reference = init.omega_c;
    let mhz = crate::units::from_mhz(1.0);
    let lines: Result<Vec<CrossingLineFit>> = spectra
        .iter()
        .map(|(current, data)| {
            let p0 = [
                0.0,
                (init.omega_m - reference) / mhz,
                init.gamma_m / mhz,
                init.g_mc.abs() / mhz,
            ];
            let fit = levenberg_marquardt(
                |p| {
                    let model = TransmissionModelParams {
                        omega_c: reference + p[0] * mhz,
                        kappa_c,
                        kappa_in,
                        kappa_out,
                        omega_m: reference + p[1] * mhz,
                        gamma_m: (p[2] * mhz).abs().max(1.0),
                        g_mc: p[3] * mhz,
                    };
                    data.iter()
                        .map(|(w, t)| cavity_transmission(*w, &model).unwrap_or(f64::NAN) - t)
                        .collect()
                },
                &p0,
                &FitOptions::default(),
            )?;
            Ok(CrossingLineFit {
                current: *current,
                omega_c: reference + fit.params[0] * mhz,
                omega_m: reference + fit.params[1] * mhz,
                gamma_m: (fit.params[2] * mhz).abs(),
                g_mc: (fit.params[3] * mhz).abs(),
            })
        })
        .collect();
    let lines = lines?;
    // Linear regression of the Kittel frequency against the coil current.
    let n = lines.len();
    let x = nalgebra::DMatrix::from_fn(n, 2, |i, j| if j == 0 { lines[i].current } else { 1.0 });
    let y = nalgebra::DVector::from_fn(n, |i, _| lines[i].omega_m);
    let (beta, _, _) = crate::fit::linear_least_squares(&x, &y)?;
    Ok(CoilCalibration { lines, omega_m0: beta[1], xi: beta[0] })
}

/// Parameters of the dressed-dephasing (number-splitting) qubit spectrum
/// under a continuous magnon drive. All rates rad/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GambettaSpectrumParams {
    pub gamma_q: f64,
    pub gamma_m: f64,
    pub chi_qm: f64,
    pub delta_d: f64,
    /// Steady-state magnon population with the qubit in the ground state.
    pub n_bar_g: f64,
}

/// Frequency reference for the spectrum axis.
#[derive(Debug, Clone, Copy)]
pub enum SpectrumFrame {
    /// Axis is the detuning from the control frequency; peaks at
    /// Delta_s^{n} = Delta_s + n (2 chi + Delta_d) + d_omega_q.
    Rotating { delta_s: f64 },
    /// Lab-frame axis; peaks at omega_q^{n}.
    Lab { omega_q0: f64 },
}

/// Derived spectrum quantities.
#[derive(Debug, Clone)]
pub struct GambettaDerived {
    pub n_bar_e: f64,
    pub dephasing_parameter: f64, // D
    pub poissonian_weight: C64,   // A
    pub continuous_stark_shift: f64,
}

impl GambettaSpectrumParams {
    /// Population from the drive amplitude: n_g = Omega^2 / ((g/2)^2 + D_d^2).
    pub fn from_drive(
        omega_d: f64,
        gamma_q: f64,
        gamma_m: f64,
        chi_qm: f64,
        delta_d: f64,
    ) -> Self {
        let n_bar_g = omega_d * omega_d / ((gamma_m / 2.0).powi(2) + delta_d * delta_d);
        Self { gamma_q, gamma_m, chi_qm, delta_d, n_bar_g }
    }

    /// Drive amplitude implied by the stored population.
    pub fn drive_amplitude(&self) -> f64 {
        (self.n_bar_g * ((self.gamma_m / 2.0).powi(2) + self.delta_d * self.delta_d)).sqrt()
    }

    pub fn derived(&self) -> GambettaDerived {
        let half_g = self.gamma_m / 2.0;
        let ratio = (half_g * half_g + self.delta_d * self.delta_d)
            / (half_g * half_g + (self.delta_d + 2.0 * self.chi_qm).powi(2));
        let n_bar_e = self.n_bar_g * ratio;
        let d = 2.0 * (self.n_bar_g + n_bar_e) * self.chi_qm * self.chi_qm
            / (half_g * half_g
                + self.chi_qm * self.chi_qm
                + (self.chi_qm + self.delta_d).powi(2));
        let two_chi_pd = 2.0 * self.chi_qm + self.delta_d;
        let a = C64::new(d, 0.0) * C64::new(half_g, -two_chi_pd) / C64::new(half_g, two_chi_pd);
        let stark = self.chi_qm * (self.n_bar_g + n_bar_e - d);
        GambettaDerived {
            n_bar_e,
            dephasing_parameter: d,
            poissonian_weight: a,
            continuous_stark_shift: stark,
        }
    }

    /// Linewidth of the qubit with the Kittel mode in Fock state n.
    pub fn linewidth(&self, n: usize, derived: &GambettaDerived) -> f64 {
        self.gamma_q + self.gamma_m * (n as f64 + derived.dephasing_parameter)
    }

    /// Center of the Fock-n peak on the given frame's axis.
    pub fn peak_center(&self, n: usize, derived: &GambettaDerived, frame: SpectrumFrame) -> f64 {
        let shift = n as f64 * (2.0 * self.chi_qm + self.delta_d) + derived.continuous_stark_shift;
        match frame {
            SpectrumFrame::Rotating { delta_s } => delta_s + shift,
            SpectrumFrame::Lab { omega_q0 } => omega_q0 + shift,
        }
    }
}

/// Dressed-dephasing spectrum: the real part of the Fock sum of complex
/// Lorentzians, with the sum truncated once a term falls below 1e-10 of the
/// accumulated weight.
pub fn gambetta_spectrum(
    omega: &[f64],
    params: &GambettaSpectrumParams,
    frame: SpectrumFrame,
) -> Result<Vec<f64>> {
    let derived = params.derived();
    let a = derived.poissonian_weight;
    if !a.is_finite() {
        return Err(Error::Fit("non-finite Poissonian weight".into()));
    }
    let e_a = a.exp();
    // Term weights w_n = (-A)^n e^A / n!.
    let mut weights: Vec<C64> = Vec::new();
    let mut w = e_a;
    let mut accumulated = 0.0;
    for n in 0..400 {
        if !w.is_finite() {
            return Err(Error::Fit(format!("Fock-sum term {n} diverged")));
        }
        weights.push(w);
        accumulated += w.norm();
        let next = w * (-a) / C64::new((n + 1) as f64, 0.0);
        if next.norm() < 1e-10 * accumulated && (n as f64) > params.n_bar_g {
            break;
        }
        w = next;
    }

    let mut s = vec![0.0; omega.len()];
    for (n, w_n) in weights.iter().enumerate() {
        let center = params.peak_center(n, &derived, frame);
        let half_width = params.linewidth(n, &derived) / 2.0;
        for (k, &x) in omega.iter().enumerate() {
            let lorentz = C64::new(1.0, 0.0) / C64::new(half_width, -(x - center));
            s[k] += (w_n * lorentz).re / std::f64::consts::PI;
        }
    }
    Ok(s)
}

/// Real part of the discrete Fourier transform of p_e(tau), normalized by its
/// maximum. Returns (angular frequencies, S) one-sided.
pub fn normalized_fft_spectrum(taus: &[f64], p_e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if taus.len() != p_e.len() || taus.len() < 4 {
        return Err(Error::Grid("series too short or mismatched".into()));
    }
    let dt = taus[1] - taus[0];
    if dt <= 0.0 {
        return Err(Error::Grid("tau grid must increase".into()));
    }
    for w in taus.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::Grid("tau grid must be uniform".into()));
        }
    }
    let n = taus.len();
    let n_freq = n / 2 + 1;
    let mut omegas = Vec::with_capacity(n_freq);
    let mut spectrum = Vec::with_capacity(n_freq);
    for k in 0..n_freq {
        let w = std::f64::consts::TAU * k as f64 / (n as f64 * dt);
        let mut acc = 0.0;
        for (j, &p) in p_e.iter().enumerate() {
            acc += p * (w * (taus[j] - taus[0])).cos();
        }
        omegas.push(w);
        spectrum.push(acc);
    }
    let max = spectrum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Fit("spectrum has no positive maximum".into()));
    }
    for s in &mut spectrum {
        *s /= max;
    }
    Ok((omegas, spectrum))
}

/// Number-splitting spectrum fit result.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumFit {
    pub delta_s: f64,
    pub gamma_m: f64,
    pub chi_qm: f64,
    pub n_bar: f64,
    pub scale: f64,
    pub offset: f64,
    pub stderr: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
}

/// Fit S(omega) = scale * s(omega) + offset with gamma_q and delta_d fixed;
/// free parameters: delta_s, gamma_m, chi, n_bar, scale, offset.
pub fn fit_spectrum(
    omega: &[f64],
    s_data: &[f64],
    gamma_q: f64,
    delta_d: f64,
    init: &SpectrumFit,
) -> Result<SpectrumFit> {
    if omega.len() != s_data.len() {
        return Err(Error::Grid("data grids mismatch".into()));
    }
    // Frequencies handled in MHz inside the fit for conditioning; the scale
    // parameter absorbs the spectrum's 1/(rad/s) units so it stays O(1).
    let mhz = crate::units::from_mhz(1.0);
    let p0 = [
        init.delta_s / mhz,
        init.gamma_m / mhz,
        init.chi_qm / mhz,
        init.n_bar,
        init.scale / mhz,
        init.offset,
    ];
    let res = levenberg_marquardt(
        |p| {
            if p[1] <= 0.0 || p[3] < 0.0 {
                return vec![1e6; omega.len()];
            }
            let params = GambettaSpectrumParams {
                gamma_q,
                gamma_m: p[1] * mhz,
                chi_qm: p[2] * mhz,
                delta_d,
                n_bar_g: p[3],
            };
            match gambetta_spectrum(
                omega,
                &params,
                SpectrumFrame::Rotating { delta_s: p[0] * mhz },
            ) {
                Ok(model) => model
                    .iter()
                    .zip(s_data)
                    .map(|(m, d)| p[4] * m * mhz + p[5] - d)
                    .collect(),
                Err(_) => vec![1e6; omega.len()],
            }
        },
        &p0,
        &FitOptions::default(),
    )?;
    Ok(SpectrumFit {
        delta_s: res.params[0] * mhz,
        gamma_m: res.params[1] * mhz,
        chi_qm: res.params[2] * mhz,
        n_bar: res.params[3],
        scale: res.params[4] * mhz,
        offset: res.params[5],
        stderr: res.stderr,
        cost: res.cost,
        iterations: res.iterations,
    })
}

/// Convolve the lab-frame spectrum with the Gaussian pulse spectrum
/// s_pi(w, w_s) = exp(-tau^2 (w - w_s)^2 / 4 pi), kernel normalized to unit
/// integral, by direct quadrature on a fine grid; returns
/// p_e(w_s) = visibility * conv(w_s) + floor, with the convolved spectrum
/// normalized to unit maximum over the requested grid.
pub fn convolved_calibration_spectrum(
    omega_s: &[f64],
    params: &GambettaSpectrumParams,
    omega_q0: f64,
    tau_pi_tilde: f64,
    visibility: f64,
    floor: f64,
) -> Result<Vec<f64>> {
    if !(tau_pi_tilde > 0.0) {
        return Err(Error::InvalidParameter("pulse duration must be positive".into()));
    }
    let raw = convolve_lab_spectrum(omega_s, params, omega_q0, tau_pi_tilde)?;
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Fit("convolved spectrum vanished".into()));
    }
    Ok(raw.iter().map(|v| visibility * v / max + floor).collect())
}

fn convolve_lab_spectrum(
    omega_s: &[f64],
    params: &GambettaSpectrumParams,
    omega_q0: f64,
    tau_pi_tilde: f64,
) -> Result<Vec<f64>> {
    // Kernel width sqrt(2 pi)/tau; spectral extent from the outermost peaks.
    let derived = params.derived();
    let kernel_sigma = (2.0 * std::f64::consts::PI).sqrt() / tau_pi_tilde;
    let n_max = (params.n_bar_g + 6.0 * params.n_bar_g.sqrt() + 6.0).ceil() as usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for n in 0..=n_max {
        let c = params.peak_center(n, &derived, SpectrumFrame::Lab { omega_q0 });
        let w = params.linewidth(n, &derived);
        lo = lo.min(c - 20.0 * w);
        hi = hi.max(c + 20.0 * w);
    }
    let lo = lo.min(omega_s.iter().cloned().fold(f64::INFINITY, f64::min)) - 6.0 * kernel_sigma;
    let hi =
        hi.max(omega_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)) + 6.0 * kernel_sigma;
    // Grid 10x finer than the narrowest feature.
    let step = (params.gamma_q.min(kernel_sigma) / 10.0).max((hi - lo) / 400_000.0);
    let n_fine = ((hi - lo) / step).ceil() as usize + 1;
    let fine: Vec<f64> = (0..n_fine).map(|k| lo + k as f64 * step).collect();
    let s_fine = gambetta_spectrum(&fine, params, SpectrumFrame::Lab { omega_q0 })?;

    let tau2 = tau_pi_tilde * tau_pi_tilde;
    let norm = tau_pi_tilde / (2.0 * std::f64::consts::PI);
    Ok(omega_s
        .iter()
        .map(|&ws| {
            let mut acc = 0.0;
            for (k, &w) in fine.iter().enumerate() {
                let d = w - ws;
                let kern = (-tau2 * d * d / (4.0 * std::f64::consts::PI)).exp();
                acc += s_fine[k] * kern;
            }
            acc * step * norm
        })
        .collect())
}

/// Fit of the convolved calibration spectrum to p_e(omega_s) data. Fixed:
/// gamma_q, gamma_m, chi, delta_d, omega_q0. Free: n_bar, visibility, floor,
/// pulse duration.
#[derive(Debug, Clone, Serialize)]
pub struct ConvolvedCalibrationFit {
    pub n_bar: f64,
    pub visibility: f64,
    pub floor: f64,
    pub tau_pi_tilde: f64,
    pub stderr: Vec<f64>,
    pub cost: f64,
}

pub fn fit_convolved_calibration(
    omega_s: &[f64],
    p_e_data: &[f64],
    template: &GambettaSpectrumParams,
    omega_q0: f64,
    init: &ConvolvedCalibrationFit,
) -> Result<ConvolvedCalibrationFit> {
    if omega_s.len() != p_e_data.len() {
        return Err(Error::Grid("data grids mismatch".into()));
    }
    let p0 = [init.n_bar, init.visibility, init.floor, init.tau_pi_tilde];
    let res = levenberg_marquardt(
        |p| {
            if p[0] < 0.0 || p[3] <= 0.0 {
                return vec![1e6; omega_s.len()];
            }
            let params = GambettaSpectrumParams { n_bar_g: p[0], ..template.clone() };
            match convolved_calibration_spectrum(omega_s, &params, omega_q0, p[3], p[1], p[2]) {
                Ok(model) => model.iter().zip(p_e_data).map(|(m, d)| m - d).collect(),
                Err(_) => vec![1e6; omega_s.len()],
            }
        },
        &p0,
        &FitOptions { max_iterations: 120, ..FitOptions::default() },
    )?;
    Ok(ConvolvedCalibrationFit {
        n_bar: res.params[0],
        visibility: res.params[1],
        floor: res.params[2],
        tau_pi_tilde: res.params[3],
        stderr: res.stderr,
        cost: res.cost,
    })
}

/// Result of the lambda(tau_pi) decay fit.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaDecayFit {
    pub lambda0: f64,
    /// Magnon lifetime from lambda(tau) = lambda(0) exp(-tau/(4 T1m)).
    pub t1_m: f64,
    pub stderr: Vec<f64>,
}

/// Fit lambda(tau_pi) = lambda(0) exp(-tau_pi / (4 T1m)); the factor 4
/// combines lambda ~ sqrt(n) with the pulse timing, where only the front end
/// of the qubit pulse extends the delay.
pub fn fit_lambda_decay(taus: &[f64], lambdas: &[f64]) -> Result<LambdaDecayFit> {
    if taus.len() != lambdas.len() || taus.len() < 3 {
        return Err(Error::Fit("need at least 3 points".into()));
    }
    // Fit the rate k = 1/(4 T1m) so a growing trend lands smoothly at k < 0
    // instead of stalling against the pole at T1m = 0.
    let tau_scale = taus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p0 = [lambdas[0], 1.0 / tau_scale];
    let res = levenberg_marquardt(
        |p| {
            taus.iter()
                .zip(lambdas)
                .map(|(t, l)| p[0] * (-t * p[1]).exp() - l)
                .collect()
        },
        &p0,
        &FitOptions::default(),
    )?;
    let k = res.params[1];
    if !(k > 0.0) {
        return Err(Error::Fit(format!(
            "non-positive fitted magnon lifetime (rate {k:.3e} 1/s)"
        )));
    }
    let t1_m = 1.0 / (4.0 * k);
    let stderr_t = res.stderr[1] / (4.0 * k * k);
    Ok(LambdaDecayFit { lambda0: res.params[0], t1_m, stderr: vec![res.stderr[0], stderr_t] })
}

/// One displacement-response line: delta_v against drive amplitude at a fixed
/// excitation frequency.
#[derive(Debug, Clone)]
pub struct SpectroscopyLine {
    pub omega_d: f64,
    /// (A_d, delta_v) samples.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectroscopyFit {
    /// (omega_d, lambda^2) for every fitted frequency.
    pub lambda_sq: Vec<(f64, f64)>,
    /// Frequencies skipped inside the e-f exclusion window.
    pub skipped: Vec<f64>,
    /// Kittel line center from the Gaussian fit of lambda^2(omega_d).
    pub line_center: f64,
    pub line_center_stderr: f64,
}

/// Qubit-assisted spectroscopy: per-frequency fits of
/// delta_v = delta_v_e exp(-(lambda A_d)^2), then a Gaussian-plus-offset fit
/// of lambda^2(omega_d) locating the Kittel line. Frequencies within
/// `ef_halfwidth` of `ef_center` (the qubit e-f transition) are skipped.
pub fn qubit_assisted_spectroscopy_fit(
    lines: &[SpectroscopyLine],
    ef_center: f64,
    ef_halfwidth: f64,
) -> Result<SpectroscopyFit> {
    let mut skipped = Vec::new();
    let kept: Vec<&SpectroscopyLine> = lines
        .iter()
        .filter(|l| {
            let inside = (l.omega_d - ef_center).abs() < ef_halfwidth;
            if inside {
                skipped.push(l.omega_d);
            }
            !inside
        })
        .collect();
    if kept.len() < 4 {
        return Err(Error::Fit("too few frequencies outside the exclusion window".into()));
    }
    for l in &kept {
        if l.points.len() < 3 {
            return Err(Error::Fit(format!(
                "need at least 3 amplitudes per frequency (omega_d = {:.4e})",
                l.omega_d
            )));
        }
    }
    let lambda_sq: Result<Vec<(f64, f64)>> = kept
        .par_iter()
        .map(|l| {
            let v0 = l.points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
            let a_mid =
                l.points.iter().map(|p| p.0).sum::<f64>() / l.points.len() as f64;
            let p0 = [v0.max(1e-6), 1.0 / a_mid.max(1e-9)];
            let fit = levenberg_marquardt(
                |p| {
                    l.points
                        .iter()
                        .map(|(a, dv)| {
                            let la = p[1] * a;
                            p[0] * (-la * la).exp() - dv
                        })
                        .collect()
                },
                &p0,
                &FitOptions::default(),
            )?;
            Ok((l.omega_d, fit.params[1] * fit.params[1]))
        })
        .collect();
    let lambda_sq = lambda_sq?;

    // Gaussian with vertical offset over the retained frequencies.
    let max = lambda_sq.iter().cloned().fold((0.0f64, f64::NEG_INFINITY), |acc, (w, v)| {
        if v > acc.1 {
            (w, v)
        } else {
            acc
        }
    });
    let span = lambda_sq.last().unwrap().0 - lambda_sq[0].0;
    let p0 = [max.1, max.0, span / 6.0, 0.0];
    let fit = levenberg_marquardt(
        |p| {
            lambda_sq
                .iter()
                .map(|(w, v)| {
                    let u = (w - p[1]) / p[2];
                    p[0] * (-0.5 * u * u).exp() + p[3] - v
                })
                .collect()
        },
        &p0,
        &FitOptions::default(),
    )?;
    Ok(SpectroscopyFit {
        lambda_sq,
        skipped,
        line_center: fit.params[1],
        line_center_stderr: fit.stderr[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{from_mhz, to_mhz};
    use approx::assert_relative_eq;

    fn device_transmission() -> TransmissionModelParams {
        TransmissionModelParams {
            omega_c: crate::units::from_hz(8.44885e9),
            kappa_c: from_mhz(2.06),
            kappa_in: from_mhz(0.70),
            kappa_out: from_mhz(0.51),
            omega_m: crate::units::from_hz(8.44885e9),
            gamma_m: from_mhz(1.36),
            g_mc: from_mhz(22.85),
        }
    }

    #[test]
    fn transmission_peaks_at_cavity_without_coupling() {
        let mut p = device_transmission();
        p.g_mc = 0.0;
        p.omega_m = p.omega_c - from_mhz(500.0);
        assert_relative_eq!(cavity_transmission(p.omega_c, &p).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn on_resonance_transmission_splits_by_2g() {
        let p = device_transmission();
        let n = 8001;
        let span = from_mhz(80.0);
        let grid: Vec<f64> =
            (0..n).map(|k| p.omega_c - span / 2.0 + span * k as f64 / (n - 1) as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|w| cavity_transmission(*w, &p).unwrap()).collect();
        // Two local maxima, symmetric about omega_c, separated by ~2g.
        let mut peaks = Vec::new();
        for k in 1..n - 1 {
            if vals[k] > vals[k - 1] && vals[k] > vals[k + 1] {
                peaks.push(grid[k]);
            }
        }
        assert_eq!(peaks.len(), 2, "expected a split doublet");
        let sep = peaks[1] - peaks[0];
        assert!((to_mhz(sep) - 2.0 * 22.85).abs() < 0.8, "separation {:.2} MHz", to_mhz(sep));
    }

    #[test]
    fn transmission_mirror_symmetry_on_resonance() {
        // With Delta_mc = 0 and gamma_m = kappa_c the response is exactly
        // symmetric about omega_c.
        let mut p = device_transmission();
        p.gamma_m = p.kappa_c;
        for k in 1..60 {
            let d = k as f64 * from_mhz(1.0);
            let hi = cavity_transmission(p.omega_c + d, &p).unwrap();
            let lo = cavity_transmission(p.omega_c - d, &p).unwrap();
            assert_relative_eq!(hi, lo, max_relative = 1e-12);
        }
    }

    #[test]
    fn avoided_crossing_fit_recovers_coil_calibration() {
        // Synthetic spectra on the device's coil calibration:
        // omega_m(I) = 2 pi (8.148 GHz + 48.2 MHz/mA * I).
        let truth_omega_m0 = crate::units::from_hz(8.148e9);
        let truth_xi = crate::units::from_hz(48.2e9); // per ampere
        let p = device_transmission();
        let currents: Vec<f64> = (0..9).map(|k| (5.6e-3) + k as f64 * 0.15e-3).collect();
        let spectra: Vec<(f64, Vec<(f64, f64)>)> = currents
            .iter()
            .map(|&i| {
                let mut model = p.clone();
                model.omega_m = truth_omega_m0 + truth_xi * i;
                let grid: Vec<f64> = (0..601)
                    .map(|k| p.omega_c - from_mhz(60.0) + from_mhz(120.0) * k as f64 / 600.0)
                    .collect();
                let data =
                    grid.iter().map(|&w| (w, cavity_transmission(w, &model).unwrap())).collect();
                (i, data)
            })
            .collect();
        let init = TransmissionModelParams {
            omega_m: p.omega_c + from_mhz(5.0),
            g_mc: from_mhz(20.0),
            gamma_m: from_mhz(2.0),
            ..p.clone()
        };
        let cal =
            fit_avoided_crossing(&spectra, p.kappa_c, p.kappa_in, p.kappa_out, &init).unwrap();
        assert!((to_mhz(cal.xi) / 1e3 - 48.2).abs() < 0.3, "xi = {:.2} MHz/mA", to_mhz(cal.xi) / 1e3);
        assert!(
            (cal.omega_m0 - truth_omega_m0).abs() < from_mhz(2.0),
            "omega_m0 off by {:.3} MHz",
            to_mhz(cal.omega_m0 - truth_omega_m0)
        );
        for line in &cal.lines {
            assert!((to_mhz(line.g_mc) - 22.85).abs() < 0.2);
        }
    }

    fn device_gambetta(n_bar: f64) -> GambettaSpectrumParams {
        GambettaSpectrumParams {
            gamma_q: from_mhz(0.328),
            gamma_m: from_mhz(1.61),
            chi_qm: from_mhz(-1.91),
            delta_d: from_mhz(-0.01),
            n_bar_g: n_bar,
        }
    }

    #[test]
    fn zero_drive_spectrum_is_a_single_lorentzian() {
        let p = device_gambetta(0.0);
        let frame = SpectrumFrame::Rotating { delta_s: from_mhz(-4.0) };
        let grid: Vec<f64> =
            (0..4001).map(|k| from_mhz(-12.0) + from_mhz(16.0) * k as f64 / 4000.0).collect();
        let s = gambetta_spectrum(&grid, &p, frame).unwrap();
        // Peak at delta_s (no Stark shift), FWHM gamma_q.
        let (k_max, s_max) =
            s.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (k, &v)| {
                if v > acc.1 {
                    (k, v)
                } else {
                    acc
                }
            });
        assert!((grid[k_max] - from_mhz(-4.0)).abs() < from_mhz(0.01));
        let half = s_max / 2.0;
        let above: Vec<f64> =
            grid.iter().zip(&s).filter(|(_, &v)| v >= half).map(|(w, _)| *w).collect();
        let fwhm = above.last().unwrap() - above[0];
        assert!((fwhm - p.gamma_q).abs() < from_mhz(0.02), "FWHM {:.3} MHz", to_mhz(fwhm));
        // Exact Lorentzian cross-check at the center.
        assert_relative_eq!(
            s_max,
            1.0 / std::f64::consts::PI / (p.gamma_q / 2.0),
            max_relative = 1e-3
        );
    }

    #[test]
    fn driven_spectrum_resolves_vacuum_and_single_magnon_peaks() {
        // Operating point of the number-splitting measurement: n = 0.53.
        let p = device_gambetta(0.53);
        let frame = SpectrumFrame::Rotating { delta_s: from_mhz(-4.0) };
        let bin = from_mhz(0.02);
        let grid: Vec<f64> = (0..1501).map(|k| from_mhz(-18.0) + bin * k as f64).collect();
        let s = gambetta_spectrum(&grid, &p, frame).unwrap();
        let mut peaks = Vec::new();
        for k in 1..grid.len() - 1 {
            if s[k] > s[k - 1] && s[k] > s[k + 1] && s[k] > 0.01 * 2.0 / p.gamma_q {
                peaks.push(grid[k]);
            }
        }
        assert!(peaks.len() >= 2, "expected resolved peaks, got {}", peaks.len());
        // The broad n=1 Lorentzian rides on the n=0 shoulder, pulling the raw
        // maxima inward by a few percent; the component centers themselves are
        // spaced by exactly |2 chi + Delta_d|.
        let sep = (peaks[1] - peaks[0]).abs();
        let expected = (2.0 * p.chi_qm + p.delta_d).abs();
        assert!(
            (sep - expected).abs() <= 0.1 * expected,
            "separation {:.3} MHz vs {:.3} MHz",
            to_mhz(sep),
            to_mhz(expected)
        );
        let derived = p.derived();
        let c0 = p.peak_center(0, &derived, frame);
        let c1 = p.peak_center(1, &derived, frame);
        assert_relative_eq!((c1 - c0).abs(), expected, max_relative = 1e-12);
    }

    #[test]
    fn deep_dispersive_weights_are_poissonian() {
        // 2|chi| >> gamma: integrated peak weights follow Poisson(n_bar).
        let p = GambettaSpectrumParams {
            gamma_q: from_mhz(0.05),
            gamma_m: from_mhz(0.05),
            chi_qm: from_mhz(-8.0),
            delta_d: 0.0,
            n_bar_g: 0.8,
        };
        let frame = SpectrumFrame::Rotating { delta_s: 0.0 };
        let derived = p.derived();
        let spacing = (2.0 * p.chi_qm + p.delta_d).abs();
        for n in 0..3usize {
            let c = p.peak_center(n, &derived, frame);
            let grid: Vec<f64> =
                (0..4001).map(|k| c - spacing / 2.0 + spacing * k as f64 / 4000.0).collect();
            let s = gambetta_spectrum(&grid, &p, frame).unwrap();
            let mut weight = 0.0;
            for k in 0..grid.len() - 1 {
                weight += 0.5 * (s[k] + s[k + 1]) * (grid[k + 1] - grid[k]);
            }
            let nb = derived.dephasing_parameter;
            let poisson = nb.powi(n as i32) * (-nb).exp()
                / (1..=n).map(|k| k as f64).product::<f64>().max(1.0);
            assert!(
                (weight - poisson).abs() / poisson < 0.05,
                "peak {n}: weight {weight:.4} vs Poisson {poisson:.4}"
            );
        }
    }

    #[test]
    fn total_spectral_weight_is_chi_independent() {
        let frame = SpectrumFrame::Rotating { delta_s: 0.0 };
        let mut totals = Vec::new();
        for chi_mhz in [-0.8, -1.91, -4.0] {
            let p = GambettaSpectrumParams {
                gamma_q: from_mhz(0.328),
                gamma_m: from_mhz(1.61),
                chi_qm: from_mhz(chi_mhz),
                delta_d: from_mhz(-0.01),
                n_bar_g: 0.53,
            };
            let gmax = from_mhz(1.61);
            let span = 30.0 * gmax + from_mhz(40.0);
            let grid: Vec<f64> =
                (0..160_001).map(|k| -span + 2.0 * span * k as f64 / 160_000.0).collect();
            let s = gambetta_spectrum(&grid, &p, frame).unwrap();
            let mut total = 0.0;
            for k in 0..grid.len() - 1 {
                total += 0.5 * (s[k] + s[k + 1]) * (grid[k + 1] - grid[k]);
            }
            totals.push(total);
        }
        for t in &totals {
            assert!(
                (t - totals[0]).abs() / totals[0] < 0.01,
                "weights {totals:?} vary by more than 1%"
            );
        }
    }

    #[test]
    fn fft_of_damped_cosine() {
        let f0 = 4.0e6;
        let t2 = 1.0e-6;
        let n = 600;
        let dt = 5e-9;
        let taus: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let p_e: Vec<f64> = taus
            .iter()
            .map(|t| 0.5 + 0.5 * (std::f64::consts::TAU * f0 * t).cos() * (-t / t2).exp())
            .collect();
        let (omega, s) = normalized_fft_spectrum(&taus, &p_e).unwrap();
        // Peak at f0 within one bin, ignoring the DC component.
        let bin = omega[1] - omega[0];
        let (k_max, _) = omega
            .iter()
            .zip(&s)
            .enumerate()
            .filter(|(_, (w, _))| **w > from_mhz(1.0))
            .fold((0, f64::NEG_INFINITY), |acc, (k, (_, &v))| {
                if v > acc.1 {
                    (k, v)
                } else {
                    acc
                }
            });
        assert!((omega[k_max] - from_mhz(4.0)).abs() <= bin);
        // FWHM of the decaying cosine's line is 2/t2 in angular frequency.
        let half = s[k_max] / 2.0;
        let mut lo = k_max;
        while lo > 0 && s[lo] > half {
            lo -= 1;
        }
        let mut hi = k_max;
        while hi < s.len() - 1 && s[hi] > half {
            hi += 1;
        }
        let fwhm = omega[hi] - omega[lo];
        assert!(
            (fwhm - 2.0 / t2).abs() < 3.0 * bin,
            "FWHM {:.3} MHz vs {:.3} MHz",
            to_mhz(fwhm),
            to_mhz(2.0 / t2)
        );
    }

    #[test]
    fn fft_of_constant_series_confined_to_dc() {
        let taus: Vec<f64> = (0..128).map(|k| k as f64 * 1e-8).collect();
        let p_e = vec![0.4; 128];
        let (_, s) = normalized_fft_spectrum(&taus, &p_e).unwrap();
        assert_relative_eq!(s[0], 1.0);
        for v in &s[1..] {
            assert!(v.abs() < 1e-10);
        }
        // Non-uniform grids are rejected.
        let mut bad = taus.clone();
        bad[40] += 3e-9;
        assert!(normalized_fft_spectrum(&bad, &p_e).is_err());
    }

    #[test]
    fn spectrum_fit_round_trips_noiselessly() {
        let truth = device_gambetta(0.53);
        let delta_s = from_mhz(-4.0);
        let grid: Vec<f64> =
            (0..801).map(|k| from_mhz(-14.0) + from_mhz(18.0) * k as f64 / 800.0).collect();
        let s = gambetta_spectrum(&grid, &truth, SpectrumFrame::Rotating { delta_s }).unwrap();
        let scale = 0.9 / s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let data: Vec<f64> = s.iter().map(|v| scale * v + 0.05).collect();
        let init = SpectrumFit {
            delta_s: from_mhz(-3.7),
            gamma_m: from_mhz(1.3),
            chi_qm: from_mhz(-1.7),
            n_bar: 0.4,
            scale: scale * 1.2,
            offset: 0.0,
            stderr: vec![],
            cost: 0.0,
            iterations: 0,
        };
        let fit = fit_spectrum(&grid, &data, truth.gamma_q, truth.delta_d, &init).unwrap();
        assert_relative_eq!(fit.chi_qm, truth.chi_qm, max_relative = 1e-8);
        assert_relative_eq!(fit.gamma_m, truth.gamma_m, max_relative = 1e-8);
        assert_relative_eq!(fit.n_bar, truth.n_bar_g, max_relative = 1e-8);
        assert_relative_eq!(fit.delta_s, delta_s, max_relative = 1e-8);
    }

    #[test]
    fn spectrum_fit_tolerates_noise() {
        // 1% multiplicative noise: chi recovered within 3%.
        let truth = device_gambetta(0.53);
        let delta_s = from_mhz(-4.0);
        let grid: Vec<f64> =
            (0..801).map(|k| from_mhz(-14.0) + from_mhz(18.0) * k as f64 / 800.0).collect();
        let clean =
            gambetta_spectrum(&grid, &truth, SpectrumFrame::Rotating { delta_s }).unwrap();
        let smax = clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // Deterministic pseudo-noise.
        let data: Vec<f64> = clean
            .iter()
            .enumerate()
            .map(|(k, v)| v / smax + 0.01 * ((k as f64 * 12.9898).sin() * 43758.5453).fract())
            .collect();
        let init = SpectrumFit {
            delta_s: from_mhz(-4.2),
            gamma_m: from_mhz(1.4),
            chi_qm: from_mhz(-2.2),
            n_bar: 0.45,
            scale: 1.0 / smax,
            offset: 0.0,
            stderr: vec![],
            cost: 0.0,
            iterations: 0,
        };
        let fit = fit_spectrum(&grid, &data, truth.gamma_q, truth.delta_d, &init).unwrap();
        assert!(
            (fit.chi_qm - truth.chi_qm).abs() / truth.chi_qm.abs() < 0.03,
            "chi = {:.3} MHz",
            to_mhz(fit.chi_qm)
        );
    }

    #[test]
    fn convolved_spectrum_reduces_to_bare_for_long_pulses() {
        let p = device_gambetta(0.3);
        let omega_q0 = crate::units::from_hz(7.92109e9);
        let grid: Vec<f64> = (0..301)
            .map(|k| omega_q0 + from_mhz(-10.0) + from_mhz(14.0) * k as f64 / 300.0)
            .collect();
        let long = convolved_calibration_spectrum(&grid, &p, omega_q0, 20e-6, 1.0, 0.0).unwrap();
        let bare = gambetta_spectrum(&grid, &p, SpectrumFrame::Lab { omega_q0 }).unwrap();
        let bmax = bare.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (a, b) in long.iter().zip(&bare) {
            assert!(
                (a - b / bmax).abs() < 0.01,
                "convolution with a delta-like kernel should be the identity"
            );
        }
    }

    #[test]
    fn convolved_calibration_round_trip() {
        let truth = device_gambetta(0.42);
        let omega_q0 = crate::units::from_hz(7.92109e9);
        let grid: Vec<f64> = (0..121)
            .map(|k| omega_q0 + from_mhz(-12.0) + from_mhz(16.0) * k as f64 / 120.0)
            .collect();
        let data =
            convolved_calibration_spectrum(&grid, &truth, omega_q0, 200e-9, 0.76, 0.08).unwrap();
        let init = ConvolvedCalibrationFit {
            n_bar: 0.3,
            visibility: 0.6,
            floor: 0.12,
            tau_pi_tilde: 150e-9,
            stderr: vec![],
            cost: 0.0,
        };
        let fit = fit_convolved_calibration(&grid, &data, &truth, omega_q0, &init).unwrap();
        assert_relative_eq!(fit.n_bar, 0.42, max_relative = 1e-6);
        assert_relative_eq!(fit.visibility, 0.76, max_relative = 1e-6);
        assert_relative_eq!(fit.floor, 0.08, max_relative = 1e-6);
        assert_relative_eq!(fit.tau_pi_tilde, 200e-9, max_relative = 1e-5);
    }

    #[test]
    fn lambda_decay_fit_exact_and_device_anchors() {
        // The device calibration: lambda(0) = 9.3 sqrt(magnons)/V and
        // T1m = 82 ns define the default synthetic dataset.
        let lambda0 = 9.3;
        let t1_m = 82e-9;
        let taus: [f64; 6] = [40e-9, 80e-9, 120e-9, 200e-9, 320e-9, 480e-9];
        let lambdas: Vec<f64> =
            taus.iter().map(|t| lambda0 * (-t / (4.0 * t1_m)).exp()).collect();
        let fit = fit_lambda_decay(&taus, &lambdas).unwrap();
        assert_relative_eq!(fit.lambda0, lambda0, max_relative = 1e-9);
        assert_relative_eq!(fit.t1_m, t1_m, max_relative = 1e-9);
        // Implied linewidth 1/(2 pi T1m) ~ 1.94 MHz.
        let gamma_mhz = 1.0 / (std::f64::consts::TAU * fit.t1_m) / 1e6;
        assert!((gamma_mhz - 1.93).abs() < 0.03, "gamma = {gamma_mhz:.3} MHz");
        // lambda(200 ns) ~ 5.0 (the value used for the efficiency sweeps).
        let l200 = fit.lambda0 * (-200e-9 / (4.0 * fit.t1_m)).exp();
        assert!((l200 - 5.0).abs() < 0.1, "lambda(200 ns) = {l200:.2}");
    }

    #[test]
    fn lambda_decay_fit_flags_growth() {
        let taus = [40e-9, 120e-9, 300e-9];
        let lambdas = [1.0, 2.0, 4.5];
        assert!(fit_lambda_decay(&taus, &lambdas).is_err());
    }

    #[test]
    fn qubit_assisted_spectroscopy_recovers_line_center() {
        // Synthetic lambda^2(omega_d) Gaussian centered on the Kittel line at
        // 7.78861 GHz, with the e-f exclusion window masking nearby points.
        let center = crate::units::from_hz(7.78861e9);
        let ef = crate::units::from_hz(7.79809e9); // omega_q0 + alpha0
        let sigma = from_mhz(1.4);
        let lambda_of = |w: f64| {
            let u = (w - center) / sigma;
            (24.0 * (-0.5 * u * u).exp() + 0.4f64).sqrt()
        };
        let lines: Vec<SpectroscopyLine> = (0..41)
            .map(|k| {
                let w = center - from_mhz(6.0) + from_mhz(18.0) * k as f64 / 40.0;
                let l = lambda_of(w);
                let points =
                    (1..=6).map(|j| {
                        let a = 0.03 * j as f64;
                        (a, 0.72 * (-(l * a) * (l * a)).exp())
                    }).collect();
                SpectroscopyLine { omega_d: w, points }
            })
            .collect();
        let fit = qubit_assisted_spectroscopy_fit(&lines, ef, from_mhz(3.0)).unwrap();
        assert!(
            (fit.line_center - center).abs() < from_mhz(0.05),
            "center off by {:.3} MHz",
            to_mhz(fit.line_center - center)
        );
        // The shaded e-f window removed the points near 7.798 GHz.
        assert!(!fit.skipped.is_empty());

        // Two coil currents reproduce the qubit-assisted tuning rate of
        // ~44.2 MHz/mA.
        let center_b = crate::units::from_hz(7.78066e9);
        let slope = (center - center_b) / (-7.92e-3 - -8.10e-3);
        assert!((to_mhz(slope) / 1e3 - 44.17).abs() < 0.3);
    }
}
