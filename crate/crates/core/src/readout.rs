//! Classical readout-error model for the high-power single-shot readout.
//!
//! The readout is not simulated at the pulse level; it enters as the error
//! pair (eps_g, eps_e) mapping ideal probabilities to observed ones, plus the
//! bounding procedure that pins (eps_g, eps_e) from measured excited-state
//! probabilities and the simulated control error at each readout delay.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Readout error pair and delay. `eps_g` is P(report e | qubit in g),
/// `eps_e` is P(report g | qubit in e).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadoutModel {
    pub eps_g: f64,
    pub eps_e: f64,
    /// Readout delay between the start of the readout pulse and the instant
    /// the qubit state is considered measured (seconds).
    pub delta_t_r: f64,
}

impl ReadoutModel {
    /// Ideal readout with a given delay.
    pub fn ideal(delta_t_r: f64) -> Self {
        Self { eps_g: 0.0, eps_e: 0.0, delta_t_r }
    }

    /// Readout fidelity 1 - eps_g - eps_e.
    pub fn fidelity(&self) -> f64 {
        1.0 - self.eps_g - self.eps_e
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_g < 0.0 || self.eps_e < 0.0 {
            return Err(Error::InvalidParameter("readout errors must be nonnegative".into()));
        }
        if self.eps_g + self.eps_e >= 1.0 {
            return Err(Error::InvalidParameter(
                "eps_g + eps_e must be below 1 (positive readout fidelity)".into(),
            ));
        }
        if self.delta_t_r < 0.0 {
            return Err(Error::InvalidParameter("readout delay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Measured excited-state probabilities used to bound the readout errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasuredProbabilities {
    /// P(report e) with no control pulse applied.
    pub p_e_given_g_prep: f64,
    /// P(report e) after a pi pulse.
    pub p_e_given_e_prep: f64,
    pub eps_ini: f64,
    /// Control error; a derived quantity, scanned over readout delays by the
    /// bounding procedure.
    pub eps_pi: f64,
}

impl MeasuredProbabilities {
    pub fn visibility(&self) -> f64 {
        self.p_e_given_e_prep - self.p_e_given_g_prep
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.p_e_given_g_prep, self.p_e_given_e_prep, self.eps_ini, self.eps_pi] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(
                    "measured probabilities must lie in [0, 1]".into(),
                ));
            }
        }
        if self.visibility() < 0.0 {
            return Err(Error::InvalidParameter("negative readout visibility".into()));
        }
        Ok(())
    }
}

/// Observed ground-state probability from the ideal one:
/// p_g = (1 - eps_g) p~_g + eps_e (1 - p~_g).
///
/// The |f> population is folded into the excited branch beforehand
/// (p~_e = 1 - p~_g), matching the two-outcome readout.
pub fn apply_readout_correction(p_tilde_g: f64, model: &ReadoutModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_tilde_g) {
        return Err(Error::InvalidParameter(format!(
            "probability {p_tilde_g} outside [0, 1]"
        )));
    }
    Ok((1.0 - model.eps_g) * p_tilde_g + model.eps_e * (1.0 - p_tilde_g))
}

/// Solve the linear pair
///   p_e^|g> = eps_g (1 - eps_ini) + (1 - eps_e) eps_ini
///   p_e^|e> = eps_g (eps_pi + eps_ini) + (1 - eps_e)(1 - eps_pi - eps_ini)
/// for (eps_g, eps_e), without range checks.
fn solve_readout_errors_raw(measured: &MeasuredProbabilities, eps_pi: f64) -> (f64, f64) {
    let e0 = measured.eps_ini;
    let u = eps_pi + e0;
    // a11 eg + a12 ee = b1 ; a21 eg + a22 ee = b2
    let (a11, a12, b1) = (1.0 - e0, -e0, measured.p_e_given_g_prep - e0);
    let (a21, a22, b2) = (u, -(1.0 - u), measured.p_e_given_e_prep - (1.0 - u));
    let det = a11 * a22 - a12 * a21;
    let eps_g = (b1 * a22 - a12 * b2) / det;
    let eps_e = (a11 * b2 - b1 * a21) / det;
    (eps_g, eps_e)
}

/// Readout errors consistent with the measured probabilities at a given
/// control error. Solutions outside [0, 1] are flagged as inconsistent.
pub fn solve_readout_errors(
    measured: &MeasuredProbabilities,
    eps_pi: f64,
    delta_t_r: f64,
) -> Result<ReadoutModel> {
    measured.validate()?;
    let det = (1.0 - measured.eps_ini) * (1.0 - eps_pi - measured.eps_ini) * -1.0
        - measured.eps_ini * (eps_pi + measured.eps_ini);
    if det.abs() < 1e-12 {
        return Err(Error::Inconsistent("singular readout-error system".into()));
    }
    let (eps_g, eps_e) = solve_readout_errors_raw(measured, eps_pi);
    if !(0.0..=1.0).contains(&eps_g) || !(0.0..=1.0).contains(&eps_e) {
        return Err(Error::Inconsistent(format!(
            "solved readout errors out of range: eps_g = {eps_g:.4}, eps_e = {eps_e:.4}"
        )));
    }
    let model = ReadoutModel { eps_g, eps_e, delta_t_r };
    model.validate()?;
    Ok(model)
}

/// One point of the readout-delay scan.
#[derive(Debug, Clone, Serialize)]
pub struct DelayScanPoint {
    pub delta_t_r: f64,
    pub eps_pi: f64,
    pub eps_g: f64,
    pub eps_e: f64,
    pub fidelity: f64,
}

/// Output of the readout-delay bounding procedure.
#[derive(Debug, Clone, Serialize)]
pub struct ReadoutBounds {
    pub f_r_min: f64,
    pub f_r_max: f64,
    /// Largest delay consistent with nonnegative readout errors.
    pub delta_t_r_max: f64,
    pub model_at_zero: ReadoutModel,
    pub model_at_max: ReadoutModel,
    /// Model at the mid-range delay, rounded to the scan granularity.
    pub midrange: ReadoutModel,
    pub scan: Vec<DelayScanPoint>,
}

/// Bound the readout fidelity from a control-error curve eps_pi(delta_t_r)
/// sampled on a uniform grid starting at zero delay.
///
/// The lower fidelity bound sits at zero delay (minimal control error); the
/// upper bound at the smallest delay where one of the errors reaches zero.
pub fn bound_readout_fidelity(
    measured: &MeasuredProbabilities,
    delays: &[f64],
    eps_pi_of_delay: &[f64],
) -> Result<ReadoutBounds> {
    measured.validate()?;
    if delays.len() != eps_pi_of_delay.len() || delays.len() < 2 {
        return Err(Error::Grid("delay scan needs matching grids of length >= 2".into()));
    }
    if delays[0] != 0.0 {
        return Err(Error::Grid("delay scan must start at zero".into()));
    }

    let mut scan = Vec::with_capacity(delays.len());
    let mut crossing: Option<usize> = None;
    for (k, (&dt, &eps_pi)) in delays.iter().zip(eps_pi_of_delay).enumerate() {
        let (eps_g, eps_e) = solve_readout_errors_raw(measured, eps_pi);
        scan.push(DelayScanPoint {
            delta_t_r: dt,
            eps_pi,
            eps_g,
            eps_e,
            fidelity: 1.0 - eps_g - eps_e,
        });
        if crossing.is_none() && k > 0 && (eps_g <= 0.0 || eps_e <= 0.0) {
            crossing = Some(k);
        }
    }
    let k_max = crossing.ok_or_else(|| {
        Error::Bracket(format!(
            "no readout error reached zero within the {:.0} ns delay cap",
            delays.last().unwrap() * 1e9
        ))
    })?;

    let at = |k: usize| -> ReadoutModel {
        ReadoutModel {
            eps_g: scan[k].eps_g.max(0.0),
            eps_e: scan[k].eps_e.max(0.0),
            delta_t_r: scan[k].delta_t_r,
        }
    };
    let model_at_zero = at(0);
    let model_at_max = at(k_max);
    let k_mid = k_max / 2;
    let midrange = at(k_mid);

    Ok(ReadoutBounds {
        f_r_min: model_at_zero.fidelity(),
        f_r_max: model_at_max.fidelity(),
        delta_t_r_max: scan[k_max].delta_t_r,
        model_at_zero,
        model_at_max,
        midrange,
        scan,
    })
}

/// One demodulated readout shot after the rotation-and-translation correction.
#[derive(Debug, Clone, Serialize)]
pub struct ShotRecord {
    /// Raw demodulated voltage.
    pub v: C64,
    /// Corrected real signal Re[R(theta) (V - V_g)].
    pub dv: f64,
    /// Thresholded state: true = excited.
    pub excited: bool,
}

/// Complex-plane voltage model for shot sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoltageModel {
    pub v_g: C64,
    pub v_e: C64,
    /// Isotropic Gaussian noise per quadrature.
    pub sigma_v: f64,
}

/// Result of sampling a shot set.
pub struct ShotSet {
    pub shots: Vec<ShotRecord>,
    /// Averaged estimator of p_e from the corrected signal.
    pub p_e_estimate: f64,
    /// Fraction of shots assigned to the excited state by the threshold.
    pub p_e_thresholded: f64,
}

/// Draw `n_shots` demodulated voltages about V_g or V_e (Bernoulli `p_e`),
/// apply the rotation-and-translation correction and the mid-range threshold
/// Delta V_e / 2, and form the averaged estimator of p_e.
pub fn sample_shots(
    p_e: f64,
    n_shots: usize,
    voltage: &VoltageModel,
    seed: u64,
) -> Result<ShotSet> {
    if !(0.0..=1.0).contains(&p_e) {
        return Err(Error::InvalidParameter("p_e outside [0, 1]".into()));
    }
    if voltage.sigma_v < 0.0 {
        return Err(Error::InvalidParameter("sigma_v must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = voltage.v_e - voltage.v_g;
    if delta.norm() == 0.0 {
        return Err(Error::InvalidParameter("V_e and V_g coincide".into()));
    }
    let theta = (delta.im).atan2(delta.re);
    let rot = C64::from_polar(1.0, -theta);
    let dv_e = (rot * delta).re;
    let threshold = dv_e / 2.0;

    let mut shots = Vec::with_capacity(n_shots);
    let mut dv_sum = 0.0;
    let mut n_excited = 0usize;
    for _ in 0..n_shots {
        let excited_prep = rng.gen::<f64>() < p_e;
        let center = if excited_prep { voltage.v_e } else { voltage.v_g };
        let noise = C64::new(
            gaussian(&mut rng) * voltage.sigma_v,
            gaussian(&mut rng) * voltage.sigma_v,
        );
        let v = center + noise;
        let dv = (rot * (v - voltage.v_g)).re;
        let excited = dv > threshold;
        if excited {
            n_excited += 1;
        }
        dv_sum += dv;
        shots.push(ShotRecord { v, dv, excited });
    }
    let p_e_estimate = dv_sum / (n_shots as f64) / dv_e;
    Ok(ShotSet {
        shots,
        p_e_estimate,
        p_e_thresholded: n_excited as f64 / n_shots as f64,
    })
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one value per call keeps the stream reproducible.
    loop {
        let u: f64 = rng.gen::<f64>();
        if u > 0.0 {
            let v: f64 = rng.gen::<f64>();
            return (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
        }
    }
}
