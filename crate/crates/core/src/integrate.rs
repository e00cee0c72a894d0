//! Adaptive Dormand-Prince 5(4) integrator on complex matrix states.
//!
//! The state is a dense complex matrix (the vectorized density matrix);
//! Butcher-tableau combinations are real-scaled complex accumulations done on
//! raw slices to avoid temporaries in the hot loop.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side of dY/dt = f(t, Y).
pub trait OdeSystem {
    fn rhs(&mut self, t: f64, y: &DMatrix<C64>, out: &mut DMatrix<C64>);
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Hard cap on accepted + rejected steps per call.
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, max_steps: 20_000_000 }
    }
}

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[inline]
fn accumulate(out: &mut DMatrix<C64>, base: &DMatrix<C64>, terms: &[(f64, &DMatrix<C64>)], h: f64) {
    let o = out.as_mut_slice();
    o.copy_from_slice(base.as_slice());
    for (w, k) in terms {
        let c = h * w;
        if c == 0.0 {
            continue;
        }
        let ks = k.as_slice();
        for (oi, ki) in o.iter_mut().zip(ks) {
            oi.re += c * ki.re;
            oi.im += c * ki.im;
        }
    }
}

/// Integrate from `t0` (state `y0`) over the strictly increasing `outputs`
/// grid, invoking `sink(index, t, state)` at each output time. `outputs[0]`
/// may equal `t0`.
pub fn integrate<S: OdeSystem, F: FnMut(usize, f64, &DMatrix<C64>)>(
    system: &mut S,
    t0: f64,
    y0: &DMatrix<C64>,
    outputs: &[f64],
    cfg: &IntegratorConfig,
    mut sink: F,
) -> Result<()> {
    if outputs.is_empty() {
        return Ok(());
    }
    for w in outputs.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Grid("output grid must be strictly increasing".into()));
        }
    }
    if outputs[0] < t0 - 1e-18 {
        return Err(Error::Grid("output grid starts before t0".into()));
    }

    let (nr, nc) = (y0.nrows(), y0.ncols());
    let mut y = y0.clone();
    let mut t = t0;
    let mut k: Vec<DMatrix<C64>> = (0..7).map(|_| DMatrix::zeros(nr, nc)).collect();
    let mut ytmp = DMatrix::zeros(nr, nc);
    let mut y5 = DMatrix::zeros(nr, nc);

    let span = outputs.last().unwrap() - t0;
    let mut h = (span * 1e-6).max(1e-15);
    let mut out_idx = 0;
    if (outputs[0] - t0).abs() <= 1e-18 {
        sink(0, t0, &y);
        out_idx = 1;
    }
    if out_idx >= outputs.len() {
        return Ok(());
    }

    // k[0] always holds f(t, y): refreshed via the FSAL swap on acceptance
    // and untouched on rejection.
    system.rhs(t, &y, &mut k[0]);
    let mut steps = 0usize;

    while out_idx < outputs.len() {
        if steps >= cfg.max_steps {
            return Err(Error::IntegrationFailure {
                t,
                reason: format!("step budget of {} exhausted", cfg.max_steps),
            });
        }
        steps += 1;

        let t_target = outputs[out_idx];
        let mut hitting_output = false;
        if t + h >= t_target - 1e-18 {
            h = t_target - t;
            hitting_output = true;
        }
        if h <= span * 1e-14 {
            return Err(Error::IntegrationFailure { t, reason: "step size underflow".into() });
        }

        for stage in 1..6 {
            let terms: Vec<(f64, &DMatrix<C64>)> = (0..stage)
                .filter(|&j| A[stage - 1][j] != 0.0)
                .map(|j| (A[stage - 1][j], &k[j]))
                .collect();
            accumulate(&mut ytmp, &y, &terms, h);
            let knew = std::mem::replace(&mut k[stage], DMatrix::zeros(0, 0));
            let mut knew = if knew.nrows() == nr { knew } else { DMatrix::zeros(nr, nc) };
            system.rhs(t + C[stage] * h, &ytmp, &mut knew);
            k[stage] = knew;
        }
        // 5th-order solution (row 6 of A equals B5 for Dormand-Prince).
        {
            let terms: Vec<(f64, &DMatrix<C64>)> = (0..6)
                .filter(|&j| A[5][j] != 0.0)
                .map(|j| (A[5][j], &k[j]))
                .collect();
            accumulate(&mut y5, &y, &terms, h);
        }
        {
            let k6 = std::mem::replace(&mut k[6], DMatrix::zeros(0, 0));
            let mut k6 = if k6.nrows() == nr { k6 } else { DMatrix::zeros(nr, nc) };
            system.rhs(t + h, &y5, &mut k6);
            k[6] = k6;
        }

        // Embedded error estimate.
        let mut err_sq = 0.0f64;
        {
            let ys = y.as_slice();
            let y5s = y5.as_slice();
            let kk: Vec<&[C64]> = k.iter().map(|m| m.as_slice()).collect();
            let n = ys.len();
            for i in 0..n {
                let mut e = C64::new(0.0, 0.0);
                for s in 0..7 {
                    let d = B5[s] - B4[s];
                    if d != 0.0 {
                        e.re += d * kk[s][i].re;
                        e.im += d * kk[s][i].im;
                    }
                }
                let scale = cfg.atol + cfg.rtol * ys[i].norm().max(y5s[i].norm());
                let r = (h * e.norm()) / scale;
                err_sq += r * r;
            }
            err_sq /= n as f64;
        }
        let err = err_sq.sqrt();

        if err <= 1.0 {
            t += h;
            std::mem::swap(&mut y, &mut y5);
            k.swap(0, 6); // FSAL
            if hitting_output {
                sink(out_idx, t, &y);
                out_idx += 1;
            }
        }

        let factor = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
        h *= factor.clamp(0.2, 5.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Rotator {
        omega: f64,
    }
    impl OdeSystem for Rotator {
        fn rhs(&mut self, _t: f64, y: &DMatrix<C64>, out: &mut DMatrix<C64>) {
            out.copy_from(y);
            *out *= C64::new(0.0, self.omega);
        }
    }

    #[test]
    fn rotates_complex_scalar_exactly() {
        let mut sys = Rotator { omega: 2.0 * std::f64::consts::PI * 3.0e6 };
        let y0 = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let outputs: Vec<f64> = (0..=100).map(|k| k as f64 * 1e-8).collect();
        let cfg = IntegratorConfig::default();
        let mut results = Vec::new();
        integrate(&mut sys, 0.0, &y0, &outputs, &cfg, |_, t, y| {
            results.push((t, y[(0, 0)]));
        })
        .unwrap();
        for (t, y) in results {
            let expected = C64::from_polar(1.0, sys.omega * t);
            assert!((y - expected).norm() < 1e-7, "at t={t:.2e}");
        }
    }

    struct Decay {
        rate: f64,
    }
    impl OdeSystem for Decay {
        fn rhs(&mut self, _t: f64, y: &DMatrix<C64>, out: &mut DMatrix<C64>) {
            out.copy_from(y);
            *out *= C64::new(-self.rate, 0.0);
        }
    }

    #[test]
    fn exponential_decay_adaptive_accuracy() {
        let mut sys = Decay { rate: 1.0e7 };
        let y0 = DMatrix::from_element(2, 2, C64::new(1.0, 0.0));
        let outputs = [0.0, 1e-7, 2e-7, 5e-7];
        let cfg = IntegratorConfig::default();
        let mut last = C64::new(0.0, 0.0);
        integrate(&mut sys, 0.0, &y0, &outputs, &cfg, |_, _, y| last = y[(1, 1)]).unwrap();
        assert_relative_eq!(last.re, (-1.0e7_f64 * 5e-7).exp(), max_relative = 1e-6);
    }

    #[test]
    fn rejects_non_monotone_grid() {
        let mut sys = Decay { rate: 1.0 };
        let y0 = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let cfg = IntegratorConfig::default();
        let err = integrate(&mut sys, 0.0, &y0, &[0.0, 2.0, 1.0], &cfg, |_, _, _| {});
        assert!(err.is_err());
    }
}
