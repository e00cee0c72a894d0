//! Least-squares fitting: a damped Levenberg-Marquardt driver with
//! finite-difference Jacobians, plus ordinary linear least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the relative cost change.
    pub cost_tolerance: f64,
    /// Initial damping factor.
    pub lambda0: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 200, cost_tolerance: 1e-10, lambda0: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals at the optimum.
    pub cost: f64,
    /// Parameter standard errors from the Jacobian at the optimum.
    pub stderr: Vec<f64>,
    pub iterations: usize,
}

fn residual_vector<F: Fn(&[f64]) -> Vec<f64>>(f: &F, p: &[f64]) -> DVector<f64> {
    DVector::from_vec(f(p))
}

fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, p: &[f64], r0: &DVector<f64>) -> DMatrix<f64> {
    let n = r0.len();
    let m = p.len();
    let mut j = DMatrix::zeros(n, m);
    let mut pp = p.to_vec();
    for k in 0..m {
        let h = 1e-7 * p[k].abs().max(1e-9);
        pp[k] = p[k] + h;
        let rk = residual_vector(f, &pp);
        pp[k] = p[k];
        for i in 0..n {
            j[(i, k)] = (rk[i] - r0[i]) / h;
        }
    }
    j
}

/// Minimize sum of squares of `residuals(params)` starting from `p0`.
///
/// Damped least squares: (J^T J + lambda diag(J^T J)) step = -J^T r, with the
/// damping scaled up on rejected steps and down on accepted ones.
pub fn levenberg_marquardt<F: Fn(&[f64]) -> Vec<f64>>(
    residuals: F,
    p0: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let mut p = DVector::from_vec(p0.to_vec());
    let mut r = residual_vector(&residuals, p.as_slice());
    let n_data = r.len();
    if n_data < p0.len() {
        return Err(Error::Fit(format!(
            "{} residuals cannot constrain {} parameters",
            n_data,
            p0.len()
        )));
    }
    let mut cost = r.norm_squared();
    let mut lambda = opts.lambda0;
    let mut iterations = 0;

    for _ in 0..opts.max_iterations {
        iterations += 1;
        let j = jacobian(&residuals, p.as_slice(), &r);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let mut accepted = false;
        for _ in 0..25 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let step = match a.lu().solve(&(-&jtr)) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let p_new = &p + &step;
            let r_new = residual_vector(&residuals, p_new.as_slice());
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                let rel_change = (cost - cost_new) / cost.max(1e-300);
                p = p_new;
                r = r_new;
                cost = cost_new;
                lambda = (lambda / 10.0).max(1e-14);
                accepted = true;
                if rel_change < opts.cost_tolerance {
                    return Ok(finish(p, cost, &residuals, iterations));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // Stuck at a (possibly flat) optimum.
            return Ok(finish(p, cost, &residuals, iterations));
        }
    }
    Err(Error::Fit(format!(
        "no convergence after {} iterations; last cost {cost:.6e}, params {:?}",
        opts.max_iterations,
        p.as_slice()
    )))
}

fn finish<F: Fn(&[f64]) -> Vec<f64>>(
    p: DVector<f64>,
    cost: f64,
    residuals: &F,
    iterations: usize,
) -> FitResult {
    let r = residual_vector(residuals, p.as_slice());
    let j = jacobian(residuals, p.as_slice(), &r);
    let dof = (r.len() as f64 - p.len() as f64).max(1.0);
    let sigma2 = cost / dof;
    let jtj = j.transpose() * &j;
    let stderr = match jtj.try_inverse() {
        Some(cov) => (0..p.len()).map(|k| (sigma2 * cov[(k, k)].max(0.0)).sqrt()).collect(),
        None => vec![f64::NAN; p.len()],
    };
    FitResult { params: p.as_slice().to_vec(), cost, stderr, iterations }
}

/// Ordinary linear least squares y ~ X beta. Returns (beta, stderr, ssr).
pub fn linear_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let det = xtx.determinant();
    if det.abs() < 1e-14 * xtx.norm().powi(xtx.nrows() as i32).max(1e-300) {
        return Err(Error::Fit("degenerate design matrix".into()));
    }
    let inv = xtx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Fit("degenerate design matrix".into()))?;
    let beta = &inv * xty;
    let resid = y - x * &beta;
    let ssr = resid.norm_squared();
    let dof = (y.len() as f64 - beta.len() as f64).max(1.0);
    let sigma2 = ssr / dof;
    let stderr = (0..beta.len()).map(|k| (sigma2 * inv[(k, k)].max(0.0)).sqrt()).collect();
    Ok((beta.as_slice().to_vec(), stderr, ssr))
}
