//! Small dense nonlinear least squares (Levenberg-Marquardt) for the
//! mean-trace and Rabi fits.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative cost reduction below which an accepted step counts as converged.
    pub ftol: f64,
    /// Relative step size below which an accepted step counts as converged.
    pub xtol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-14,
            xtol: 1e-12,
            lambda0: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Parameter covariance `s² (JᵀJ)⁻¹`, row-major `p x p`.
    pub covariance: Vec<f64>,
    pub ssr: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl LmFit {
    pub fn std_errors(&self) -> Vec<f64> {
        let p = self.params.len();
        (0..p).map(|i| self.covariance[i * p + i].max(0.0).sqrt()).collect()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.params.len() + j]
    }
}

/// Residuals and Jacobian (`m x p`, row-major) at a parameter vector.
pub trait LeastSquares {
    fn residuals(&self, params: &[f64], out: &mut [f64]);
    fn jacobian(&self, params: &[f64], out: &mut [f64]);
    fn len(&self) -> usize;
}

/// Solve `a x = b` in place (Gaussian elimination, partial pivoting).
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64]) -> Option<()> {
    let p = b.len();
    for col in 0..p {
        let pivot = (col..p).max_by(|&i, &j| a[i * p + col].abs().total_cmp(&a[j * p + col].abs()))?;
        if a[pivot * p + col].abs() < 1e-300 || !a[pivot * p + col].is_finite() {
            return None;
        }
        if pivot != col {
            for k in 0..p {
                a.swap(col * p + k, pivot * p + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..p {
            let f = a[row * p + col] / a[col * p + col];
            if f != 0.0 {
                for k in col..p {
                    a[row * p + k] -= f * a[col * p + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    for col in (0..p).rev() {
        let mut acc = b[col];
        for k in col + 1..p {
            acc -= a[col * p + k] * b[k];
        }
        b[col] = acc / a[col * p + col];
    }
    Some(())
}

fn invert(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; p * p];
    for j in 0..p {
        let mut m = a.to_vec();
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        solve_dense(&mut m, &mut e)?;
        for i in 0..p {
            inv[i * p + j] = e[i];
        }
    }
    Some(inv)
}

fn normal_equations(jac: &[f64], res: &[f64], p: usize) -> (Vec<f64>, Vec<f64>) {
    let m = res.len();
    let mut a = vec![0.0; p * p];
    let mut g = vec![0.0; p];
    for row in 0..m {
        let jr = &jac[row * p..(row + 1) * p];
        for i in 0..p {
            g[i] += jr[i] * res[row];
            for j in 0..p {
                a[i * p + j] += jr[i] * jr[j];
            }
        }
    }
    (a, g)
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn levenberg_marquardt<P: LeastSquares>(problem: &P, x0: &[f64], opts: LmOptions) -> Result<LmFit> {
    let p = x0.len();
    let m = problem.len();
    if m < p {
        return Err(Error::invalid("fit", format!("{m} points cannot determine {p} parameters")));
    }
    let mut x = x0.to_vec();
    let mut res = vec![0.0; m];
    let mut jac = vec![0.0; m * p];
    problem.residuals(&x, &mut res);
    let mut cost = sum_sq(&res);
    if !cost.is_finite() {
        return Err(Error::FitDiverged("non-finite residuals at the starting point".into()));
    }
    let mut lambda = opts.lambda0;
    let mut trial = vec![0.0; p];
    let mut trial_res = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iter {
        iterations += 1;
        problem.jacobian(&x, &mut jac);
        let (a, g) = normal_equations(&jac, &res, p);
        let diag_max = (0..p).map(|i| a[i * p + i]).fold(0.0, f64::max);
        if cost == 0.0 || g.iter().all(|v| v.abs() <= 1e-300) {
            converged = true;
            break;
        }
        loop {
            let mut lhs = a.clone();
            for i in 0..p {
                lhs[i * p + i] += lambda * a[i * p + i].max(1e-12 * diag_max).max(1e-300);
            }
            let mut step: Vec<f64> = g.iter().map(|v| -v).collect();
            let solved = solve_dense(&mut lhs, &mut step).is_some();
            if solved {
                for i in 0..p {
                    trial[i] = x[i] + step[i];
                }
                problem.residuals(&trial, &mut trial_res);
                let new_cost = sum_sq(&trial_res);
                if new_cost.is_finite() && new_cost <= cost {
                    let rel_drop = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                    let step_norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
                    let x_norm = x.iter().map(|s| s * s).sum::<f64>().sqrt();
                    x.copy_from_slice(&trial);
                    res.copy_from_slice(&trial_res);
                    cost = new_cost;
                    lambda = (lambda / 3.0).max(1e-15);
                    if rel_drop < opts.ftol || step_norm < opts.xtol * (x_norm + opts.xtol) || cost < 1e-300 {
                        converged = true;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                // no downhill step at any damping: a stationary point to working precision
                converged = true;
                break 'outer;
            }
        }
    }
    if !converged {
        return Err(Error::FitDiverged(format!("no convergence after {iterations} iterations")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitDiverged("non-finite parameters".into()));
    }
    problem.jacobian(&x, &mut jac);
    let (a, _) = normal_equations(&jac, &res, p);
    let inv = invert(&a, p).ok_or_else(|| Error::FitDiverged("singular Jacobian at solution".into()))?;
    let dof = m - p;
    let s2 = if dof > 0 { cost / dof as f64 } else { 0.0 };
    Ok(LmFit {
        params: x,
        covariance: inv.into_iter().map(|v| v * s2).collect(),
        ssr: cost,
        dof,
        iterations,
    })
}
