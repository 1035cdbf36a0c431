//! Damped Gauss-Newton (Levenberg–Marquardt) least squares.
//!
//! Schedule: the normal equations (JᵀJ + λ·diag(JᵀJ))δ = −Jᵀr are solved
//! with λ starting at 10⁻³. An accepted step divides λ by 10, a rejected one
//! multiplies it by 10. Iteration stops when the relative cost decrease or
//! the relative step falls below the tolerance. The Jacobian is taken by
//! central differences. Everything is deterministic for a given start.

use nalgebra::{DMatrix, DVector};

pub const MAX_ITER: usize = 200;
pub const REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// (JᵀJ)⁻¹·cost/(n − p), when invertible.
    pub covariance: Option<DMatrix<f64>>,
}

fn jacobian(f: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], r0: &[f64]) -> DMatrix<f64> {
    let n = r0.len();
    let p = x.len();
    let mut jac = DMatrix::zeros(n, p);
    let mut xp = x.to_vec();
    for j in 0..p {
        let h = 1e-7 * x[j].abs().max(1e-8);
        xp[j] = x[j] + h;
        let rp = f(&xp);
        xp[j] = x[j] - h;
        let rm = f(&xp);
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes Σ rᵢ(x)² from `x0`.
pub fn levenberg_marquardt(f: impl Fn(&[f64]) -> Vec<f64>, x0: &[f64]) -> LmResult {
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = jacobian(&f, &x, &r);
    while iterations < MAX_ITER {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        // a handful of damping increases per iteration before giving up on it
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..x.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let rt = f(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let step_rel = delta.iter().zip(&x).map(|(d, v)| (d / v.abs().max(1e-12)).abs()).fold(0.0, f64::max);
                let drop = (c - ct) / c.max(f64::MIN_POSITIVE);
                x = trial;
                r = rt;
                c = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if drop < REL_TOL || step_rel < REL_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: at a minimum to working precision
            converged = true;
        }
        if converged || c == 0.0 {
            converged = true;
            break;
        }
        jac = jacobian(&f, &x, &r);
    }
    let jac = jacobian(&f, &x, &r);
    let dof = r.len().saturating_sub(x.len()).max(1) as f64;
    let covariance = (jac.transpose() * &jac).try_inverse().map(|m| m * (c / dof));
    LmResult { params: x, cost: c, iterations, converged, covariance }
}
