//! Laplace initialization: BFGS to the mode of `log p`, then a
//! finite-difference Hessian.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::families::FamilyParams;
use crate::targets::TargetModel;

pub const LAPLACE_MAX_ITERS: usize = 2000;
const GRAD_TOL: f64 = 1e-8;
const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_HALVINGS: usize = 60;
const FD_STEP: f64 = 1e-6;
/// Curvatures below this (relative to the Hessian's scale, floored at 1)
/// cannot be resolved by a central difference with step 1e-6.
const MIN_CURVATURE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Mode {
    pub z: Vec<f64>,
    pub log_joint: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Minimizes `-log p` with BFGS and a backtracking Armijo line search.
pub fn find_mode(model: &TargetModel, start: &[f64], max_iters: usize) -> Result<Mode> {
    let n = start.len();
    let neg = |z: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let mut g = vec![0.0; n];
        let v = model.log_joint_and_grad(z.as_slice(), &mut g).ok()?;
        Some((-v, -DVector::from_vec(g)))
    };
    let mut x = DVector::from_column_slice(start);
    let (mut f, mut g) = neg(&x).ok_or_else(|| {
        Error::LaplaceFailure(format!("log p is not finite at the starting point {start:?}"))
    })?;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    while iterations < max_iters && g.norm() >= GRAD_TOL {
        iterations += 1;
        let mut d = -(&h_inv * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            d = -g.clone();
            slope = -g.norm_squared();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &x + alpha * &d;
            if let Some((fc, gc)) = neg(&cand) {
                if fc <= f + ARMIJO_C * alpha * slope {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            alpha *= SHRINK;
        }
        let Some((x_new, f_new, g_new)) = accepted else { break };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            h_inv = &left * &h_inv * &right + rho * &s * s.transpose();
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    Ok(Mode { z: x.as_slice().to_vec(), log_joint: -f, iterations, grad_norm: g.norm() })
}

/// Hessian of `log p` by central differences of the gradient, symmetrized.
pub fn fd_hessian(model: &TargetModel, z: &[f64]) -> Result<DMatrix<f64>> {
    let n = z.len();
    let mut h = DMatrix::zeros(n, n);
    let mut point = z.to_vec();
    for j in 0..n {
        point[j] = z[j] + FD_STEP;
        let plus = model.grad_log_joint(&point)?;
        point[j] = z[j] - FD_STEP;
        let minus = model.grad_log_joint(&point)?;
        point[j] = z[j];
        for i in 0..n {
            h[(i, j)] = (plus[i] - minus[i]) / (2.0 * FD_STEP);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Full-rank Gaussian at the mode with covariance `(-H)^-1`, starting the
/// mode search at the origin.
pub fn laplace_init(model: &TargetModel, max_iters: usize) -> Result<FamilyParams> {
    laplace_init_from(model, &vec![0.0; model.dim()], max_iters)
}

pub fn laplace_init_from(model: &TargetModel, start: &[f64], max_iters: usize) -> Result<FamilyParams> {
    let mode = find_mode(model, start, max_iters)?;
    let neg_h = -fd_hessian(model, &mode.z)?;
    let n = neg_h.nrows();
    let eig = SymmetricEigen::new(neg_h.clone());
    let scale = neg_h.amax().max(1.0);
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > MIN_CURVATURE * scale) {
        return Err(Error::LaplaceFailure(format!(
            "negative Hessian at the mode is not positive definite (smallest eigenvalue {min_eig:e})"
        )));
    }
    let cov = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
        * eig.eigenvectors.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::LaplaceFailure("covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut row_major = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            row_major[i * n + j] = l[(i, j)];
        }
    }
    FamilyParams::gaussian_full(&mode.z, &row_major).map_err(|e| Error::LaplaceFailure(e.to_string()))
}
