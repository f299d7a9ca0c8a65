//! Diagonal and full-rank Gaussian families as affine bijections
//! `z = mu + L eps`.
//!
//! Full-rank layout: `[mu (D), L packed row-major lower triangle]`, where
//! the diagonal entries hold `log L_ii`. Diagonal layout: `[mu (D), log sigma
//! (D)]`. All batches are row-major with one sample per row.

/// Offset of `L[i][j]` (`j <= i`) in the full-rank layout.
#[inline]
pub(crate) fn tril_index(dim: usize, i: usize, j: usize) -> usize {
    dim + i * (i + 1) / 2 + j
}

pub(crate) fn param_count(dim: usize, full: bool) -> usize {
    if full {
        dim + dim * (dim + 1) / 2
    } else {
        2 * dim
    }
}

/// Dense lower-triangular `L`, row-major.
pub(crate) fn cholesky_factor(dim: usize, values: &[f64], full: bool) -> Vec<f64> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        if full {
            for j in 0..i {
                l[i * dim + j] = values[tril_index(dim, i, j)];
            }
            l[i * dim + i] = values[tril_index(dim, i, i)].exp();
        } else {
            l[i * dim + i] = values[dim + i].exp();
        }
    }
    l
}

fn log_diag_sum(dim: usize, values: &[f64], full: bool) -> f64 {
    (0..dim)
        .map(|i| if full { values[tril_index(dim, i, i)] } else { values[dim + i] })
        .sum()
}

/// Returns `z` and the per-row `log |det dz/deps|`.
pub(crate) fn forward(dim: usize, values: &[f64], full: bool, eps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = cholesky_factor(dim, values, full);
    let mu = &values[..dim];
    let mut z = vec![0.0; eps.len()];
    for (zr, er) in z.chunks_exact_mut(dim).zip(eps.chunks_exact(dim)) {
        for i in 0..dim {
            let row = &l[i * dim..i * dim + i + 1];
            zr[i] = mu[i] + row.iter().zip(&er[..=i]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let ld = log_diag_sum(dim, values, full);
    (z, vec![ld; eps.len() / dim])
}

/// Accumulates into `grad` the parameter gradient of
/// `sum_n zbar_n . z_n + lambda_n * logdet_n` along the forward map.
pub(crate) fn backward(
    dim: usize,
    values: &[f64],
    full: bool,
    eps: &[f64],
    zbar: &[f64],
    lambda: &[f64],
    grad: &mut [f64],
) {
    let rows = eps.chunks_exact(dim).zip(zbar.chunks_exact(dim)).zip(lambda);
    for ((er, zr), &lam) in rows {
        for i in 0..dim {
            grad[i] += zr[i];
            if full {
                for j in 0..i {
                    grad[tril_index(dim, i, j)] += zr[i] * er[j];
                }
                let k = tril_index(dim, i, i);
                grad[k] += zr[i] * er[i] * values[k].exp() + lam;
            } else {
                let k = dim + i;
                grad[k] += zr[i] * er[i] * values[k].exp() + lam;
            }
        }
    }
}

/// Solves `eps = L^{-1} (z - mu)` row by row; returns `eps` and the per-row
/// log-determinant of the inverse map.
pub(crate) fn inverse(dim: usize, values: &[f64], full: bool, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = cholesky_factor(dim, values, full);
    let mu = &values[..dim];
    let mut eps = vec![0.0; z.len()];
    for (er, zr) in eps.chunks_exact_mut(dim).zip(z.chunks_exact(dim)) {
        for i in 0..dim {
            let mut acc = zr[i] - mu[i];
            for j in 0..i {
                acc -= l[i * dim + j] * er[j];
            }
            er[i] = acc / l[i * dim + i];
        }
    }
    let ld = -log_diag_sum(dim, values, full);
    (eps, vec![ld; z.len() / dim])
}

/// Reverse pass through the inverse map: given cotangents on `eps` and on
/// the inverse log-determinant, returns `zbar` and, if `grad` is given,
/// accumulates parameter gradients.
pub(crate) fn backward_inverse(
    dim: usize,
    values: &[f64],
    full: bool,
    eps: &[f64],
    eps_bar: &[f64],
    lambda: &[f64],
    grad: Option<&mut [f64]>,
) -> Vec<f64> {
    let l = cholesky_factor(dim, values, full);
    let mut zbar = vec![0.0; eps.len()];
    let rows = zbar.chunks_exact_mut(dim).zip(eps_bar.chunks_exact(dim));
    for (zr, br) in rows {
        // zbar = L^{-T} eps_bar, back substitution
        for i in (0..dim).rev() {
            let mut acc = br[i];
            for k in i + 1..dim {
                acc -= l[k * dim + i] * zr[k];
            }
            zr[i] = acc / l[i * dim + i];
        }
    }
    if let Some(grad) = grad {
        let rows = eps.chunks_exact(dim).zip(zbar.chunks_exact(dim)).zip(lambda);
        for ((er, zr), &lam) in rows {
            for i in 0..dim {
                grad[i] -= zr[i];
                if full {
                    for j in 0..i {
                        grad[tril_index(dim, i, j)] -= zr[i] * er[j];
                    }
                    let k = tril_index(dim, i, i);
                    grad[k] -= zr[i] * er[i] * values[k].exp() + lam;
                } else {
                    let k = dim + i;
                    grad[k] -= zr[i] * er[i] * values[k].exp() + lam;
                }
            }
        }
    }
    zbar
}

/// `D/2 log(2 pi e) + sum log L_ii`.
pub(crate) fn entropy(dim: usize, values: &[f64], full: bool) -> f64 {
    0.5 * dim as f64 * (1.0 + crate::linalg::LN_2PI) + log_diag_sum(dim, values, full)
}

pub(crate) fn entropy_grad(dim: usize, full: bool) -> Vec<f64> {
    let mut g = vec![0.0; param_count(dim, full)];
    for i in 0..dim {
        g[if full { tril_index(dim, i, i) } else { dim + i }] = 1.0;
    }
    g
}
