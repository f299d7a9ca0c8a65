//! Bijections from an unconstrained space onto constrained supports.
//!
//! `apply` returns the constrained value together with `log |det J|` of the
//! unconstrained-to-constrained map, which a target adds to its density.

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softplus};

/// Bound on the unconstrained input of the positive transform. Beyond it the
/// value saturates so that squares and reciprocals of the output stay finite.
pub const POSITIVE_MAX_LOG: f64 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintTransform {
    /// `x = exp(u)`.
    Positive,
    /// `x = lower + (upper - lower) * sigmoid(u)`.
    Interval { lower: f64, upper: f64 },
    /// Stick-breaking map from `R^(k-1)` onto the `k`-simplex.
    Simplex { k: usize },
}

impl ConstraintTransform {
    pub fn unconstrained_dim(&self) -> usize {
        match self {
            Self::Positive | Self::Interval { .. } => 1,
            Self::Simplex { k } => k - 1,
        }
    }

    pub fn constrained_dim(&self) -> usize {
        match self {
            Self::Positive | Self::Interval { .. } => 1,
            Self::Simplex { k } => *k,
        }
    }

    fn check_dim(&self, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }

    /// Constrained value and log-Jacobian of the forward map.
    pub fn apply(&self, unconstrained: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(self.unconstrained_dim(), unconstrained.len())?;
        Ok(match self {
            Self::Positive => {
                let u = unconstrained[0].clamp(-POSITIVE_MAX_LOG, POSITIVE_MAX_LOG);
                (vec![u.exp()], u)
            }
            &Self::Interval { lower, upper } => {
                let u = unconstrained[0];
                let width = upper - lower;
                let x = lower + width * sigmoid(u);
                (vec![x], width.ln() - softplus(-u) - softplus(u))
            }
            Self::Simplex { .. } => {
                let (log_x, log_det) = stick_breaking_log(unconstrained);
                (log_x.iter().map(|l| l.exp()).collect(), log_det)
            }
        })
    }

    /// Maps a constrained value back to the unconstrained space.
    pub fn inverse(&self, constrained: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(self.constrained_dim(), constrained.len())?;
        Ok(match self {
            Self::Positive => vec![constrained[0].ln()],
            &Self::Interval { lower, upper } => {
                let p = (constrained[0] - lower) / (upper - lower);
                vec![(p / (1.0 - p)).ln()]
            }
            Self::Simplex { k } => {
                let mut remaining = 1.0;
                let mut u = Vec::with_capacity(k - 1);
                for (i, &x) in constrained[..k - 1].iter().enumerate() {
                    let z = x / remaining;
                    u.push((z / (1.0 - z)).ln() + ((k - 1 - i) as f64).ln());
                    remaining -= x;
                }
                u
            }
        })
    }
}

/// Stick-breaking in log space: returns `log x` (length `k`) and the log
/// Jacobian determinant of `u -> x[..k-1]`.
///
/// Break `i` uses `z_i = sigmoid(u_i - log(k - 1 - i))`, which sends `u = 0`
/// to the uniform point of the simplex.
pub(crate) fn stick_breaking_log(u: &[f64]) -> (Vec<f64>, f64) {
    let k = u.len() + 1;
    let mut log_x = Vec::with_capacity(k);
    let mut log_remaining = 0.0;
    let mut log_det = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        let a = ui - ((k - 1 - i) as f64).ln();
        let log_z = -softplus(-a);
        let log_one_minus_z = -softplus(a);
        log_x.push(log_remaining + log_z);
        log_det += log_z + log_one_minus_z + log_remaining;
        log_remaining += log_one_minus_z;
    }
    log_x.push(log_remaining);
    (log_x, log_det)
}

/// Gradient with respect to `u` of `sum_i c_i log x_i + log |det J|`.
pub(crate) fn stick_breaking_grad(u: &[f64], coeffs: &[f64]) -> Vec<f64> {
    let k = u.len() + 1;
    debug_assert_eq!(coeffs.len(), k);
    // tail[i] = sum of coeffs[i+1..]
    let mut tail = vec![0.0; k];
    for i in (0..k - 1).rev() {
        tail[i] = tail[i + 1] + coeffs[i + 1];
    }
    u.iter()
        .enumerate()
        .map(|(i, &ui)| {
            let z = sigmoid(ui - ((k - 1 - i) as f64).ln());
            // d log z / da = 1 - z,  d log(1 - z) / da = -z
            let d_log_z = coeffs[i] + 1.0;
            let d_log_one_minus_z = 1.0 + tail[i] + (k - 2 - i) as f64;
            d_log_z * (1.0 - z) - d_log_one_minus_z * z
        })
        .collect()
}
