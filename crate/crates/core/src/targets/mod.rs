//! Target posteriors on an unconstrained latent space.
//!
//! A [`TargetModel`] wraps a [`LogDensity`] implementation with a name, an
//! optional analytic log evidence and an oracle-evaluation counter. Each call
//! to [`TargetModel::log_joint`], [`TargetModel::grad_log_joint`] or
//! [`TargetModel::log_joint_and_grad`] counts as exactly one oracle
//! evaluation, whether or not it succeeds.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

mod models;
pub mod transforms;

pub use models::{EightSchools, Funnel, GaussianTarget, LinearGaussian, LogisticRegression, SimplexCounts};
pub use transforms::ConstraintTransform;

/// An unnormalized log density `log p(z, x)` over `z` in `R^dim`.
///
/// Implementations must be finite everywhere; constrained variables are
/// reached through [`ConstraintTransform`]s whose log-Jacobians are added to
/// the density.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(z, x)` and writes its gradient into `grad`.
    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, z: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.dim()];
        self.log_density_and_grad(z, &mut grad)
    }
}

/// A named log-density oracle with evaluation accounting.
pub struct TargetModel {
    name: String,
    density: Box<dyn LogDensity>,
    analytic_evidence: Option<f64>,
    oracle_evals: AtomicU64,
}

impl std::fmt::Debug for TargetModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TargetModel")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("analytic_evidence", &self.analytic_evidence)
            .field("oracle_evals", &self.oracle_evals())
            .finish()
    }
}

impl TargetModel {
    pub fn new(
        name: impl Into<String>,
        density: impl LogDensity + 'static,
        analytic_evidence: Option<f64>,
    ) -> Self {
        Self {
            name: name.into(),
            density: Box::new(density),
            analytic_evidence,
            oracle_evals: AtomicU64::new(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    /// `log p(x)` when it is known in closed form.
    pub fn analytic_evidence(&self) -> Option<f64> {
        self.analytic_evidence
    }

    /// Total oracle evaluations made through this model so far.
    pub fn oracle_evals(&self) -> u64 {
        self.oracle_evals.load(Ordering::Relaxed)
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        self.oracle_evals.fetch_add(1, Ordering::Relaxed);
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { z: z.to_vec() });
        }
        Ok(())
    }

    fn non_finite(&self, z: &[f64]) -> Error {
        Error::NonFiniteTarget { model: self.name.clone(), z: z.to_vec() }
    }

    pub fn log_joint(&self, z: &[f64]) -> Result<f64> {
        self.check_input(z)?;
        let value = self.density.log_density(z);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(self.non_finite(z))
        }
    }

    pub fn grad_log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.dim()];
        self.log_joint_and_grad(z, &mut grad)?;
        Ok(grad)
    }

    /// One oracle evaluation returning the value and writing the gradient.
    pub fn log_joint_and_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_input(z)?;
        if grad.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: grad.len() });
        }
        let value = self.density.log_density_and_grad(z, grad);
        if value.is_finite() && grad.iter().all(|g| g.is_finite()) {
            Ok(value)
        } else {
            Err(self.non_finite(z))
        }
    }
}

/// Names of the built-in models, in zoo order.
pub const ZOO_NAMES: [&str; 6] = [
    "conjugate_regression",
    "correlated_gaussian",
    "logistic_regression",
    "funnel",
    "eight_schools",
    "simplex",
];

/// All built-in benchmark targets.
pub fn make_zoo() -> Vec<TargetModel> {
    ZOO_NAMES.iter().map(|name| model_by_name(name).expect("zoo name")).collect()
}

/// Looks up a built-in model by name.
pub fn model_by_name(name: &str) -> Result<TargetModel> {
    let model = match name {
        "conjugate_regression" => {
            let target = LinearGaussian::regression_fixture();
            let evidence = target.log_evidence();
            TargetModel::new(name, target, Some(evidence))
        }
        "correlated_gaussian" => {
            let target = GaussianTarget::correlated_fixture();
            let evidence = target.log_evidence();
            TargetModel::new(name, target, Some(evidence))
        }
        "logistic_regression" => TargetModel::new(name, LogisticRegression::fixture(), None),
        // Both terms are normalized densities and there is no data.
        "funnel" => TargetModel::new(name, Funnel::new(3.0), Some(0.0)),
        "eight_schools" => TargetModel::new(name, EightSchools::new(), None),
        "simplex" => {
            let target = SimplexCounts::fixture();
            let evidence = target.log_evidence();
            TargetModel::new(name, target, Some(evidence))
        }
        _ => {
            return Err(Error::UnknownModel { name: name.to_string(), valid: ZOO_NAMES.join(", ") })
        }
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LN_2PI;

    #[test]
    fn zoo_has_all_models_with_expected_dims() {
        let zoo = make_zoo();
        assert!(zoo.len() >= 6);
        let dims: Vec<(String, usize)> = zoo.iter().map(|m| (m.name().to_string(), m.dim())).collect();
        assert!(dims.contains(&("eight_schools".to_string(), 10)));
        assert!(dims.contains(&("funnel".to_string(), 2)));
        assert!(dims.contains(&("simplex".to_string(), 2)));
        assert!(zoo.iter().all(|m| m.dim() >= 2));
        for name in ["conjugate_regression", "correlated_gaussian", "funnel", "simplex"] {
            assert!(model_by_name(name).unwrap().analytic_evidence().is_some(), "{name}");
        }
    }

    #[test]
    fn unknown_model_names_valid_options() {
        let err = model_by_name("nosuch").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("funnel") && msg.contains("eight_schools"), "{msg}");
    }

    #[test]
    fn standard_normal_at_mode() {
        let model = TargetModel::new("std", GaussianTarget::standard(2), Some(0.0));
        let mut g = vec![1.0; 2];
        let v = model.log_joint_and_grad(&[0.0, 0.0], &mut g).unwrap();
        assert!((v - (-1.837_877_066_409_345)).abs() < 1e-12);
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(model.oracle_evals(), 1);
    }

    #[test]
    fn scalar_conjugate_gaussian_at_zero() {
        let model = TargetModel::new("c", LinearGaussian::scalar(1.0, 1.0, 0.0), None);
        let v = model.log_joint(&[0.0]).unwrap();
        assert!((v - (-LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn funnel_at_origin() {
        let model = model_by_name("funnel").unwrap();
        let v = model.log_joint(&[0.0, 0.0]).unwrap();
        // log N(0 | 0, 9) + log N(0 | 0, 1)
        let want = -0.5 * (2.0 * std::f64::consts::PI * 9.0).ln()
            - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input_is_rejected_and_counted() {
        let model = model_by_name("funnel").unwrap();
        assert!(matches!(model.log_joint(&[f64::NAN, 0.0]), Err(Error::NonFiniteInput { .. })));
        assert!(matches!(model.log_joint(&[0.0]), Err(Error::DimensionMismatch { .. })));
        assert_eq!(model.oracle_evals(), 2);
    }

    #[test]
    fn non_finite_output_carries_z() {
        // exp(-v) overflows for very negative v
        let model = model_by_name("funnel").unwrap();
        match model.log_joint(&[-800.0, 1.0]) {
            Err(Error::NonFiniteTarget { z, .. }) => assert_eq!(z, vec![-800.0, 1.0]),
            other => panic!("expected target error, got {other:?}"),
        }
    }

    #[test]
    fn counter_is_exact_under_concurrency() {
        let model = model_by_name("logistic_regression").unwrap();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..250 {
                        model.grad_log_joint(&[0.1, 0.2, 0.3]).unwrap();
                    }
                });
            }
        });
        assert_eq!(model.oracle_evals(), 1000);
    }
}
