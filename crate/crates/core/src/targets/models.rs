use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::transforms::{stick_breaking_grad, stick_breaking_log, ConstraintTransform};
use super::LogDensity;
use crate::linalg::{sigmoid, softplus, LN_2PI};

fn normal_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * r * r
}

/// `log N(z; mean, cov) + log_evidence`: a Gaussian posterior with a known
/// normalizing constant.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_evidence: f64,
    log_norm: f64,
}

impl GaussianTarget {
    /// Panics if `cov` is not positive definite.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, log_evidence: f64) -> Self {
        let d = mean.len();
        assert_eq!(cov.shape(), (d, d));
        let chol = cov.cholesky().expect("covariance must be positive definite").l();
        let log_det: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
        Self {
            mean: DVector::from_vec(mean),
            chol,
            log_evidence,
            log_norm: -0.5 * d as f64 * LN_2PI - log_det,
        }
    }

    pub fn standard(d: usize) -> Self {
        Self::new(vec![0.0; d], DMatrix::identity(d, d), 0.0)
    }

    /// Four-dimensional, equicorrelated (rho = 0.9) with unequal scales.
    pub fn correlated_fixture() -> Self {
        let mean = vec![1.0, -1.0, 0.5, 2.0];
        let scales = [1.0, 2.0, 0.5, 1.5];
        let cov = DMatrix::from_fn(4, 4, |i, j| {
            let rho = if i == j { 1.0 } else { 0.9 };
            rho * scales[i] * scales[j]
        });
        Self::new(mean, cov, -3.0)
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }
}

impl LogDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let diff = DVector::from_column_slice(z) - &self.mean;
        let white = self.chol.solve_lower_triangular(&diff).expect("nonsingular factor");
        let precision_diff = self.chol.tr_solve_lower_triangular(&white).expect("nonsingular factor");
        for (g, p) in grad.iter_mut().zip(precision_diff.iter()) {
            *g = -p;
        }
        self.log_norm - 0.5 * white.norm_squared() + self.log_evidence
    }
}

/// Bayesian linear regression with known noise:
/// `z ~ N(0, prior_sd^2 I)`, `y ~ N(X z, noise_sd^2 I)`.
#[derive(Debug, Clone)]
pub struct LinearGaussian {
    design: DMatrix<f64>,
    y: DVector<f64>,
    prior_sd: f64,
    noise_sd: f64,
}

impl LinearGaussian {
    pub fn new(design: DMatrix<f64>, y: Vec<f64>, prior_sd: f64, noise_sd: f64) -> Self {
        assert_eq!(design.nrows(), y.len());
        Self { design, y: DVector::from_vec(y), prior_sd, noise_sd }
    }

    /// One latent variable observed once: `z ~ N(0, prior_sd^2)`,
    /// `x | z ~ N(z, noise_sd^2)`.
    pub fn scalar(prior_sd: f64, noise_sd: f64, observation: f64) -> Self {
        Self::new(DMatrix::from_element(1, 1, 1.0), vec![observation], prior_sd, noise_sd)
    }

    /// Intercept and slope, eight observations.
    pub fn regression_fixture() -> Self {
        let t = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0];
        let y = vec![-1.9, -1.2, -0.4, 0.3, 0.7, 1.6, 2.0, 2.9];
        let design = DMatrix::from_fn(8, 2, |i, j| if j == 0 { 1.0 } else { t[i] });
        Self::new(design, y, 1.0, 0.5)
    }

    /// `log p(y)`, with `y ~ N(0, prior_sd^2 X X^T + noise_sd^2 I)`.
    pub fn log_evidence(&self) -> f64 {
        let n = self.y.len();
        let cov = &self.design * self.design.transpose() * self.prior_sd.powi(2)
            + DMatrix::identity(n, n) * self.noise_sd.powi(2);
        let chol = cov.cholesky().expect("marginal covariance is positive definite");
        let white = chol.l().solve_lower_triangular(&self.y).expect("nonsingular");
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * n as f64 * LN_2PI - log_det - 0.5 * white.norm_squared()
    }

    /// Mean and covariance of `p(z | y)`.
    pub fn posterior(&self) -> (Vec<f64>, DMatrix<f64>) {
        let d = self.design.ncols();
        let precision = self.design.transpose() * &self.design / self.noise_sd.powi(2)
            + DMatrix::identity(d, d) / self.prior_sd.powi(2);
        let cov = precision.try_inverse().expect("posterior precision is invertible");
        let mean = &cov * self.design.transpose() * &self.y / self.noise_sd.powi(2);
        (mean.as_slice().to_vec(), cov)
    }
}

impl LogDensity for LinearGaussian {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let z = DVector::from_column_slice(z);
        let resid = &self.y - &self.design * &z;
        let g = self.design.transpose() * &resid / self.noise_sd.powi(2) - &z / self.prior_sd.powi(2);
        grad.copy_from_slice(g.as_slice());
        let prior: f64 = z.iter().map(|&v| normal_log_density(v, 0.0, self.prior_sd)).sum();
        let lik: f64 = resid.iter().map(|&r| normal_log_density(r, 0.0, self.noise_sd)).sum();
        prior + lik
    }
}

/// Logistic regression with an isotropic Gaussian prior on the weights.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    /// Row-major, `n x p`.
    features: Vec<f64>,
    labels: Vec<f64>,
    p: usize,
    prior_sd: f64,
}

impl LogisticRegression {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, p: usize, prior_sd: f64) -> Self {
        assert_eq!(features.len(), labels.len() * p);
        Self { features, labels, p, prior_sd }
    }

    /// Twenty observations with an intercept and two covariates.
    pub fn fixture() -> Self {
        const DATA: [(f64, f64, f64); 20] = [
            (-1.2, 0.4, 0.0),
            (0.3, -0.8, 1.0),
            (1.5, 1.1, 1.0),
            (-0.7, -1.3, 0.0),
            (0.9, 0.2, 1.0),
            (-2.1, 0.9, 0.0),
            (0.1, 0.5, 0.0),
            (1.8, -0.4, 1.0),
            (-0.4, 1.7, 1.0),
            (0.6, -1.9, 0.0),
            (-1.6, -0.2, 0.0),
            (2.2, 0.8, 1.0),
            (-0.1, -0.6, 0.0),
            (1.1, 1.4, 1.0),
            (-0.9, 0.1, 1.0),
            (0.4, 0.3, 1.0),
            (-1.4, -1.5, 0.0),
            (0.8, -0.9, 0.0),
            (1.3, 0.6, 1.0),
            (-0.3, 1.2, 0.0),
        ];
        let mut features = Vec::with_capacity(60);
        let mut labels = Vec::with_capacity(20);
        for &(a, b, y) in &DATA {
            features.extend_from_slice(&[1.0, a, b]);
            labels.push(y);
        }
        Self::new(features, labels, 3, 2.0)
    }
}

impl LogDensity for LogisticRegression {
    fn dim(&self) -> usize {
        self.p
    }

    fn log_density_and_grad(&self, beta: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for (g, &b) in grad.iter_mut().zip(beta) {
            lp += normal_log_density(b, 0.0, self.prior_sd);
            *g = -b / self.prior_sd.powi(2);
        }
        for (row, &y) in self.features.chunks_exact(self.p).zip(&self.labels) {
            let eta: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
            lp += y * eta - softplus(eta);
            let r = y - sigmoid(eta);
            for (g, x) in grad.iter_mut().zip(row) {
                *g += r * x;
            }
        }
        lp
    }
}

/// Neal's funnel: `v ~ N(0, scale^2)`, `w | v ~ N(0, exp(v))`.
#[derive(Debug, Clone)]
pub struct Funnel {
    scale: f64,
}

impl Funnel {
    pub fn new(scale: f64) -> Self {
        Self { scale }
    }
}

impl LogDensity for Funnel {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let (v, w) = (z[0], z[1]);
        let inv_var = (-v).exp();
        grad[0] = -v / self.scale.powi(2) - 0.5 + 0.5 * w * w * inv_var;
        grad[1] = -w * inv_var;
        normal_log_density(v, 0.0, self.scale) - 0.5 * LN_2PI - 0.5 * v - 0.5 * w * w * inv_var
    }
}

/// Centered eight-schools model.
///
/// Latent layout: `[theta_1..theta_8, mu, log tau]`, with
/// `mu ~ N(0, 5^2)`, `tau ~ HalfCauchy(0, 5)`, `theta_j ~ N(mu, tau^2)` and
/// `y_j ~ N(theta_j, sigma_j^2)`.
#[derive(Debug, Clone)]
pub struct EightSchools {
    y: [f64; 8],
    sigma: [f64; 8],
}

impl Default for EightSchools {
    fn default() -> Self {
        Self::new()
    }
}

impl EightSchools {
    pub fn new() -> Self {
        Self {
            y: [28.0, 8.0, -3.0, 7.0, -1.0, 1.0, 18.0, 12.0],
            sigma: [15.0, 10.0, 16.0, 11.0, 9.0, 11.0, 10.0, 18.0],
        }
    }
}

impl LogDensity for EightSchools {
    fn dim(&self) -> usize {
        10
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        const PRIOR_SCALE: f64 = 5.0;
        let theta = &z[..8];
        let mu = z[8];
        let (tau, log_jac) = ConstraintTransform::Positive.apply(&z[9..10]).expect("one coordinate");
        let tau = tau[0];
        let log_tau = log_jac;
        let inv_tau2 = (-2.0 * log_tau).exp();

        let mut lp = 0.0;
        let mut d_mu = 0.0;
        let mut d_log_tau = 0.0;
        for j in 0..8 {
            lp += normal_log_density(self.y[j], theta[j], self.sigma[j]);
            lp += normal_log_density(theta[j], mu, tau);
            let dev = theta[j] - mu;
            grad[j] = (self.y[j] - theta[j]) / self.sigma[j].powi(2) - dev * inv_tau2;
            d_mu += dev * inv_tau2;
            d_log_tau += -1.0 + dev * dev * inv_tau2;
        }
        lp += normal_log_density(mu, 0.0, PRIOR_SCALE);
        d_mu -= mu / PRIOR_SCALE.powi(2);

        // half-Cauchy(0, 5) in terms of log tau, plus the log-Jacobian
        let a = 2.0 * log_tau - 2.0 * PRIOR_SCALE.ln();
        lp += std::f64::consts::LN_2 - std::f64::consts::PI.ln() - PRIOR_SCALE.ln() - softplus(a);
        d_log_tau -= 2.0 * sigmoid(a);
        lp += log_jac;
        d_log_tau += 1.0;

        grad[8] = d_mu;
        grad[9] = d_log_tau;
        lp
    }
}

/// Categorical observations with a Dirichlet prior on the simplex, reached
/// through stick-breaking.
#[derive(Debug, Clone)]
pub struct SimplexCounts {
    alpha: Vec<f64>,
    counts: Vec<f64>,
    log_norm: f64,
}

impl SimplexCounts {
    pub fn new(alpha: Vec<f64>, counts: Vec<f64>) -> Self {
        assert_eq!(alpha.len(), counts.len());
        assert!(alpha.len() >= 2);
        let log_norm =
            ln_gamma(alpha.iter().sum()) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
        Self { alpha, counts, log_norm }
    }

    /// Three categories, uniform prior, ten observations.
    pub fn fixture() -> Self {
        Self::new(vec![1.0, 1.0, 1.0], vec![2.0, 3.0, 5.0])
    }

    /// Dirichlet-categorical marginal likelihood of the observation sequence.
    pub fn log_evidence(&self) -> f64 {
        let a0: f64 = self.alpha.iter().sum();
        let n: f64 = self.counts.iter().sum();
        ln_gamma(a0) - ln_gamma(a0 + n)
            + self
                .alpha
                .iter()
                .zip(&self.counts)
                .map(|(&a, &c)| ln_gamma(a + c) - ln_gamma(a))
                .sum::<f64>()
    }

    fn coefficients(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.counts).map(|(a, c)| a + c - 1.0).collect()
    }
}

impl LogDensity for SimplexCounts {
    fn dim(&self) -> usize {
        self.alpha.len() - 1
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let coeffs = self.coefficients();
        let (log_x, log_det) = stick_breaking_log(z);
        grad.copy_from_slice(&stick_breaking_grad(z, &coeffs));
        self.log_norm + log_x.iter().zip(&coeffs).map(|(l, c)| c * l).sum::<f64>() + log_det
    }
}
