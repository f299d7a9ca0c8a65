//! Variational families with reparameterized sampling.
//!
//! Every family is a bijection `z = T_phi(eps)` of standard-normal noise, so
//! all gradient building blocks reduce to two reverse passes:
//!
//! - through the forward map, for cotangents on `z` and on
//!   `log |det dT/deps|` ([`FamilyParams::sample_vjp`],
//!   [`FamilyParams::logq_grad_full`]);
//! - through the inverse map, for `grad_z log q_theta(z)` at frozen
//!   parameters ([`FamilyParams::logq_grad_stl`]) and for the score
//!   ([`FamilyParams::score`]).
//!
//! Single-sample methods take and return plain vectors. The `*_batch`
//! methods take row-major batches (one sample per row) and are what the
//! estimators use.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::std_normal_log_density;

mod checkpoint;
pub(crate) mod flow;
pub(crate) mod gaussian;

use flow::FlowLayout;

/// Default real-NVP depth (coupling layers).
pub const DEFAULT_FLOW_LAYERS: usize = 10;
/// Default hidden width of the coupling networks.
pub const DEFAULT_FLOW_HIDDEN: usize = 32;
/// Standard deviation of the flow network weights at initialization.
pub const FLOW_INIT_SD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    GaussianDiag,
    GaussianFull,
    RealNvp { layers: usize, hidden: usize },
}

impl FamilyKind {
    pub fn real_nvp() -> Self {
        Self::RealNvp { layers: DEFAULT_FLOW_LAYERS, hidden: DEFAULT_FLOW_HIDDEN }
    }

    pub fn is_gaussian(&self) -> bool {
        !matches!(self, Self::RealNvp { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianDiag => "gaussian_diag",
            Self::GaussianFull => "gaussian_full",
            Self::RealNvp { .. } => "real_nvp",
        }
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_diag" => Ok(Self::GaussianDiag),
            "gaussian_full" => Ok(Self::GaussianFull),
            "real_nvp" => Ok(Self::real_nvp()),
            _ => Err(Error::Config(format!(
                "unknown family `{s}`; valid families: gaussian_diag, gaussian_full, real_nvp"
            ))),
        }
    }
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Flat parameter vector of a variational family.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyParams {
    kind: FamilyKind,
    dim: usize,
    values: Vec<f64>,
}

/// Saved forward pass, reused by the reverse passes.
pub struct ForwardPass {
    pub z: Vec<f64>,
    /// Per-row `log |det dz/deps|`.
    pub log_det: Vec<f64>,
    eps: Vec<f64>,
    flow: Option<flow::ForwardCache>,
}

impl ForwardPass {
    pub fn rows(&self) -> usize {
        self.log_det.len()
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    /// Per-row `log q(z)`, from the forward path.
    pub fn log_density(&self) -> Vec<f64> {
        let dim = self.eps.len() / self.rows().max(1);
        self.eps
            .chunks_exact(dim)
            .zip(&self.log_det)
            .map(|(e, ld)| std_normal_log_density(e) - ld)
            .collect()
    }
}

enum InverseCache {
    Gaussian,
    Flow(flow::InverseCache),
}

/// Saved inverse pass `z -> eps`.
struct InversePass {
    eps: Vec<f64>,
    log_det: Vec<f64>,
    cache: InverseCache,
}

impl FamilyParams {
    /// Parameter count for a family of dimension `dim`.
    pub fn param_count(kind: FamilyKind, dim: usize) -> usize {
        match kind {
            FamilyKind::GaussianDiag => gaussian::param_count(dim, false),
            FamilyKind::GaussianFull => gaussian::param_count(dim, true),
            FamilyKind::RealNvp { layers, hidden } => FlowLayout { dim, layers, hidden }.param_count(),
        }
    }

    fn validate(kind: FamilyKind, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::UnsupportedFamily("dimension must be at least 1".into()));
        }
        if let FamilyKind::RealNvp { layers, hidden } = kind {
            if dim < 2 {
                return Err(Error::UnsupportedFamily(
                    "real-NVP needs at least two dimensions to split".into(),
                ));
            }
            if layers == 0 || hidden == 0 {
                return Err(Error::UnsupportedFamily("real-NVP needs layers >= 1 and hidden >= 1".into()));
            }
        }
        Ok(())
    }

    /// Builds a family from an explicit parameter vector.
    pub fn from_values(kind: FamilyKind, dim: usize, values: Vec<f64>) -> Result<Self> {
        Self::validate(kind, dim)?;
        let expected = Self::param_count(kind, dim);
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        Ok(Self { kind, dim, values })
    }

    /// Standard-normal initialization. Gaussians start at `mu = 0`,
    /// `L = I`; flow network weights are drawn from `N(0, 0.001^2)`, which
    /// makes the flow a near-identity map of the standard-normal base.
    pub fn init_standard(kind: FamilyKind, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::validate(kind, dim)?;
        let n = Self::param_count(kind, dim);
        let values = match kind {
            FamilyKind::GaussianDiag | FamilyKind::GaussianFull => vec![0.0; n],
            FamilyKind::RealNvp { .. } => {
                let normal = Normal::new(0.0, FLOW_INIT_SD).expect("valid sd");
                (0..n).map(|_| normal.sample(rng)).collect()
            }
        };
        Ok(Self { kind, dim, values })
    }

    /// Full-rank Gaussian with the given mean and lower Cholesky factor
    /// (row-major, `dim x dim`).
    pub fn gaussian_full(mean: &[f64], chol: &[f64]) -> Result<Self> {
        let dim = mean.len();
        if chol.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: chol.len() });
        }
        let mut values = vec![0.0; gaussian::param_count(dim, true)];
        values[..dim].copy_from_slice(mean);
        for i in 0..dim {
            for j in 0..i {
                values[gaussian::tril_index(dim, i, j)] = chol[i * dim + j];
            }
            let d = chol[i * dim + i];
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Degenerate(format!("Cholesky diagonal entry {i} is {d}")));
            }
            values[gaussian::tril_index(dim, i, i)] = d.ln();
        }
        Self::from_values(FamilyKind::GaussianFull, dim, values)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean of a Gaussian family.
    pub fn mean(&self) -> Result<&[f64]> {
        self.require_gaussian("mean")?;
        Ok(&self.values[..self.dim])
    }

    /// Dense lower Cholesky factor of a Gaussian family, row-major.
    pub fn cholesky(&self) -> Result<Vec<f64>> {
        self.require_gaussian("cholesky")?;
        Ok(gaussian::cholesky_factor(self.dim, &self.values, self.is_full()))
    }

    fn is_full(&self) -> bool {
        self.kind == FamilyKind::GaussianFull
    }

    fn layout(&self) -> Option<FlowLayout> {
        match self.kind {
            FamilyKind::RealNvp { layers, hidden } => Some(FlowLayout { dim: self.dim, layers, hidden }),
            _ => None,
        }
    }

    fn require_gaussian(&self, what: &str) -> Result<()> {
        if self.kind.is_gaussian() {
            Ok(())
        } else {
            Err(Error::UnsupportedFamily(format!("{what} is only defined for Gaussian families")))
        }
    }

    fn check_batch(&self, batch: &[f64]) -> Result<usize> {
        if !batch.len().is_multiple_of(self.dim) || batch.is_empty() {
            return Err(Error::DimensionMismatch { expected: self.dim, got: batch.len() });
        }
        Ok(batch.len() / self.dim)
    }

    /// Draws `rows` standard-normal noise vectors, row-major.
    pub fn draw_noise(&self, rows: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..rows * self.dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Forward pass over a batch of noise rows.
    pub fn forward(&self, eps: &[f64]) -> Result<ForwardPass> {
        self.check_batch(eps)?;
        Ok(match self.layout() {
            None => {
                let (z, log_det) = gaussian::forward(self.dim, &self.values, self.is_full(), eps);
                ForwardPass { z, log_det, eps: eps.to_vec(), flow: None }
            }
            Some(layout) => {
                let (z, log_det, cache) = flow::forward(&layout, &self.values, eps);
                ForwardPass { z, log_det, eps: eps.to_vec(), flow: Some(cache) }
            }
        })
    }

    /// Parameter gradient of `sum_n zbar_n . z_n + lambda_n * logdet_n`
    /// along a saved forward pass.
    pub fn backward(&self, pass: &ForwardPass, zbar: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        if zbar.len() != pass.z.len() || lambda.len() != pass.rows() {
            return Err(Error::DimensionMismatch { expected: pass.z.len(), got: zbar.len() });
        }
        let mut grad = vec![0.0; self.values.len()];
        match (self.layout(), &pass.flow) {
            (None, _) => gaussian::backward(
                self.dim,
                &self.values,
                self.is_full(),
                &pass.eps,
                zbar,
                lambda,
                &mut grad,
            ),
            (Some(layout), Some(cache)) => flow::backward(&layout, &self.values, cache, zbar, lambda, &mut grad),
            (Some(_), None) => unreachable!("flow forward passes always carry a cache"),
        }
        Ok(grad)
    }

    fn inverse_pass(&self, z: &[f64]) -> Result<InversePass> {
        self.check_batch(z)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { z: z.to_vec() });
        }
        let pass = match self.layout() {
            None => {
                let (eps, log_det) = gaussian::inverse(self.dim, &self.values, self.is_full(), z);
                InversePass { eps, log_det, cache: InverseCache::Gaussian }
            }
            Some(layout) => {
                let (eps, log_det, cache) = flow::inverse(&layout, &self.values, z);
                InversePass { eps, log_det, cache: InverseCache::Flow(cache) }
            }
        };
        if pass.eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("inverse map produced non-finite noise".into()));
        }
        Ok(pass)
    }

    fn backward_inverse(
        &self,
        pass: &InversePass,
        eps_bar: &[f64],
        lambda: &[f64],
        grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        match (&pass.cache, self.layout()) {
            (InverseCache::Gaussian, _) => gaussian::backward_inverse(
                self.dim,
                &self.values,
                self.is_full(),
                &pass.eps,
                eps_bar,
                lambda,
                grad,
            ),
            (InverseCache::Flow(cache), Some(layout)) => {
                flow::backward_inverse(&layout, &self.values, cache, eps_bar, lambda, grad)
            }
            (InverseCache::Flow(_), None) => unreachable!("flow caches come from flow families"),
        }
    }

    /// `z = T_phi(eps)` for one noise vector.
    pub fn sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_single(eps)?;
        Ok(self.forward(eps)?.z)
    }

    /// `eps = T_phi^{-1}(z)`.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_single(z)?;
        Ok(self.inverse_pass(z)?.eps)
    }

    /// `log |det dT^{-1}/dz|` at `z`.
    pub fn inverse_log_det(&self, z: &[f64]) -> Result<f64> {
        self.check_single(z)?;
        Ok(self.inverse_pass(z)?.log_det[0])
    }

    fn check_single(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        Ok(())
    }

    /// Exact `log q_phi(z)`, through the inverse map.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        self.check_single(z)?;
        Ok(self.log_density_batch(z)?[0])
    }

    pub fn log_density_batch(&self, z: &[f64]) -> Result<Vec<f64>> {
        let pass = self.inverse_pass(z)?;
        Ok(pass
            .eps
            .chunks_exact(self.dim)
            .zip(&pass.log_det)
            .map(|(e, ld)| std_normal_log_density(e) + ld)
            .collect())
    }

    /// `log q_theta(z)` and `grad_z log q_theta(z)` per row, with the
    /// parameters held fixed. Uses the inverse map.
    pub fn log_density_grad_z_batch(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let pass = self.inverse_pass(z)?;
        let eps_bar: Vec<f64> = pass.eps.iter().map(|e| -e).collect();
        let lambda = vec![1.0; pass.log_det.len()];
        let zbar = self.backward_inverse(&pass, &eps_bar, &lambda, None);
        let logq = pass
            .eps
            .chunks_exact(self.dim)
            .zip(&pass.log_det)
            .map(|(e, ld)| std_normal_log_density(e) + ld)
            .collect();
        Ok((logq, zbar))
    }

    /// Closed-form entropy of a Gaussian family.
    pub fn entropy_closed_form(&self) -> Result<f64> {
        self.require_gaussian("closed-form entropy")?;
        Ok(gaussian::entropy(self.dim, &self.values, self.is_full()))
    }

    /// Gradient of [`Self::entropy_closed_form`] with respect to the
    /// parameters.
    pub fn entropy_grad(&self) -> Result<Vec<f64>> {
        self.require_gaussian("closed-form entropy")?;
        Ok(gaussian::entropy_grad(self.dim, self.is_full()))
    }

    /// `cotangent^T dz_phi(eps)/dphi`.
    pub fn sample_vjp(&self, eps: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_single(eps)?;
        self.check_single(cotangent)?;
        let pass = self.forward(eps)?;
        self.backward(&pass, cotangent, &[0.0])
    }

    /// Total derivative `grad_phi log q_phi(z_phi(eps))`. Since
    /// `log q_phi(z_phi(eps)) = log N(eps) - logdet(phi, eps)`, this only
    /// needs the forward map.
    pub fn logq_grad_full(&self, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_single(eps)?;
        let pass = self.forward(eps)?;
        self.backward(&pass, &vec![0.0; self.dim], &[-1.0])
    }

    /// Path-only derivative `(grad_phi log q_theta(z_phi(eps)))_{theta=phi}`:
    /// the sample is re-evaluated at frozen parameters through the inverse
    /// map and the density gradient is pulled back along the sampling path.
    pub fn logq_grad_stl(&self, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_single(eps)?;
        let pass = self.forward(eps)?;
        let (_, grad_z) = self.log_density_grad_z_batch(&pass.z)?;
        self.backward(&pass, &grad_z, &[0.0])
    }

    /// Score `grad_phi log q_phi(z)` at fixed `z`, via the inverse map.
    pub fn score(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_single(z)?;
        let pass = self.inverse_pass(z)?;
        let eps_bar: Vec<f64> = pass.eps.iter().map(|e| -e).collect();
        let mut grad = vec![0.0; self.values.len()];
        self.backward_inverse(&pass, &eps_bar, &[1.0], Some(&mut grad));
        Ok(grad)
    }
}

pub use checkpoint::{read_checkpoint, write_checkpoint};

#[cfg(test)]
mod tests;
