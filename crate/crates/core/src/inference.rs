//! Posterior access after training: plain and importance-weighted sampling,
//! and the final bound evaluation on fresh samples.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::iwelbo_copies;
use crate::families::FamilyParams;
use crate::linalg::softmax;
use crate::targets::TargetModel;

/// Fresh samples drawn by [`evaluate`] unless told otherwise.
pub const DEFAULT_EVAL_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Elbo,
    Iwelbo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bound_kind: BoundKind,
    pub m_sampling: usize,
    pub n_fresh_samples: usize,
    pub copies: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub oracle_evals: usize,
}

impl EvalReport {
    /// The JSON record written next to a trained run.
    pub fn to_json(&self, model: &str, method: &str, seed: u64) -> serde_json::Value {
        serde_json::json!({
            "model": model,
            "method": method,
            "seed": seed,
            "bound_kind": self.bound_kind,
            "M": self.m_sampling,
            "estimate": finite_or_null(self.estimate),
            "se": finite_or_null(self.std_error),
        })
    }
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Draws `M` candidates from q and returns one chosen with probability
/// proportional to its importance weight, along with its index.
pub fn iw_sample_indexed(
    model: &TargetModel,
    params: &FamilyParams,
    rng: &mut impl Rng,
    m: usize,
) -> Result<(Vec<f64>, usize)> {
    if m == 0 {
        return Err(Error::Config("M must be at least 1".into()));
    }
    let dim = params.dim();
    let eps = params.draw_noise(m, rng);
    let pass = params.forward(&eps)?;
    let log_q = pass.log_density();
    let mut log_w = Vec::with_capacity(m);
    for (z, lq) in pass.z.chunks_exact(dim).zip(&log_q) {
        log_w.push(model.log_joint(z)? - lq);
    }
    let index = categorical(&log_w, rng)?;
    Ok((pass.z[index * dim..(index + 1) * dim].to_vec(), index))
}

pub fn iw_sample(model: &TargetModel, params: &FamilyParams, rng: &mut impl Rng, m: usize) -> Result<Vec<f64>> {
    iw_sample_indexed(model, params, rng, m).map(|(z, _)| z)
}

/// Index drawn from the softmax of `log_w`.
pub fn categorical(log_w: &[f64], rng: &mut impl Rng) -> Result<usize> {
    if log_w.len() == 1 {
        return Ok(0);
    }
    let probs = softmax(log_w);
    let dist = WeightedIndex::new(&probs).map_err(|e| Error::Degenerate(format!("importance weights: {e}")))?;
    Ok(dist.sample(rng))
}

/// Averages `n / M` copies of the `M`-sample IW-ELBO on fresh samples.
/// `M = 1` gives the plain ELBO.
pub fn evaluate(
    model: &TargetModel,
    params: &FamilyParams,
    rng: &mut impl Rng,
    m_sampling: usize,
    n: usize,
) -> Result<EvalReport> {
    if m_sampling == 0 || n == 0 || !n.is_multiple_of(m_sampling) {
        return Err(Error::Config(format!(
            "{n} evaluation samples are not divisible into copies of M = {m_sampling}"
        )));
    }
    let copies = n / m_sampling;
    let eps = params.draw_noise(n, rng);
    let values = iwelbo_copies(model, params, m_sampling, &eps)?;
    let mean = values.iter().sum::<f64>() / copies as f64;
    let std_error = if copies > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (copies - 1) as f64;
        (var / copies as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(EvalReport {
        bound_kind: if m_sampling == 1 { BoundKind::Elbo } else { BoundKind::Iwelbo },
        m_sampling,
        n_fresh_samples: n,
        copies,
        estimate: mean,
        std_error,
        oracle_evals: n,
    })
}
