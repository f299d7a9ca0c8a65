//! Stochastic optimization: Adam, the ADVI step-size scheme and its trial
//! search, the comprehensive step-size grid, and Laplace initialization.
//!
//! All drivers maximize the objective, so updates move along the gradient.

mod laplace;

use std::io::Write;

use rayon::prelude::*;

pub use laplace::{fd_hessian, find_mode, laplace_init, laplace_init_from, Mode, LAPLACE_MAX_ITERS};

use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorConfig};
use crate::families::FamilyParams;
use crate::rng::{self, role};
use crate::targets::TargetModel;

/// One update rule applied in place. Returns `false`, leaving state and
/// parameters untouched, when the gradient is not finite.
pub trait StepRule {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) -> bool;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, eta: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, eta, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> bool {
    assert_eq!(params.len(), grad.len());
    assert_eq!(state.m.len(), grad.len());
    if grad.iter().any(|g| !g.is_finite()) {
        return false;
    }
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] += state.eta * m_hat / (v_hat.sqrt() + state.eps);
    }
    true
}

impl StepRule for AdamState {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) -> bool {
        adam_step(self, params, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdviStepState {
    pub s: Vec<f64>,
    pub alpha: f64,
    pub eta: f64,
    pub tau: f64,
    pub eps: f64,
    /// Number of steps taken so far.
    pub i: u64,
}

impl AdviStepState {
    pub fn new(len: usize, eta: f64) -> Self {
        Self { s: vec![0.0; len], alpha: 0.1, eta, tau: 1.0, eps: 1e-16, i: 0 }
    }

    /// Per-coordinate step size for the current memory `s` and counter `i`.
    pub fn rho(&self, k: usize) -> f64 {
        self.eta / ((self.i as f64).powf(0.5 + self.eps) * (self.tau + self.s[k].sqrt()))
    }
}

pub fn advi_step(state: &mut AdviStepState, params: &mut [f64], grad: &[f64]) -> bool {
    assert_eq!(params.len(), grad.len());
    assert_eq!(state.s.len(), grad.len());
    if grad.iter().any(|g| !g.is_finite()) {
        return false;
    }
    state.i += 1;
    for (s, g) in state.s.iter_mut().zip(grad) {
        *s = if state.i == 1 { g * g } else { state.alpha * g * g + (1.0 - state.alpha) * *s };
    }
    for k in 0..grad.len() {
        params[k] += state.rho(k) * grad[k];
    }
    true
}

impl StepRule for AdviStepState {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) -> bool {
        advi_step(self, params, grad)
    }
}

/// ADVI candidate step sizes.
pub const ADVI_STEP_CANDIDATES: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
pub const ADVI_SEARCH_ITERS: usize = 200;
pub const ADVI_SEARCH_EVAL_SAMPLES: usize = 500;
pub const EARLY_STOP_WINDOW: usize = 100;
pub const EARLY_STOP_TOL: f64 = 1e-3;

/// `0.1 / D * [1, B^-1, ..., B^-4]`.
pub fn step_size_grid(dim: usize, base: f64) -> Vec<f64> {
    assert!(dim >= 1);
    let top = 0.1 / dim as f64;
    (0..5).map(|k| top / base.powi(k)).collect()
}

/// Optimization at one constant step-size setting.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRun {
    pub step_size: f64,
    /// Objective estimate of each completed iteration.
    pub objectives: Vec<f64>,
    pub diverged: bool,
    pub final_params: FamilyParams,
    pub oracle_evals: u64,
}

impl StepRun {
    /// Mean of the finite per-iteration objective estimates.
    pub fn average_objective(&self) -> f64 {
        let finite: Vec<f64> = self.objectives.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace {
    pub runs: Vec<StepRun>,
    /// Index into `runs` of the selected run, if any run survived.
    pub selected: Option<usize>,
}

impl OptimizationTrace {
    pub fn selected_run(&self) -> Option<&StepRun> {
        self.selected.map(|i| &self.runs[i])
    }

    pub fn selected_step_size(&self) -> Option<f64> {
        self.selected_run().map(|r| r.step_size)
    }

    pub fn average_objectives(&self) -> Vec<f64> {
        self.runs.iter().map(StepRun::average_objective).collect()
    }

    /// CSV with columns iteration, step_size, objective_estimate, diverged.
    /// A diverged run ends with one row whose objective is `nan`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "step_size", "objective_estimate", "diverged"])?;
        for run in &self.runs {
            let eta = crate::bench::format_float(run.step_size);
            for (i, obj) in run.objectives.iter().enumerate() {
                w.write_record([(i + 1).to_string(), eta.clone(), crate::bench::format_float(*obj), "0".into()])?;
            }
            if run.diverged {
                let i = run.objectives.len() + 1;
                w.write_record([i.to_string(), eta.clone(), "nan".into(), "1".into()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the run with the largest average objective among runs that did
/// not diverge. Ties go to the smaller step size.
pub fn select_step(step_sizes: &[f64], averages: &[f64], diverged: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..averages.len() {
        if diverged[i] || !averages[i].is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if averages[i] > averages[b] => Some(i),
            Some(b) if averages[i] == averages[b] && step_sizes[i] < step_sizes[b] => Some(i),
            keep => keep,
        };
    }
    best
}

/// Stops once the mean objective of the last window changes by less than
/// `tol` relative to the window before it.
#[derive(Debug, Clone, Copy)]
pub struct EarlyStop {
    pub window: usize,
    pub tol: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { window: EARLY_STOP_WINDOW, tol: EARLY_STOP_TOL }
    }
}

impl EarlyStop {
    fn converged(&self, objectives: &[f64]) -> bool {
        let n = objectives.len();
        if n < 2 * self.window || !n.is_multiple_of(self.window) {
            return false;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let cur = mean(&objectives[n - self.window..]);
        let prev = mean(&objectives[n - 2 * self.window..n - self.window]);
        ((cur - prev) / prev).abs() < self.tol
    }
}

/// Runs `iters` iterations of `rule` from `init`. A non-finite objective,
/// gradient or parameter ends the run as diverged.
#[allow(clippy::too_many_arguments)]
pub fn run_steps(
    model: &TargetModel,
    init: &FamilyParams,
    cfg: &EstimatorConfig,
    rule: &mut impl StepRule,
    step_size: f64,
    iters: usize,
    early_stop: Option<EarlyStop>,
    rng: &mut rng::StreamRng,
) -> Result<StepRun> {
    let mut params = init.clone();
    let mut objectives = Vec::with_capacity(iters);
    let mut diverged = false;
    let mut oracle_evals = 0;
    for _ in 0..iters {
        let est = estimators::estimate(model, &params, cfg, rng)?;
        oracle_evals += est.oracle_evals_used as u64;
        if est.divergent || !rule.step(params.values_mut(), &est.grad) {
            diverged = true;
            break;
        }
        objectives.push(est.objective_estimate);
        if params.values().iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        if early_stop.is_some_and(|e| e.converged(&objectives)) {
            break;
        }
    }
    Ok(StepRun { step_size, objectives, diverged, final_params: params, oracle_evals })
}

/// Tries each ADVI candidate step size for 200 iterations from the same
/// initialization and noise, scores the result by an ELBO on 500 fresh
/// samples, and returns the best (ties go to the smaller step size).
pub fn advi_step_search(
    model: &TargetModel,
    init: &FamilyParams,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<f64> {
    advi_step_search_over(model, init, cfg, seed, &ADVI_STEP_CANDIDATES, ADVI_SEARCH_ITERS)
}

pub fn advi_step_search_over(
    model: &TargetModel,
    init: &FamilyParams,
    cfg: &EstimatorConfig,
    seed: u64,
    candidates: &[f64],
    iters: usize,
) -> Result<f64> {
    let mut scores = Vec::with_capacity(candidates.len());
    let mut diverged = Vec::with_capacity(candidates.len());
    for &eta in candidates {
        let mut rule = AdviStepState::new(init.len(), eta);
        let mut rng = rng::stream(seed, role::STEP_SEARCH);
        let run = run_steps(model, init, cfg, &mut rule, eta, iters, None, &mut rng)?;
        let score = if run.diverged {
            f64::NAN
        } else {
            let mut eval_rng = rng::stream(seed, role::STEP_SEARCH_EVAL);
            estimators::iwelbo_estimate(model, &run.final_params, &mut eval_rng, 1, ADVI_SEARCH_EVAL_SAMPLES)?
        };
        diverged.push(run.diverged || !score.is_finite());
        scores.push(score);
    }
    select_step(candidates, &scores, &diverged).map(|i| candidates[i]).ok_or(Error::AllDiverged)
}

/// ADVI: step-size search, then the adaptive scheme with early stopping for
/// at most `iters` iterations.
pub fn advi_optimize(
    model: &TargetModel,
    init: &FamilyParams,
    cfg: &EstimatorConfig,
    iters: usize,
    seed: u64,
) -> Result<(FamilyParams, OptimizationTrace)> {
    let eta = advi_step_search(model, init, cfg, seed)?;
    let mut rule = AdviStepState::new(init.len(), eta);
    let mut rng = rng::stream(seed, role::TRAIN);
    let run = run_steps(model, init, cfg, &mut rule, eta, iters, Some(EarlyStop::default()), &mut rng)?;
    let selected = (!run.diverged).then_some(0);
    let params = run.final_params.clone();
    Ok((params, OptimizationTrace { runs: vec![run], selected }))
}

/// Adam at each step size of the grid for `iters` iterations. The run with
/// the best average objective wins and its final parameters are returned.
pub fn comprehensive_search(
    model: &TargetModel,
    init: &FamilyParams,
    cfg: &EstimatorConfig,
    iters: usize,
    seed: u64,
) -> Result<(FamilyParams, OptimizationTrace)> {
    comprehensive_search_over(model, init, cfg, iters, seed, &step_size_grid(init.dim(), 4.0))
}

/// As [`comprehensive_search`] over an explicit set of step sizes. Each run's
/// noise stream is keyed by its step size, so the result does not depend on
/// the order of `grid`.
pub fn comprehensive_search_over(
    model: &TargetModel,
    init: &FamilyParams,
    cfg: &EstimatorConfig,
    iters: usize,
    seed: u64,
    grid: &[f64],
) -> Result<(FamilyParams, OptimizationTrace)> {
    if iters == 0 {
        return Err(Error::Config("iters must be at least 1".into()));
    }
    let runs = grid
        .par_iter()
        .map(|&eta| {
            let mut rule = AdamState::new(init.len(), eta);
            let mut rng = rng::keyed_stream(seed, role::TRAIN, eta.to_bits());
            run_steps(model, init, cfg, &mut rule, eta, iters, None, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let averages: Vec<f64> = runs.iter().map(StepRun::average_objective).collect();
    let diverged: Vec<bool> = runs.iter().map(|r| r.diverged).collect();
    let selected = select_step(grid, &averages, &diverged);
    let trace = OptimizationTrace { runs, selected };
    match trace.selected_run() {
        Some(run) => Ok((run.final_params.clone(), trace)),
        None => Err(Error::AllDiverged),
    }
}
