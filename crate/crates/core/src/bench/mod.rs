//! Method presets, the suite runner and the pairwise CCDF comparison.

mod ccdf;
mod suite;

use std::fmt;
use std::str::FromStr;

pub use ccdf::{ccdf_at, pairwise_ccdf, ComparisonResult};
pub use suite::{compare_suites, read_suite_csv, run_suite, write_suite_csv, SuiteRow};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind, DEFAULT_BUDGET};
use crate::families::{FamilyKind, FamilyParams};
use crate::inference::{evaluate, EvalReport, DEFAULT_EVAL_SAMPLES};
use crate::optimize::{self, OptimizationTrace, LAPLACE_MAX_ITERS};
use crate::rng::{self, role};
use crate::targets::TargetModel;

/// Iterations per step size for desk-scale runs.
pub const DESK_ITERS: usize = 5_000;
/// Iterations per step size in the paper's full-scale runs.
pub const PAPER_ITERS: usize = 30_000;

/// 17 significant digits, `nan` for anything non-finite.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "nan".to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepScheme {
    Advi,
    Comprehensive,
}

impl StepScheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Advi => "advi",
            Self::Comprehensive => "comprehensive",
        }
    }
}

impl FromStr for StepScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "advi" => Ok(Self::Advi),
            "comprehensive" => Ok(Self::Comprehensive),
            _ => Err(Error::Config(format!("unknown step scheme `{s}`; valid schemes: advi, comprehensive"))),
        }
    }
}

impl fmt::Display for StepScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A complete method: family, gradient estimator, step scheme,
/// initialization and importance-weighting settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodPreset {
    pub name: String,
    pub family: FamilyKind,
    pub gradient: EstimatorKind,
    pub scheme: StepScheme,
    pub laplace_init: bool,
    pub m_train: usize,
    pub m_sampling: usize,
}

pub const PRESET_NAMES: [&str; 10] =
    ["advi_baseline", "m0", "m1", "m2", "m3a", "m3b", "m4a", "m4b", "m4c", "m4d"];

impl MethodPreset {
    pub fn by_name(name: &str) -> Result<Self> {
        use EstimatorKind::*;
        use StepScheme::*;
        let full = FamilyKind::GaussianFull;
        let flow = FamilyKind::real_nvp();
        let (family, gradient, scheme, li, m_train, m_sampling) = match name {
            "advi_baseline" => (full, ElboClosedForm, Advi, false, 1, 1),
            "m0" => (full, ElboClosedForm, Comprehensive, false, 1, 1),
            "m1" => (full, ElboStl, Comprehensive, false, 1, 1),
            "m2" => (full, ElboStl, Comprehensive, true, 1, 1),
            "m3a" => (full, ElboStl, Comprehensive, false, 1, 10),
            "m3b" => (full, IwelboDreg, Comprehensive, false, 10, 10),
            "m4a" => (flow, ElboFull, Comprehensive, false, 1, 1),
            "m4b" => (flow, ElboStl, Comprehensive, false, 1, 1),
            "m4c" => (flow, ElboStl, Comprehensive, false, 1, 10),
            "m4d" => (flow, IwelboDreg, Comprehensive, false, 10, 10),
            _ => {
                return Err(Error::UnknownPreset {
                    name: name.to_string(),
                    valid: PRESET_NAMES.join(", "),
                })
            }
        };
        Ok(Self { name: name.to_string(), family, gradient, scheme, laplace_init: li, m_train, m_sampling })
    }

    pub fn all() -> Vec<Self> {
        PRESET_NAMES.iter().map(|n| Self::by_name(n).expect("preset")).collect()
    }

    pub fn with_flow_shape(mut self, layers: usize, hidden: usize) -> Self {
        if let FamilyKind::RealNvp { .. } = self.family {
            self.family = FamilyKind::RealNvp { layers, hidden };
        }
        self
    }
}

/// Scale knobs shared by every run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub iters: usize,
    pub budget: usize,
    pub n_eval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { iters: DESK_ITERS, budget: DEFAULT_BUDGET, n_eval: DEFAULT_EVAL_SAMPLES }
    }
}

#[derive(Debug, Clone)]
pub struct PresetRun {
    /// Trained parameters; `None` if every optimization run diverged.
    pub params: Option<FamilyParams>,
    pub report: Option<EvalReport>,
    pub trace: Option<OptimizationTrace>,
    pub diverged: bool,
    /// Laplace initialization was requested but failed, so the standard
    /// initialization was used.
    pub laplace_fallback: bool,
}

impl PresetRun {
    pub fn estimate(&self) -> f64 {
        self.report.as_ref().map_or(f64::NAN, |r| r.estimate)
    }

    pub fn std_error(&self) -> f64 {
        self.report.as_ref().map_or(f64::NAN, |r| r.std_error)
    }
}

/// Initialization, optimization and evaluation for one preset on one model.
pub fn run_preset(preset: &MethodPreset, model: &TargetModel, seed: u64, cfg: &RunConfig) -> Result<PresetRun> {
    let dim = model.dim();
    if !preset.family.is_gaussian() && dim < 2 {
        return Err(Error::Config(format!("{} needs at least two dimensions; {} has {dim}", preset.family, model.name())));
    }
    let estimator = EstimatorConfig::new(preset.gradient, preset.m_train, cfg.budget)?;
    let mut laplace_fallback = false;
    let init = if preset.laplace_init {
        match optimize::laplace_init(model, LAPLACE_MAX_ITERS) {
            Ok(q) => q,
            Err(Error::LaplaceFailure(_)) => {
                laplace_fallback = true;
                FamilyParams::init_standard(preset.family, dim, &mut rng::stream(seed, role::INIT))?
            }
            Err(e) => return Err(e),
        }
    } else {
        FamilyParams::init_standard(preset.family, dim, &mut rng::stream(seed, role::INIT))?
    };
    let optimized = match preset.scheme {
        StepScheme::Advi => optimize::advi_optimize(model, &init, &estimator, cfg.iters, seed),
        StepScheme::Comprehensive => optimize::comprehensive_search(model, &init, &estimator, cfg.iters, seed),
    };
    let (params, trace) = match optimized {
        Ok((p, t)) if t.selected.is_some() => (p, t),
        Ok((_, t)) => return Ok(diverged_run(Some(t), laplace_fallback)),
        Err(Error::AllDiverged) => return Ok(diverged_run(None, laplace_fallback)),
        Err(e) => return Err(e),
    };
    let report = evaluate(model, &params, &mut rng::stream(seed, role::EVAL), preset.m_sampling, cfg.n_eval)?;
    let diverged = !report.estimate.is_finite();
    Ok(PresetRun { params: Some(params), report: Some(report), trace: Some(trace), diverged, laplace_fallback })
}

fn diverged_run(trace: Option<OptimizationTrace>, laplace_fallback: bool) -> PresetRun {
    PresetRun { params: None, report: None, trace, diverged: true, laplace_fallback }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::model_by_name;

    #[test]
    fn preset_table() {
        let p = |n| MethodPreset::by_name(n).unwrap();
        assert_eq!(p("advi_baseline").gradient, EstimatorKind::ElboClosedForm);
        assert_eq!(p("advi_baseline").scheme, StepScheme::Advi);
        assert_eq!((p("m3b").gradient, p("m3b").m_train), (EstimatorKind::IwelboDreg, 10));
        let (m0, m1) = (p("m0"), p("m1"));
        assert_eq!(MethodPreset { gradient: m1.gradient, name: m1.name.clone(), ..m0 }, m1);
        let m4c = p("m4c");
        assert_eq!(
            (m4c.family, m4c.gradient, m4c.scheme, m4c.m_train, m4c.m_sampling),
            (FamilyKind::real_nvp(), EstimatorKind::ElboStl, StepScheme::Comprehensive, 1, 10)
        );
        assert!(p("m2").laplace_init && PRESET_NAMES.iter().filter(|n| p(n).laplace_init).count() == 1);
        assert!(matches!(MethodPreset::by_name("m9"), Err(Error::UnknownPreset { .. })));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, -1.2655121234846454, 1e-300, 12345.678] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_float(f64::NAN), "nan");
    }

    #[test]
    fn small_preset_run_spends_the_stated_budget() {
        let model = model_by_name("conjugate_regression").unwrap();
        let cfg = RunConfig { iters: 20, budget: 100, n_eval: 1000 };
        let preset = MethodPreset::by_name("m3b").unwrap();
        let run = run_preset(&preset, &model, 0, &cfg).unwrap();
        assert!(!run.diverged);
        assert_eq!(model.oracle_evals(), 5 * 20 * 100 + 1000);
        assert_eq!(run.report.unwrap().copies, 100);
    }

    #[test]
    fn laplace_preset_uses_the_mode() {
        let model = model_by_name("conjugate_regression").unwrap();
        let cfg = RunConfig { iters: 5, budget: 10, n_eval: 100 };
        let run = run_preset(&MethodPreset::by_name("m2").unwrap(), &model, 0, &cfg).unwrap();
        assert!(!run.laplace_fallback && !run.diverged);
    }
}
