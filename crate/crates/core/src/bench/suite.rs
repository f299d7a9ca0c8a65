//! Cartesian-product runs over presets, models and seeds.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;

use super::{format_float, pairwise_ccdf, run_preset, ComparisonResult, MethodPreset, RunConfig};
use crate::error::{Error, Result};
use crate::targets::model_by_name;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub model: String,
    pub preset: String,
    pub seed: u64,
    pub estimate: f64,
    pub se: f64,
    pub diverged: bool,
    /// Only recorded when timing is requested, so that untimed output is
    /// reproducible byte for byte.
    pub wallclock_s: Option<f64>,
}

/// One row per (preset, model, seed), in that nesting order. Cells run on
/// `jobs` worker threads. A cell that fails is recorded as diverged.
pub fn run_suite(
    presets: &[MethodPreset],
    models: &[String],
    seeds: &[u64],
    cfg: &RunConfig,
    jobs: usize,
    timing: bool,
) -> Result<Vec<SuiteRow>> {
    for name in models {
        model_by_name(name)?;
    }
    let cells: Vec<(&MethodPreset, &String, u64)> = presets
        .iter()
        .flat_map(|p| models.iter().flat_map(move |m| seeds.iter().map(move |&s| (p, m, s))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|&(preset, model_name, seed)| {
                let model = model_by_name(model_name).expect("checked above");
                let start = Instant::now();
                let outcome = run_preset(preset, &model, seed, cfg);
                let elapsed = start.elapsed().as_secs_f64();
                let (estimate, se, diverged) = match &outcome {
                    Ok(run) => (run.estimate(), run.std_error(), run.diverged),
                    Err(_) => (f64::NAN, f64::NAN, true),
                };
                SuiteRow {
                    model: model_name.clone(),
                    preset: preset.name.clone(),
                    seed,
                    estimate,
                    se,
                    diverged,
                    wallclock_s: timing.then_some(elapsed),
                }
            })
            .collect()
    });
    Ok(rows)
}

pub fn write_suite_csv(rows: &[SuiteRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "preset", "seed", "estimate", "se", "diverged", "wallclock_s"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.preset.clone(),
            r.seed.to_string(),
            format_float(r.estimate),
            format_float(r.se),
            u8::from(r.diverged).to_string(),
            r.wallclock_s.map(format_float).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_suite_csv(reader: impl Read) -> Result<Vec<SuiteRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("suite CSV has no `{name}` column")))
    };
    let (model, preset, seed, estimate, se, diverged) =
        (col("model")?, col("preset")?, col("seed")?, col("estimate")?, col("se")?, col("diverged")?);
    let wall = headers.iter().position(|h| h == "wallclock_s");
    let float = |s: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| Error::Config(format!("`{s}` is not a number")))
    };
    let mut rows = Vec::new();
    for record in r.records() {
        let rec = record?;
        let seed_s = &rec[seed];
        rows.push(SuiteRow {
            model: rec[model].to_string(),
            preset: rec[preset].to_string(),
            seed: seed_s.parse().map_err(|_| Error::Config(format!("`{seed_s}` is not a seed")))?,
            estimate: float(&rec[estimate])?,
            se: float(&rec[se])?,
            diverged: matches!(rec[diverged].trim(), "1" | "true"),
            wallclock_s: match wall.map(|i| &rec[i]) {
                Some(s) if !s.is_empty() => Some(float(s)?),
                _ => None,
            },
        });
    }
    Ok(rows)
}

/// Joins two suites on (model, seed) and compares them model by model. A
/// diverged pair contributes zero improvement; each model's improvement is
/// the mean over its seeds.
pub fn compare_suites(a: &[SuiteRow], b: &[SuiteRow], grid: &[f64]) -> Result<ComparisonResult> {
    let index = |rows: &[SuiteRow], label: &str| -> Result<BTreeMap<(String, u64), (f64, bool)>> {
        let mut map = BTreeMap::new();
        for r in rows {
            let key = (r.model.clone(), r.seed);
            if map.insert(key, (r.estimate, r.diverged)).is_some() {
                return Err(Error::KeyMismatch(format!(
                    "{label} has more than one row for model {} seed {}",
                    r.model, r.seed
                )));
            }
        }
        Ok(map)
    };
    let (ia, ib) = (index(a, "first suite")?, index(b, "second suite")?);
    let missing: Vec<String> = ia
        .keys()
        .filter(|k| !ib.contains_key(*k))
        .map(|(m, s)| format!("{m}/{s} missing from second suite"))
        .chain(ib.keys().filter(|k| !ia.contains_key(*k)).map(|(m, s)| format!("{m}/{s} missing from first suite")))
        .collect();
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(missing.join("; ")));
    }
    let mut per_model: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (key, (ea, da)) in &ia {
        let (eb, db) = ib[key];
        let delta = if *da || db || !(ea - eb).is_finite() { 0.0 } else { ea - eb };
        per_model.entry(key.0.as_str()).or_default().push(delta);
    }
    let means: Vec<f64> = per_model.values().map(|d| d.iter().sum::<f64>() / d.len() as f64).collect();
    let zeros = vec![0.0; means.len()];
    pairwise_ccdf(&means, &zeros, &vec![false; means.len()], grid)
}
