//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 the run
//! diverged.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, format_float, MethodPreset, RunConfig, StepScheme};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, DEFAULT_BUDGET};
use crate::families::{read_checkpoint, write_checkpoint, FamilyKind, DEFAULT_FLOW_HIDDEN, DEFAULT_FLOW_LAYERS};
use crate::inference::DEFAULT_EVAL_SAMPLES;
use crate::targets::{model_by_name, ZOO_NAMES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BBVI_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "bbvi", version, about = "Black-box variational inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate one method on one model.
    Run(RunArgs),
    /// Run presets x models x seeds and write a results table.
    Bench(BenchArgs),
    /// Compare two results tables with a complementary CDF.
    Ccdf(CcdfArgs),
    /// Describe a parameter checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScaleArgs {
    /// Iterations per step size (maximum iterations for the ADVI scheme).
    #[arg(long, default_value_t = bench::DESK_ITERS, value_parser = positive)]
    pub iters: usize,
    /// Oracle evaluations per iteration.
    #[arg(long, default_value_t = DEFAULT_BUDGET, value_parser = positive)]
    pub budget: usize,
    /// Fresh samples for the final evaluation.
    #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES, value_parser = positive)]
    pub n_eval: usize,
    #[arg(long, default_value_t = DEFAULT_FLOW_LAYERS, value_parser = positive)]
    pub flow_layers: usize,
    #[arg(long, default_value_t = DEFAULT_FLOW_HIDDEN, value_parser = positive)]
    pub flow_hidden: usize,
}

impl ScaleArgs {
    fn run_config(&self) -> RunConfig {
        RunConfig { iters: self.iters, budget: self.budget, n_eval: self.n_eval }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, conflicts_with_all = ["family", "estimator", "scheme", "m_train", "m_sampling", "li"])]
    pub preset: Option<String>,
    /// gaussian_diag, gaussian_full or real_nvp.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub estimator: Option<String>,
    /// advi or comprehensive.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long, value_parser = positive)]
    pub m_train: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub m_sampling: Option<usize>,
    /// Laplace initialization.
    #[arg(long)]
    pub li: bool,
    #[command(flatten)]
    pub scale: ScaleArgs,
    /// Output directory (default: $BBVI_OUT_DIR, else the working directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated preset names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub presets: Vec<String>,
    /// Comma-separated model names (default: the whole zoo).
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[arg(long, default_value_t = 1, value_parser = positive)]
    pub jobs: usize,
    /// Record wall-clock seconds per cell (makes output run-dependent).
    #[arg(long)]
    pub timing: bool,
    /// Results CSV (default: suite.csv under the output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CcdfArgs {
    /// Results table of the method being evaluated.
    pub a: PathBuf,
    /// Results table of the baseline.
    pub b: PathBuf,
    /// Extra deltas at which to evaluate the CCDF.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Ccdf(a) => cmd_ccdf(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn method_from_args(a: &RunArgs) -> Result<MethodPreset> {
    if let Some(name) = &a.preset {
        return Ok(MethodPreset::by_name(name)?.with_flow_shape(a.scale.flow_layers, a.scale.flow_hidden));
    }
    let (Some(family), Some(estimator)) = (&a.family, &a.estimator) else {
        return Err(Error::Config("give either --preset or both --family and --estimator".into()));
    };
    let family = match family.parse::<FamilyKind>()? {
        FamilyKind::RealNvp { .. } => FamilyKind::RealNvp { layers: a.scale.flow_layers, hidden: a.scale.flow_hidden },
        k => k,
    };
    let gradient: EstimatorKind = estimator.parse()?;
    let m_train = a.m_train.unwrap_or(if gradient.is_importance_weighted() { 10 } else { 1 });
    if !gradient.is_importance_weighted() && m_train != 1 {
        return Err(Error::Config(format!("{gradient} trains with M = 1; use an iwelbo estimator for --m-train")));
    }
    Ok(MethodPreset {
        name: "custom".into(),
        family,
        gradient,
        scheme: a.scheme.as_deref().unwrap_or("comprehensive").parse::<StepScheme>()?,
        laplace_init: a.li,
        m_train,
        m_sampling: a.m_sampling.unwrap_or(1),
    })
}

pub fn cmd_run(a: &RunArgs) -> Result<i32> {
    let model = model_by_name(&a.model)?;
    let method = method_from_args(a)?;
    let run = bench::run_preset(&method, &model, a.seed, &a.scale.run_config())?;
    let dir = out_dir(&a.out);
    fs::create_dir_all(&dir)?;
    let stem = format!("{}_{}_{}", model.name(), method.name, a.seed);
    if let Some(trace) = &run.trace {
        trace.write_csv(BufWriter::new(File::create(dir.join(format!("{stem}.trace.csv")))?))?;
    }
    if let Some(params) = &run.params {
        write_checkpoint(params, BufWriter::new(File::create(dir.join(format!("{stem}.ckpt")))?))?;
    }
    let json = match &run.report {
        Some(report) => report.to_json(model.name(), &method.name, a.seed),
        None => serde_json::json!({
            "model": model.name(),
            "method": method.name,
            "seed": a.seed,
            "bound_kind": if method.m_sampling == 1 { "elbo" } else { "iwelbo" },
            "M": method.m_sampling,
            "estimate": null,
            "se": null,
        }),
    };
    let mut f = BufWriter::new(File::create(dir.join(format!("{stem}.report.json")))?);
    serde_json::to_writer_pretty(&mut f, &json)?;
    writeln!(f)?;
    f.flush()?;
    if run.laplace_fallback {
        eprintln!("warning: Laplace initialization failed; used the standard initialization");
    }
    println!(
        "model={} method={} bound={} se={}",
        model.name(),
        method.name,
        format_float(run.estimate()),
        format_float(run.std_error())
    );
    Ok(if run.diverged { EXIT_DIVERGED } else { EXIT_OK })
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let presets = a
        .presets
        .iter()
        .map(|p| MethodPreset::by_name(p).map(|m| m.with_flow_shape(a.scale.flow_layers, a.scale.flow_hidden)))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<String> = if a.models.is_empty() {
        ZOO_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        a.models.clone()
    };
    let rows = bench::run_suite(&presets, &models, &a.seeds, &a.scale.run_config(), a.jobs, a.timing)?;
    let path = a.out.clone().unwrap_or_else(|| out_dir(&None).join("suite.csv"));
    create_parent(&path)?;
    bench::write_suite_csv(&rows, BufWriter::new(File::create(&path)?))?;
    let diverged = rows.iter().filter(|r| r.diverged).count();
    println!("rows={} diverged={} out={}", rows.len(), diverged, path.display());
    Ok(EXIT_OK)
}

pub fn cmd_ccdf(a: &CcdfArgs) -> Result<i32> {
    let read = |p: &Path| -> Result<_> { bench::read_suite_csv(BufReader::new(File::open(p)?)) };
    let result = bench::compare_suites(&read(&a.a)?, &read(&a.b)?, &a.grid)?;
    let path = a.out.clone().unwrap_or_else(|| out_dir(&None).join("ccdf.csv"));
    create_parent(&path)?;
    result.write_csv(BufWriter::new(File::create(&path)?))?;
    println!("models={} out={}", result.deltas.len(), path.display());
    Ok(EXIT_OK)
}

pub fn cmd_inspect(a: &InspectArgs) -> Result<i32> {
    let params = read_checkpoint(BufReader::new(File::open(&a.checkpoint)?))?;
    println!("family={} dim={} params={}", params.kind(), params.dim(), params.len());
    if let FamilyKind::RealNvp { layers, hidden } = params.kind() {
        println!("layers={layers} hidden={hidden}");
    } else {
        let mean: Vec<String> = params.mean()?.iter().map(|v| format_float(*v)).collect();
        println!("mean={}", mean.join(","));
    }
    Ok(EXIT_OK)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("bbvi").chain(args.iter().copied()))
    }

    #[test]
    fn preset_conflicts_with_explicit_flags() {
        assert!(parse(&["run", "--model", "funnel", "--seed", "0", "--preset", "m4c", "--family", "gaussian_full"]).is_err());
        assert!(parse(&["run", "--model", "funnel", "--seed", "0", "--preset", "m4c"]).is_ok());
    }

    #[test]
    fn seeds_are_required_and_counts_positive() {
        assert!(parse(&["run", "--model", "funnel", "--preset", "m1"]).is_err());
        assert!(parse(&["bench", "--presets", "m1"]).is_err());
        assert!(parse(&["run", "--model", "funnel", "--seed", "0", "--preset", "m1", "--iters", "0"]).is_err());
    }

    #[test]
    fn explicit_method() {
        let Command::Run(a) = parse(&[
            "run", "--model", "funnel", "--seed", "1", "--family", "real_nvp", "--estimator", "iwelbo_dreg",
            "--flow-layers", "2", "--flow-hidden", "4",
        ])
        .unwrap()
        .command
        else {
            panic!()
        };
        let m = method_from_args(&a).unwrap();
        assert_eq!(m.family, FamilyKind::RealNvp { layers: 2, hidden: 4 });
        assert_eq!((m.m_train, m.m_sampling, m.scheme), (10, 1, StepScheme::Comprehensive));
    }
}
