use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(
    name = "wassconc",
    about = "Empirical Wasserstein concentration toolkit"
)]
struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for experiments; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Exact W_p^p between the uniform measures on two point files.
    Wpp(WppArgs),
    /// Greedy covering number at one radius.
    Cover(CoverArgs),
    /// Covering-dimension fit over a grid of radii.
    Dim(DimArgs),
    /// Refined partition tree of a point set.
    Tree(TreeArgs),
    /// Evaluate a bound formula over an (n, x) grid from a JSON spec.
    Bound(BoundArgs),
    /// Ring decomposition of two samples around a reference point.
    Rings(RingsArgs),
    /// Rate experiment: mean W_p^p against n.
    Rate(ExperimentArgs),
    /// Tail experiment: P(W_p^p > x) on an (n, x) lattice.
    Tail(ExperimentArgs),
    /// Fit the free constant of a bound to a tail report.
    Fitc(FitcArgs),
    /// One normalized almost-sure trajectory.
    Asrun(AsrunArgs),
    /// Monte Carlo check of the moment inequalities for sums.
    VerifyAppendix(AppendixArgs),
    /// Check the metric axioms on a point set or distance matrix.
    ValidateMetric(ValidateArgs),
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct WppArgs {
    #[arg(long)]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct CoverArgs {
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct DimArgs {
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// `auto` or a comma-separated list of radii.
    #[arg(long)]
    pub delta_grid: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TreeArgs {
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Depth; chosen from n and the ambient dimension when absent.
    #[arg(long)]
    pub k_star: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct BoundArgs {
    /// JSON `{formula, x, n, params}`.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct RingsArgs {
    /// Sample points.
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Reference measure points.
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Comma-separated coordinates of the reference point [default: origin].
    #[arg(long)]
    pub x0: Option<String>,
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentArgs {
    /// Sampler family, e.g. `uniform-cube:3`, `pareto-radial:3:1`.
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub p: Option<f64>,
    /// `1d-quantile`, `mcf-two-sample` or `dyadic`.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Quantile quadrature grid.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub m_ref: Option<usize>,
    #[arg(long)]
    pub ref_ratio: Option<f64>,
    #[arg(long)]
    pub k_star: Option<usize>,
    /// `lo:hi` doubling, `lo:hi:factor`, or a comma-separated list.
    #[arg(long)]
    pub ngrid: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated list, or `lo:hi:count` log-spaced.
    #[arg(long)]
    pub xgrid: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub drop_smallest: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub slope_tolerance: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FitcArgs {
    /// `report.json` of a tail run.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// JSON `{formula, params, constant, lo, hi}`.
    #[arg(long)]
    pub bound: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct AsrunArgs {
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct AppendixArgs {
    /// `rademacher`, `uniform` or `pareto:<a>`.
    #[arg(long)]
    pub dist: Option<String>,
    /// Comma-separated moment orders.
    #[arg(long)]
    pub r: Option<String>,
    #[arg(long)]
    pub ngrid: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ValidateArgs {
    #[arg(long, conflicts_with = "matrix")]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Whether a run falsified the property it checks.
pub enum Outcome {
    Ok,
    Falsified(String),
}

/// Shared state of one invocation.
pub struct Ctx {
    pub out: PathBuf,
    pub workers: usize,
}

impl Ctx {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn section<T: Serialize + serde::de::DeserializeOwned>(
    flags: &T,
    file: Option<&Value>,
    name: &str,
) -> Result<T> {
    config::merge(flags, file, name)
}

fn resolve_out(flag: Option<PathBuf>, file: Option<&Value>) -> Result<PathBuf> {
    if let Some(o) = flag {
        return Ok(o);
    }
    match file.and_then(|f| f.get("out")) {
        Some(Value::String(s)) => Ok(PathBuf::from(s)),
        Some(_) => bail!("`out` must be a string"),
        None => Ok(PathBuf::from("out")),
    }
}

fn check_top_level(file: &Value) -> Result<()> {
    const KNOWN: [&str; 13] = [
        "out",
        "wpp",
        "cover",
        "dim",
        "tree",
        "bound",
        "rings",
        "rate",
        "tail",
        "fitc",
        "asrun",
        "verify-appendix",
        "validate-metric",
    ];
    if let Value::Object(m) = file {
        for k in m.keys() {
            if !KNOWN.contains(&k.as_str()) {
                bail!("unknown config key `{k}`");
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    let file = match &cli.config {
        Some(p) => {
            let v = config::load(p)?;
            check_top_level(&v)?;
            Some(v)
        }
        None => None,
    };
    let file = file.as_ref();
    let out = resolve_out(cli.out, file)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx {
        out,
        workers: cli.workers.max(1),
    };
    match cli.cmd {
        Cmd::Wpp(a) => commands::wpp(&ctx, section(&a, file, "wpp")?),
        Cmd::Cover(a) => commands::cover(&ctx, section(&a, file, "cover")?),
        Cmd::Dim(a) => commands::dim(&ctx, section(&a, file, "dim")?),
        Cmd::Tree(a) => commands::tree(&ctx, section(&a, file, "tree")?),
        Cmd::Bound(a) => commands::bound(&ctx, section(&a, file, "bound")?),
        Cmd::Rings(a) => commands::rings(&ctx, section(&a, file, "rings")?),
        Cmd::Rate(a) => commands::experiment(&ctx, section(&a, file, "rate")?, "rate"),
        Cmd::Tail(a) => commands::experiment(&ctx, section(&a, file, "tail")?, "tail"),
        Cmd::Fitc(a) => commands::fitc(&ctx, section(&a, file, "fitc")?),
        Cmd::Asrun(a) => commands::asrun(&ctx, section(&a, file, "asrun")?),
        Cmd::VerifyAppendix(a) => commands::appendix(&ctx, section(&a, file, "verify-appendix")?),
        Cmd::ValidateMetric(a) => commands::validate(&ctx, section(&a, file, "validate-metric")?),
    }
}

/// A setting that has no default.
pub fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().with_context(|| format!("missing --{flag}"))
}

pub fn exists(p: &Path) -> Result<()> {
    if !p.exists() {
        bail!("no such file: {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let version: &'static str = Box::leak(
        format!(
            "{} (formula catalog r{})",
            env!("CARGO_PKG_VERSION"),
            wassconc::bounds::CATALOG_REVISION
        )
        .into_boxed_str(),
    );
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Falsified(why)) => {
            eprintln!("falsified: {why}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
