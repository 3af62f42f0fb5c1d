use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use wassconc::bounds::{evaluate_grid, write_grid_csv, GridSpec};
use wassconc::decomposition::{mixture_bound, ring_decompose};
use wassconc::harness::{
    fit_bound_constant, run_as_trajectory, run_rate_experiment, run_tail_experiment,
    verify_appendix_inequalities, BoundSpec, Estimator, ExperimentReport, ExperimentSpec,
    SumDistribution,
};
use wassconc::metric::{load_matrix_csv, load_points_csv};
use wassconc::multiscale::{
    auto_delta_grid, auto_k_star, build_partition_tree, fit_dimension, greedy_cover,
};
use wassconc::{
    validate_metric, wpp_exact, wpp_mcf, Measure, MetricSpace, Point, SyntheticSampler,
};

use crate::config::echo;
use crate::{
    exists, required, AppendixArgs, AsrunArgs, BoundArgs, CoverArgs, Ctx, DimArgs, ExperimentArgs,
    FitcArgs, Outcome, RingsArgs, TreeArgs, ValidateArgs, WppArgs,
};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn points(path: &Path) -> Result<Vec<Point<f64>>> {
    exists(path)?;
    load_points_csv(path).with_context(|| format!("reading {}", path.display()))
}

/// `lo:hi` doubles from `lo` to `hi`, `lo:hi:f` multiplies by `f` and rounds,
/// anything else is a comma-separated list.
pub fn parse_ngrid(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let grid = match parts.as_slice() {
        [one] => one
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .with_context(|| format!("bad sample size `{t}`"))
            })
            .collect::<Result<Vec<_>>>()?,
        [lo, hi] | [lo, hi, _] => {
            let lo: usize = lo
                .parse()
                .with_context(|| format!("bad n-grid start `{lo}`"))?;
            let hi: usize = hi
                .parse()
                .with_context(|| format!("bad n-grid end `{hi}`"))?;
            let f: f64 = match parts.get(2) {
                Some(f) => f
                    .parse()
                    .with_context(|| format!("bad n-grid factor `{f}`"))?,
                None => 2.0,
            };
            if lo == 0 || hi < lo || !(f > 1.0) {
                bail!("n-grid needs 0 < lo <= hi and factor > 1");
            }
            let mut g = Vec::new();
            let mut k = 0i32;
            loop {
                let n = (lo as f64 * f.powi(k)).round() as usize;
                if n > hi {
                    break;
                }
                if g.last() != Some(&n) {
                    g.push(n);
                }
                k += 1;
            }
            g
        }
        _ => bail!("bad n-grid `{s}`"),
    };
    if grid.is_empty() || grid.contains(&0) {
        bail!("n-grid must hold positive sizes");
    }
    Ok(grid)
}

/// Comma-separated list, or `lo:hi:count` spaced evenly in log.
pub fn parse_xgrid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [one] => one
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad value `{t}`"))
            })
            .collect(),
        [lo, hi, count] => {
            let lo: f64 = lo.parse()?;
            let hi: f64 = hi.parse()?;
            let count: usize = count.parse()?;
            if !(lo > 0.0 && hi >= lo) || count < 1 {
                bail!("log grid needs 0 < lo <= hi and count >= 1");
            }
            if count == 1 {
                return Ok(vec![lo]);
            }
            let step = (hi / lo).ln() / (count - 1) as f64;
            Ok((0..count).map(|k| lo * (step * k as f64).exp()).collect())
        }
        _ => bail!("bad grid `{s}`"),
    }
}

pub fn wpp(ctx: &Ctx, mut a: WppArgs) -> Result<Outcome> {
    let pa = points(&required(&a.a, "a")?)?;
    let pb = points(&required(&a.b, "b")?)?;
    let p = *a.p.get_or_insert(1.0);
    echo(&ctx.out, "wpp", &a)?;
    let space = Arc::new(MetricSpace::concat(&pa, &pb)?);
    let ia: Vec<usize> = (0..pa.len()).collect();
    let ib: Vec<usize> = (pa.len()..pa.len() + pb.len()).collect();
    let mu = Measure::uniform_on(space.clone(), &ia)?;
    let nu = Measure::uniform_on(space.clone(), &ib)?;
    let report = if space.is_line() {
        json!({"value": wpp_exact(&mu, &nu, p)?, "p": p, "method": "closed-form-1d", "n_a": pa.len(), "n_b": pb.len()})
    } else {
        let (value, plan) = wpp_mcf(&mu, &nu, p)?;
        let mut w = csv::Writer::from_writer(create(&ctx.path("plan.csv"))?);
        w.write_record(["source", "target", "mass", "cost"])?;
        for e in &plan.entries {
            w.write_record([
                e.source.to_string(),
                (e.target - pa.len()).to_string(),
                format!("{:e}", e.mass),
                format!("{:e}", e.cost),
            ])?;
        }
        w.flush()?;
        json!({"value": value.value, "p": p, "method": value.method, "tolerance": value.tolerance,
               "n_a": pa.len(), "n_b": pb.len()})
    };
    write_json(&ctx.path("wpp.json"), &report)?;
    println!("{}", report["value"].as_f64().unwrap_or(f64::NAN));
    Ok(Outcome::Ok)
}

pub fn cover(ctx: &Ctx, a: CoverArgs) -> Result<Outcome> {
    let pts = points(&required(&a.points, "points")?)?;
    let delta = required(&a.delta, "delta")?;
    echo(&ctx.out, "cover", &a)?;
    let space = MetricSpace::euclidean(pts)?;
    let all: Vec<usize> = (0..space.len()).collect();
    let c = greedy_cover(&space, &all, delta)?;
    write_json(&ctx.path("cover.json"), &c)?;
    println!("{} (lower {})", c.n_upper, c.n_lower);
    Ok(Outcome::Ok)
}

pub fn dim(ctx: &Ctx, mut a: DimArgs) -> Result<Outcome> {
    let pts = points(&required(&a.points, "points")?)?;
    let grid_arg = a.delta_grid.get_or_insert_with(|| "auto".into()).clone();
    echo(&ctx.out, "dim", &a)?;
    let space = MetricSpace::euclidean(pts)?;
    let all: Vec<usize> = (0..space.len()).collect();
    let diameter = space.diameter()?;
    let grid = if grid_arg == "auto" {
        auto_delta_grid(&space, &all, diameter)
    } else {
        parse_xgrid(&grid_arg)?
    };
    let outcome = fit_dimension(&space, &all, &grid, diameter)?;
    write_json(&ctx.path("dim.json"), &outcome)?;
    match outcome.fit() {
        Some(f) => println!("alpha {:.4} (R2 {:.4})", f.alpha, f.r2),
        None => println!("degenerate: every scale is covered by one ball"),
    }
    Ok(Outcome::Ok)
}

pub fn tree(ctx: &Ctx, mut a: TreeArgs) -> Result<Outcome> {
    let pts = points(&required(&a.points, "points")?)?;
    let n = pts.len();
    let d = pts.first().map_or(1, |p| p.dim());
    let k_star = *a.k_star.get_or_insert_with(|| auto_k_star(n, d as f64));
    echo(&ctx.out, "tree", &a)?;
    let space = MetricSpace::euclidean(pts)?;
    let all: Vec<usize> = (0..n).collect();
    let tree = build_partition_tree(&space, &all, k_star)?;
    let verdict = tree.verify(&space);
    write_json(
        &ctx.path("tree.json"),
        &json!({"verified": verdict.is_ok(), "cell_counts": tree.cell_counts(), "tree": tree}),
    )?;
    match verdict {
        Ok(()) => Ok(Outcome::Ok),
        Err(e) => Ok(Outcome::Falsified(e.to_string())),
    }
}

pub fn bound(ctx: &Ctx, a: BoundArgs) -> Result<Outcome> {
    let path = required(&a.grid, "grid")?;
    exists(&path)?;
    let text = std::fs::read_to_string(&path)?;
    let spec: GridSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    echo(&ctx.out, "bound", &a)?;
    let rows = evaluate_grid(&spec)?;
    write_grid_csv(&rows, create(&ctx.path("bound.csv"))?)?;
    Ok(Outcome::Ok)
}

pub fn rings(ctx: &Ctx, mut a: RingsArgs) -> Result<Outcome> {
    let pa = points(&required(&a.a, "a")?)?;
    let pb = points(&required(&a.b, "b")?)?;
    let d = pa.first().map_or(1, |p| p.dim());
    let x0: Vec<f64> = match &a.x0 {
        Some(s) => parse_xgrid(s).context("bad --x0")?,
        None => vec![0.0; d],
    };
    let p = *a.p.get_or_insert(1.0);
    echo(&ctx.out, "rings", &a)?;
    let mut all = pa.clone();
    all.extend(pb.iter().cloned());
    all.push(Point::new(x0)?);
    let x0_index = all.len() - 1;
    let space = Arc::new(MetricSpace::euclidean(all)?);
    let ln = Measure::uniform_on(space.clone(), &(0..pa.len()).collect::<Vec<_>>())?;
    let mu = Measure::uniform_on(
        space.clone(),
        &(pa.len()..pa.len() + pb.len()).collect::<Vec<_>>(),
    )?;
    let decomp = ring_decompose(&ln, &mu, x0_index)?;
    let (ln_err, lambda_err) = decomp.reconstruction_error(&ln, &mu);
    let bound = mixture_bound(&decomp, p)?;
    let exact = wpp_exact(&ln, &mu, p)?;
    write_json(
        &ctx.path("rings.json"),
        &json!({
            "decomposition": decomp.report(),
            "reconstruction_error": ln_err,
            "lambda_error": lambda_err,
            "mixture_bound": bound,
            "exact": exact,
        }),
    )?;
    Ok(Outcome::Ok)
}

/// Fill the defaults of an experiment and turn it into a harness spec.
pub fn experiment_spec(a: &mut ExperimentArgs, tail: bool) -> Result<ExperimentSpec> {
    let sampler_name = required(&a.sampler, "sampler")?;
    let sampler = SyntheticSampler::parse(&sampler_name)?;
    let seed = a.seed.context("--seed is required for experiments")?;
    let p = *a.p.get_or_insert(1.0);
    let default_est = if sampler.dim() == 1 && sampler.has_quantile() {
        "1d-quantile"
    } else {
        "mcf-two-sample"
    };
    let est_name = a
        .estimator
        .get_or_insert_with(|| default_est.into())
        .clone();
    let estimator = match est_name.as_str() {
        "1d-quantile" => Estimator::Quantile1d {
            grid: *a.grid.get_or_insert(4096),
        },
        "mcf-two-sample" => Estimator::McfTwoSample {
            m_ref: a.m_ref,
            ref_ratio: *a.ref_ratio.get_or_insert(2.0),
        },
        "dyadic" => Estimator::Dyadic {
            k_star: a.k_star,
            m_ref: a.m_ref,
            ref_ratio: *a.ref_ratio.get_or_insert(2.0),
        },
        other => bail!("unknown estimator `{other}`"),
    };
    let n_grid = parse_ngrid(a.ngrid.get_or_insert_with(|| "32:1024".into()))?;
    let replicates = *a.reps.get_or_insert(if tail { 1000 } else { 100 });
    let x_grid = match &a.xgrid {
        Some(s) => parse_xgrid(s)?,
        None if tail => bail!("tail experiments need --xgrid"),
        None => Vec::new(),
    };
    Ok(ExperimentSpec {
        sampler: sampler_name,
        p,
        estimator,
        n_grid,
        replicates,
        x_grid,
        seed,
        drop_smallest: *a.drop_smallest.get_or_insert(2),
        scale: *a.scale.get_or_insert(1.0),
        slope_tolerance: *a.slope_tolerance.get_or_insert(0.08),
    })
}

pub fn experiment(ctx: &Ctx, mut a: ExperimentArgs, kind: &str) -> Result<Outcome> {
    let tail = kind == "tail";
    let spec = experiment_spec(&mut a, tail)?;
    echo(&ctx.out, kind, &a)?;
    let report = if tail {
        run_tail_experiment(&spec, ctx.workers)?
    } else {
        run_rate_experiment(&spec, ctx.workers)?
    };
    write_json(&ctx.path("report.json"), &report)?;
    report.write_csv(create(&ctx.path(&format!("{kind}.csv")))?)?;
    report.write_long_csv(create(&ctx.path(&format!("{kind}_long.csv")))?)?;
    for c in &report.checks {
        println!(
            "{}: {} ({})",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.detail
        );
    }
    if report.passed() {
        Ok(Outcome::Ok)
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        Ok(Outcome::Falsified(failed.join(", ")))
    }
}

pub fn fitc(ctx: &Ctx, a: FitcArgs) -> Result<Outcome> {
    let rp = required(&a.report, "report")?;
    let bp = required(&a.bound, "bound")?;
    exists(&rp)?;
    exists(&bp)?;
    let report: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(&rp)?)
        .with_context(|| format!("parsing {}", rp.display()))?;
    let bound: BoundSpec = serde_json::from_str(&std::fs::read_to_string(&bp)?)
        .with_context(|| format!("parsing {}", bp.display()))?;
    echo(&ctx.out, "fitc", &a)?;
    let fit = fit_bound_constant(&report, &bound)?;
    write_json(&ctx.path("fitc.json"), &fit)?;
    match fit.constant {
        Some(c) => {
            println!("{c:e}");
            Ok(Outcome::Ok)
        }
        None => Ok(Outcome::Falsified(format!(
            "{} tail points lie above the bound for every constant",
            fit.falsified.len()
        ))),
    }
}

pub fn asrun(ctx: &Ctx, mut a: AsrunArgs) -> Result<Outcome> {
    let sampler = required(&a.sampler, "sampler")?;
    let seed = a.seed.context("--seed is required for experiments")?;
    let p = *a.p.get_or_insert(1.0);
    let n_max = *a.n_max.get_or_insert(4096);
    echo(&ctx.out, "asrun", &a)?;
    let t = run_as_trajectory(&sampler, p, n_max, seed)?;
    write_json(&ctx.path("asrun.json"), &t)?;
    let mut w = csv::Writer::from_writer(create(&ctx.path("asrun.csv"))?);
    w.write_record(["k", "raw", "normalized"])?;
    for ((k, r), z) in t.ks.iter().zip(&t.raw).zip(&t.normalized) {
        w.write_record([k.to_string(), format!("{r:e}"), format!("{z:e}")])?;
    }
    w.flush()?;
    println!("{}: {}", t.check.name, t.check.detail);
    if t.check.pass {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Falsified(t.check.detail))
    }
}

pub fn appendix(ctx: &Ctx, mut a: AppendixArgs) -> Result<Outcome> {
    let seed = a.seed.context("--seed is required for experiments")?;
    let dist = SumDistribution::parse(a.dist.get_or_insert_with(|| "rademacher".into()))?;
    let rs = parse_xgrid(a.r.get_or_insert_with(|| "1.5,2,3".into()))?;
    let n_grid = parse_ngrid(a.ngrid.get_or_insert_with(|| "10,100,1000".into()))?;
    let reps = *a.reps.get_or_insert(20000);
    echo(&ctx.out, "verify-appendix", &a)?;
    let report = verify_appendix_inequalities(dist, &rs, &n_grid, reps, seed, ctx.workers)?;
    write_json(&ctx.path("appendix.json"), &report)?;
    report.write_csv(create(&ctx.path("appendix.csv"))?)?;
    if report.passed() {
        Ok(Outcome::Ok)
    } else {
        let bad = report.rows.iter().filter(|r| !r.pass).count();
        Ok(Outcome::Falsified(format!("{bad} rows exceed their bound")))
    }
}

pub fn validate(ctx: &Ctx, mut a: ValidateArgs) -> Result<Outcome> {
    let space = match (&a.points, &a.matrix) {
        (Some(p), None) => MetricSpace::euclidean(points(p)?)?,
        (None, Some(m)) => {
            exists(m)?;
            load_matrix_csv(m).with_context(|| format!("reading {}", m.display()))?
        }
        _ => bail!("give exactly one of --points and --matrix"),
    };
    let trials = *a.trials.get_or_insert(100_000);
    let seed = *a.seed.get_or_insert(0);
    echo(&ctx.out, "validate-metric", &a)?;
    let report = validate_metric(&space, trials, seed)?;
    write_json(&ctx.path("validate.json"), &report)?;
    match &report.violation {
        None => Ok(Outcome::Ok),
        Some(v) => Ok(Outcome::Falsified(format!(
            "{:?} at {:?}",
            v.kind, v.indices
        ))),
    }
}
