//! Seeded Monte Carlo experiments on `W_p^p(L_n, mu)`: rate fits, tail
//! curves, constant fitting, single almost-sure trajectories and checks of
//! the moment inequalities for sums.
//!
//! Replicate `j` at the `i`-th sample size draws from ChaCha8 seeded with the
//! master seed on stream `(i << 32) | j`; the reference sample of the
//! two-sample estimators continues the same stream. Results therefore do not
//! depend on the number of workers or on scheduling.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::{Data, OrderStatistics, Statistics};

use crate::bounds::{as_rate_normalizer, evaluate, BoundParams, Formula, Regime};
use crate::error::{invalid, Error, Result};
use crate::measures::DiscreteMeasure;
use crate::metric::{FiniteMetricSpace, Point};
use crate::multiscale::{
    auto_k_star, build_partition_tree, dyadic_cap, dyadic_wpp_bound, least_squares,
};
use crate::ot::{wpp_1d_samples, wpp_1d_vs_quantile, wpp_mcf};
use crate::sampler::{Family, SyntheticSampler, TailLaw};

/// Normal quantile for 95% intervals.
const Z95: f64 = 1.959_963_984_540_054;

fn default_grid() -> usize {
    4096
}

fn default_ratio() -> f64 {
    2.0
}

fn default_drop() -> usize {
    2
}

fn default_scale() -> f64 {
    1.0
}

fn default_slope_tol() -> f64 {
    0.08
}

/// How `W_p^p(L_n, mu)` is evaluated for one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimator {
    /// Quadrature against the exact quantile function (1-D samplers).
    #[serde(rename = "1d-quantile")]
    Quantile1d {
        #[serde(default = "default_grid")]
        grid: usize,
    },
    /// `W_p^p(L_n, L'_m)` against an independent reference sample of size
    /// `m_ref`, or `ref_ratio * n` when `m_ref` is absent.
    McfTwoSample {
        #[serde(default)]
        m_ref: Option<usize>,
        #[serde(default = "default_ratio")]
        ref_ratio: f64,
    },
    /// The multiscale upper bound between `L_n` and a reference sample.
    Dyadic {
        #[serde(default)]
        k_star: Option<usize>,
        #[serde(default)]
        m_ref: Option<usize>,
        #[serde(default = "default_ratio")]
        ref_ratio: f64,
    },
}

impl Estimator {
    fn reference_size(&self, n: usize) -> Option<usize> {
        match *self {
            Estimator::Quantile1d { .. } => None,
            Estimator::McfTwoSample { m_ref, ref_ratio }
            | Estimator::Dyadic {
                m_ref, ref_ratio, ..
            } => Some(m_ref.unwrap_or(((n as f64) * ref_ratio).round().max(1.0) as usize)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Sampler family, e.g. `uniform-cube:3`.
    pub sampler: String,
    pub p: f64,
    pub estimator: Estimator,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    #[serde(default)]
    pub x_grid: Vec<f64>,
    pub seed: u64,
    /// Smallest sample sizes left out of the slope fit.
    #[serde(default = "default_drop")]
    pub drop_smallest: usize,
    /// Multiplier applied to the metric.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Allowed distance between fitted and predicted slope.
    #[serde(default = "default_slope_tol")]
    pub slope_tolerance: f64,
}

impl ExperimentSpec {
    fn validate(&self) -> Result<SyntheticSampler> {
        let sampler = SyntheticSampler::parse(&self.sampler)?;
        if !(self.p >= 1.0) {
            return invalid("p must be >= 1");
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return invalid("n-grid must be nonempty and positive");
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("n-grid must be strictly increasing");
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return invalid("scale must be positive");
        }
        if self.n_grid.len() > u32::MAX as usize || self.replicates > u32::MAX as usize {
            return invalid("grid too large");
        }
        match self.estimator {
            Estimator::Quantile1d { grid } => {
                if !sampler.has_quantile() {
                    return invalid(format!("{} has no 1-D quantile function", sampler.family));
                }
                if grid < crate::ot::MIN_QUANTILE_GRID {
                    return invalid("quantile grid too small");
                }
            }
            Estimator::McfTwoSample { ref_ratio, .. } | Estimator::Dyadic { ref_ratio, .. } => {
                if !(ref_ratio > 0.0) {
                    return invalid("ref_ratio must be positive");
                }
                let n_max = *self.n_grid.last().expect("nonempty");
                let total = n_max + self.estimator.reference_size(n_max).expect("two-sample");
                let exact =
                    matches!(self.estimator, Estimator::McfTwoSample { .. }) && sampler.dim() > 1;
                if exact && total > crate::ot::MCF_ATOM_LIMIT {
                    return invalid(format!(
                        "n + m_ref = {total} exceeds the exact-transport limit {}",
                        crate::ot::MCF_ATOM_LIMIT
                    ));
                }
            }
        }
        Ok(sampler)
    }
}

fn replicate_rng(seed: u64, n_index: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n_index as u64) << 32) | rep as u64);
    rng
}

fn draw_points(
    sampler: &SyntheticSampler,
    rng: &mut ChaCha8Rng,
    n: usize,
    scale: f64,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| sampler.draw(rng).into_iter().map(|c| c * scale).collect())
        .collect()
}

fn to_points(coords: Vec<Vec<f64>>) -> Result<Vec<Point<f64>>> {
    coords.into_iter().map(Point::new).collect()
}

/// One replicate of the estimator at sample size `n`.
fn replicate(
    spec: &ExperimentSpec,
    sampler: &SyntheticSampler,
    n_index: usize,
    rep: usize,
) -> Result<f64> {
    let n = spec.n_grid[n_index];
    let mut rng = replicate_rng(spec.seed, n_index, rep);
    let c = spec.scale;
    let p = spec.p;
    match spec.estimator {
        Estimator::Quantile1d { grid } => {
            let xs: Vec<f64> = draw_points(sampler, &mut rng, n, c)
                .into_iter()
                .map(|v| v[0])
                .collect();
            let space = Arc::new(FiniteMetricSpace::line(&xs)?);
            let mu = DiscreteMeasure::uniform(space)?;
            let q = |u: f64| c * sampler.quantile(u).expect("checked");
            Ok(wpp_1d_vs_quantile(&mu, &q, p, grid)?.value)
        }
        Estimator::McfTwoSample { .. } => {
            let m = spec.estimator.reference_size(n).expect("two-sample");
            let a = draw_points(sampler, &mut rng, n, c);
            let b = draw_points(sampler, &mut rng, m, c);
            if sampler.dim() == 1 {
                let mut xa: Vec<f64> = a.into_iter().map(|v| v[0]).collect();
                let mut xb: Vec<f64> = b.into_iter().map(|v| v[0]).collect();
                return wpp_1d_samples(&mut xa, &mut xb, p);
            }
            let (mu, nu) = two_sample_measures(a, b)?;
            Ok(wpp_mcf(&mu, &nu, p)?.0.value)
        }
        Estimator::Dyadic { k_star, .. } => {
            let m = spec.estimator.reference_size(n).expect("two-sample");
            let a = draw_points(sampler, &mut rng, n, c);
            let b = draw_points(sampler, &mut rng, m, c);
            let (mu, nu) = two_sample_measures(a, b)?;
            let space = mu.space().clone();
            let all: Vec<usize> = (0..space.len()).collect();
            let alpha = sampler.metadata().alpha.unwrap_or(sampler.dim() as f64);
            let k = k_star.unwrap_or_else(|| auto_k_star(n + m, alpha));
            let tree = build_partition_tree(&space, &all, k)?;
            let bound = dyadic_wpp_bound(&tree, &mu, &nu, p)?;
            let cap = dyadic_cap(bound.diameter, k, p);
            if bound.value > cap * (1.0 + 1e-12) {
                return Err(Error::Solver(format!(
                    "dyadic bound {} exceeds its ceiling {cap}",
                    bound.value
                )));
            }
            Ok(bound.value)
        }
    }
}

fn two_sample_measures(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
) -> Result<(DiscreteMeasure<f64>, DiscreteMeasure<f64>)> {
    let (n, m) = (a.len(), b.len());
    let pa = to_points(a)?;
    let pb = to_points(b)?;
    let space = Arc::new(FiniteMetricSpace::concat(&pa, &pb)?);
    let ia: Vec<usize> = (0..n).collect();
    let ib: Vec<usize> = (n..n + m).collect();
    Ok((
        DiscreteMeasure::uniform_on(space.clone(), &ia)?,
        DiscreteMeasure::uniform_on(space, &ib)?,
    ))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

/// Per-replicate values, indexed `[n_index][replicate]`.
pub fn replicate_values(spec: &ExperimentSpec, workers: usize) -> Result<Vec<Vec<f64>>> {
    let sampler = spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.n_grid.len())
        .flat_map(|i| (0..spec.replicates).map(move |j| (i, j)))
        .collect();
    let flat: Vec<f64> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(i, j)| replicate(spec, &sampler, i, j))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(flat
        .chunks(spec.replicates.max(1))
        .map(|c| c.to_vec())
        .collect())
}

/// Wilson score interval for `hits` successes in `trials`.
pub fn wilson(hits: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let ph = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (ph + z2 / (2.0 * n)) / denom;
    let half = Z95 * (ph * (1.0 - ph) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if hits == trials {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub x: f64,
    pub hits: usize,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub tails: Vec<TailCell>,
}

fn stats(n: usize, values: &[f64], x_grid: &[f64]) -> NStats {
    let mean = values.iter().mean();
    let sd = if values.len() > 1 {
        values.iter().std_dev()
    } else {
        0.0
    };
    let mut data = Data::new(values.to_vec());
    let tails = x_grid
        .iter()
        .map(|&x| {
            let hits = values.iter().filter(|&&v| v > x).count();
            let (lo, hi) = wilson(hits, values.len());
            TailCell {
                x,
                hits,
                p_hat: hits as f64 / values.len() as f64,
                lo,
                hi,
            }
        })
        .collect();
    NStats {
        n,
        mean,
        sd,
        q50: data.quantile(0.5),
        q90: data.quantile(0.9),
        q99: data.quantile(0.99),
        tails,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// 95% t-interval on the slope; absent with fewer than 3 points.
    pub ci: Option<(f64, f64)>,
    pub points: usize,
}

/// OLS of `ys` on `xs` with a t-interval on the slope.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return invalid("a line fit needs at least 2 points");
    }
    let (slope, intercept, r2) = least_squares(xs, ys);
    let k = xs.len();
    let ci = if k >= 3 {
        let mx = xs.iter().sum::<f64>() / k as f64;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sse: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        let se = (sse / (k - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (k - 2) as f64)
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .inverse_cdf(0.975);
        Some((slope - t * se, slope + t * se))
    } else {
        None
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        ci,
        points: k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Rate,
    Tail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ReportKind,
    pub spec: ExperimentSpec,
    pub regime: Option<Regime>,
    pub stats: Vec<NStats>,
    /// Log mean against log n; `None` when some mean is zero.
    pub fit: Option<SlopeFit>,
    /// The same fit after removing `0.5 log log n`, at `alpha = 2p`.
    pub corrected_fit: Option<SlopeFit>,
    pub predicted_slope: Option<f64>,
    /// Fitted mean at the reference size, the proxy's own share of the
    /// two-sample value.
    pub reference_budget: Vec<Option<f64>>,
    pub checks: Vec<Check>,
    pub values: Vec<Vec<f64>>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// `n,mean,sd,q50,q90,q99` then `tail@x,lo@x,hi@x` for every x.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::InvalidInput(e.to_string());
        let mut header: Vec<String> = ["n", "mean", "sd", "q50", "q90", "q99"]
            .map(String::from)
            .to_vec();
        for x in &self.spec.x_grid {
            header.push(format!("tail@{x:e}"));
            header.push(format!("lo@{x:e}"));
            header.push(format!("hi@{x:e}"));
        }
        w.write_record(&header).map_err(err)?;
        for s in &self.stats {
            let mut row = vec![
                s.n.to_string(),
                format!("{:e}", s.mean),
                format!("{:e}", s.sd),
                format!("{:e}", s.q50),
                format!("{:e}", s.q90),
                format!("{:e}", s.q99),
            ];
            for t in &s.tails {
                row.push(format!("{:e}", t.p_hat));
                row.push(format!("{:e}", t.lo));
                row.push(format!("{:e}", t.hi));
            }
            w.write_record(&row).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format `n,statistic,x,value`.
    pub fn write_long_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::InvalidInput(e.to_string());
        w.write_record(["n", "statistic", "x", "value"])
            .map_err(err)?;
        for s in &self.stats {
            let n = s.n.to_string();
            for (name, v) in [
                ("mean", s.mean),
                ("sd", s.sd),
                ("q50", s.q50),
                ("q90", s.q90),
                ("q99", s.q99),
            ] {
                w.write_record([n.clone(), name.into(), String::new(), format!("{v:e}")])
                    .map_err(err)?;
            }
            for t in &s.tails {
                let x = format!("{:e}", t.x);
                for (name, v) in [("tail", t.p_hat), ("tail_lo", t.lo), ("tail_hi", t.hi)] {
                    w.write_record([n.clone(), name.into(), x.clone(), format!("{v:e}")])
                        .map_err(err)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn regime_of(sampler: &SyntheticSampler, p: f64) -> Option<Regime> {
    let alpha = sampler.metadata().alpha?;
    if alpha > 0.0 {
        Regime::classify(alpha, p).ok()
    } else {
        None
    }
}

fn build_report(
    kind: ReportKind,
    spec: &ExperimentSpec,
    values: Vec<Vec<f64>>,
) -> Result<ExperimentReport> {
    let sampler = spec.validate()?;
    let stats: Vec<NStats> = spec
        .n_grid
        .iter()
        .zip(&values)
        .map(|(&n, v)| stats(n, v, &spec.x_grid))
        .collect();
    let regime = regime_of(&sampler, spec.p);
    let mut report = ExperimentReport {
        kind,
        spec: spec.clone(),
        regime,
        stats,
        fit: None,
        corrected_fit: None,
        predicted_slope: None,
        reference_budget: vec![None; spec.n_grid.len()],
        checks: Vec::new(),
        values,
    };
    if kind == ReportKind::Tail {
        return Ok(report);
    }

    let used: Vec<&NStats> = report.stats.iter().skip(spec.drop_smallest).collect();
    if used.len() < 2 {
        return invalid("fewer than 2 sample sizes left after dropping the smallest");
    }
    if used.iter().any(|s| !(s.mean > 0.0)) {
        report.checks.push(Check {
            name: "slope".into(),
            pass: true,
            detail: "undefined: some mean is zero".into(),
        });
        return Ok(report);
    }
    let xs: Vec<f64> = used.iter().map(|s| (s.n as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|s| s.mean.ln()).collect();
    let fit = fit_line(&xs, &ys)?;
    if regime == Some(Regime::AlphaEq2p) && used[0].n >= 3 {
        let yc: Vec<f64> = used
            .iter()
            .zip(&ys)
            .map(|(s, y)| y - 0.5 * (s.n as f64).ln().ln())
            .collect();
        report.corrected_fit = Some(fit_line(&xs, &yc)?);
    }
    for (k, s) in report.stats.iter().enumerate() {
        if let Some(m) = spec.estimator.reference_size(s.n) {
            report.reference_budget[k] = Some((fit.intercept + fit.slope * (m as f64).ln()).exp());
        }
    }
    let bounded = matches!(sampler.metadata().tail, TailLaw::Bounded { .. });
    if let (Some(regime), true) = (regime, bounded) {
        let alpha = sampler.metadata().alpha.expect("regime implies alpha");
        let predicted = match regime {
            Regime::AlphaLt2p | Regime::AlphaEq2p => -0.5,
            Regime::AlphaGt2p => -spec.p / alpha,
        };
        report.predicted_slope = Some(predicted);
        let pass = (fit.slope - predicted).abs() <= spec.slope_tolerance;
        report.checks.push(Check {
            name: "slope".into(),
            pass,
            detail: format!(
                "fitted {:.4}, predicted {predicted:.4}, tolerance {}",
                fit.slope, spec.slope_tolerance
            ),
        });
        if let Some(cf) = &report.corrected_fit {
            report.checks.push(Check {
                name: "log-corrected-r2".into(),
                pass: cf.r2 > fit.r2,
                detail: format!("corrected R2 {:.6}, uncorrected R2 {:.6}", cf.r2, fit.r2),
            });
        }
    }
    report.fit = Some(fit);
    Ok(report)
}

/// Mean of `W_p^p` per sample size and the log-log slope.
pub fn run_rate_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentReport> {
    if spec.replicates < 30 {
        return invalid("rate fits need at least 30 replicates");
    }
    let values = replicate_values(spec, workers)?;
    build_report(ReportKind::Rate, spec, values)
}

/// Empirical `P(W_p^p > x)` on the `(n, x)` lattice with Wilson intervals.
pub fn run_tail_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentReport> {
    if spec.replicates < 1000 {
        return invalid("tail estimates need at least 1000 replicates");
    }
    if spec.x_grid.is_empty() {
        return invalid("tail experiments need an x-grid");
    }
    let values = replicate_values(spec, workers)?;
    build_report(ReportKind::Tail, spec, values)
}

/// Which constant of a bound is fitted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantSlot {
    #[default]
    C,
    CPoly,
    C1,
}

fn default_lo() -> f64 {
    1e-6
}

fn default_hi() -> f64 {
    1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub formula: Formula,
    #[serde(default)]
    pub params: BoundParams,
    #[serde(default)]
    pub constant: ConstantSlot,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

impl BoundSpec {
    fn eval(&self, c: f64, n: u64, x: f64) -> Option<f64> {
        let mut params = self.params.clone();
        match self.constant {
            ConstantSlot::C => params.c = c,
            ConstantSlot::CPoly => params.c_poly = c,
            ConstantSlot::C1 => params.c1 = c,
        }
        evaluate(self.formula, x, n, &params).ok()?.total()
    }
}

/// An empirical tail point with its confidence limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub n: u64,
    pub x: f64,
    pub lcl: f64,
    pub ucl: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Larger constants give larger bounds; the fit is the smallest valid C.
    Increasing,
    /// Larger constants give smaller bounds; the fit is the largest valid C.
    Decreasing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantFit {
    /// `None` when some point falsifies the bound.
    pub constant: Option<f64>,
    pub direction: Direction,
    /// The point whose constraint is tightest at the fitted constant, or the
    /// falsifying point with the largest `n`.
    pub binding: Option<TailPoint>,
    /// Points where even the most favourable constant stays below the LCL.
    pub falsified: Vec<TailPoint>,
    /// Points the bound cannot reach but whose LCL it does not undercut.
    pub unresolved: Vec<TailPoint>,
    pub at_search_limit: bool,
}

/// Boundary of `{C in [lo, hi] : bound(C, n, x) >= ucl at every point}`, by
/// bisection in `log C` to relative precision 1e-3.
pub fn fit_constant(
    points: &[TailPoint],
    bound: &dyn Fn(f64, u64, f64) -> Option<f64>,
    lo: f64,
    hi: f64,
) -> Result<ConstantFit> {
    if !(lo > 0.0 && hi > lo) {
        return invalid("need 0 < lo < hi");
    }
    let eval = |c: f64, pt: &TailPoint| -> Result<f64> {
        bound(c, pt.n, pt.x).ok_or_else(|| {
            Error::InvalidInput(format!(
                "bound not applicable at n = {}, x = {}",
                pt.n, pt.x
            ))
        })
    };
    let (mut s1, mut s2) = (0.0, 0.0);
    for pt in points {
        s1 += eval(1.0, pt)?;
        s2 += eval(2.0, pt)?;
    }
    let direction = if s2 < s1 {
        Direction::Decreasing
    } else {
        Direction::Increasing
    };
    let (best, worst) = match direction {
        Direction::Increasing => (hi, lo),
        Direction::Decreasing => (lo, hi),
    };
    let mut falsified = Vec::new();
    let mut unresolved = Vec::new();
    let mut active = Vec::new();
    for pt in points {
        let b = eval(best, pt)?;
        if b >= pt.ucl {
            active.push(*pt);
        } else if b < pt.lcl {
            falsified.push(*pt);
        } else {
            unresolved.push(*pt);
        }
    }
    if !falsified.is_empty() {
        let binding = falsified
            .iter()
            .copied()
            .max_by(|a, b| a.n.cmp(&b.n).then(a.x.total_cmp(&b.x)));
        return Ok(ConstantFit {
            constant: None,
            direction,
            binding,
            falsified,
            unresolved,
            at_search_limit: false,
        });
    }
    let feasible = |c: f64| -> Result<bool> {
        for pt in &active {
            if eval(c, pt)? < pt.ucl {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let (constant, at_limit) = if feasible(worst)? {
        (worst, true)
    } else {
        // `good` always feasible, `bad` never
        let (mut good, mut bad) = (best, worst);
        while (good / bad).ln().abs() > 1e-3_f64.ln_1p() {
            let mid = (good * bad).sqrt();
            if feasible(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        (good, false)
    };
    let mut binding = None;
    let mut tightest = f64::INFINITY;
    for pt in &active {
        let slack = eval(constant, pt)? / pt.ucl.max(f64::MIN_POSITIVE);
        if slack < tightest {
            tightest = slack;
            binding = Some(*pt);
        }
    }
    Ok(ConstantFit {
        constant: Some(constant),
        direction,
        binding,
        falsified,
        unresolved,
        at_search_limit: at_limit,
    })
}

/// Tail points of a report.
pub fn tail_points(report: &ExperimentReport) -> Vec<TailPoint> {
    report
        .stats
        .iter()
        .flat_map(|s| {
            s.tails.iter().map(move |t| TailPoint {
                n: s.n as u64,
                x: t.x,
                lcl: t.lo,
                ucl: t.hi,
            })
        })
        .collect()
}

/// Fit the free constant of `bound` against the report's tail lattice.
pub fn fit_bound_constant(report: &ExperimentReport, bound: &BoundSpec) -> Result<ConstantFit> {
    let points = tail_points(report);
    if points.is_empty() {
        return invalid("the report has no tail estimates");
    }
    fit_constant(&points, &|c, n, x| bound.eval(c, n, x), bound.lo, bound.hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sampler: String,
    pub p: f64,
    pub seed: u64,
    pub regime: Option<Regime>,
    pub ks: Vec<usize>,
    /// `W_p^p(L_k, mu)` along one sample path.
    pub raw: Vec<f64>,
    /// `raw` times the almost-sure normalizer.
    pub normalized: Vec<f64>,
    pub max: f64,
    pub check: Check,
}

/// One sample path, evaluated at `k = 4, 8, ..., n_max`.
pub fn run_as_trajectory(sampler: &str, p: f64, n_max: usize, seed: u64) -> Result<Trajectory> {
    let s = SyntheticSampler::parse(sampler)?;
    if !(p >= 1.0) {
        return invalid("p must be >= 1");
    }
    if n_max < 4 {
        return invalid("n_max must be >= 4");
    }
    let point_mass = matches!(s.family, Family::PointMass { .. });
    if !point_mass && !s.has_quantile() {
        return invalid("trajectories need a 1-D sampler with a quantile function");
    }
    let alpha = s.metadata().alpha.unwrap_or(1.0);
    let regime = if point_mass {
        Regime::AlphaLt2p
    } else {
        Regime::classify(alpha, p)?
    };
    let mut ks = Vec::new();
    let mut k = 4;
    while k <= n_max {
        ks.push(k);
        k *= 2;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..*ks.last().expect("n_max >= 4"))
        .map(|_| s.draw(&mut rng)[0])
        .collect();
    let mut raw = Vec::with_capacity(ks.len());
    for &k in &ks {
        if point_mass {
            raw.push(0.0);
            continue;
        }
        let space = Arc::new(FiniteMetricSpace::line(&xs[..k])?);
        let mu = DiscreteMeasure::uniform(space)?;
        let q = |u: f64| s.quantile(u).expect("checked");
        raw.push(wpp_1d_vs_quantile(&mu, &q, p, crate::ot::MIN_QUANTILE_GRID)?.value);
    }
    let normalized: Vec<f64> = ks
        .iter()
        .zip(&raw)
        .map(|(&k, &w)| Ok(w * as_rate_normalizer(k as f64, regime, p, alpha)?))
        .collect::<Result<_>>()?;
    let max = normalized.iter().copied().fold(0.0, f64::max);
    let check = doubling_check(&normalized);
    Ok(Trajectory {
        sampler: s.family.to_string(),
        p,
        seed,
        regime: if point_mass { None } else { Some(regime) },
        ks,
        raw,
        normalized,
        max,
        check,
    })
}

/// Fails when the last three values rise monotonically and at least double.
fn doubling_check(v: &[f64]) -> Check {
    let name = "no-doubling-trend".to_string();
    if v.len() < 3 {
        return Check {
            name,
            pass: true,
            detail: "fewer than 3 dyadic blocks".into(),
        };
    }
    let t = &v[v.len() - 3..];
    let rising = t[0] < t[1] && t[1] < t[2] && t[2] >= 2.0 * t[0];
    Check {
        name,
        pass: !rising,
        detail: format!("last blocks {:.4e}, {:.4e}, {:.4e}", t[0], t[1], t[2]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum SumDistribution {
    Rademacher,
    /// Uniform on `[-1, 1]`.
    Uniform,
    /// Symmetric Pareto: random sign times a Pareto(a) on `[1, inf)`.
    Pareto {
        a: f64,
    },
}

impl SumDistribution {
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        match parts.next().unwrap_or_default() {
            "rademacher" => Ok(SumDistribution::Rademacher),
            "uniform" => Ok(SumDistribution::Uniform),
            "pareto" => {
                let a = parts
                    .next()
                    .ok_or_else(|| {
                        Error::InvalidInput("pareto needs a shape, e.g. pareto:4".into())
                    })?
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput("bad pareto shape".into()))?;
                if !(a > 0.0) {
                    return invalid("pareto shape must be positive");
                }
                Ok(SumDistribution::Pareto { a })
            }
            other => invalid(format!("unknown distribution `{other}`")),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            SumDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            SumDistribution::Uniform => 2.0 * rng.random::<f64>() - 1.0,
            SumDistribution::Pareto { a } => {
                let r = (1.0 - rng.random::<f64>()).powf(-1.0 / a);
                if rng.random::<bool>() {
                    r
                } else {
                    -r
                }
            }
        }
    }

    /// `||xi||_r`.
    pub fn norm(&self, r: f64) -> Result<f64> {
        Ok(match *self {
            SumDistribution::Rademacher => 1.0,
            SumDistribution::Uniform => (1.0 / (r + 1.0)).powf(1.0 / r),
            SumDistribution::Pareto { a } => {
                if r >= a {
                    return invalid(format!("pareto:{a} has no moment of order {r}"));
                }
                (a / (a - r)).powf(1.0 / r)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SumInequality {
    Rosenthal,
    Burkholder,
    VonBahrEsseen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityRow {
    pub inequality: SumInequality,
    pub r: f64,
    pub n: usize,
    /// Monte Carlo estimate of the left side.
    pub lhs: f64,
    pub lhs_se: f64,
    /// Right side; for Rosenthal without the absolute constant.
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub distribution: SumDistribution,
    pub replicates: usize,
    pub seed: u64,
    pub rows: Vec<InequalityRow>,
    /// Smallest absolute constant consistent with the Rosenthal rows.
    pub rosenthal_constant: Option<f64>,
}

impl AppendixReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::InvalidInput(e.to_string());
        w.write_record([
            "inequality",
            "r",
            "n",
            "lhs",
            "lhs_se",
            "rhs",
            "ratio",
            "pass",
        ])
        .map_err(err)?;
        for row in &self.rows {
            let name = match row.inequality {
                SumInequality::Rosenthal => "rosenthal",
                SumInequality::Burkholder => "burkholder",
                SumInequality::VonBahrEsseen => "von-bahr-esseen",
            };
            w.write_record([
                name.to_string(),
                format!("{:e}", row.r),
                row.n.to_string(),
                format!("{:e}", row.lhs),
                format!("{:e}", row.lhs_se),
                format!("{:e}", row.rhs),
                format!("{:e}", row.ratio),
                row.pass.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(|S_n / n|, max_k |S_k| / n)` for one replicate.
fn sum_replicate(
    dist: SumDistribution,
    n: usize,
    seed: u64,
    n_index: usize,
    rep: usize,
) -> (f64, f64) {
    let mut rng = replicate_rng(seed, n_index, rep);
    let mut s = 0.0f64;
    let mut m = 0.0f64;
    for _ in 0..n {
        s += dist.draw(&mut rng);
        m = m.max(s.abs());
    }
    (s.abs() / n as f64, m / n as f64)
}

/// `(E Y^r)^(1/r)` and its delta-method standard error.
fn lr_norm(ys: &[f64], r: f64) -> (f64, f64) {
    let powed: Vec<f64> = ys.iter().map(|y| y.powf(r)).collect();
    let m = powed.iter().mean();
    let se_m = if powed.len() > 1 {
        powed.iter().std_dev() / (powed.len() as f64).sqrt()
    } else {
        0.0
    };
    let v = m.powf(1.0 / r);
    let se = if m > 0.0 { v / (r * m) * se_m } else { 0.0 };
    (v, se)
}

/// Monte Carlo check of the moment inequalities for normalized sums. For
/// each `r`: Rosenthal and Burkholder when `r >= 2`, von Bahr-Esseen when
/// `r` lies in `(1, 2]`. A row passes when `lhs - 3 se <= rhs`; Rosenthal
/// rows always pass and feed the fitted constant instead.
pub fn verify_appendix_inequalities(
    dist: SumDistribution,
    rs: &[f64],
    n_grid: &[usize],
    replicates: usize,
    seed: u64,
    workers: usize,
) -> Result<AppendixReport> {
    if replicates < 2 {
        return invalid("need at least 2 replicates");
    }
    if n_grid.is_empty() || n_grid.contains(&0) {
        return invalid("n-grid must be nonempty and positive");
    }
    for &r in rs {
        if !(r > 1.0) {
            return invalid(format!("r = {r} must exceed 1"));
        }
        dist.norm(r)?;
    }
    let jobs: Vec<(usize, usize)> = (0..n_grid.len())
        .flat_map(|i| (0..replicates).map(move |j| (i, j)))
        .collect();
    let sums: Vec<(f64, f64)> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(i, j)| sum_replicate(dist, n_grid[i], seed, i, j))
            .collect()
    });
    let mut rows = Vec::new();
    let mut rosenthal: Option<f64> = None;
    for (i, &n) in n_grid.iter().enumerate() {
        let block = &sums[i * replicates..(i + 1) * replicates];
        let ends: Vec<f64> = block.iter().map(|b| b.0).collect();
        let maxes: Vec<f64> = block.iter().map(|b| b.1).collect();
        let nf = n as f64;
        for &r in rs {
            let norm_r = dist.norm(r)?;
            let mut push = |ineq: SumInequality, (lhs, se): (f64, f64), rhs: f64, checked: bool| {
                rows.push(InequalityRow {
                    inequality: ineq,
                    r,
                    n,
                    lhs,
                    lhs_se: se,
                    rhs,
                    ratio: lhs / rhs,
                    pass: !checked || lhs - 3.0 * se <= rhs,
                });
            };
            if r >= 2.0 {
                let rhs = (r / nf).sqrt() * dist.norm(2.0)? + r / nf.powf((r - 1.0) / r) * norm_r;
                let est = lr_norm(&maxes, r);
                rosenthal = Some(rosenthal.unwrap_or(0.0).max(est.0 / rhs));
                push(SumInequality::Rosenthal, est, rhs, false);
                push(
                    SumInequality::Burkholder,
                    lr_norm(&ends, r),
                    ((r - 1.0) / nf).sqrt() * norm_r,
                    true,
                );
            }
            if r <= 2.0 {
                let rhs = 2f64.powf((2.0 - r) / r) / nf.powf((r - 1.0) / r) * norm_r;
                push(SumInequality::VonBahrEsseen, lr_norm(&ends, r), rhs, true);
            }
        }
    }
    Ok(AppendixReport {
        distribution: dist,
        replicates,
        seed,
        rows,
        rosenthal_constant: rosenthal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(
        sampler: &str,
        estimator: Estimator,
        n_grid: Vec<usize>,
        reps: usize,
    ) -> ExperimentSpec {
        ExperimentSpec {
            sampler: sampler.into(),
            p: 1.0,
            estimator,
            n_grid,
            replicates: reps,
            x_grid: vec![],
            seed: 11,
            drop_smallest: 2,
            scale: 1.0,
            slope_tolerance: 0.08,
        }
    }

    #[test]
    fn wilson_limits() {
        let (lo, hi) = wilson(0, 1000);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.01);
        let (lo, hi) = wilson(500, 1000);
        assert!(lo < 0.5 && hi > 0.5);
    }

    #[test]
    fn point_mass_rate_is_flagged() {
        let s = spec(
            "point-mass:1",
            Estimator::Quantile1d { grid: 1000 },
            vec![8, 16, 32, 64],
            30,
        );
        let r = run_rate_experiment(&s, 1).unwrap();
        assert!(r.values.iter().flatten().all(|&v| v == 0.0));
        assert!(r.fit.is_none());
        assert!(r.checks[0].detail.contains("undefined"));
    }

    #[test]
    fn workers_do_not_change_values() {
        let s = spec(
            "uniform-cube:2",
            Estimator::McfTwoSample {
                m_ref: None,
                ref_ratio: 1.0,
            },
            vec![8, 16],
            6,
        );
        let a = replicate_values(&s, 1).unwrap();
        let b = replicate_values(&s, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(
            "uniform-cube:2",
            Estimator::Quantile1d { grid: 1000 },
            vec![8, 16],
            30,
        );
        assert!(replicate_values(&s, 1).is_err());
        s.sampler = "uniform-cube:1".into();
        s.n_grid = vec![16, 8];
        assert!(replicate_values(&s, 1).is_err());
    }

    #[test]
    fn scale_multiplies_values() {
        let mut s = spec(
            "uniform-cube:1",
            Estimator::Quantile1d { grid: 1000 },
            vec![8, 32],
            4,
        );
        let a = replicate_values(&s, 1).unwrap();
        s.scale = 3.0;
        let b = replicate_values(&s, 1).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((y - 3.0 * x).abs() <= 1e-12 * y.abs());
        }
    }

    #[test]
    fn constant_bound_sits_at_the_lower_limit() {
        let pts = vec![TailPoint {
            n: 10,
            x: 0.1,
            lcl: 0.2,
            ucl: 0.4,
        }];
        let fit = fit_constant(&pts, &|_, _, _| Some(1.0), 1e-6, 1e6).unwrap();
        assert_eq!(fit.constant, Some(1e-6));
        assert!(fit.at_search_limit);
    }

    #[test]
    fn self_inverse_constant() {
        // empirical curve equal to the bound at C = 2
        let shape = |c: f64, n: u64, x: f64| (-(n as f64) * (x / c).powi(2)).exp();
        let pts: Vec<TailPoint> = [(16u64, 0.5), (64, 0.8), (256, 1.0)]
            .iter()
            .map(|&(n, x)| {
                let v = shape(2.0, n, x);
                TailPoint {
                    n,
                    x,
                    lcl: v * 0.9,
                    ucl: v,
                }
            })
            .collect();
        let fit = fit_constant(&pts, &|c, n, x| Some(shape(c, n, x)), 1e-6, 1e6).unwrap();
        let c = fit.constant.unwrap();
        assert!((1.998..=2.002).contains(&c), "{c}");
        assert_eq!(fit.direction, Direction::Increasing);
    }

    #[test]
    fn wrong_exponent_is_falsified_at_the_largest_n() {
        // tail decays like n^-1/2 but the bound like exp(-n)
        let pts: Vec<TailPoint> = [16u64, 64, 256, 1024]
            .iter()
            .map(|&n| {
                let v = 1.0 / (n as f64).sqrt();
                TailPoint {
                    n,
                    x: 0.5,
                    lcl: 0.8 * v,
                    ucl: 1.2 * v,
                }
            })
            .collect();
        let fit = fit_constant(&pts, &|c, n, _| Some(c * (-(n as f64)).exp()), 1e-6, 1e6).unwrap();
        assert!(fit.constant.is_none());
        assert_eq!(fit.binding.unwrap().n, 1024);
    }

    #[test]
    fn decreasing_constants_are_detected() {
        let pts = vec![TailPoint {
            n: 4,
            x: 1.0,
            lcl: 0.0,
            ucl: 0.5,
        }];
        // e^-(c n x) >= 0.5 iff c <= ln 2 / 4
        let fit =
            fit_constant(&pts, &|c, n, x| Some((-c * n as f64 * x).exp()), 1e-6, 1e6).unwrap();
        assert_eq!(fit.direction, Direction::Decreasing);
        let c = fit.constant.unwrap();
        assert!((c / (2f64.ln() / 4.0) - 1.0).abs() < 2e-3);
    }

    #[test]
    fn point_mass_trajectory_is_zero() {
        let t = run_as_trajectory("point-mass:1", 1.0, 64, 3).unwrap();
        assert!(t.normalized.iter().all(|&v| v == 0.0));
        assert_eq!(t.ks, vec![4, 8, 16, 32, 64]);
        let a = run_as_trajectory("uniform-cube:1", 1.0, 256, 5).unwrap();
        let b = run_as_trajectory("uniform-cube:1", 1.0, 256, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn appendix_rows() {
        let rep = verify_appendix_inequalities(
            SumDistribution::Rademacher,
            &[1.5, 2.0, 3.0],
            &[10],
            500,
            1,
            1,
        )
        .unwrap();
        let kinds: Vec<_> = rep.rows.iter().map(|r| (r.inequality, r.r)).collect();
        assert_eq!(
            kinds,
            vec![
                (SumInequality::VonBahrEsseen, 1.5),
                (SumInequality::Rosenthal, 2.0),
                (SumInequality::Burkholder, 2.0),
                (SumInequality::VonBahrEsseen, 2.0),
                (SumInequality::Rosenthal, 3.0),
                (SumInequality::Burkholder, 3.0),
            ]
        );
        assert!(SumDistribution::Pareto { a: 2.0 }.norm(3.0).is_err());
        assert_eq!(
            SumDistribution::parse("pareto:4").unwrap(),
            SumDistribution::Pareto { a: 4.0 }
        );
    }
}
