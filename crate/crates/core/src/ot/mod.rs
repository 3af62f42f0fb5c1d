//! Exact `W_p^p` between discrete measures and against 1-D quantile functions.

mod one_d;
pub(crate) mod simplex;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::DiscreteMeasure;
use crate::scalar::Scalar;
use simplex::Real;

pub use one_d::{wpp_1d, wpp_1d_samples, wpp_1d_vs_quantile, MIN_QUANTILE_GRID};

/// Combined support size above which [`wpp_mcf`] refuses to run.
pub const MCF_ATOM_LIMIT: usize = 5000;

/// Largest common denominator tried when integerizing weights.
const MAX_DENOMINATOR: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WppMethod {
    ClosedForm1d,
    QuantileIntegral,
    MinCostFlow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WppValue<S> {
    pub value: S,
    pub p: S,
    pub method: WppMethod,
    /// Error bound or solver tolerance attached to `value`.
    pub tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry<S> {
    /// Point index of the source atom.
    pub source: usize,
    /// Point index of the target atom.
    pub target: usize,
    pub mass: S,
    /// `mass * d(source, target)^p`.
    pub cost: S,
}

/// A coupling between two discrete measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan<S> {
    pub entries: Vec<PlanEntry<S>>,
    pub cost: S,
}

impl<S: Scalar> TransportPlan<S> {
    /// Check marginals, nonnegativity and the recorded cost against `tol`.
    pub fn verify(
        &self,
        mu: &DiscreteMeasure<S>,
        nu: &DiscreteMeasure<S>,
        p: S,
        tol: f64,
    ) -> Result<()> {
        let space = mu.space();
        let mut out = vec![0.0f64; space.len()];
        let mut inc = vec![0.0f64; space.len()];
        let mut recomputed = 0.0f64;
        for e in &self.entries {
            if e.mass < S::zero() {
                return invalid(format!("negative plan mass {}", e.mass));
            }
            out[e.source] += e.mass.as_f64();
            inc[e.target] += e.mass.as_f64();
            recomputed +=
                e.mass.as_f64() * space.dist(e.source, e.target).as_f64().powf(p.as_f64());
        }
        for a in mu.atoms() {
            if (out[a.index] - a.weight.as_f64()).abs() > tol {
                return invalid(format!("row marginal off at atom {}", a.index));
            }
        }
        for a in nu.atoms() {
            if (inc[a.index] - a.weight.as_f64()).abs() > tol {
                return invalid(format!("column marginal off at atom {}", a.index));
            }
        }
        if (recomputed - self.cost.as_f64()).abs() > tol * recomputed.abs().max(1.0) {
            return invalid("plan cost does not match its entries");
        }
        Ok(())
    }

    /// CSV with columns `i,j,mass,cost`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Solver(e.to_string());
        w.write_record(["i", "j", "mass", "cost"]).map_err(err)?;
        for e in &self.entries {
            w.write_record([
                e.source.to_string(),
                e.target.to_string(),
                format!("{:e}", e.mass),
                format!("{:e}", e.cost),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// If every weight is an integer multiple of `1/N` (up to rounding), return `N`.
fn denominator<S: Scalar>(weights: &[S]) -> Option<u64> {
    let min = weights.iter().copied().fold(S::infinity(), S::min).as_f64();
    if !(min > 0.0) {
        return None;
    }
    let candidate = (1.0 / min).round();
    if !(1.0..=MAX_DENOMINATOR as f64).contains(&candidate) {
        return None;
    }
    let tol = 1e-9;
    let mut total = 0u64;
    for w in weights {
        let k = w.as_f64() * candidate;
        let r = k.round();
        if (k - r).abs() > tol || r < 1.0 {
            return None;
        }
        total += r as u64;
    }
    (total == candidate as u64).then_some(candidate as u64)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact `W_p^p(mu, nu)` by solving the transportation linear program with
/// costs `d(x, y)^p`. Both measures must live on the same space.
///
/// Weights that are multiples of a common `1/N` are solved in exact integer
/// flow arithmetic; other weights use real flows.
pub fn wpp_mcf<S: Scalar>(
    mu: &DiscreteMeasure<S>,
    nu: &DiscreteMeasure<S>,
    p: S,
) -> Result<(WppValue<S>, TransportPlan<S>)> {
    if !(p >= S::one()) {
        return invalid("p must be >= 1");
    }
    if !mu.same_space(nu) {
        return Err(Error::SpaceMismatch);
    }
    let total_mu: f64 = mu.atoms().iter().map(|a| a.weight.as_f64()).sum();
    let total_nu: f64 = nu.atoms().iter().map(|a| a.weight.as_f64()).sum();
    if (total_mu - total_nu).abs() > 1e-10f64.max(S::WEIGHT_TOL) {
        return Err(Error::Infeasible((total_mu - total_nu).abs()));
    }
    let mu = mu.without_zero_atoms();
    let nu = nu.without_zero_atoms();
    if mu.len() + nu.len() > MCF_ATOM_LIMIT {
        return invalid(format!(
            "{} atoms exceed the exact-transport limit of {MCF_ATOM_LIMIT}",
            mu.len() + nu.len()
        ));
    }
    let space = mu.space();
    let (m, n) = (mu.len(), nu.len());
    let mut cost = Vec::with_capacity(m * n);
    let integer_p = p == p.round() && p <= S::of(8.0);
    for a in mu.atoms() {
        for b in nu.atoms() {
            let d = space.dist(a.index, b.index);
            cost.push(if integer_p {
                d.powi(p.to_i32().unwrap_or(1))
            } else {
                d.powf(p)
            });
        }
    }

    let wa: Vec<S> = mu.atoms().iter().map(|a| a.weight).collect();
    let wb: Vec<S> = nu.atoms().iter().map(|a| a.weight).collect();

    let triples: Vec<(usize, usize, S)> = match (denominator(&wa), denominator(&wb)) {
        (Some(na), Some(nb))
            if (na / gcd(na, nb))
                .checked_mul(nb)
                .is_some_and(|l| l <= MAX_DENOMINATOR) =>
        {
            let l = na / gcd(na, nb) * nb;
            let supply: Vec<i64> = wa
                .iter()
                .map(|w| (w.as_f64() * na as f64).round() as i64 * (l / na) as i64)
                .collect();
            let demand: Vec<i64> = wb
                .iter()
                .map(|w| (w.as_f64() * nb as f64).round() as i64 * (l / nb) as i64)
                .collect();
            let sol = simplex::solve::<i64, S>(&supply, &demand, &cost)?;
            check_duality(&sol, &supply, &demand, &cost);
            let scale = S::one() / S::of(l as f64);
            sol.cells
                .into_iter()
                .filter(|c| c.flow > 0)
                .map(|c| (c.row, c.col, S::of(c.flow as f64) * scale))
                .collect()
        }
        _ => {
            let mut demand = wb.clone();
            let sa: S = wa.iter().copied().sum();
            let sb: S = wb.iter().copied().sum();
            let last = demand.len() - 1;
            demand[last] = (demand[last] + sa - sb).max(S::zero());
            let sol = solve_real(&wa, &demand, &cost)?;
            sol.into_iter().filter(|c| c.2 > S::zero()).collect()
        }
    };

    let mut entries = Vec::with_capacity(triples.len());
    let mut total = S::zero();
    for (r, c, mass) in triples {
        let cc = mass * cost[r * n + c];
        total = total + cc;
        entries.push(PlanEntry {
            source: mu.atoms()[r].index,
            target: nu.atoms()[c].index,
            mass,
            cost: cc,
        });
    }
    let value = WppValue {
        value: total,
        p,
        method: WppMethod::MinCostFlow,
        tolerance: 1e-10,
    };
    Ok((
        value,
        TransportPlan {
            entries,
            cost: total,
        },
    ))
}

/// `W_p^p` by the cheapest exact method: the staircase merge on the line,
/// the transportation solver otherwise.
pub fn wpp_exact<S: Scalar>(mu: &DiscreteMeasure<S>, nu: &DiscreteMeasure<S>, p: S) -> Result<S> {
    if mu.space().is_line() && nu.space().is_line() {
        return Ok(wpp_1d(mu, nu, p)?.value);
    }
    Ok(wpp_mcf(mu, nu, p)?.0.value)
}

/// Primal and dual objectives agree at an optimal basis.
fn check_duality<F: simplex::Flow, S: Scalar>(
    sol: &simplex::Solution<F, S>,
    supply: &[F],
    demand: &[F],
    cost: &[S],
) {
    let n = demand.len();
    let primal: f64 = sol
        .cells
        .iter()
        .map(|c| c.flow.to_f64() * cost[c.row * n + c.col].as_f64())
        .sum();
    let dual: f64 = supply
        .iter()
        .zip(&sol.row_potential)
        .chain(demand.iter().zip(&sol.col_potential))
        .map(|(f, u)| f.to_f64() * u.as_f64())
        .sum();
    log::trace!("transport solved in {} pivots", sol.pivots);
    debug_assert!(
        (primal - dual).abs() <= (S::epsilon().as_f64() * 1e4).max(1e-9) * primal.abs().max(1.0),
        "duality gap {primal} vs {dual}"
    );
}

fn solve_real<S: Scalar>(supply: &[S], demand: &[S], cost: &[S]) -> Result<Vec<(usize, usize, S)>> {
    let a: Vec<Real<S>> = supply.iter().copied().map(Real).collect();
    let b: Vec<Real<S>> = demand.iter().copied().map(Real).collect();
    let sol = simplex::solve::<Real<S>, S>(&a, &b, cost)?;
    check_duality(&sol, &a, &b, cost);
    Ok(sol
        .cells
        .into_iter()
        .map(|c| (c.row, c.col, c.flow.0))
        .collect())
}
