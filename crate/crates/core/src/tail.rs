//! Tail function `H(t) = P(d(x0, X) > t)`, weak moments, the integrals
//! `int H^e t^(p-1) dt` and exponential moments.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::measures::DiscreteMeasure;
use crate::quad::adaptive;
use crate::sampler::{Family, SyntheticSampler, TailLaw};
use crate::scalar::Scalar;

/// Quadrature tolerance for analytic profiles.
const QUAD_TOL: f64 = 1e-11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum TailProfile {
    /// Closed-form tail of a synthetic family, reference point at the origin.
    Analytic { sampler: SyntheticSampler },
    /// Step tail of a weighted sample: sorted distances and their weights.
    Empirical {
        distances: Vec<f64>,
        weights: Vec<f64>,
    },
}

/// A nonnegative quantity that may diverge, with a numerical error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailValue {
    /// `f64::INFINITY` when divergent.
    pub value: f64,
    pub divergent: bool,
    /// Quadrature or search error; 0 for exact evaluations.
    pub error: f64,
}

impl TailValue {
    fn exact(value: f64) -> Self {
        TailValue {
            value,
            divergent: false,
            error: 0.0,
        }
    }

    fn infinite() -> Self {
        TailValue {
            value: f64::INFINITY,
            divergent: true,
            error: 0.0,
        }
    }
}

impl TailProfile {
    pub fn analytic(sampler: SyntheticSampler) -> Result<Self> {
        if sampler.tail(1.0).is_none() {
            return invalid(format!("no closed-form tail for {}", sampler.family));
        }
        Ok(TailProfile::Analytic { sampler })
    }

    /// Tail of `mu` seen from the point `x0`.
    pub fn empirical<S: Scalar>(mu: &DiscreteMeasure<S>, x0: usize) -> Result<Self> {
        if x0 >= mu.space().len() {
            return invalid("reference point outside the space");
        }
        let mut pairs: Vec<(f64, f64)> = mu
            .atoms()
            .iter()
            .filter(|a| a.weight > S::zero())
            .map(|a| (mu.space().dist(x0, a.index).as_f64(), a.weight.as_f64()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(TailProfile::Empirical {
            distances: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// Uniform weights on the given distances.
    pub fn from_distances(mut distances: Vec<f64>) -> Result<Self> {
        if distances.is_empty() {
            return invalid("no distances");
        }
        if distances.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return invalid("distances must be finite and nonnegative");
        }
        distances.sort_by(f64::total_cmp);
        let w = 1.0 / distances.len() as f64;
        let weights = vec![w; distances.len()];
        Ok(TailProfile::Empirical { distances, weights })
    }

    /// Profile of the metric multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        match self {
            TailProfile::Empirical { distances, weights } => Ok(TailProfile::Empirical {
                distances: distances.iter().map(|d| d * c).collect(),
                weights: weights.clone(),
            }),
            TailProfile::Analytic { .. } => invalid("only empirical profiles rescale"),
        }
    }

    /// `H(t)`, right-continuous.
    pub fn h(&self, t: f64) -> f64 {
        match self {
            TailProfile::Analytic { sampler } => sampler.tail(t).unwrap_or(f64::NAN),
            TailProfile::Empirical { distances, weights } => {
                let k = distances.partition_point(|&d| d <= t);
                weights[k..].iter().sum()
            }
        }
    }

    /// `H(t-) = P(d >= t)`.
    pub fn h_left(&self, t: f64) -> f64 {
        match self {
            TailProfile::Analytic { sampler } => match sampler.family {
                Family::UniformSphere { .. } if t <= 1.0 => 1.0,
                _ => self.h(t),
            },
            TailProfile::Empirical { distances, weights } => {
                let k = distances.partition_point(|&d| d < t);
                weights[k..].iter().sum()
            }
        }
    }

    fn law(&self) -> Option<TailLaw> {
        match self {
            TailProfile::Analytic { sampler } => Some(sampler.metadata().tail),
            TailProfile::Empirical { .. } => None,
        }
    }

    /// `E[d(x0, X)^q]`.
    pub fn strong_moment(&self, q: f64) -> TailValue {
        match self {
            TailProfile::Empirical { distances, weights } => TailValue::exact(
                distances
                    .iter()
                    .zip(weights)
                    .map(|(d, w)| w * d.powf(q))
                    .sum(),
            ),
            TailProfile::Analytic { sampler } => match sampler.family {
                Family::PointMass { .. } => TailValue::exact(0.0),
                Family::UniformSphere { .. } => TailValue::exact(1.0),
                Family::UniformCube { d: 1 } => TailValue::exact(1.0 / (q + 1.0)),
                Family::ParetoRadial { a, .. } => {
                    if q < a {
                        TailValue::exact(a / (a - q))
                    } else {
                        TailValue::infinite()
                    }
                }
                Family::ExpRadial { kappa, lambda, .. } => {
                    TailValue::exact(gamma(1.0 + q / kappa) * lambda.powf(-q / kappa))
                }
                _ => {
                    // q int_0^R H(t) t^(q-1) dt on bounded support
                    let r = bounded_radius(sampler);
                    let f = |t: f64| self.h(t) * t.powf(q - 1.0);
                    let v = adaptive(&f, 0.0, r, QUAD_TOL);
                    TailValue {
                        value: q * v.value,
                        divergent: false,
                        error: q * v.error,
                    }
                }
            },
        }
    }
}

fn bounded_radius(s: &SyntheticSampler) -> f64 {
    match s.metadata().tail {
        TailLaw::Bounded { radius } => radius,
        _ => f64::INFINITY,
    }
}

/// `sup_t t^q H(t)`, the weak moment raised to the power `q`.
pub fn weak_moment(profile: &TailProfile, q: f64) -> Result<TailValue> {
    if !(q >= 1.0) {
        return invalid("weak moments need q >= 1");
    }
    Ok(match profile {
        TailProfile::Empirical { distances, weights } => {
            // the sup of a right-continuous step function times t^q sits at
            // left limits of the jumps
            let mut above: f64 = weights.iter().sum();
            let mut best: f64 = 0.0;
            let mut k = 0;
            while k < distances.len() {
                let d = distances[k];
                best = best.max(d.powf(q) * above);
                while k < distances.len() && distances[k] == d {
                    above -= weights[k];
                    k += 1;
                }
            }
            TailValue::exact(best)
        }
        TailProfile::Analytic { sampler } => match profile.law().expect("analytic") {
            TailLaw::PowerLaw { a } => {
                if q <= a {
                    TailValue::exact(1.0)
                } else {
                    TailValue::infinite()
                }
            }
            TailLaw::Weibull { kappa, lambda } => {
                TailValue::exact((q / (lambda * kappa)).powf(q / kappa) * (-q / kappa).exp())
            }
            TailLaw::Bounded { radius } => {
                if radius == 0.0 {
                    return Ok(TailValue::exact(0.0));
                }
                if let Family::UniformSphere { .. } = sampler.family {
                    return Ok(TailValue::exact(1.0));
                }
                grid_sup(&|t| t.powf(q) * profile.h_left(t), radius)
            }
        },
    })
}

/// Maximum on `(0, r]` by a uniform scan refined around the best cell; the
/// error is the gain of the last refinement.
fn grid_sup(f: &dyn Fn(f64) -> f64, r: f64) -> TailValue {
    let n = 4096;
    let (mut lo, mut hi) = (0.0, r);
    let mut best = 0.0f64;
    let mut gain = f64::INFINITY;
    for _ in 0..8 {
        let h = (hi - lo) / n as f64;
        let mut arg = lo;
        let mut local = best;
        for k in 0..=n {
            let t = lo + k as f64 * h;
            if t <= 0.0 {
                continue;
            }
            let v = f(t);
            if v > local {
                local = v;
                arg = t;
            }
        }
        gain = local - best;
        best = local;
        lo = (arg - h).max(0.0);
        hi = (arg + h).min(r);
    }
    TailValue {
        value: best,
        divergent: false,
        error: gain,
    }
}

/// `int_0^inf H(t)^exponent t^(p-1) dt`.
pub fn i_integral(profile: &TailProfile, exponent: f64, p: f64) -> Result<TailValue> {
    if !(exponent > 0.0 && exponent <= 1.0) {
        return invalid("exponent must lie in (0, 1]");
    }
    if !(p >= 1.0) {
        return invalid("p must be >= 1");
    }
    Ok(match profile {
        TailProfile::Empirical { distances, weights } => {
            // H is constant on [d_(k-1), d_(k))
            let mut above: f64 = weights.iter().sum();
            let mut prev = 0.0f64;
            let mut total = 0.0;
            for (d, w) in distances.iter().zip(weights) {
                if above > 0.0 && *d > prev {
                    total += above.powf(exponent) * (d.powf(p) - prev.powf(p)) / p;
                }
                above -= w;
                prev = prev.max(*d);
            }
            TailValue::exact(total)
        }
        TailProfile::Analytic { sampler } => match profile.law().expect("analytic") {
            TailLaw::PowerLaw { a } => {
                if a * exponent > p {
                    TailValue::exact(1.0 / p + 1.0 / (a * exponent - p))
                } else {
                    TailValue::infinite()
                }
            }
            TailLaw::Weibull { kappa, lambda } => {
                TailValue::exact(gamma(p / kappa) / (kappa * (lambda * exponent).powf(p / kappa)))
            }
            TailLaw::Bounded { radius } => {
                if radius == 0.0 {
                    return Ok(TailValue::exact(0.0));
                }
                if let Family::UniformSphere { .. } = sampler.family {
                    return Ok(TailValue::exact(1.0 / p));
                }
                let f = |t: f64| profile.h(t).max(0.0).powf(exponent) * t.powf(p - 1.0);
                let q = adaptive(&f, 0.0, radius, QUAD_TOL);
                TailValue {
                    value: q.value,
                    divergent: false,
                    error: q.error,
                }
            }
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMethod {
    Analytic,
    Exact,
    MonteCarlo,
    Divergent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub std_error: f64,
    pub method: MomentMethod,
}

/// `E exp(lambda_exp d(x0, X)^kappa)`. Closed forms where known; a sample
/// mean with a normal 95% interval for other finite cases; divergence is
/// decided from the family's tail law, never from the sample.
pub fn exp_moment(
    profile: &TailProfile,
    kappa: f64,
    lambda_exp: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ExpMoment> {
    if !(kappa > 0.0 && lambda_exp > 0.0) {
        return invalid("kappa and lambda must be positive");
    }
    let fixed = |value: f64, method| ExpMoment {
        value,
        ci_low: value,
        ci_high: value,
        std_error: 0.0,
        method,
    };
    let sampler = match profile {
        TailProfile::Empirical { distances, weights } => {
            let v = distances
                .iter()
                .zip(weights)
                .map(|(d, w)| w * (lambda_exp * d.powf(kappa)).exp())
                .sum();
            return Ok(fixed(v, MomentMethod::Exact));
        }
        TailProfile::Analytic { sampler } => sampler,
    };
    match sampler.metadata().tail {
        TailLaw::Bounded { radius: 0.0 } => return Ok(fixed(1.0, MomentMethod::Analytic)),
        TailLaw::PowerLaw { .. } => return Ok(fixed(f64::INFINITY, MomentMethod::Divergent)),
        TailLaw::Weibull { kappa: k, lambda } => {
            if k < kappa || (k == kappa && lambda_exp >= lambda) {
                return Ok(fixed(f64::INFINITY, MomentMethod::Divergent));
            }
            if k == kappa {
                // P(R^k > s) = exp(-lambda s)
                return Ok(fixed(
                    lambda / (lambda - lambda_exp),
                    MomentMethod::Analytic,
                ));
            }
        }
        TailLaw::Bounded { .. } => {
            if let Family::UniformSphere { .. } = sampler.family {
                return Ok(fixed(lambda_exp.exp(), MomentMethod::Analytic));
            }
        }
    }
    if n_mc < 2 {
        return invalid("Monte Carlo needs at least 2 draws");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n_mc {
        let x = sampler.draw(&mut rng);
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        let v = (lambda_exp * r.powf(kappa)).exp();
        sum += v;
        sum2 += v * v;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0);
    let se = (var / n).sqrt();
    if !mean.is_finite() {
        return Err(Error::InvalidInput("exponential moment overflowed".into()));
    }
    Ok(ExpMoment {
        value: mean,
        ci_low: mean - 1.96 * se,
        ci_high: mean + 1.96 * se,
        std_error: se,
        method: MomentMethod::MonteCarlo,
    })
}

/// `t,H(t)` on a logarithmic grid.
pub fn write_tail_csv<W: Write>(
    profile: &TailProfile,
    t_min: f64,
    t_max: f64,
    points: usize,
    out: W,
) -> Result<()> {
    if !(t_min > 0.0 && t_max > t_min) || points < 2 {
        return invalid("need 0 < t_min < t_max and at least 2 points");
    }
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(["t", "H"]).map_err(err)?;
    let ratio = (t_max / t_min).ln() / (points - 1) as f64;
    for k in 0..points {
        let t = t_min * (ratio * k as f64).exp();
        w.write_record([format!("{t:e}"), format!("{:e}", profile.h(t))])
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
