//! Dyadic rings around a reference point and the three-term transport bound
//! built from them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{mix, restrict, DiscreteMeasure};
use crate::ot::wpp_exact;
use crate::scalar::Scalar;

/// Ring index of a distance: 1 for `d <= 2`, else the `i` with
/// `2^(i-1) < d <= 2^i`.
pub fn ring_index(d: f64) -> usize {
    if !(d > 2.0) {
        return 1;
    }
    let mut i = d.log2().ceil().max(1.0) as i32;
    while i > 1 && d <= 2f64.powi(i - 1) {
        i -= 1;
    }
    while d > 2f64.powi(i) {
        i += 1;
    }
    i as usize
}

#[derive(Clone, Debug)]
pub struct Ring<S: Scalar> {
    pub index: usize,
    pub points: Vec<usize>,
    pub ln_mass: S,
    pub mu_mass: S,
    /// `min(ln_mass, mu_mass)`.
    pub lambda: S,
    pub ln_conditional: Option<DiscreteMeasure<S>>,
    pub mu_conditional: Option<DiscreteMeasure<S>>,
}

#[derive(Clone, Debug)]
pub struct RingDecomposition<S: Scalar> {
    pub x0: usize,
    /// Rings carrying mass under at least one measure, by increasing index.
    pub rings: Vec<Ring<S>>,
    /// Total positive excess of the first measure over the second.
    pub lambda: S,
    /// Same quantity computed from the other side.
    pub lambda_reverse: S,
    /// Normalized excess of the first measure; `None` when `lambda = 0`.
    pub excess_ln: Option<DiscreteMeasure<S>>,
    /// Normalized excess of the second measure; `None` when `lambda = 0`.
    pub excess_mu: Option<DiscreteMeasure<S>>,
}

/// Split two measures along the rings around `x0`.
pub fn ring_decompose<S: Scalar>(
    ln: &DiscreteMeasure<S>,
    mu: &DiscreteMeasure<S>,
    x0: usize,
) -> Result<RingDecomposition<S>> {
    if !ln.same_space(mu) {
        return Err(Error::SpaceMismatch);
    }
    let space = ln.space();
    if x0 >= space.len() {
        return invalid(format!("reference point {x0} outside the space"));
    }
    let mut ring_of = vec![0usize; space.len()];
    let mut max_ring = 0;
    for a in ln.atoms().iter().chain(mu.atoms()) {
        let i = ring_index(space.dist(x0, a.index).as_f64());
        ring_of[a.index] = i;
        max_ring = max_ring.max(i);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); max_ring + 1];
    let mut seen = vec![false; space.len()];
    for a in ln.atoms().iter().chain(mu.atoms()) {
        if !seen[a.index] {
            seen[a.index] = true;
            members[ring_of[a.index]].push(a.index);
        }
    }

    let mut rings = Vec::new();
    let mut lambda = S::zero();
    let mut lambda_reverse = S::zero();
    let mut up: Vec<(S, usize)> = Vec::new();
    let mut down: Vec<(S, usize)> = Vec::new();
    for (index, mut points) in members.into_iter().enumerate().skip(1) {
        if points.is_empty() {
            continue;
        }
        points.sort_unstable();
        let r_ln = restrict(ln, |i| ring_of[i] == index && seen[i]);
        let r_mu = restrict(mu, |i| ring_of[i] == index && seen[i]);
        if r_ln.mass == S::zero() && r_mu.mass == S::zero() {
            continue;
        }
        let diff = r_ln.mass - r_mu.mass;
        if diff > S::zero() {
            lambda = lambda + diff;
            up.push((diff, rings.len()));
        } else if diff < S::zero() {
            lambda_reverse = lambda_reverse - diff;
            down.push((-diff, rings.len()));
        }
        rings.push(Ring {
            index,
            points,
            ln_mass: r_ln.mass,
            mu_mass: r_mu.mass,
            lambda: r_ln.mass.min(r_mu.mass),
            ln_conditional: r_ln.conditional,
            mu_conditional: r_mu.conditional,
        });
    }

    let excess =
        |parts: &[(S, usize)], total: S, pick: &dyn Fn(&Ring<S>) -> Option<&DiscreteMeasure<S>>| {
            if !(total > S::zero()) {
                return Ok(None);
            }
            let comps: Vec<(S, &DiscreteMeasure<S>)> = parts
                .iter()
                .map(|&(w, r)| {
                    (
                        w / total,
                        pick(&rings[r]).expect("positive excess implies positive mass"),
                    )
                })
                .collect();
            mix(&comps).map(Some)
        };
    let excess_ln = excess(&up, lambda, &|r| r.ln_conditional.as_ref())?;
    let excess_mu = excess(&down, lambda_reverse, &|r| r.mu_conditional.as_ref())?;
    Ok(RingDecomposition {
        x0,
        rings,
        lambda,
        lambda_reverse,
        excess_ln,
        excess_mu,
    })
}

impl<S: Scalar> RingDecomposition<S> {
    /// Largest atomwise error of `sum_i lambda_i L^i + lambda m` against `ln`
    /// and of the matching identity against `mu`.
    pub fn reconstruction_error(
        &self,
        ln: &DiscreteMeasure<S>,
        mu: &DiscreteMeasure<S>,
    ) -> (f64, f64) {
        let n = ln.space().len();
        let rebuild = |cond: &dyn Fn(&Ring<S>) -> Option<&DiscreteMeasure<S>>,
                       excess: &Option<DiscreteMeasure<S>>| {
            let mut w = vec![0.0f64; n];
            for r in &self.rings {
                if let Some(m) = cond(r) {
                    for a in m.atoms() {
                        w[a.index] += r.lambda.as_f64() * a.weight.as_f64();
                    }
                }
            }
            if let Some(m) = excess {
                for a in m.atoms() {
                    w[a.index] += self.lambda.as_f64() * a.weight.as_f64();
                }
            }
            w
        };
        let err = |w: Vec<f64>, m: &DiscreteMeasure<S>| {
            let dense = m.dense_weights();
            w.iter()
                .zip(&dense)
                .map(|(a, b)| (a - b.as_f64()).abs())
                .fold(0.0, f64::max)
        };
        (
            err(rebuild(&|r| r.ln_conditional.as_ref(), &self.excess_ln), ln),
            err(rebuild(&|r| r.mu_conditional.as_ref(), &self.excess_mu), mu),
        )
    }

    pub fn report(&self) -> DecompositionReport {
        DecompositionReport {
            x0: self.x0,
            rings: self
                .rings
                .iter()
                .map(|r| RingSummary {
                    index: r.index,
                    radius: 2f64.powi(r.index as i32),
                    points: r.points.len(),
                    ln_mass: r.ln_mass.as_f64(),
                    mu_mass: r.mu_mass.as_f64(),
                    lambda: r.lambda.as_f64(),
                })
                .collect(),
            lambda: self.lambda.as_f64(),
            lambda_reverse: self.lambda_reverse.as_f64(),
            excess_defined: self.excess_ln.is_some(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingSummary {
    pub index: usize,
    pub radius: f64,
    pub points: usize,
    pub ln_mass: f64,
    pub mu_mass: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub x0: usize,
    pub rings: Vec<RingSummary>,
    pub lambda: f64,
    pub lambda_reverse: f64,
    pub excess_defined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureBound {
    pub total: f64,
    /// `sum_i lambda_i W_p^p(L^i, mu^i)`.
    pub main: f64,
    /// `2^(p-1) lambda W_p^p(m, delta_x0)`.
    pub remainder_ln: f64,
    /// `2^(p-1) lambda W_p^p(n, delta_x0)`.
    pub remainder_mu: f64,
    /// Per-ring `W_p^p(L^i, mu^i)`, 0 where a conditional is missing.
    pub ring_terms: Vec<f64>,
}

/// The three-term upper bound on `W_p^p(ln, mu)`, each term solved exactly.
pub fn mixture_bound<S: Scalar>(decomp: &RingDecomposition<S>, p: f64) -> Result<MixtureBound> {
    if !(p >= 1.0) {
        return invalid("p must be >= 1");
    }
    let ring_terms: Vec<f64> = decomp
        .rings
        .par_iter()
        .map(|r| match (&r.ln_conditional, &r.mu_conditional) {
            (Some(a), Some(b)) if r.lambda > S::zero() => {
                wpp_exact(a, b, S::of(p)).map(|v| v.as_f64())
            }
            _ => Ok(0.0),
        })
        .collect::<Result<_>>()?;
    let main: f64 = decomp
        .rings
        .iter()
        .zip(&ring_terms)
        .map(|(r, t)| r.lambda.as_f64() * t)
        .sum();
    let factor = 2f64.powf(p - 1.0);
    let to_x0 = |m: &Option<DiscreteMeasure<S>>| {
        m.as_ref()
            .map_or(0.0, |m| m.wpp_to_dirac(decomp.x0, S::of(p)).as_f64())
    };
    let remainder_ln = factor * decomp.lambda.as_f64() * to_x0(&decomp.excess_ln);
    let remainder_mu = factor * decomp.lambda.as_f64() * to_x0(&decomp.excess_mu);
    Ok(MixtureBound {
        total: main + remainder_ln + remainder_mu,
        main,
        remainder_ln,
        remainder_mu,
        ring_terms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    /// `W_p^p(sum l_i mu_i, sum l_i nu_i)`.
    pub lhs: f64,
    /// `sum l_i W_p^p(mu_i, nu_i)`.
    pub rhs: f64,
    /// `rhs - lhs`; nonnegative up to solver tolerance.
    pub gap: f64,
    pub terms: Vec<f64>,
}

/// Compare the transport cost between two mixtures with the mixture of the
/// componentwise costs.
pub fn verify_mixture_convexity<S: Scalar>(
    mus: &[DiscreteMeasure<S>],
    nus: &[DiscreteMeasure<S>],
    weights: &[S],
    p: f64,
) -> Result<ConvexityReport> {
    if mus.len() != nus.len() || mus.len() != weights.len() || mus.is_empty() {
        return invalid("one weight and one pair of measures per component");
    }
    let terms: Vec<f64> = mus
        .par_iter()
        .zip(nus.par_iter())
        .map(|(a, b)| wpp_exact(a, b, S::of(p)).map(|v| v.as_f64()))
        .collect::<Result<_>>()?;
    let mu = mix(&weights.iter().copied().zip(mus.iter()).collect::<Vec<_>>())?;
    let nu = mix(&weights.iter().copied().zip(nus.iter()).collect::<Vec<_>>())?;
    let lhs = wpp_exact(&mu, &nu, S::of(p))?.as_f64();
    let rhs: f64 = weights
        .iter()
        .zip(&terms)
        .map(|(w, t)| w.as_f64() * t)
        .sum();
    Ok(ConvexityReport {
        lhs,
        rhs,
        gap: rhs - lhs,
        terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::FiniteMetricSpace;
    use std::sync::Arc;

    #[test]
    fn ring_indices() {
        assert_eq!(ring_index(0.0), 1);
        assert_eq!(ring_index(2.0), 1);
        assert_eq!(ring_index(2.0000001), 2);
        assert_eq!(ring_index(4.0), 2);
        assert_eq!(ring_index(4.5), 3);
        assert_eq!(ring_index(1024.0), 10);
    }

    #[test]
    fn identical_measures() {
        let s = Arc::new(FiniteMetricSpace::line(&[0.0, 1.0, 3.0, 9.0]).unwrap());
        let mu = DiscreteMeasure::from_weights(s, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let d = ring_decompose(&mu, &mu, 0).unwrap();
        assert_eq!(d.lambda, 0.0);
        assert!(d.excess_ln.is_none() && d.excess_mu.is_none());
        let masses: Vec<f64> = d.rings.iter().map(|r| r.lambda).collect();
        for (m, want) in masses.iter().zip([0.3, 0.3, 0.4]) {
            assert!((m - want).abs() < 1e-15);
        }
        let b = mixture_bound(&d, 2.0).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn two_ring_example() {
        // a = 1 in K_1, b = 3 in K_2
        let s = Arc::new(FiniteMetricSpace::line(&[0.0, 1.0, 3.0]).unwrap());
        let ln = DiscreteMeasure::dirac(s.clone(), 1).unwrap();
        let mu = DiscreteMeasure::dirac(s, 2).unwrap();
        let d = ring_decompose(&ln, &mu, 0).unwrap();
        assert_eq!(d.lambda, 1.0);
        assert!(d.rings.iter().all(|r| r.lambda == 0.0));
        assert_eq!(
            d.excess_ln.as_ref().unwrap().dense_weights(),
            vec![0.0, 1.0, 0.0]
        );
        assert_eq!(
            d.excess_mu.as_ref().unwrap().dense_weights(),
            vec![0.0, 0.0, 1.0]
        );
        let b = mixture_bound(&d, 1.0).unwrap();
        assert_eq!((b.main, b.total), (0.0, 4.0));
        let (e1, e2) = d.reconstruction_error(&ln, &mu);
        assert!(e1 < 1e-15 && e2 < 1e-15);
    }

    #[test]
    fn single_component_is_tight() {
        let s = Arc::new(FiniteMetricSpace::line(&[0.0, 1.0, 5.0]).unwrap());
        let a = DiscreteMeasure::from_weights(s.clone(), &[0.5, 0.5, 0.0]).unwrap();
        let b = DiscreteMeasure::from_weights(s, &[0.0, 0.25, 0.75]).unwrap();
        let r = verify_mixture_convexity(std::slice::from_ref(&a), &[b], &[1.0], 2.0).unwrap();
        assert!(r.gap.abs() < 1e-12);
        let r =
            verify_mixture_convexity(&[a.clone(), a.clone()], &[a.clone(), a], &[0.5, 0.5], 1.0)
                .unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }
}
