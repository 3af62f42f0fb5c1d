//! Finitely supported probability measures on a [`FiniteMetricSpace`].

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metric::{FiniteMetricSpace, Point};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom<S> {
    pub index: usize,
    pub weight: S,
}

/// Weighted atoms on a shared metric space. Weights are nonnegative and sum
/// to one; atom indices are distinct.
#[derive(Clone, Debug)]
pub struct DiscreteMeasure<S: Scalar> {
    space: Arc<FiniteMetricSpace<S>>,
    atoms: Vec<Atom<S>>,
}

impl<S: Scalar> DiscreteMeasure<S> {
    pub fn new(space: Arc<FiniteMetricSpace<S>>, atoms: Vec<Atom<S>>) -> Result<Self> {
        let n = space.len();
        let mut seen = vec![false; n];
        for a in &atoms {
            if a.index >= n {
                return invalid(format!(
                    "atom index {} outside a space of {n} points",
                    a.index
                ));
            }
            if seen[a.index] {
                return invalid(format!("atom index {} repeated", a.index));
            }
            seen[a.index] = true;
            if !(a.weight >= S::zero()) || !a.weight.is_finite() {
                return invalid(format!("atom {} has invalid weight {}", a.index, a.weight));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight.as_f64()).sum();
        if (total - 1.0).abs() > S::WEIGHT_TOL.max(atoms.len() as f64 * f64::EPSILON * 4.0) {
            return invalid(format!("weights sum to {total}, not 1"));
        }
        Ok(DiscreteMeasure { space, atoms })
    }

    pub fn from_weights(space: Arc<FiniteMetricSpace<S>>, weights: &[S]) -> Result<Self> {
        if weights.len() != space.len() {
            return invalid("one weight per point of the space is required");
        }
        let atoms = weights
            .iter()
            .enumerate()
            .map(|(index, &weight)| Atom { index, weight })
            .collect();
        Self::new(space, atoms)
    }

    /// Uniform weights over the given distinct indices.
    pub fn uniform_on(space: Arc<FiniteMetricSpace<S>>, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return invalid("uniform measure needs at least one atom");
        }
        let w = S::one() / S::of_usize(indices.len());
        let atoms = indices
            .iter()
            .map(|&index| Atom { index, weight: w })
            .collect();
        Self::new(space, atoms)
    }

    /// Uniform weights over every point of the space.
    pub fn uniform(space: Arc<FiniteMetricSpace<S>>) -> Result<Self> {
        let idx: Vec<usize> = (0..space.len()).collect();
        Self::uniform_on(space, &idx)
    }

    pub fn dirac(space: Arc<FiniteMetricSpace<S>>, index: usize) -> Result<Self> {
        Self::new(
            space,
            vec![Atom {
                index,
                weight: S::one(),
            }],
        )
    }

    pub fn space(&self) -> &Arc<FiniteMetricSpace<S>> {
        &self.space
    }

    pub fn atoms(&self) -> &[Atom<S>] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn same_space(&self, other: &DiscreteMeasure<S>) -> bool {
        Arc::ptr_eq(&self.space, &other.space)
    }

    /// Mass of the given point set.
    pub fn mass_of(&self, mut contains: impl FnMut(usize) -> bool) -> S {
        self.atoms
            .iter()
            .filter(|a| contains(a.index))
            .map(|a| a.weight)
            .sum()
    }

    /// Dense weight vector indexed by point.
    pub fn dense_weights(&self) -> Vec<S> {
        let mut w = vec![S::zero(); self.space.len()];
        for a in &self.atoms {
            w[a.index] = a.weight;
        }
        w
    }

    /// Atoms with zero weight removed.
    pub fn without_zero_atoms(&self) -> DiscreteMeasure<S> {
        DiscreteMeasure {
            space: Arc::clone(&self.space),
            atoms: self
                .atoms
                .iter()
                .copied()
                .filter(|a| a.weight > S::zero())
                .collect(),
        }
    }

    /// Same weights on a rescaled copy of the space.
    pub fn on_space(&self, space: Arc<FiniteMetricSpace<S>>) -> Result<DiscreteMeasure<S>> {
        if space.len() != self.space.len() {
            return invalid("replacement space has a different number of points");
        }
        Ok(DiscreteMeasure {
            space,
            atoms: self.atoms.clone(),
        })
    }

    /// Weighted mean of `d(x0, x)^p`.
    pub fn moment_about(&self, x0: usize, p: S) -> S {
        self.atoms
            .iter()
            .map(|a| a.weight * self.space.dist(x0, a.index).powf(p))
            .sum()
    }

    /// `W_p^p(self, delta_{x0})`, the mean `p`-th power distance to `x0`.
    pub fn wpp_to_dirac(&self, x0: usize, p: S) -> S {
        self.moment_about(x0, p)
    }

    /// Whether the two measures put (within `tol`) the same weight on every point.
    pub fn approx_eq(&self, other: &DiscreteMeasure<S>, tol: f64) -> bool {
        if self.space.len() != other.space.len() {
            return false;
        }
        let a = self.dense_weights();
        let b = other.dense_weights();
        a.iter()
            .zip(&b)
            .all(|(x, y)| (x.as_f64() - y.as_f64()).abs() <= tol)
    }
}

/// Convex combination of measures on one space: `sum_i lambda_i mu_i`.
pub fn mix<S: Scalar>(components: &[(S, &DiscreteMeasure<S>)]) -> Result<DiscreteMeasure<S>> {
    let Some((_, first)) = components.first() else {
        return invalid("mix needs at least one component");
    };
    let space = Arc::clone(first.space());
    let mut total = 0.0f64;
    for (lam, mu) in components {
        if !(*lam >= S::zero()) {
            return invalid("mixture weights must be nonnegative");
        }
        if !Arc::ptr_eq(mu.space(), &space) {
            return Err(Error::SpaceMismatch);
        }
        total += lam.as_f64();
    }
    if (total - 1.0).abs() > 1e-10f64.max(S::WEIGHT_TOL) {
        return invalid(format!("mixture weights sum to {total}, not 1"));
    }
    let mut order = Vec::new();
    let mut acc: HashMap<usize, S> = HashMap::new();
    for (lam, mu) in components {
        for a in mu.atoms() {
            let slot = acc.entry(a.index).or_insert_with(|| {
                order.push(a.index);
                S::zero()
            });
            *slot = *slot + *lam * a.weight;
        }
    }
    let atoms = order
        .into_iter()
        .map(|index| Atom {
            index,
            weight: acc[&index],
        })
        .collect();
    DiscreteMeasure::new(space, atoms)
}

/// Result of conditioning a measure on a point set.
#[derive(Clone, Debug)]
pub struct Restriction<S: Scalar> {
    /// `1_A mu / mu(A)`, absent when `mu(A) = 0`.
    pub conditional: Option<DiscreteMeasure<S>>,
    pub mass: S,
}

/// Restrict `mu` to the points accepted by `contains` and renormalize.
pub fn restrict<S: Scalar>(
    mu: &DiscreteMeasure<S>,
    mut contains: impl FnMut(usize) -> bool,
) -> Restriction<S> {
    let kept: Vec<Atom<S>> = mu
        .atoms()
        .iter()
        .copied()
        .filter(|a| contains(a.index))
        .collect();
    let mass: S = kept.iter().map(|a| a.weight).sum();
    if !(mass > S::zero()) {
        return Restriction {
            conditional: None,
            mass: S::zero(),
        };
    }
    let atoms = kept
        .into_iter()
        .map(|a| Atom {
            index: a.index,
            weight: a.weight / mass,
        })
        .collect();
    Restriction {
        conditional: Some(DiscreteMeasure {
            space: Arc::clone(mu.space()),
            atoms,
        }),
        mass,
    }
}

/// Restriction to an explicit index set.
pub fn restrict_to<S: Scalar>(mu: &DiscreteMeasure<S>, subset: &[usize]) -> Restriction<S> {
    let mut mask = vec![false; mu.space().len()];
    for &i in subset {
        if i < mask.len() {
            mask[i] = true;
        }
    }
    restrict(mu, |i| mask[i])
}

/// Uniform-weight measure on `n` sampled points, each point its own atom.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure<S: Scalar> {
    measure: DiscreteMeasure<S>,
    pub seed: u64,
    pub family: Option<String>,
}

impl<S: Scalar> EmpiricalMeasure<S> {
    pub fn from_points(points: Vec<Point<S>>, seed: u64, family: Option<String>) -> Result<Self> {
        if points.is_empty() {
            return invalid("an empirical measure needs n >= 1");
        }
        let space = Arc::new(FiniteMetricSpace::euclidean(points)?);
        let measure = DiscreteMeasure::uniform(space)?;
        Ok(EmpiricalMeasure {
            measure,
            seed,
            family,
        })
    }

    pub fn n(&self) -> usize {
        self.measure.len()
    }

    pub fn measure(&self) -> &DiscreteMeasure<S> {
        &self.measure
    }

    pub fn points(&self) -> &[Point<S>] {
        self.measure
            .space()
            .points()
            .expect("empirical measures live on Euclidean clouds")
    }

    pub fn into_measure(self) -> DiscreteMeasure<S> {
        self.measure
    }
}

/// JSON shape for measures: `{points, weights, seed, family, metadata}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default)]
    pub metadata: Option<serde_json::Value>,
}

impl MeasureRecord {
    /// Record for a measure on a Euclidean cloud; only atoms are listed.
    pub fn from_measure<S: Scalar>(mu: &DiscreteMeasure<S>) -> Result<Self> {
        let pts = mu.space().points().ok_or_else(|| {
            Error::InvalidInput("only Euclidean measures serialize to points".into())
        })?;
        Ok(MeasureRecord {
            points: mu
                .atoms()
                .iter()
                .map(|a| pts[a.index].coords().iter().map(|c| c.as_f64()).collect())
                .collect(),
            weights: mu.atoms().iter().map(|a| a.weight.as_f64()).collect(),
            seed: None,
            family: None,
            metadata: None,
        })
    }

    pub fn to_measure<S: Scalar>(&self) -> Result<DiscreteMeasure<S>> {
        if self.points.len() != self.weights.len() {
            return invalid("points and weights differ in length");
        }
        let pts = self
            .points
            .iter()
            .map(|p| Point::new(p.iter().map(|&c| S::of(c)).collect()))
            .collect::<Result<Vec<_>>>()?;
        let space = Arc::new(FiniteMetricSpace::euclidean(pts)?);
        let w: Vec<S> = self.weights.iter().map(|&w| S::of(w)).collect();
        DiscreteMeasure::from_weights(space, &w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Arc<FiniteMetricSpace<f64>> {
        Arc::new(FiniteMetricSpace::line(xs).unwrap())
    }

    #[test]
    fn weights_must_sum_to_one() {
        let s = line(&[0.0, 1.0]);
        assert!(DiscreteMeasure::from_weights(s.clone(), &[0.5, 0.4]).is_err());
        assert!(DiscreteMeasure::from_weights(s.clone(), &[-0.5, 1.5]).is_err());
        assert!(DiscreteMeasure::new(
            s.clone(),
            vec![
                Atom {
                    index: 0,
                    weight: 0.5
                },
                Atom {
                    index: 0,
                    weight: 0.5
                }
            ]
        )
        .is_err());
        assert!(DiscreteMeasure::from_weights(s, &[0.25, 0.75]).is_ok());
    }

    #[test]
    fn mix_identity_and_pairs() {
        let s = line(&[0.0, 1.0, 2.0, 3.0]);
        let mu = DiscreteMeasure::from_weights(s.clone(), &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let m = mix(&[(1.0, &mu)]).unwrap();
        assert!(m.approx_eq(&mu, 0.0));

        let a = DiscreteMeasure::dirac(s.clone(), 0).unwrap();
        let b = DiscreteMeasure::dirac(s.clone(), 1).unwrap();
        let m = mix(&[(0.5, &a), (0.5, &b)]).unwrap();
        assert_eq!(m.dense_weights(), vec![0.5, 0.5, 0.0, 0.0]);

        let u1 = DiscreteMeasure::uniform_on(s.clone(), &[0, 1]).unwrap();
        let u2 = DiscreteMeasure::uniform_on(s.clone(), &[2, 3]).unwrap();
        let m = mix(&[(0.25, &u1), (0.75, &u2)]).unwrap();
        assert_eq!(m.dense_weights(), vec![0.125, 0.125, 0.375, 0.375]);

        assert!(mix(&[(0.5, &u1), (0.4, &u2)]).is_err());
        let other = DiscreteMeasure::dirac(line(&[0.0]), 0).unwrap();
        assert!(matches!(
            mix(&[(0.5, &u1), (0.5, &other)]),
            Err(Error::SpaceMismatch)
        ));
    }

    #[test]
    fn restrict_examples() {
        let s = line(&[0.0, 1.0, 2.0]);
        let u = DiscreteMeasure::uniform_on(s.clone(), &[0, 1]).unwrap();
        let r = restrict_to(&u, &[0]);
        assert_eq!(r.mass, 0.5);
        assert_eq!(r.conditional.unwrap().dense_weights(), vec![1.0, 0.0, 0.0]);

        let r = restrict_to(&u, &[0, 1]);
        assert_eq!(r.mass, 1.0);
        assert!(r.conditional.unwrap().approx_eq(&u, 0.0));

        let mu = DiscreteMeasure::from_weights(s.clone(), &[0.2, 0.3, 0.5]).unwrap();
        let r = restrict_to(&mu, &[1, 2]);
        assert!((r.mass - 0.8).abs() < 1e-15);
        let w = r.conditional.unwrap().dense_weights();
        assert!((w[1] - 0.375).abs() < 1e-15 && (w[2] - 0.625).abs() < 1e-15);

        let r = restrict_to(&u, &[2]);
        assert_eq!(r.mass, 0.0);
        assert!(r.conditional.is_none());
    }

    #[test]
    fn mix_then_restrict_recovers_component() {
        let s = line(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let a = DiscreteMeasure::from_weights(s.clone(), &[0.3, 0.7, 0.0, 0.0, 0.0]).unwrap();
        let b = DiscreteMeasure::from_weights(s.clone(), &[0.0, 0.0, 0.2, 0.5, 0.3]).unwrap();
        let m = mix(&[(0.4, &a), (0.6, &b)]).unwrap();
        let r = restrict_to(&m, &[2, 3, 4]);
        assert!((r.mass - 0.6).abs() < 1e-15);
        assert!(r.conditional.unwrap().approx_eq(&b, 1e-15));
    }

    #[test]
    fn record_round_trip() {
        let pts = vec![
            Point::new(vec![0.0, 1.0]).unwrap(),
            Point::new(vec![2.0, 3.0]).unwrap(),
        ];
        let e = EmpiricalMeasure::from_points(pts, 4, Some("test".into())).unwrap();
        let rec = MeasureRecord::from_measure(e.measure()).unwrap();
        let json = serde_json::to_string(&rec).unwrap();
        let back: MeasureRecord = serde_json::from_str(&json).unwrap();
        let mu: DiscreteMeasure<f64> = back.to_measure().unwrap();
        assert_eq!(mu.dense_weights(), vec![0.5, 0.5]);
    }
}
