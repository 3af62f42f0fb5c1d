//! Covering numbers, covering-dimension fits, refined partition sequences and
//! the dyadic multiscale upper bound on `W_p^p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::DiscreteMeasure;
use crate::metric::FiniteMetricSpace;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringEstimate {
    pub delta: f64,
    /// Size of the greedy cover by closed `delta`-balls.
    pub n_upper: usize,
    /// Size of a maximal `2 delta`-separated subset; no `delta`-cover is smaller.
    pub n_lower: usize,
    pub centers: Vec<usize>,
}

#[inline]
fn within<S: Scalar>(d: S, r: f64) -> bool {
    d.as_f64() <= r * (1.0 + S::DIST_RTOL)
}

/// Greedy centers: scan `subset` in order and open a ball at every point not
/// yet covered.
fn greedy_centers<S: Scalar>(space: &FiniteMetricSpace<S>, subset: &[usize], r: f64) -> Vec<usize> {
    let mut covered = vec![false; subset.len()];
    let mut centers = Vec::new();
    for a in 0..subset.len() {
        if covered[a] {
            continue;
        }
        let c = subset[a];
        centers.push(c);
        covered[a] = true;
        for b in a + 1..subset.len() {
            if !covered[b] && within(space.dist(c, subset[b]), r) {
                covered[b] = true;
            }
        }
    }
    centers
}

/// Cover `subset` by closed `delta`-balls. The next center is always the
/// uncovered point that comes first in `subset`.
pub fn greedy_cover<S: Scalar>(
    space: &FiniteMetricSpace<S>,
    subset: &[usize],
    delta: f64,
) -> Result<CoveringEstimate> {
    if subset.is_empty() {
        return invalid("cannot cover an empty set");
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return invalid("covering radius must be positive");
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= space.len()) {
        return invalid(format!("index {bad} outside the space"));
    }
    let centers = greedy_centers(space, subset, delta);
    let n_lower = greedy_centers(space, subset, 2.0 * delta).len();
    Ok(CoveringEstimate {
        delta,
        n_upper: centers.len(),
        n_lower,
        centers,
    })
}

/// Envelope `N(delta) <= beta (diameter / delta)^alpha` fitted to greedy counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub alpha: f64,
    pub beta: f64,
    /// Intercept of the plain least-squares line, before the envelope shift.
    pub beta_ls: f64,
    pub diameter: f64,
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
    pub r2: f64,
}

impl DimensionFit {
    pub fn envelope(&self, delta: f64) -> f64 {
        self.beta * (self.diameter / delta).powf(self.alpha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum DimensionOutcome {
    Fit(DimensionFit),
    /// Every scale is covered by one ball; there is nothing to fit.
    Degenerate {
        scales: Vec<f64>,
        counts: Vec<usize>,
    },
}

impl DimensionOutcome {
    pub fn fit(&self) -> Option<&DimensionFit> {
        match self {
            DimensionOutcome::Fit(f) => Some(f),
            DimensionOutcome::Degenerate { .. } => None,
        }
    }
}

/// Scales `diameter / 2^(j/2)` from `diameter / 8` down to the first scale
/// whose greedy count exceeds an eighth of the points, extended if needed so
/// the grid has at least 4 scales spanning a decade.
pub fn auto_delta_grid<S: Scalar>(
    space: &FiniteMetricSpace<S>,
    subset: &[usize],
    diameter: f64,
) -> Vec<f64> {
    let top = if diameter > 0.0 { diameter / 8.0 } else { 1.0 };
    let cap = (subset.len() / 8).max(4);
    let mut grid: Vec<f64> = Vec::new();
    let mut delta = top;
    for _ in 0..60 {
        let enough = grid.len() >= 4 && grid.last().is_some_and(|&l| top >= 10.0 * l);
        if enough && (diameter <= 0.0 || greedy_centers(space, subset, delta).len() > cap) {
            break;
        }
        grid.push(delta);
        delta *= std::f64::consts::FRAC_1_SQRT_2;
    }
    grid
}

/// Least-squares slope of `log count` on `log(diameter / delta)`, with the
/// prefactor then raised just enough that the law dominates every count.
pub fn fit_dimension<S: Scalar>(
    space: &FiniteMetricSpace<S>,
    subset: &[usize],
    grid: &[f64],
    diameter: f64,
) -> Result<DimensionOutcome> {
    if grid.len() < 4 {
        return invalid("dimension fit needs at least 4 scales");
    }
    if grid.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return invalid("scales must be positive");
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(0.0, f64::max);
    if hi < 10.0 * lo * (1.0 - 1e-12) {
        return invalid("scales must span at least one decade");
    }
    if subset.is_empty() {
        return invalid("cannot fit a dimension on an empty set");
    }
    let counts: Vec<usize> = grid
        .par_iter()
        .map(|&d| greedy_centers(space, subset, d).len())
        .collect();
    if counts.iter().all(|&c| c == 1) || !(diameter > 0.0) {
        return Ok(DimensionOutcome::Degenerate {
            scales: grid.to_vec(),
            counts,
        });
    }
    let xs: Vec<f64> = grid.iter().map(|d| (diameter / d).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let (slope, intercept, r2) = least_squares(&xs, &ys);
    let shift = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - slope * x)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DimensionOutcome::Fit(DimensionFit {
        alpha: slope,
        beta: shift.exp(),
        beta_ls: intercept.exp(),
        diameter,
        scales: grid.to_vec(),
        counts,
        r2,
    }))
}

/// `(slope, intercept, r2)` of the ordinary least-squares line.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

/// Greedy count inside one ball at one scale, next to the envelope value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallCoverCheck {
    pub radius: f64,
    pub delta: f64,
    pub count: usize,
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallCoverReport {
    pub pass: bool,
    pub checks: Vec<BallCoverCheck>,
    /// Only finitely many radii and scales are examined.
    pub exhaustive: bool,
}

/// Check `N(S n B(x0, r), delta) <= beta (2r / delta)^alpha` on a grid of
/// radii and, for each radius, the scales `2r / 2^j`, `j = 1..=levels`.
pub fn verify_ball_covering<S: Scalar>(
    space: &FiniteMetricSpace<S>,
    subset: &[usize],
    x0: usize,
    radii: &[f64],
    levels: usize,
    alpha: f64,
    beta: f64,
) -> Result<BallCoverReport> {
    if x0 >= space.len() {
        return invalid("reference point outside the space");
    }
    let jobs: Vec<(f64, f64)> = radii
        .iter()
        .flat_map(|&r| (1..=levels).map(move |j| (r, 2.0 * r / 2f64.powi(j as i32))))
        .collect();
    let checks: Vec<BallCoverCheck> = jobs
        .par_iter()
        .filter_map(|&(r, delta)| {
            let ball: Vec<usize> = subset
                .iter()
                .copied()
                .filter(|&i| within(space.dist(x0, i), r))
                .collect();
            if ball.is_empty() || !(delta > 0.0) {
                return None;
            }
            Some(BallCoverCheck {
                radius: r,
                delta,
                count: greedy_centers(space, &ball, delta).len(),
                envelope: beta * (2.0 * r / delta).powf(alpha),
            })
        })
        .collect();
    let pass = checks
        .iter()
        .all(|c| c.count as f64 <= c.envelope * (1.0 + 1e-12));
    Ok(BallCoverReport {
        pass,
        checks,
        exhaustive: false,
    })
}

/// Refined partitions `Q^1, ..., Q^{k*}` of a point set with
/// `Diam Q_i^k <= 4^-k diameter`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub diameter: f64,
    pub k_star: usize,
    pub points: Vec<usize>,
    pub levels: Vec<Level>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    /// 1-based depth.
    pub k: usize,
    pub cells: Vec<Vec<usize>>,
    /// Index of the enclosing cell one level up (0 for level 1, the whole set).
    pub parents: Vec<usize>,
}

impl PartitionTree {
    pub fn cell_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.cells.len()).collect()
    }

    /// Re-check partition, refinement, diameter and cell-count properties.
    pub fn verify<S: Scalar>(&self, space: &FiniteMetricSpace<S>) -> Result<()> {
        let n = space.len();
        let mut in_set = vec![false; n];
        for &i in &self.points {
            in_set[i] = true;
        }
        let mut prev_owner: Vec<usize> = vec![0; n];
        for level in &self.levels {
            let mut owner = vec![usize::MAX; n];
            for (c, cell) in level.cells.iter().enumerate() {
                if cell.is_empty() {
                    return invalid(format!("level {} has an empty cell", level.k));
                }
                for &i in cell {
                    if i >= n || !in_set[i] || owner[i] != usize::MAX {
                        return invalid(format!(
                            "level {} is not a partition at point {i}",
                            level.k
                        ));
                    }
                    owner[i] = c;
                    if prev_owner[i] != level.parents[c] {
                        return invalid(format!(
                            "level {} cell {c} is not inside its parent",
                            level.k
                        ));
                    }
                }
                let diam = space.subset_diameter(cell)?.as_f64();
                let cap = 4f64.powi(-(level.k as i32)) * self.diameter;
                if diam > cap * (1.0 + S::DIST_RTOL) {
                    return invalid(format!(
                        "level {} cell {c} has diameter {diam} above {cap}",
                        level.k
                    ));
                }
            }
            if let Some(&i) = self.points.iter().find(|&&i| owner[i] == usize::MAX) {
                return invalid(format!("level {} misses point {i}", level.k));
            }
            if self.diameter > 0.0 {
                let r = 4f64.powi(-(level.k as i32) - 1) * self.diameter;
                let bound = greedy_centers(space, &self.points, r).len();
                if level.cells.len() > bound {
                    return invalid(format!(
                        "level {} has {} cells, more than the cover size {bound}",
                        level.k,
                        level.cells.len()
                    ));
                }
            }
            prev_owner = owner;
        }
        Ok(())
    }
}

fn nearest<S: Scalar>(space: &FiniteMetricSpace<S>, x: usize, centers: &[usize]) -> usize {
    let mut best = 0;
    let mut bd = space.dist(x, centers[0]);
    for (k, &c) in centers.iter().enumerate().skip(1) {
        let d = space.dist(x, c);
        if d < bd {
            bd = d;
            best = k;
        }
    }
    best
}

/// Build the refined partitions bottom-up from greedy nets. The level-`k`
/// net covers the set at radius `4^-(k+1) diameter`; the finest level sends
/// each point to its nearest net point, and each coarser level groups cells
/// by the nearest coarser net point to their own center. Cell diameters are
/// then at most `(2/3) 4^-k diameter` and level `k` has no more cells than
/// the greedy cover at radius `4^-(k+1) diameter`.
pub fn build_partition_tree<S: Scalar>(
    space: &FiniteMetricSpace<S>,
    subset: &[usize],
    k_star: usize,
) -> Result<PartitionTree> {
    if k_star == 0 {
        return invalid("k* must be >= 1");
    }
    if subset.is_empty() {
        return invalid("cannot partition an empty set");
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= space.len()) {
        return invalid(format!("index {bad} outside the space"));
    }
    let diameter = space.subset_diameter(subset)?.as_f64();
    if diameter == 0.0 {
        let levels = (1..=k_star)
            .map(|k| Level {
                k,
                cells: vec![subset.to_vec()],
                parents: vec![0],
            })
            .collect();
        return Ok(PartitionTree {
            diameter,
            k_star,
            points: subset.to_vec(),
            levels,
        });
    }

    let nets: Vec<Vec<usize>> = (1..=k_star)
        .into_par_iter()
        .map(|k| greedy_centers(space, subset, 4f64.powi(-(k as i32) - 1) * diameter))
        .collect();

    // finest level: nearest net point
    let fine = &nets[k_star - 1];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); fine.len()];
    for &x in subset {
        members[nearest(space, x, fine)].push(x);
    }
    // (center, members) per nonempty cell at the current level
    let mut current: Vec<(usize, Vec<usize>)> = fine
        .iter()
        .copied()
        .zip(members)
        .filter(|(_, m)| !m.is_empty())
        .collect();

    let mut by_level: Vec<Vec<Vec<usize>>> = Vec::with_capacity(k_star);
    for k in (1..k_star).rev() {
        let coarse = &nets[k - 1];
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); coarse.len()];
        for (c, pts) in &current {
            groups[nearest(space, *c, coarse)].extend_from_slice(pts);
        }
        let next = coarse
            .iter()
            .copied()
            .zip(groups)
            .filter(|(_, m)| !m.is_empty())
            .collect();
        by_level.push(current.into_iter().map(|(_, m)| m).collect());
        current = next;
    }
    by_level.push(current.into_iter().map(|(_, m)| m).collect());
    by_level.reverse();

    // canonical order: cells sorted by smallest member; parents by membership
    let mut out = Vec::with_capacity(k_star);
    let mut owner = vec![0usize; space.len()];
    for (i, mut cells) in by_level.into_iter().enumerate() {
        cells.iter_mut().for_each(|c| c.sort_unstable());
        cells.sort_by_key(|c| c[0]);
        let parents: Vec<usize> = cells.iter().map(|c| owner[c[0]]).collect();
        for (ci, c) in cells.iter().enumerate() {
            for &x in c {
                owner[x] = ci;
            }
        }
        out.push(Level {
            k: i + 1,
            cells,
            parents,
        });
    }
    Ok(PartitionTree {
        diameter,
        k_star,
        points: subset.to_vec(),
        levels: out,
    })
}

/// `k* = ceil(log n / (alpha log 4))`, at least 1.
pub fn auto_k_star(n: usize, alpha: f64) -> usize {
    if n <= 1 || !(alpha > 0.0) {
        return 1;
    }
    ((n as f64).ln() / (alpha * 4f64.ln())).ceil().max(1.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicBound {
    pub value: f64,
    pub diameter: f64,
    pub k_star: usize,
    pub p: f64,
    /// `sum_i |mu(Q_i^k) - nu(Q_i^k)|` for each level.
    pub discrepancies: Vec<f64>,
}

/// `diameter^p [4^{-k* p} + 4^p sum_k 4^{-kp} sum_i |mu(Q_i^k) - nu(Q_i^k)|]`.
pub fn dyadic_wpp_bound<S: Scalar>(
    tree: &PartitionTree,
    mu: &DiscreteMeasure<S>,
    nu: &DiscreteMeasure<S>,
    p: f64,
) -> Result<DyadicBound> {
    if !(p >= 1.0) {
        return invalid("p must be >= 1");
    }
    if !mu.same_space(nu) {
        return Err(Error::SpaceMismatch);
    }
    let n = mu.space().len();
    let mut owner = vec![usize::MAX; n];
    let mut discrepancies = Vec::with_capacity(tree.levels.len());
    for (li, level) in tree.levels.iter().enumerate() {
        for (c, cell) in level.cells.iter().enumerate() {
            for &i in cell {
                if i < n {
                    owner[i] = c;
                }
            }
        }
        let mut diff = vec![0.0f64; level.cells.len()];
        for (m, sign) in [(mu, 1.0), (nu, -1.0)] {
            for a in m.atoms() {
                if a.weight == S::zero() {
                    continue;
                }
                let c = owner[a.index];
                if c == usize::MAX {
                    return invalid(format!("atom {} lies outside the tree", a.index));
                }
                diff[c] += sign * a.weight.as_f64();
            }
        }
        discrepancies.push(diff.iter().map(|d| d.abs()).sum());
        if li + 1 < tree.levels.len() {
            owner.iter_mut().for_each(|o| *o = usize::MAX);
        }
    }
    let dp = tree.diameter.powf(p);
    let k_star = tree.k_star;
    let mut s = 4f64.powf(-(k_star as f64) * p);
    for (k, disc) in discrepancies.iter().enumerate() {
        s += 4f64.powf(p) * 4f64.powf(-((k + 1) as f64) * p) * disc;
    }
    Ok(DyadicBound {
        value: dp * s,
        diameter: tree.diameter,
        k_star,
        p,
        discrepancies,
    })
}

/// The total-variation ceiling `D^p + D^p 4^p sum_k 4^{-kp} 2` of the bound.
pub fn dyadic_cap(diameter: f64, k_star: usize, p: f64) -> f64 {
    let dp = diameter.powf(p);
    let s: f64 = (1..=k_star).map(|k| 4f64.powf(-(k as f64) * p)).sum();
    dp + dp * 4f64.powf(p) * s * 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn line(xs: &[f64]) -> FiniteMetricSpace<f64> {
        FiniteMetricSpace::line(xs).unwrap()
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn cover_examples() {
        let s = line(&[0.0, 1.0]);
        assert_eq!(greedy_cover(&s, &all(2), 1.0).unwrap().n_upper, 1);
        let s = line(&[0.0, 0.3, 0.6, 0.9]);
        let c = greedy_cover(&s, &all(4), 0.3).unwrap();
        assert_eq!(c.n_upper, 2);
        assert_eq!(c.centers, vec![0, 2]);
        let s = line(&[0.0, 0.5, 1.0]);
        let c = greedy_cover(&s, &all(3), 0.2).unwrap();
        assert_eq!((c.n_upper, c.n_lower), (3, 3));
        assert!(greedy_cover(&s, &[], 0.2).is_err());
        assert!(greedy_cover(&s, &all(3), 0.0).is_err());
    }

    #[test]
    fn point_mass_is_degenerate() {
        let s = line(&[0.0; 10]);
        let out = fit_dimension(&s, &all(10), &[1.0, 0.5, 0.25, 0.1, 0.05], 1.0).unwrap();
        assert!(matches!(out, DimensionOutcome::Degenerate { .. }));
    }

    #[test]
    fn envelope_dominates_counts() {
        let xs: Vec<f64> = (0..400)
            .map(|i| (i as f64 * 0.618_033_988_7) % 1.0)
            .collect();
        let s = line(&xs);
        let grid: Vec<f64> = (2..9).map(|j| 2f64.powi(-j)).collect();
        let out = fit_dimension(&s, &all(400), &grid, 1.0).unwrap();
        let f = out.fit().unwrap();
        assert!((f.alpha - 1.0).abs() < 0.15, "{}", f.alpha);
        for (d, &c) in f.scales.iter().zip(&f.counts) {
            assert!(f.envelope(*d) >= c as f64 * (1.0 - 1e-12));
        }
        assert!(fit_dimension(&s, &all(400), &grid[..3], 1.0).is_err());
        assert!(fit_dimension(&s, &all(400), &[0.5, 0.4, 0.3, 0.2], 1.0).is_err());
    }

    #[test]
    fn tree_examples() {
        let s = line(&[0.3]);
        let t = build_partition_tree(&s, &[0], 3).unwrap();
        assert_eq!(t.cell_counts(), vec![1, 1, 1]);
        t.verify(&s).unwrap();

        let s = line(&[0.0, 2.0]);
        let t = build_partition_tree(&s, &all(2), 1).unwrap();
        assert_eq!(t.cell_counts(), vec![2]);
        t.verify(&s).unwrap();
    }

    #[test]
    fn dyadic_hand_example() {
        // diameter 1, two level-1 cells {0} and {1}
        let s = Arc::new(line(&[0.0, 1.0]));
        let t = build_partition_tree(&s, &all(2), 1).unwrap();
        let mu = DiscreteMeasure::uniform(s.clone()).unwrap();
        let nu = DiscreteMeasure::dirac(s, 0).unwrap();
        let b = dyadic_wpp_bound(&t, &mu, &nu, 1.0).unwrap();
        assert!((b.value - 1.25).abs() < 1e-15);
        let same = dyadic_wpp_bound(&t, &mu, &mu, 2.0).unwrap();
        assert!((same.value - 4f64.powi(-2)).abs() < 1e-15);
        assert!(b.value <= dyadic_cap(1.0, 1, 1.0));
    }

    #[test]
    fn auto_k() {
        assert_eq!(auto_k_star(1, 1.0), 1);
        assert_eq!(auto_k_star(16, 1.0), 2);
        assert_eq!(auto_k_star(17, 1.0), 3);
    }
}
