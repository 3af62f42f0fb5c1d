//! Finite metric spaces: Euclidean point clouds, explicit distance matrices
//! and user-supplied distance functions.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// A point of a Euclidean cloud. Coordinates are always finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point<S> {
    coords: Vec<S>,
}

impl<S: Scalar> Point<S> {
    pub fn new(coords: Vec<S>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("a point needs at least one coordinate");
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return invalid("point coordinates must be finite");
        }
        Ok(Point { coords })
    }

    pub fn coords(&self) -> &[S] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn distance(&self, other: &Point<S>) -> S {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>()
            .sqrt()
    }
}

/// Which representation backs a [`FiniteMetricSpace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Euclidean,
    ExplicitMatrix,
    Custom,
}

type DistFn<S> = Arc<dyn Fn(usize, usize) -> S + Send + Sync>;

#[derive(Clone)]
enum Repr<S> {
    Euclidean { points: Vec<Point<S>>, scale: S },
    Matrix { n: usize, data: Vec<S> },
    Custom { n: usize, dist: DistFn<S> },
}

/// A finite set of points with a distance oracle.
///
/// Euclidean distances are evaluated on demand; explicit matrices are stored
/// densely. The space is immutable once built.
#[derive(Clone)]
pub struct FiniteMetricSpace<S> {
    repr: Repr<S>,
}

impl<S: Scalar> fmt::Debug for FiniteMetricSpace<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteMetricSpace")
            .field("kind", &self.kind())
            .field("len", &self.len())
            .finish()
    }
}

impl<S: Scalar> FiniteMetricSpace<S> {
    pub fn euclidean(points: Vec<Point<S>>) -> Result<Self> {
        if let Some(first) = points.first() {
            let d = first.dim();
            if points.iter().any(|p| p.dim() != d) {
                return invalid("all points of a cloud must share one dimension");
            }
        }
        Ok(FiniteMetricSpace {
            repr: Repr::Euclidean {
                points,
                scale: S::one(),
            },
        })
    }

    /// Convenience constructor for 1-D clouds.
    pub fn line(xs: &[S]) -> Result<Self> {
        let points = xs
            .iter()
            .map(|&x| Point::new(vec![x]))
            .collect::<Result<Vec<_>>>()?;
        Self::euclidean(points)
    }

    /// Row-major square matrix. NaN and negative entries are rejected; the
    /// metric axioms themselves are checked by [`validate_metric`].
    pub fn from_matrix(n: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != n * n {
            return invalid(format!(
                "distance matrix has {} entries, expected {n}x{n}",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| v.is_nan()) {
            return invalid(format!(
                "distance matrix has NaN at ({}, {})",
                pos / n,
                pos % n
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < S::zero()) {
            return invalid(format!(
                "distance matrix entry ({}, {}) is not a finite nonnegative number",
                pos / n,
                pos % n
            ));
        }
        Ok(FiniteMetricSpace {
            repr: Repr::Matrix { n, data },
        })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return invalid("distance matrix must be square");
        }
        Self::from_matrix(n, rows.concat())
    }

    pub fn custom<F>(n: usize, dist: F) -> Self
    where
        F: Fn(usize, usize) -> S + Send + Sync + 'static,
    {
        FiniteMetricSpace {
            repr: Repr::Custom {
                n,
                dist: Arc::new(dist),
            },
        }
    }

    pub fn kind(&self) -> MetricKind {
        match self.repr {
            Repr::Euclidean { .. } => MetricKind::Euclidean,
            Repr::Matrix { .. } => MetricKind::ExplicitMatrix,
            Repr::Custom { .. } => MetricKind::Custom,
        }
    }

    pub fn len(&self) -> usize {
        match &self.repr {
            Repr::Euclidean { points, .. } => points.len(),
            Repr::Matrix { n, .. } | Repr::Custom { n, .. } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> S {
        match &self.repr {
            Repr::Euclidean { points, scale } => {
                if i == j {
                    S::zero()
                } else {
                    *scale * points[i].distance(&points[j])
                }
            }
            Repr::Matrix { n, data } => data[i * n + j],
            Repr::Custom { dist, .. } => dist(i, j),
        }
    }

    /// Points of a Euclidean cloud (unscaled coordinates).
    pub fn points(&self) -> Option<&[Point<S>]> {
        match &self.repr {
            Repr::Euclidean { points, .. } => Some(points),
            _ => None,
        }
    }

    /// Ambient dimension of a Euclidean cloud.
    pub fn dim(&self) -> Option<usize> {
        self.points().map(|p| p.first().map_or(0, |q| q.dim()))
    }

    /// Position of point `i` on the line, for 1-D Euclidean clouds.
    pub fn line_coord(&self, i: usize) -> Option<S> {
        match &self.repr {
            Repr::Euclidean { points, scale } if points[i].dim() == 1 => {
                Some(*scale * points[i].coords[0])
            }
            _ => None,
        }
    }

    pub fn is_line(&self) -> bool {
        self.dim() == Some(1)
    }

    /// The same point set under the metric `c * d`.
    pub fn scaled(&self, c: S) -> Result<Self> {
        if !(c > S::zero()) || !c.is_finite() {
            return invalid("metric scale factor must be positive and finite");
        }
        let repr = match &self.repr {
            Repr::Euclidean { points, scale } => Repr::Euclidean {
                points: points.clone(),
                scale: *scale * c,
            },
            Repr::Matrix { n, data } => Repr::Matrix {
                n: *n,
                data: data.iter().map(|&v| v * c).collect(),
            },
            Repr::Custom { n, dist } => {
                let inner = Arc::clone(dist);
                Repr::Custom {
                    n: *n,
                    dist: Arc::new(move |i, j| c * inner(i, j)),
                }
            }
        };
        Ok(FiniteMetricSpace { repr })
    }

    /// Euclidean cloud holding the points of `a` followed by those of `b`.
    pub fn concat(a: &[Point<S>], b: &[Point<S>]) -> Result<Self> {
        let mut pts = Vec::with_capacity(a.len() + b.len());
        pts.extend_from_slice(a);
        pts.extend_from_slice(b);
        Self::euclidean(pts)
    }

    /// Largest pairwise distance; 0 for a singleton.
    pub fn diameter(&self) -> Result<S> {
        self.subset_diameter(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn subset_diameter(&self, idx: &[usize]) -> Result<S> {
        if idx.is_empty() {
            return invalid("diameter of an empty set is undefined");
        }
        let mut best = S::zero();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                let d = self.dist(i, j);
                if d > best {
                    best = d;
                }
            }
        }
        Ok(best)
    }
}

/// Diameter together with a reference point `x0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedRegion<S> {
    pub diameter: S,
    pub x0: usize,
}

impl<S: Scalar> BoundedRegion<S> {
    pub fn of(space: &FiniteMetricSpace<S>, x0: usize) -> Result<Self> {
        if x0 >= space.len() {
            return invalid(format!("reference point {x0} out of range"));
        }
        Ok(BoundedRegion {
            diameter: space.diameter()?,
            x0,
        })
    }

    /// Whether `diameter` dominates every pairwise distance in `space`.
    pub fn covers(&self, space: &FiniteMetricSpace<S>) -> Result<bool> {
        Ok(space.diameter()? <= self.diameter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    NonzeroDiagonal,
    Negative,
    NonFinite,
    Asymmetry,
    Triangle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending indices; the triangle check reports `(i, j, k)` with
    /// `d(i,k) > d(i,j) + d(j,k)`.
    pub indices: Vec<usize>,
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub points: usize,
    pub exhaustive: bool,
    pub triples_checked: u64,
    pub max_distance: f64,
    pub violation: Option<Violation>,
}

/// Point sets up to this size get an exhaustive triangle check.
pub const EXHAUSTIVE_TRIANGLE_LIMIT: usize = 200;

/// Check the metric axioms. Pairs are always checked exhaustively; triples
/// exhaustively for `n <= 200` and on `trials` seeded random triples above.
pub fn validate_metric<S: Scalar>(
    space: &FiniteMetricSpace<S>,
    trials: u64,
    seed: u64,
) -> Result<ValidationReport> {
    if trials == 0 {
        return invalid("validate_metric needs trials >= 1");
    }
    let n = space.len();
    let rtol = S::DIST_RTOL;
    let mut max_d = 0.0f64;
    let report = |violation: Violation, max_distance, exhaustive, triples| ValidationReport {
        pass: false,
        points: n,
        exhaustive,
        triples_checked: triples,
        max_distance,
        violation: Some(violation),
    };

    for i in 0..n {
        let dii = space.dist(i, i).as_f64();
        if dii.is_nan() {
            return invalid(format!("distance ({i}, {i}) is NaN"));
        }
        if dii != 0.0 {
            let v = Violation {
                kind: ViolationKind::NonzeroDiagonal,
                indices: vec![i],
                excess: dii.abs(),
            };
            return Ok(report(v, max_d, n <= EXHAUSTIVE_TRIANGLE_LIMIT, 0));
        }
        for j in (i + 1)..n {
            let dij = space.dist(i, j).as_f64();
            let dji = space.dist(j, i).as_f64();
            if dij.is_nan() || dji.is_nan() {
                return invalid(format!("distance ({i}, {j}) is NaN"));
            }
            let kind = if !dij.is_finite() || !dji.is_finite() {
                Some((ViolationKind::NonFinite, f64::INFINITY))
            } else if dij < 0.0 || dji < 0.0 {
                Some((ViolationKind::Negative, -dij.min(dji)))
            } else if (dij - dji).abs() > rtol * dij.max(dji) {
                Some((ViolationKind::Asymmetry, (dij - dji).abs()))
            } else {
                None
            };
            if let Some((kind, excess)) = kind {
                let v = Violation {
                    kind,
                    indices: vec![i, j],
                    excess,
                };
                return Ok(report(v, max_d, n <= EXHAUSTIVE_TRIANGLE_LIMIT, 0));
            }
            max_d = max_d.max(dij);
        }
    }

    let check = |i: usize, j: usize, k: usize| -> Option<Violation> {
        let ik = space.dist(i, k).as_f64();
        let ij = space.dist(i, j).as_f64();
        let jk = space.dist(j, k).as_f64();
        let excess = ik - (ij + jk);
        if excess > rtol * ik.max(ij + jk) {
            Some(Violation {
                kind: ViolationKind::Triangle,
                indices: vec![i, j, k],
                excess,
            })
        } else {
            None
        }
    };

    let exhaustive = n <= EXHAUSTIVE_TRIANGLE_LIMIT;
    let mut triples = 0u64;
    if exhaustive {
        for i in 0..n {
            for k in (i + 1)..n {
                for j in 0..n {
                    if j == i || j == k {
                        continue;
                    }
                    triples += 1;
                    if let Some(v) = check(i, j, k) {
                        return Ok(report(v, max_d, true, triples));
                    }
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..trials {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let k = rng.random_range(0..n);
            triples += 1;
            if let Some(v) = check(i, j, k) {
                return Ok(report(v, max_d, false, triples));
            }
        }
    }

    Ok(ValidationReport {
        pass: true,
        points: n,
        exhaustive,
        triples_checked: triples,
        max_distance: max_d,
        violation: None,
    })
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    Error::Csv {
        line,
        msg: err.to_string(),
    }
}

fn read_numeric_rows<S: Scalar, R: Read>(reader: R) -> Result<Vec<Vec<S>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| !v.is_nan())
                    .map(S::of)
                    .ok_or_else(|| Error::Csv {
                        line,
                        msg: format!("cannot parse `{field}` as a number"),
                    })
            })
            .collect::<Result<Vec<S>>>()?;
        rows.push((line, row));
    }
    if let Some((_, first)) = rows.first() {
        let width = first.len();
        if let Some((line, _)) = rows.iter().find(|(_, r)| r.len() != width) {
            return Err(Error::Csv {
                line: *line,
                msg: format!("expected {width} columns"),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Parse a point cloud: one row per point, one column per coordinate.
pub fn parse_points_csv<S: Scalar, R: Read>(reader: R) -> Result<Vec<Point<S>>> {
    read_numeric_rows::<S, R>(reader)?
        .into_iter()
        .map(Point::new)
        .collect()
}

pub fn load_points_csv<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<Point<S>>> {
    parse_points_csv(std::fs::File::open(path)?)
}

/// Parse a square distance matrix.
pub fn parse_matrix_csv<S: Scalar, R: Read>(reader: R) -> Result<FiniteMetricSpace<S>> {
    let rows = read_numeric_rows::<S, R>(reader)?;
    FiniteMetricSpace::from_rows(&rows)
}

pub fn load_matrix_csv<S: Scalar>(path: impl AsRef<Path>) -> Result<FiniteMetricSpace<S>> {
    parse_matrix_csv(std::fs::File::open(path)?)
}

pub fn write_points_csv<S: Scalar, W: std::io::Write>(points: &[Point<S>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.write_record(p.coords().iter().map(|c| format!("{c:e}")))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(rows: &[&[f64]]) -> FiniteMetricSpace<f64> {
        FiniteMetricSpace::euclidean(
            rows.iter()
                .map(|r| Point::new(r.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn euclidean_pair_passes() {
        let s = cloud(&[&[0.0, 0.0], &[3.0, 4.0]]);
        let r = validate_metric(&s, 10, 1).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_distance, 5.0);
    }

    #[test]
    fn asymmetric_matrix_fails() {
        let s = FiniteMetricSpace::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let r = validate_metric(&s, 10, 1).unwrap();
        assert!(!r.pass);
        let v = r.violation.unwrap();
        assert_eq!(v.kind, ViolationKind::Asymmetry);
        assert_eq!(v.indices, vec![0, 1]);
    }

    #[test]
    fn triangle_violation_found() {
        let s = FiniteMetricSpace::from_rows(&[
            vec![0.0, 1.0, 3.0],
            vec![1.0, 0.0, 1.0],
            vec![3.0, 1.0, 0.0],
        ])
        .unwrap();
        let r = validate_metric(&s, 10, 1).unwrap();
        assert!(!r.pass);
        let v = r.violation.unwrap();
        assert_eq!(v.kind, ViolationKind::Triangle);
        assert_eq!(v.indices, vec![0, 1, 2]);
        assert!((v.excess - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nan_matrix_rejected() {
        assert!(FiniteMetricSpace::from_rows(&[vec![0.0, f64::NAN], vec![1.0, 0.0]]).is_err());
        let s = FiniteMetricSpace::custom(2, |i, j| if i == j { 0.0 } else { f64::NAN });
        assert!(validate_metric(&s, 5, 0).is_err());
    }

    #[test]
    fn random_triples_above_limit() {
        let xs: Vec<f64> = (0..300).map(|i| i as f64 * 0.5).collect();
        let s = FiniteMetricSpace::line(&xs).unwrap();
        let r = validate_metric(&s, 500, 3).unwrap();
        assert!(r.pass);
        assert!(!r.exhaustive);
        assert_eq!(r.triples_checked, 500);
    }

    #[test]
    fn diameters() {
        let s = FiniteMetricSpace::line(&[0.0, 1.0, 0.5]).unwrap();
        assert_eq!(s.diameter().unwrap(), 1.0);
        let s = FiniteMetricSpace::line(&[2.0]).unwrap();
        assert_eq!(s.diameter().unwrap(), 0.0);
        let s = cloud(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        assert!((s.diameter().unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let empty = FiniteMetricSpace::<f64>::euclidean(vec![]).unwrap();
        assert!(empty.diameter().is_err());
    }

    #[test]
    fn scaling_rescales_diameter() {
        let s = cloud(&[&[0.0, 0.0], &[1.0, 2.0], &[-1.0, 0.5]]);
        let d = s.diameter().unwrap();
        let t = s.scaled(2.5).unwrap();
        assert_eq!(t.diameter().unwrap(), 2.5 * d);
        let m = FiniteMetricSpace::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(m.scaled(3.0).unwrap().diameter().unwrap(), 3.0);
    }

    #[test]
    fn csv_reports_line_numbers() {
        let good = "0,0\n1,2\n# comment\n3,4\n";
        let pts: Vec<Point<f64>> = parse_points_csv(good.as_bytes()).unwrap();
        assert_eq!(pts.len(), 3);
        let bad = "0,0\n1,x\n";
        match parse_points_csv::<f64, _>(bad.as_bytes()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let ragged = "0,0\n1\n";
        match parse_points_csv::<f64, _>(ragged.as_bytes()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn f32_spaces_work() {
        let s = FiniteMetricSpace::<f32>::line(&[0.0, 0.25, 1.0]).unwrap();
        assert!(validate_metric(&s, 3, 0).unwrap().pass);
        assert_eq!(s.diameter().unwrap(), 1.0f32);
    }
}
