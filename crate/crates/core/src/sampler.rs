//! Synthetic distributions whose covering dimension and tail are known in
//! closed form, used as ground truth by the experiments.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::metric::Point;
use crate::scalar::Scalar;

/// Ternary digits drawn per Cantor sample.
pub const CANTOR_DEPTH: u32 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// Uniform on `[0,1]^d`.
    UniformCube { d: usize },
    /// Natural measure of the two-piece Cantor set in `[0,1]` with contraction `ratio`.
    UniformCantor { ratio: f64 },
    /// Uniform on the unit sphere of `R^d` (`d >= 2`).
    UniformSphere { d: usize },
    /// Uniform direction, radius with `P(R > t) = min(1, t^-a)`.
    ParetoRadial { a: f64, d: usize },
    /// Uniform direction, radius with `P(R > t) = exp(-lambda t^kappa)`.
    ExpRadial { kappa: f64, lambda: f64, d: usize },
    /// All mass at the origin of `R^d`.
    PointMass { d: usize },
}

/// How the tail `H(t) = P(d(x0, X) > t)` decays.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum TailLaw {
    /// `H(t) = 0` for `t >= radius`.
    Bounded { radius: f64 },
    /// `H(t) = min(1, t^-a)`.
    PowerLaw { a: f64 },
    /// `H(t) = exp(-lambda t^kappa)`.
    Weibull { kappa: f64, lambda: f64 },
}

/// Closed-form facts about a family. Fields are `None` where no valid closed
/// form exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerMetadata {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub diameter: Option<f64>,
    pub x0: Vec<f64>,
    pub tail: TailLaw,
    pub analytic_tail: bool,
    pub analytic_quantile: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSampler {
    pub family: Family,
}

impl Family {
    pub fn dim(&self) -> usize {
        match *self {
            Family::UniformCube { d }
            | Family::UniformSphere { d }
            | Family::ParetoRadial { d, .. }
            | Family::ExpRadial { d, .. }
            | Family::PointMass { d } => d,
            Family::UniformCantor { .. } => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Family::UniformCube { d } | Family::PointMass { d } if d == 0 => {
                invalid("dimension must be >= 1")
            }
            Family::UniformSphere { d } if d < 2 => invalid("uniform-sphere needs d >= 2"),
            Family::UniformCantor { ratio } if !(ratio > 0.0 && ratio < 0.5) => {
                invalid("cantor ratio must lie in (0, 1/2)")
            }
            Family::ParetoRadial { a, d } if !(a > 0.0) || d == 0 => {
                invalid("pareto-radial needs a > 0 and d >= 1")
            }
            Family::ExpRadial { kappa, lambda, d } if !(kappa > 0.0 && lambda > 0.0) || d == 0 => {
                invalid("exp-radial needs kappa > 0, lambda > 0 and d >= 1")
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Family::UniformCube { d } => write!(f, "uniform-cube:{d}"),
            Family::UniformCantor { ratio } => write!(f, "uniform-cantor:{ratio}"),
            Family::UniformSphere { d } => write!(f, "uniform-sphere:{d}"),
            Family::ParetoRadial { a, d } => write!(f, "pareto-radial:{a}:{d}"),
            Family::ExpRadial { kappa, lambda, d } => write!(f, "exp-radial:{kappa}:{lambda}:{d}"),
            Family::PointMass { d } => write!(f, "point-mass:{d}"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    /// `name[:param...]`, e.g. `uniform-cube:3`, `pareto-radial:3:1`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize, default: Option<f64>| -> Result<f64> {
            match args.get(i) {
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad sampler parameter `{v}`"))),
                None => default.ok_or_else(|| {
                    Error::InvalidInput(format!("sampler `{s}` is missing parameters"))
                }),
            }
        };
        let int = |i: usize, default: Option<f64>| -> Result<usize> {
            let v = num(i, default)?;
            if v < 0.0 || v.fract() != 0.0 {
                return invalid(format!("dimension `{v}` is not a nonnegative integer"));
            }
            Ok(v as usize)
        };
        let fam = match name {
            "uniform-cube" => Family::UniformCube {
                d: int(0, Some(1.0))?,
            },
            "uniform-cantor" | "cantor" => Family::UniformCantor {
                ratio: num(0, Some(1.0 / 3.0))?,
            },
            "uniform-sphere" => Family::UniformSphere {
                d: int(0, Some(2.0))?,
            },
            "pareto-radial" => Family::ParetoRadial {
                a: num(0, None)?,
                d: int(1, Some(1.0))?,
            },
            "exp-radial" => Family::ExpRadial {
                kappa: num(0, None)?,
                lambda: num(1, None)?,
                d: int(2, Some(1.0))?,
            },
            "point-mass" => Family::PointMass {
                d: int(0, Some(1.0))?,
            },
            other => return invalid(format!("unknown sampler family `{other}`")),
        };
        fam.validate()?;
        Ok(fam)
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Uniform on `(0, 1]`, safe for `ln` and negative powers.
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Cumulative distribution of the `ratio`-Cantor measure.
pub fn cantor_cdf(ratio: f64, t: f64) -> f64 {
    let mut t = t;
    let mut scale = 1.0;
    let mut acc = 0.0;
    for _ in 0..64 {
        if t <= 0.0 {
            return acc;
        }
        if t >= 1.0 {
            return acc + scale;
        }
        if t <= ratio {
            t /= ratio;
            scale *= 0.5;
        } else if t < 1.0 - ratio {
            return acc + 0.5 * scale;
        } else {
            acc += 0.5 * scale;
            scale *= 0.5;
            t = (t - (1.0 - ratio)) / ratio;
        }
    }
    acc
}

/// Quantile function of the `ratio`-Cantor measure.
pub fn cantor_quantile(ratio: f64, u: f64) -> f64 {
    let mut u = u.clamp(0.0, 1.0);
    let mut x = 0.0;
    let mut step = 1.0 - ratio;
    for _ in 0..64 {
        u *= 2.0;
        if u >= 1.0 {
            x += step;
            u -= 1.0;
        }
        step *= ratio;
    }
    x
}

impl SyntheticSampler {
    pub fn new(family: Family) -> Result<Self> {
        family.validate()?;
        Ok(SyntheticSampler { family })
    }

    pub fn parse(spec: &str) -> Result<Self> {
        Ok(SyntheticSampler {
            family: spec.parse()?,
        })
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn metadata(&self) -> SamplerMetadata {
        let d = self.dim();
        let origin = vec![0.0; d];
        let rd_beta = (d as f64).powf(d as f64 / 2.0);
        match self.family {
            Family::UniformCube { d } => SamplerMetadata {
                alpha: Some(d as f64),
                beta: Some(1.0),
                diameter: Some((d as f64).sqrt()),
                x0: origin,
                tail: TailLaw::Bounded {
                    radius: (d as f64).sqrt(),
                },
                analytic_tail: d == 1,
                analytic_quantile: d == 1,
            },
            Family::UniformCantor { ratio } => {
                let alpha = 2f64.ln() / (1.0 / ratio).ln();
                SamplerMetadata {
                    alpha: Some(alpha),
                    beta: Some(2f64.powf(1.0 - alpha).max(1.0)),
                    diameter: Some(1.0),
                    x0: origin,
                    tail: TailLaw::Bounded { radius: 1.0 },
                    analytic_tail: true,
                    analytic_quantile: true,
                }
            }
            Family::UniformSphere { d } => SamplerMetadata {
                alpha: Some(d as f64 - 1.0),
                beta: None,
                diameter: Some(2.0),
                x0: origin,
                tail: TailLaw::Bounded { radius: 1.0 },
                analytic_tail: true,
                analytic_quantile: false,
            },
            Family::ParetoRadial { a, d } => SamplerMetadata {
                alpha: Some(d as f64),
                beta: Some(rd_beta),
                diameter: None,
                x0: origin,
                tail: TailLaw::PowerLaw { a },
                analytic_tail: true,
                analytic_quantile: d == 1,
            },
            Family::ExpRadial { kappa, lambda, d } => SamplerMetadata {
                alpha: Some(d as f64),
                beta: Some(rd_beta),
                diameter: None,
                x0: origin,
                tail: TailLaw::Weibull { kappa, lambda },
                analytic_tail: true,
                analytic_quantile: d == 1,
            },
            Family::PointMass { .. } => SamplerMetadata {
                alpha: None,
                beta: None,
                diameter: Some(0.0),
                x0: origin,
                tail: TailLaw::Bounded { radius: 0.0 },
                analytic_tail: true,
                analytic_quantile: true,
            },
        }
    }

    /// Draw one point.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.family {
            Family::UniformCube { d } => (0..d).map(|_| rng.random::<f64>()).collect(),
            Family::UniformCantor { ratio } => {
                let bits: u64 = rng.random();
                let mut x = 0.0;
                let mut step = 1.0 - ratio;
                for k in 0..CANTOR_DEPTH {
                    if (bits >> k) & 1 == 1 {
                        x += step;
                    }
                    step *= ratio;
                }
                vec![x]
            }
            Family::UniformSphere { d } => unit_direction(rng, d),
            Family::ParetoRadial { a, d } => {
                let u = unit_direction(rng, d);
                let r = open_unit(rng).powf(-1.0 / a);
                u.into_iter().map(|c| c * r).collect()
            }
            Family::ExpRadial { kappa, lambda, d } => {
                let u = unit_direction(rng, d);
                let r = (-open_unit(rng).ln() / lambda).powf(1.0 / kappa);
                u.into_iter().map(|c| c * r).collect()
            }
            Family::PointMass { d } => vec![0.0; d],
        }
    }

    /// Raw coordinates of `n` i.i.d. draws; deterministic in `(family, n, seed)`.
    pub fn sample_coords(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    pub fn sample_points<S: Scalar>(&self, n: usize, seed: u64) -> Result<Vec<Point<S>>> {
        self.sample_coords(n, seed)
            .into_iter()
            .map(|c| Point::new(c.into_iter().map(S::of).collect()))
            .collect()
    }

    /// Empirical measure of `n` draws. Repeated points stay separate atoms.
    pub fn sample<S: Scalar>(&self, n: usize, seed: u64) -> Result<EmpiricalMeasure<S>> {
        if n == 0 {
            return invalid("sample size must be >= 1");
        }
        EmpiricalMeasure::from_points(
            self.sample_points(n, seed)?,
            seed,
            Some(self.family.to_string()),
        )
    }

    /// Tail `H(t) = P(|X - x0| > t)` when known in closed form.
    pub fn tail(&self, t: f64) -> Option<f64> {
        if t < 0.0 {
            return Some(1.0);
        }
        Some(match self.family {
            Family::UniformCube { d: 1 } => (1.0 - t).clamp(0.0, 1.0),
            Family::UniformCube { .. } => return None,
            Family::UniformCantor { ratio } => 1.0 - cantor_cdf(ratio, t),
            Family::UniformSphere { .. } => {
                if t < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Family::ParetoRadial { a, .. } => {
                if t <= 1.0 {
                    1.0
                } else {
                    t.powf(-a)
                }
            }
            Family::ExpRadial { kappa, lambda, .. } => (-lambda * t.powf(kappa)).exp(),
            Family::PointMass { .. } => 0.0,
        })
    }

    /// Quantile function of a 1-D family, for `u` in `(0, 1)`.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        match self.family {
            Family::UniformCube { d: 1 } => Some(u),
            Family::UniformCantor { ratio } => Some(cantor_quantile(ratio, u)),
            Family::ParetoRadial { a, d: 1 } => Some(if u < 0.5 {
                -(2.0 * u).powf(-1.0 / a)
            } else if u > 0.5 {
                (2.0 * (1.0 - u)).powf(-1.0 / a)
            } else {
                0.0
            }),
            Family::ExpRadial {
                kappa,
                lambda,
                d: 1,
            } => Some(if u < 0.5 {
                -(-(2.0 * u).ln() / lambda).powf(1.0 / kappa)
            } else {
                (-(2.0 * (1.0 - u)).ln() / lambda).powf(1.0 / kappa)
            }),
            Family::PointMass { d: 1 } => Some(0.0),
            _ => None,
        }
    }

    pub fn has_quantile(&self) -> bool {
        self.quantile(0.5).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_sample() {
        let s = SyntheticSampler::parse("point-mass:2").unwrap();
        let e = s.sample::<f64>(5, 1).unwrap();
        assert_eq!(e.n(), 5);
        assert!(e.points().iter().all(|p| p.coords() == [0.0, 0.0]));
        assert!(e.measure().atoms().iter().all(|a| a.weight == 0.2));
    }

    #[test]
    fn uniform_mean_is_half() {
        let s = SyntheticSampler::parse("uniform-cube:1").unwrap();
        let e = s.sample::<f64>(10_000, 11).unwrap();
        let mean: f64 = e.points().iter().map(|p| p.coords()[0]).sum::<f64>() / 1e4;
        // sd of the mean is 1/sqrt(12e4) ~ 0.0029; 0.02 is far beyond 4 sigma
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn determinism() {
        let s = SyntheticSampler::parse("pareto-radial:3:2").unwrap();
        assert_eq!(s.sample_coords(50, 9), s.sample_coords(50, 9));
        assert_ne!(s.sample_coords(50, 9), s.sample_coords(50, 10));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(SyntheticSampler::parse("pareto-radial:0:1").is_err());
        assert!(SyntheticSampler::parse("pareto-radial:-1").is_err());
        assert!(SyntheticSampler::parse("uniform-cantor:0.7").is_err());
        assert!(SyntheticSampler::parse("uniform-sphere:1").is_err());
        assert!(SyntheticSampler::parse("mystery:1").is_err());
        assert!(SyntheticSampler::new(Family::UniformCube { d: 0 }).is_err());
        assert!(SyntheticSampler::parse("uniform-cube:1")
            .unwrap()
            .sample::<f64>(0, 0)
            .is_err());
    }

    #[test]
    fn metadata_values() {
        let c = SyntheticSampler::parse("uniform-cantor:0.3333333333333333").unwrap();
        let m = c.metadata();
        assert!((m.alpha.unwrap() - 2f64.ln() / 3f64.ln()).abs() < 1e-12);
        let cube = SyntheticSampler::parse("uniform-cube:3")
            .unwrap()
            .metadata();
        assert_eq!(cube.alpha, Some(3.0));
        assert_eq!(cube.diameter, Some(3f64.sqrt()));
        let json = serde_json::to_string(&m).unwrap();
        let back: SamplerMetadata = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn cantor_points_lie_in_the_set() {
        let s = SyntheticSampler::parse("uniform-cantor").unwrap();
        for x in s.sample_coords(200, 3).into_iter().map(|p| p[0]) {
            let mut y = x;
            for _ in 0..20 {
                assert!(!(y > 1.0 / 3.0 + 1e-9 && y < 2.0 / 3.0 - 1e-9), "x={x}");
                y = if y <= 1.0 / 3.0 + 1e-9 {
                    3.0 * y
                } else {
                    3.0 * y - 2.0
                };
            }
        }
    }

    #[test]
    fn cantor_cdf_and_quantile_invert() {
        let r = 1.0 / 3.0;
        assert_eq!(cantor_cdf(r, 0.5), 0.5);
        assert!((cantor_cdf(r, 1.0 / 9.0) - 0.25).abs() < 1e-12);
        for &u in &[0.1, 0.3, 0.55, 0.9] {
            let x = cantor_quantile(r, u);
            assert!((cantor_cdf(r, x) - u).abs() < 1e-9);
        }
    }

    #[test]
    fn quantiles_match_tails() {
        let p = SyntheticSampler::parse("pareto-radial:3:1").unwrap();
        // P(X > 2) = H(2)/2
        let q = p.quantile(1.0 - 0.5 * 2f64.powf(-3.0)).unwrap();
        assert!((q - 2.0).abs() < 1e-12);
        let e = SyntheticSampler::parse("exp-radial:1:2:1").unwrap();
        let q = e.quantile(0.25).unwrap();
        assert!((0.5 * (-2.0 * q.abs()).exp() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn display_round_trips() {
        for s in [
            "uniform-cube:3",
            "pareto-radial:3:1",
            "exp-radial:2:0.5:2",
            "point-mass:1",
        ] {
            let f: Family = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
    }
}
