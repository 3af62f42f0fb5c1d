//! One-dimensional transport: merged quantile staircases and quantile integrals.

use crate::error::{invalid, Result};
use crate::measures::DiscreteMeasure;
use crate::quad::gauss8;
use crate::scalar::Scalar;

use super::{WppMethod, WppValue};

/// Smallest grid accepted by [`wpp_1d_vs_quantile`].
pub const MIN_QUANTILE_GRID: usize = 1000;

// dyadic grading levels toward an unbounded endpoint of the quantile function
const END_LEVELS: u32 = 40;

/// Sorted `(position, weight)` pairs of a measure on the line.
fn staircase<S: Scalar>(mu: &DiscreteMeasure<S>) -> Result<Vec<(f64, f64)>> {
    let space = mu.space();
    if !space.is_line() {
        return invalid("1-D transport needs measures on the real line");
    }
    let mut st: Vec<(f64, f64)> = mu
        .atoms()
        .iter()
        .filter(|a| a.weight > S::zero())
        .map(|a| {
            let x = space.line_coord(a.index).expect("line space");
            (x.as_f64(), a.weight.as_f64())
        })
        .collect();
    st.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(st)
}

fn merge(a: &[(f64, f64)], b: &[(f64, f64)], p: f64) -> f64 {
    let mut total = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    loop {
        let step = ra.min(rb);
        let d = (a[i].0 - b[j].0).abs();
        if step > 0.0 && d > 0.0 {
            total += step * if p == 1.0 { d } else { d.powf(p) };
        }
        ra -= step;
        rb -= step;
        let a_done = ra <= 0.0;
        let b_done = rb <= 0.0;
        if a_done {
            i += 1;
            if i == a.len() {
                break;
            }
            ra += a[i].1;
        }
        if b_done {
            j += 1;
            if j == b.len() {
                break;
            }
            rb += b[j].1;
        }
    }
    total
}

/// Exact `W_p^p` between two measures on the line, by walking both quantile
/// staircases at once. The measures may live on different spaces.
pub fn wpp_1d<S: Scalar>(
    mu: &DiscreteMeasure<S>,
    nu: &DiscreteMeasure<S>,
    p: S,
) -> Result<WppValue<S>> {
    if !(p >= S::one()) {
        return invalid("p must be >= 1");
    }
    let a = staircase(mu)?;
    let b = staircase(nu)?;
    Ok(WppValue {
        value: S::of(merge(&a, &b, p.as_f64())),
        p,
        method: WppMethod::ClosedForm1d,
        tolerance: 1e-12 * (a.len() + b.len()) as f64,
    })
}

/// `W_p^p` between the uniform measures on two samples of reals. The inputs
/// are sorted in place.
pub fn wpp_1d_samples(a: &mut [f64], b: &mut [f64], p: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return invalid("empty sample");
    }
    if !(p >= 1.0) {
        return invalid("p must be >= 1");
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // integer staircase: atoms of a weigh m units, atoms of b weigh n units
    let (n, m) = (a.len() as u64, b.len() as u64);
    let scale = 1.0 / (n * m) as f64;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (m, n);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let step = ra.min(rb);
        let d = (a[i] - b[j]).abs();
        if d > 0.0 {
            total += step as f64 * if p == 1.0 { d } else { d.powf(p) };
        }
        ra -= step;
        rb -= step;
        if ra == 0 {
            i += 1;
            ra = m;
        }
        if rb == 0 {
            j += 1;
            rb = n;
        }
    }
    Ok(total * scale)
}

fn panels(f: &dyn Fn(f64) -> f64, a: f64, b: f64, count: usize) -> f64 {
    let h = (b - a) / count as f64;
    (0..count)
        .map(|k| {
            gauss8(
                f,
                a + k as f64 * h,
                if k + 1 == count {
                    b
                } else {
                    a + (k + 1) as f64 * h
                },
            )
        })
        .sum()
}

/// Panels graded geometrically toward `a` (`toward_a`) or `b`, for endpoint
/// singularities of the quantile function.
fn graded(f: &dyn Fn(f64) -> f64, a: f64, b: f64, count: usize, toward_a: bool) -> f64 {
    let len = b - a;
    let mut s = 0.0;
    let mut hi = 1.0;
    for _ in 0..END_LEVELS {
        let lo = 0.5 * hi;
        s += if toward_a {
            panels(f, a + lo * len, a + hi * len, count)
        } else {
            panels(f, b - hi * len, b - lo * len, count)
        };
        hi = lo;
    }
    s
}

/// Integral over one constant piece of the empirical quantile function.
fn piece(
    q: &dyn Fn(f64) -> f64,
    x: f64,
    p: f64,
    a: f64,
    b: f64,
    count: usize,
    first: bool,
    last: bool,
) -> f64 {
    let f = |u: f64| {
        let d = (x - q(u)).abs();
        if p == 1.0 {
            d
        } else {
            d.powf(p)
        }
    };
    // split where the quantile crosses x, the one kink of the integrand
    let (qa, qb) = (q(a + (b - a) * 1e-12), q(b - (b - a) * 1e-12));
    let mut cuts = vec![a];
    if qa < x && x < qb {
        let (mut lo, mut hi) = (a, b);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if q(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        cuts.push(0.5 * (lo + hi));
    }
    cuts.push(b);
    let mut s = 0.0;
    let segs = cuts.len() - 1;
    for k in 0..segs {
        let (l, r) = (cuts[k], cuts[k + 1]);
        let grade_left = first && k == 0;
        let grade_right = last && k + 1 == segs;
        s += match (grade_left, grade_right) {
            (true, true) => {
                let m = 0.5 * (l + r);
                graded(&f, l, m, count, true) + graded(&f, m, r, count, false)
            }
            (true, false) => graded(&f, l, r, count, true),
            (false, true) => graded(&f, l, r, count, false),
            (false, false) => panels(&f, l, r, count),
        };
    }
    s
}

fn quantile_integral(st: &[(f64, f64)], q: &dyn Fn(f64) -> f64, p: f64, count: usize) -> f64 {
    let mut u = 0.0;
    let mut total = 0.0;
    let last = st.len() - 1;
    for (k, &(x, w)) in st.iter().enumerate() {
        let next = if k == last { 1.0 } else { (u + w).min(1.0) };
        if next > u {
            total += piece(q, x, p, u, next, count, k == 0, k == last);
        }
        u = next;
    }
    total
}

/// `W_p^p` between a measure on the line and the law with quantile function
/// `q`, by Gauss-Legendre quadrature on each constant piece of the empirical
/// quantile function. `tolerance` of the result is the change when the panel
/// count is doubled.
pub fn wpp_1d_vs_quantile<S: Scalar>(
    mu: &DiscreteMeasure<S>,
    q: &dyn Fn(f64) -> f64,
    p: S,
    grid: usize,
) -> Result<WppValue<S>> {
    if !(p >= S::one()) {
        return invalid("p must be >= 1");
    }
    if grid < MIN_QUANTILE_GRID {
        return invalid(format!("quantile grid must be >= {MIN_QUANTILE_GRID}"));
    }
    let mut prev = f64::NEG_INFINITY;
    for k in 1..grid {
        let v = q(k as f64 / grid as f64);
        if v.is_nan() {
            return invalid("quantile function returned NaN");
        }
        if v < prev {
            return invalid(format!(
                "quantile function decreases near u = {}",
                k as f64 / grid as f64
            ));
        }
        prev = v;
    }
    let st = staircase(mu)?;
    let pf = p.as_f64();
    let count = grid.div_ceil(st.len()).clamp(1, 64);
    let coarse = quantile_integral(&st, q, pf, count);
    let fine = quantile_integral(&st, q, pf, 2 * count);
    Ok(WppValue {
        value: S::of(fine),
        p,
        method: WppMethod::QuantileIntegral,
        tolerance: (fine - coarse).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::FiniteMetricSpace;
    use std::sync::Arc;

    fn on_line(xs: &[f64], w: &[f64]) -> DiscreteMeasure<f64> {
        let s = Arc::new(FiniteMetricSpace::line(xs).unwrap());
        DiscreteMeasure::from_weights(s, w).unwrap()
    }

    #[test]
    fn staircase_examples() {
        let a = on_line(&[0.0], &[1.0]);
        let b = on_line(&[1.0], &[1.0]);
        assert_eq!(wpp_1d(&a, &b, 2.0).unwrap().value, 1.0);
        let u = on_line(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(wpp_1d(&u, &u, 3.0).unwrap().value, 0.0);
        let h = on_line(&[0.5], &[1.0]);
        assert_eq!(wpp_1d(&u, &h, 1.0).unwrap().value, 0.5);
    }

    #[test]
    fn samples_match_measures() {
        let mut a = vec![0.3, -1.0, 2.5];
        let mut b = vec![0.0, 1.0];
        let v = wpp_1d_samples(&mut a, &mut b, 2.0).unwrap();
        let ma = on_line(&[-1.0, 0.3, 2.5], &[1.0 / 3.0; 3]);
        let mb = on_line(&[0.0, 1.0], &[0.5, 0.5]);
        let w = wpp_1d(&ma, &mb, 2.0).unwrap().value;
        assert!((v - w).abs() < 1e-12);
    }

    #[test]
    fn quantile_examples() {
        let id = |u: f64| u;
        let h = on_line(&[0.5], &[1.0]);
        let v = wpp_1d_vs_quantile(&h, &id, 1.0, 1000).unwrap();
        assert!((v.value - 0.25).abs() < 1e-12, "{}", v.value);
        let z = on_line(&[0.0], &[1.0]);
        let v = wpp_1d_vs_quantile(&z, &id, 2.0, 1000).unwrap();
        assert!((v.value - 1.0 / 3.0).abs() < 1e-12);
        // 1000 atoms at the midpoints of a uniform grid: W_1 = 1/(4n)
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let m = on_line(&xs, &vec![1.0 / n as f64; n]);
        let v = wpp_1d_vs_quantile(&m, &id, 1.0, 1000).unwrap();
        assert!((v.value - 0.25 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn unbounded_quantile_endpoint() {
        // Pareto(3) on [1, inf): E|X - 1| = 1/2
        let q = |u: f64| (1.0 - u).powf(-1.0 / 3.0);
        let one = on_line(&[1.0], &[1.0]);
        let v = wpp_1d_vs_quantile(&one, &q, 1.0, 1000).unwrap();
        assert!((v.value - 0.5).abs() < 1e-6, "{}", v.value);
    }

    #[test]
    fn rejects_bad_inputs() {
        let z = on_line(&[0.0], &[1.0]);
        assert!(wpp_1d_vs_quantile(&z, &|u: f64| -u, 1.0, 1000).is_err());
        assert!(wpp_1d_vs_quantile(&z, &|u: f64| u, 1.0, 10).is_err());
        let pts = vec![crate::metric::Point::new(vec![0.0, 0.0]).unwrap()];
        let s = Arc::new(FiniteMetricSpace::euclidean(pts).unwrap());
        let d = DiscreteMeasure::dirac(s, 0).unwrap();
        assert!(wpp_1d(&d, &z, 1.0).is_err());
    }
}
