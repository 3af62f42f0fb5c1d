//! Gauss-Legendre quadrature helpers.

// 8-point rule on [-1, 1], symmetric half
const GL_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// 8-point Gauss-Legendre on `[a, b]`.
pub fn gauss8(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for k in 0..4 {
        s += GL_W[k] * (f(c - h * GL_X[k]) + f(c + h * GL_X[k]));
    }
    s * h
}

/// Value and error estimate of an adaptive bisection integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

/// Bisect until the two halves agree with the whole to `tol`, down to depth 48.
pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Quadrature {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> Quadrature {
        let m = 0.5 * (a + b);
        let l = gauss8(f, a, m);
        let r = gauss8(f, m, b);
        let diff = (l + r - whole).abs();
        if diff <= tol || depth >= 48 {
            return Quadrature {
                value: l + r,
                error: diff,
            };
        }
        let ql = rec(f, a, m, l, 0.5 * tol, depth + 1);
        let qr = rec(f, m, b, r, 0.5 * tol, depth + 1);
        Quadrature {
            value: ql.value + qr.value,
            error: ql.error + qr.error,
        }
    }
    if b <= a {
        return Quadrature {
            value: 0.0,
            error: 0.0,
        };
    }
    rec(f, a, b, gauss8(f, a, b), tol, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = gauss8(&|x| x.powi(15), 0.0, 1.0);
        assert!((v - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn endpoint_singularity() {
        let q = adaptive(&|t| (1.0 - t).powf(2.0 / 3.0), 0.0, 1.0, 1e-13);
        assert!((q.value - 0.6).abs() < 1e-11, "{}", q.value);
        let q = adaptive(&|t| t.powf(-0.5), 0.0, 1.0, 1e-12);
        assert!((q.value - 2.0).abs() < 1e-6);
    }
}
