//! Right-hand sides of the concentration bounds for `W_p^p(L_n, mu)`, with
//! every constant an explicit parameter.

use std::f64::consts::E;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tail::{i_integral, weak_moment, TailProfile};

/// Revision of the formula set, printed by `--version`.
pub const CATALOG_REVISION: &str = "1";

/// Relative tolerance for `alpha == 2p`.
pub const REGIME_TOL: f64 = 1e-12;

// closer than this (relative) to alpha = 2p without being equal draws a warning
const NEAR_EQUALITY: f64 = 1e-6;

const E2: f64 = E * E;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    AlphaLt2p,
    AlphaEq2p,
    AlphaGt2p,
}

impl Regime {
    pub fn classify(alpha: f64, p: f64) -> Result<Regime> {
        if !(alpha > 0.0 && p > 0.0) || !alpha.is_finite() || !p.is_finite() {
            return invalid("alpha and p must be positive and finite");
        }
        let two_p = 2.0 * p;
        let gap = (alpha - two_p) / two_p;
        let regime = if gap.abs() <= REGIME_TOL {
            Regime::AlphaEq2p
        } else if gap < 0.0 {
            Regime::AlphaLt2p
        } else {
            Regime::AlphaGt2p
        };
        if gap.abs() > REGIME_TOL && gap.abs() < NEAR_EQUALITY {
            log::warn!(
                "alpha = {alpha} is within {NEAR_EQUALITY:e} of 2p = {two_p}; using {regime:?}"
            );
        }
        Ok(regime)
    }
}

/// One additive piece of a bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum BoundValue {
    Value {
        /// Sum of `terms`, in order.
        total: f64,
        terms: Vec<Term>,
        /// Holds only as a limsup in `n`.
        asymptotic: bool,
    },
    NotApplicable {
        reason: String,
    },
}

impl BoundValue {
    fn from_terms(terms: Vec<Term>, asymptotic: bool) -> Self {
        let total = terms.iter().map(|t| t.value).sum();
        BoundValue::Value {
            total,
            terms,
            asymptotic,
        }
    }

    fn single(name: &str, value: f64) -> Self {
        Self::from_terms(vec![term(name, value)], false)
    }

    fn na(reason: impl Into<String>) -> Self {
        BoundValue::NotApplicable {
            reason: reason.into(),
        }
    }

    pub fn total(&self) -> Option<f64> {
        match self {
            BoundValue::Value { total, .. } => Some(*total),
            BoundValue::NotApplicable { .. } => None,
        }
    }

    pub fn terms(&self) -> &[Term] {
        match self {
            BoundValue::Value { terms, .. } => terms,
            BoundValue::NotApplicable { .. } => &[],
        }
    }

    pub fn is_applicable(&self) -> bool {
        matches!(self, BoundValue::Value { .. })
    }
}

fn term(name: &str, value: f64) -> Term {
    Term {
        name: name.to_string(),
        value,
    }
}

/// Tail hypothesis selecting a bullet of the unbounded-support bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    /// Weak moment of order `r p`; uses `r`, `weak_moment` and for `r > 2` also `q`.
    WeakMoment,
    /// Finite `int sqrt(H) t^(p-1) dt`.
    I2p,
    /// Finite `int H^((alpha-p)/alpha) t^(p-1) dt`.
    IAlpha,
}

/// Parameters shared by the formulas. Constants default to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundParams {
    pub p: f64,
    pub alpha: f64,
    /// Diameter of the support, bounded case.
    pub diameter: f64,
    /// Constant of the exponential (main) terms.
    pub c: f64,
    /// Constant of the polynomial terms.
    pub c_poly: f64,
    pub r: Option<f64>,
    pub q: Option<f64>,
    /// `sup_t t^(rp) H(t)`.
    pub weak_moment: Option<f64>,
    pub i_alpha_p: Option<f64>,
    pub i_2p_p: Option<f64>,
    /// `E d(x0, X)^p`, used for the default cap.
    pub moment_p: Option<f64>,
    /// Cutoff of the exponential term; defaults to `2^(p+1) E d(x0, X)^p`.
    pub cap: Option<f64>,
    pub hypothesis: Option<Hypothesis>,
    pub rho: Option<f64>,
    pub kappa: Option<f64>,
    pub eps: Option<f64>,
    pub c1: f64,
    pub c2: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams {
            p: 1.0,
            alpha: 1.0,
            diameter: 1.0,
            c: 1.0,
            c_poly: 1.0,
            r: None,
            q: None,
            weak_moment: None,
            i_alpha_p: None,
            i_2p_p: None,
            moment_p: None,
            cap: None,
            hypothesis: None,
            rho: None,
            kappa: None,
            eps: None,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

impl BoundParams {
    pub fn regime(&self) -> Result<Regime> {
        Regime::classify(self.alpha, self.p)
    }

    /// Fill the tail quantities from a profile. The weak moment needs `r`;
    /// `I_{alpha,p}` is left empty when `alpha <= p`.
    pub fn fill_from_profile(&mut self, profile: &TailProfile) -> Result<()> {
        let p = self.p;
        self.i_2p_p = Some(i_integral(profile, 0.5, p)?.value);
        if self.alpha > p {
            self.i_alpha_p = Some(i_integral(profile, (self.alpha - p) / self.alpha, p)?.value);
        }
        self.moment_p = Some(profile.strong_moment(p).value);
        if let Some(r) = self.r {
            self.weak_moment = Some(weak_moment(profile, r * p)?.value);
        }
        Ok(())
    }

    fn resolved_cap(&self) -> Option<f64> {
        self.cap
            .or_else(|| self.moment_p.map(|m| 2f64.powf(self.p + 1.0) * m))
    }
}

/// `2^(p+1) E d(x0, X)^p`.
pub fn default_cap(p: f64, moment_p: f64) -> f64 {
    2f64.powf(p + 1.0) * moment_p
}

/// Bound on `||W_p^p||_r / Delta^p`.
pub fn moment_bound(r: f64, n: u64, regime: Regime, p: f64, alpha: f64, c: f64) -> Result<f64> {
    if !(r >= 2.0) {
        return invalid("moment bounds need r >= 2");
    }
    if n == 0 {
        return invalid("n must be >= 1");
    }
    let ratio = r / n as f64;
    Ok(match regime {
        Regime::AlphaLt2p => c * ratio.sqrt(),
        Regime::AlphaEq2p => c * ratio.sqrt() * (E + n as f64 / r).ln(),
        Regime::AlphaGt2p => c * ratio.powf(p / alpha),
    })
}

/// `[x / scale]^eta`, with the log correction at `alpha = 2p`; `inner` is
/// the constant inside the log.
fn rate(x: f64, regime: Regime, p: f64, alpha: f64, scale: f64, inner: f64) -> f64 {
    match regime {
        Regime::AlphaLt2p => (x / scale).powi(2),
        Regime::AlphaEq2p => (x / (scale * (E + inner / x).ln())).powi(2),
        Regime::AlphaGt2p => (x / scale).powf(alpha / p),
    }
}

/// Bounded-support tail bound on `P(W_p^p > x)`, in `[0, e^2]`.
pub fn hoeffding_bound(x: f64, n: u64, params: &BoundParams) -> Result<f64> {
    if !(x > 0.0) {
        return invalid("x must be positive");
    }
    let regime = params.regime()?;
    let dp = params.diameter.powf(params.p);
    if x > dp {
        return Ok(0.0);
    }
    let scale = params.c * dp;
    Ok(E2 * (-(n as f64) * rate(x, regime, params.p, params.alpha, scale, scale)).exp())
}

fn i_for(regime: Regime, params: &BoundParams) -> std::result::Result<f64, String> {
    let (val, name) = match regime {
        Regime::AlphaGt2p => (params.i_alpha_p, "I_alpha_p"),
        _ => (params.i_2p_p, "I_2p_p"),
    };
    match val {
        None => Err(format!("{name} not supplied")),
        Some(v) if !v.is_finite() => Err(format!("{name} is infinite")),
        Some(v) if v < 0.0 => Err(format!("{name} is negative")),
        Some(v) => Ok(v),
    }
}

/// Exponential bound on the main term of the ring decomposition. The
/// constant multiplies `n` in the exponent.
pub fn main_term_bound(x: f64, n: u64, params: &BoundParams) -> Result<BoundValue> {
    if !(x > 0.0) {
        return invalid("x must be positive");
    }
    let regime = params.regime()?;
    let i = match i_for(regime, params) {
        Ok(i) => i,
        Err(reason) => return Ok(BoundValue::na(reason)),
    };
    let Some(cap) = params.resolved_cap() else {
        return Ok(BoundValue::na("cap needs either `cap` or `moment_p`"));
    };
    let v = if x > cap {
        0.0
    } else if i == 0.0 {
        // degenerate tail: the main term vanishes
        0.0
    } else {
        let u = rate(x, regime, params.p, params.alpha, i, params.c * i);
        E2 * (-(n as f64) * params.c * u).exp()
    };
    Ok(BoundValue::single("exponential", v))
}

/// Dispatch of the unbounded-support bounds; the bullet is picked from the
/// regime, the hypothesis and `r`.
pub fn fuk_nagaev_bound(x: f64, n: u64, params: &BoundParams) -> Result<BoundValue> {
    if !(x > 0.0) {
        return invalid("x must be positive");
    }
    if n == 0 {
        return invalid("n must be >= 1");
    }
    let regime = params.regime()?;
    let (p, alpha) = (params.p, params.alpha);
    let nf = n as f64;
    let Some(hyp) = params.hypothesis else {
        return Ok(BoundValue::na("no tail hypothesis given"));
    };

    let weak_term = |r: f64, wm: f64| {
        term(
            "weak-moment",
            params.c_poly * wm / (x.powf(r) * nf.powf(r - 1.0)),
        )
    };
    let i2_term = |i2: f64| term("i2p", params.c_poly * i2 * i2 / (x * x * nf));
    let exp_term = || -> std::result::Result<Term, String> {
        match main_term_bound(x, n, params).map_err(|e| e.to_string())? {
            BoundValue::Value { total, .. } => Ok(term("exponential", total)),
            BoundValue::NotApplicable { reason } => Err(reason),
        }
    };
    let finite = |v: Option<f64>, name: &str| -> std::result::Result<f64, String> {
        match v {
            Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
            Some(_) => Err(format!("{name} is not finite")),
            None => Err(format!("{name} not supplied")),
        }
    };

    let build = || -> std::result::Result<Vec<Term>, String> {
        match hyp {
            Hypothesis::WeakMoment => {
                let r = finite(params.r, "r")?;
                let wm = finite(params.weak_moment, "weak_moment")?;
                if r > 2.0 {
                    let q = finite(params.q, "q")?;
                    if !(q > r) {
                        return Err(format!("q = {q} must exceed r = {r}"));
                    }
                    let i2 = finite(params.i_2p_p, "I_2p_p")?;
                    return Ok(vec![
                        exp_term()?,
                        term(
                            "moment-q",
                            params.c_poly * i2.powf(q) / (x.powf(q) * nf.powf(q / 2.0)),
                        ),
                        weak_term(r, wm),
                    ]);
                }
                if !(r > 1.0) || r == 2.0 {
                    return Err(format!("no bullet for weak moment order r = {r}"));
                }
                match regime {
                    Regime::AlphaGt2p => {
                        let threshold = alpha / (alpha - p);
                        if r > threshold {
                            Ok(vec![exp_term()?, weak_term(r, wm)])
                        } else if r < threshold {
                            Ok(vec![weak_term(r, wm)])
                        } else {
                            Err(format!("r equals alpha/(alpha-p) = {threshold}"))
                        }
                    }
                    _ => Ok(vec![weak_term(r, wm)]),
                }
            }
            Hypothesis::I2p => {
                let i2 = finite(params.i_2p_p, "I_2p_p")?;
                match regime {
                    Regime::AlphaLt2p => Ok(vec![i2_term(i2)]),
                    _ => Ok(vec![exp_term()?, i2_term(i2)]),
                }
            }
            Hypothesis::IAlpha => {
                if regime != Regime::AlphaGt2p {
                    return Err("the I_alpha_p bullet needs alpha > 2p".into());
                }
                let ia = finite(params.i_alpha_p, "I_alpha_p")?;
                let s = alpha / (alpha - p);
                Ok(vec![term(
                    "i-alpha",
                    params.c_poly * ia.powf(s) / (x.powf(s) * nf.powf(p / (alpha - p))),
                )])
            }
        }
    };
    Ok(match build() {
        Ok(terms) => BoundValue::from_terms(terms, false),
        Err(reason) => BoundValue::na(reason),
    })
}

/// Bound on `n^e P(W_p^p > x / n^(1 - rho))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModerateDeviation {
    pub bound: BoundValue,
    /// The power `e` of `n` multiplying the probability.
    pub n_exponent: f64,
    /// `bound / n^e`; only a limit statement when the bound is asymptotic.
    pub probability: Option<f64>,
}

pub fn moderate_deviation_bound(x: f64, n: u64, params: &BoundParams) -> Result<ModerateDeviation> {
    if !(x > 0.0) {
        return invalid("x must be positive");
    }
    let regime = params.regime()?;
    let (p, alpha) = (params.p, params.alpha);
    let Some(rho) = params.rho else {
        return invalid("rho not supplied");
    };
    let na = |reason: String| ModerateDeviation {
        bound: BoundValue::na(reason),
        n_exponent: f64::NAN,
        probability: None,
    };
    let Some(hyp) = params.hypothesis else {
        return Ok(na("no tail hypothesis given".into()));
    };
    let get = |v: Option<f64>, name: &str| -> std::result::Result<f64, String> {
        match v {
            Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => Err(format!("{name} missing or not finite")),
        }
    };
    // (open lower end?, lower end)
    let in_range = |open: bool, lo: f64| {
        if open {
            rho > lo && rho <= 1.0
        } else {
            rho >= lo && rho <= 1.0
        }
    };
    let gt = regime == Regime::AlphaGt2p;
    let low = if gt { (alpha - p) / alpha } else { 0.5 };

    let res = (|| -> std::result::Result<(f64, f64, bool), String> {
        match hyp {
            Hypothesis::WeakMoment => {
                let r = get(params.r, "r")?;
                let wm = get(params.weak_moment, "weak_moment")?;
                let value = params.c_poly * wm / x.powf(r);
                let (asym, open, lo) = if r > 2.0 {
                    (true, true, low)
                } else if gt {
                    let threshold = alpha / (alpha - p);
                    if r > threshold && r < 2.0 {
                        (true, true, low)
                    } else if r > 1.0 && r < threshold {
                        (false, false, 1.0 / r)
                    } else {
                        return Err(format!("no bullet for r = {r}"));
                    }
                } else if r > 1.0 && r < 2.0 {
                    (false, false, 1.0 / r)
                } else {
                    return Err(format!("no bullet for r = {r}"));
                };
                if !in_range(open, lo) {
                    return Err(format!("rho = {rho} outside the range starting at {lo}"));
                }
                Ok((value, r * rho - 1.0, asym))
            }
            Hypothesis::I2p => {
                let i2 = get(params.i_2p_p, "I_2p_p")?;
                if !in_range(true, low) {
                    return Err(format!("rho = {rho} outside ({low}, 1]"));
                }
                Ok((params.c_poly * i2 * i2 / (x * x), 2.0 * rho - 1.0, true))
            }
            Hypothesis::IAlpha => {
                if !gt {
                    return Err("the I_alpha_p bullet needs alpha > 2p".into());
                }
                let ia = get(params.i_alpha_p, "I_alpha_p")?;
                if !in_range(false, low) {
                    return Err(format!("rho = {rho} outside [{low}, 1]"));
                }
                let s = alpha / (alpha - p);
                Ok((params.c_poly * ia.powf(s) / x.powf(s), s * rho - 1.0, false))
            }
        }
    })();
    Ok(match res {
        Ok((value, e, asymptotic)) => ModerateDeviation {
            bound: BoundValue::from_terms(vec![term("polynomial", value)], asymptotic),
            n_exponent: e,
            probability: Some(value / (n.max(1) as f64).powf(e)),
        },
        Err(reason) => na(reason),
    })
}

/// Bound under an exponential moment of order `kappa`: the main-term bound
/// plus the free-constant exponential terms.
pub fn bernstein_bound(x: f64, n: u64, params: &BoundParams) -> Result<BoundValue> {
    if !(x > 0.0) {
        return invalid("x must be positive");
    }
    let Some(kappa) = params.kappa else {
        return invalid("kappa not supplied");
    };
    if !(kappa > 0.0) {
        return invalid("kappa must be positive");
    }
    let p = params.p;
    if kappa == p {
        return Ok(BoundValue::na("kappa = p is excluded"));
    }
    let a = match main_term_bound(x, n, params)? {
        BoundValue::Value { total, .. } => total,
        na => return Ok(na),
    };
    let nf = n as f64;
    let mut terms = vec![term("main", a)];
    if kappa > p {
        let v = if x > 1.0 {
            params.c1 * (-params.c2 * nf * x.powf(kappa / p)).exp()
        } else {
            0.0
        };
        terms.push(term("large-x", v));
    } else {
        let Some(eps) = params.eps.filter(|e| *e > 0.0 && *e < kappa) else {
            return Ok(BoundValue::na("kappa < p needs eps in (0, kappa)"));
        };
        let small = if x <= 1.0 {
            params.c1 * (-params.c2 * (nf * x).powf((kappa - eps) / p)).exp()
        } else {
            0.0
        };
        let large = if x > 1.0 {
            params.c1 * (-params.c2 * (nf * x).powf(kappa / p)).exp()
        } else {
            0.0
        };
        terms.push(term("small-x", small));
        terms.push(term("large-x", large));
    }
    Ok(BoundValue::from_terms(terms, false))
}

/// Normalizing sequence of the almost-sure rates.
pub fn as_rate_normalizer(n: f64, regime: Regime, p: f64, alpha: f64) -> Result<f64> {
    if !(n >= 3.0) {
        return invalid("the normalizer needs n >= 3");
    }
    let ll = n.ln().ln();
    Ok(match regime {
        Regime::AlphaLt2p => (n / ll).sqrt(),
        Regime::AlphaEq2p => (n / (n.ln() * ll)).sqrt(),
        Regime::AlphaGt2p => (n / ll).powf(p / alpha),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formula {
    Moment,
    Hoeffding,
    MainTerm,
    FukNagaev,
    ModerateDeviation,
    Bernstein,
    AsNormalizer,
}

/// Batch evaluation: every `(n, x)` pair of the grid. For `moment` the
/// x-grid holds the values of `r`; for `as-normalizer` it is ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub formula: Formula,
    pub x: Vec<f64>,
    pub n: Vec<u64>,
    #[serde(default)]
    pub params: BoundParams,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub n: u64,
    pub x: f64,
    pub value: BoundValue,
}

pub fn evaluate(formula: Formula, x: f64, n: u64, params: &BoundParams) -> Result<BoundValue> {
    Ok(match formula {
        Formula::Moment => BoundValue::single(
            "moment",
            moment_bound(x, n, params.regime()?, params.p, params.alpha, params.c)?,
        ),
        Formula::Hoeffding => BoundValue::single("exponential", hoeffding_bound(x, n, params)?),
        Formula::MainTerm => main_term_bound(x, n, params)?,
        Formula::FukNagaev => fuk_nagaev_bound(x, n, params)?,
        Formula::ModerateDeviation => moderate_deviation_bound(x, n, params)?.bound,
        Formula::Bernstein => bernstein_bound(x, n, params)?,
        Formula::AsNormalizer => BoundValue::single(
            "normalizer",
            as_rate_normalizer(n as f64, params.regime()?, params.p, params.alpha)?,
        ),
    })
}

pub fn evaluate_grid(spec: &GridSpec) -> Result<Vec<GridRow>> {
    let xs: Vec<f64> = if spec.formula == Formula::AsNormalizer && spec.x.is_empty() {
        vec![f64::NAN]
    } else {
        spec.x.clone()
    };
    let mut rows = Vec::with_capacity(xs.len() * spec.n.len());
    for &n in &spec.n {
        for &x in &xs {
            rows.push(GridRow {
                n,
                x,
                value: evaluate(spec.formula, x, n, &spec.params)?,
            });
        }
    }
    Ok(rows)
}

/// `n,x,applicable,value,terms,reason`; terms as `name=value` joined by `;`.
pub fn write_grid_csv<W: Write>(rows: &[GridRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(["n", "x", "applicable", "value", "terms", "reason"])
        .map_err(err)?;
    for row in rows {
        let (app, value, terms, reason) = match &row.value {
            BoundValue::Value { total, terms, .. } => (
                "true",
                format!("{total:e}"),
                terms
                    .iter()
                    .map(|t| format!("{}={:e}", t.name, t.value))
                    .collect::<Vec<_>>()
                    .join(";"),
                String::new(),
            ),
            BoundValue::NotApplicable { reason } => {
                ("false", String::new(), String::new(), reason.clone())
            }
        };
        w.write_record([
            row.n.to_string(),
            format!("{:e}", row.x),
            app.into(),
            value,
            terms,
            reason,
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
