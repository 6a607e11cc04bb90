//! Slowly varying functions, de Bruijn conjugates and regularly varying
//! normalizing sequences.
//!
//! All logarithms go through [`safe_log`], the natural logarithm of
//! `max{x, e}`, so every `log` and `log log` factor is at least one and the
//! functions are defined (and positive) on the whole half line.

use crate::error::{LabError, Result};
use std::f64::consts::E;
use std::fmt;
use std::str::FromStr;

/// `e^e`, the point beyond which `log log x` leaves its floor of one.
pub const E_POW_E: f64 = 15.154_262_241_479_262;

/// Natural logarithm of `max{x, e}`.
pub fn safe_log(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(LabError::Domain(format!("safe_log needs x >= 0, got {x}")));
    }
    Ok(slog(x))
}

#[inline]
pub(crate) fn slog(x: f64) -> f64 {
    if x <= E {
        1.0
    } else {
        x.ln()
    }
}

#[inline]
pub(crate) fn sloglog(x: f64) -> f64 {
    slog(slog(x))
}

/// Right derivative of `slog`.
#[inline]
fn dslog(x: f64) -> f64 {
    if x >= E {
        1.0 / x
    } else {
        0.0
    }
}

/// Right derivative of `sloglog`.
#[inline]
fn dsloglog(x: f64) -> f64 {
    if x >= E_POW_E {
        1.0 / (x * x.ln())
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SvKind {
    One,
    LogPow(f64),
    LogLogPow(f64),
    Product(Vec<SlowlyVarying>),
    /// Grid of `(x, L(x))` with strictly increasing positive `x`, interpolated
    /// linearly in `(log x, log L)`.
    Tabulated(Vec<(f64, f64)>),
}

/// A slowly varying function together with the threshold `A` beyond which it
/// is smooth (and, where applicable, monotone).
#[derive(Debug, Clone, PartialEq)]
pub struct SlowlyVarying {
    kind: SvKind,
    floor: f64,
}

impl SlowlyVarying {
    pub fn one() -> Self {
        SlowlyVarying { kind: SvKind::One, floor: 1.0 }
    }

    pub fn log_pow(gamma: f64) -> Self {
        SlowlyVarying { kind: SvKind::LogPow(gamma), floor: E }
    }

    pub fn loglog_pow(gamma: f64) -> Self {
        SlowlyVarying { kind: SvKind::LogLogPow(gamma), floor: E_POW_E }
    }

    pub fn product(factors: Vec<SlowlyVarying>) -> Self {
        let floor = factors.iter().map(|f| f.floor).fold(1.0, f64::max);
        SlowlyVarying { kind: SvKind::Product(factors), floor }
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(LabError::Validation("tabulated function needs at least two points".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(LabError::Validation(format!(
                    "tabulated x grid must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
            return Err(LabError::Validation(format!(
                "tabulated points must be finite and positive, got ({x}, {y})"
            )));
        }
        let floor = points[0].0;
        Ok(SlowlyVarying { kind: SvKind::Tabulated(points), floor })
    }

    /// Overrides the smoothness threshold `A`.
    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(LabError::Validation(format!("threshold A must be positive, got {floor}")));
        }
        self.floor = floor;
        Ok(self)
    }

    pub fn kind(&self) -> &SvKind {
        &self.kind
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn is_tabulated(&self) -> bool {
        match &self.kind {
            SvKind::Tabulated(_) => true,
            SvKind::Product(fs) => fs.iter().any(|f| f.is_tabulated()),
            _ => false,
        }
    }

    /// `L(x)` for `x >= 0`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(LabError::Domain(format!("L(x) needs x >= 0, got {x}")));
        }
        self.eval_unchecked(x)
    }

    fn eval_unchecked(&self, x: f64) -> Result<f64> {
        Ok(match &self.kind {
            SvKind::One => 1.0,
            SvKind::LogPow(g) => slog(x).powf(*g),
            SvKind::LogLogPow(g) => sloglog(x).powf(*g),
            SvKind::Product(fs) => {
                let mut acc = 1.0;
                for f in fs {
                    acc *= f.eval_unchecked(x)?;
                }
                acc
            }
            SvKind::Tabulated(pts) => interpolate_log_linear(pts, x)?,
        })
    }

    /// `L'(x)` for `x >= A`. Piecewise analytic; at the kinks of the safe
    /// logarithm the right derivative is returned.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        if self.is_tabulated() {
            return Err(LabError::Unsupported("derivative of a tabulated function".into()));
        }
        if x.is_nan() || x < self.floor {
            return Err(LabError::Domain(format!(
                "L'(x) needs x >= A = {}, got {x}",
                self.floor
            )));
        }
        Ok(self.deriv_any(x))
    }

    /// Derivative valid for any `x > 0`; callers guarantee the kind is
    /// analytic.
    pub(crate) fn deriv_any(&self, x: f64) -> f64 {
        match &self.kind {
            SvKind::One => 0.0,
            SvKind::LogPow(g) => {
                let d = dslog(x);
                if d == 0.0 {
                    0.0
                } else {
                    g * slog(x).powf(g - 1.0) * d
                }
            }
            SvKind::LogLogPow(g) => {
                let d = dsloglog(x);
                if d == 0.0 {
                    0.0
                } else {
                    g * sloglog(x).powf(g - 1.0) * d
                }
            }
            SvKind::Product(fs) => {
                let values: Vec<f64> = fs.iter().map(|f| f.eval_unchecked(x).unwrap_or(f64::NAN)).collect();
                let mut total = 0.0;
                for (i, f) in fs.iter().enumerate() {
                    let others: f64 = values
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, v)| v)
                        .product();
                    total += f.deriv_any(x) * others;
                }
                total
            }
            SvKind::Tabulated(_) => f64::NAN,
        }
    }

    /// `x L'(x) / L(x)`, defined for every `x > 0` on analytic kinds.
    pub(crate) fn log_slope(&self, x: f64) -> f64 {
        match &self.kind {
            SvKind::One => 0.0,
            SvKind::LogPow(g) => g * x * dslog(x) / slog(x),
            SvKind::LogLogPow(g) => g * x * dsloglog(x) / sloglog(x),
            SvKind::Product(fs) => fs.iter().map(|f| f.log_slope(x)).sum(),
            SvKind::Tabulated(_) => f64::NAN,
        }
    }

    /// The reciprocal `1/L`, available for the log/loglog families and their
    /// products.
    pub fn reciprocal(&self) -> Option<SlowlyVarying> {
        let kind = match &self.kind {
            SvKind::One => SvKind::One,
            SvKind::LogPow(g) => SvKind::LogPow(-g),
            SvKind::LogLogPow(g) => SvKind::LogLogPow(-g),
            SvKind::Product(fs) => {
                SvKind::Product(fs.iter().map(|f| f.reciprocal()).collect::<Option<Vec<_>>>()?)
            }
            SvKind::Tabulated(_) => return None,
        };
        Some(SlowlyVarying { kind, floor: self.floor })
    }

    /// Points where the safe logarithms inside `L` switch branches.
    pub(crate) fn kinks(&self) -> Vec<f64> {
        match &self.kind {
            SvKind::One | SvKind::Tabulated(_) => vec![],
            SvKind::LogPow(_) => vec![E],
            SvKind::LogLogPow(_) => vec![E_POW_E],
            SvKind::Product(fs) => fs.iter().flat_map(|f| f.kinks()).collect(),
        }
    }
}

fn interpolate_log_linear(pts: &[(f64, f64)], x: f64) -> Result<f64> {
    let lo = pts[0].0;
    let hi = pts[pts.len() - 1].0;
    if !(x >= lo && x <= hi) {
        return Err(LabError::Range { x, lo, hi });
    }
    let idx = pts.partition_point(|p| p.0 <= x).clamp(1, pts.len() - 1);
    let (x0, y0) = pts[idx - 1];
    let (x1, y1) = pts[idx];
    if x == x0 {
        return Ok(y0);
    }
    let t = (x.ln() - x0.ln()) / (x1.ln() - x0.ln());
    Ok((y0.ln() + t * (y1.ln() - y0.ln())).exp())
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

impl fmt::Display for SlowlyVarying {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let default_floor = match &self.kind {
            SvKind::One => 1.0,
            SvKind::LogPow(_) => E,
            SvKind::LogLogPow(_) => E_POW_E,
            SvKind::Product(fs) => fs.iter().map(|f| f.floor).fold(1.0, f64::max),
            SvKind::Tabulated(pts) => pts[0].0,
        };
        match &self.kind {
            SvKind::One => write!(f, "one")?,
            SvKind::LogPow(g) => write!(f, "logpow:{}", fmt_num(*g))?,
            SvKind::LogLogPow(g) => write!(f, "loglogpow:{}", fmt_num(*g))?,
            SvKind::Product(fs) => {
                write!(f, "product:")?;
                for (i, factor) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{factor}")?;
                }
            }
            SvKind::Tabulated(pts) => write!(f, "tabulated[{} points]", pts.len())?,
        }
        if self.floor != default_floor {
            write!(f, "@{}", fmt_num(self.floor))?;
        }
        Ok(())
    }
}

impl FromStr for SlowlyVarying {
    type Err = LabError;

    /// Parses `one`, `logpow:γ`, `loglogpow:γ` and
    /// `product:<factor>,<factor>,...`, each optionally suffixed by `@A`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (body, floor) = match s.rsplit_once('@') {
            Some((body, a)) => {
                let a: f64 = a
                    .trim()
                    .parse()
                    .map_err(|_| LabError::Parse(format!("bad threshold in slowly varying spec `{s}`")))?;
                (body, Some(a))
            }
            None => (s, None),
        };
        let parsed = if let Some(rest) = body.strip_prefix("product:") {
            let factors = rest
                .split(',')
                .map(|p| p.parse::<SlowlyVarying>())
                .collect::<Result<Vec<_>>>()?;
            if factors.is_empty() {
                return Err(LabError::Parse("product needs at least one factor".into()));
            }
            SlowlyVarying::product(factors)
        } else if body == "one" {
            SlowlyVarying::one()
        } else if let Some(g) = body.strip_prefix("logpow:") {
            SlowlyVarying::log_pow(parse_exponent(g, s)?)
        } else if let Some(g) = body.strip_prefix("loglogpow:") {
            SlowlyVarying::loglog_pow(parse_exponent(g, s)?)
        } else {
            return Err(LabError::Parse(format!("unknown slowly varying spec `{s}`")));
        };
        match floor {
            Some(a) => parsed.with_floor(a).map_err(|e| LabError::Parse(e.to_string())),
            None => Ok(parsed),
        }
    }
}

fn parse_exponent(g: &str, whole: &str) -> Result<f64> {
    let v: f64 = g
        .trim()
        .parse()
        .map_err(|_| LabError::Parse(format!("bad exponent in slowly varying spec `{whole}`")))?;
    if !v.is_finite() {
        return Err(LabError::Parse(format!("exponent must be finite in `{whole}`")));
    }
    Ok(v)
}

/// `count` points geometrically spaced from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || count < 2 {
        return Err(LabError::Validation(format!(
            "geometric grid needs 0 < lo < hi < inf and at least two points (lo={lo}, hi={hi}, count={count})"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count).map(|k| (a + step * k as f64).exp()).collect();
    grid[0] = lo;
    grid[count - 1] = hi;
    Ok(grid)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 8 {
        return Err(LabError::Precondition(format!(
            "grid needs at least 8 points, got {}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::Precondition("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// True when `values` do not increase over their last half (up to a relative
/// rounding slack).
pub(crate) fn eventually_nonincreasing(values: &[f64]) -> bool {
    let start = values.len() / 2;
    values[start..]
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalambosReport {
    /// `(x, x L'(x) / L(x))` on the grid.
    pub values: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Evaluates `r(x) = x L'(x) / L(x)` on `grid`; passes when `|r|` is
/// nonincreasing over the last half of the grid and `|r(x_max)| <= tol`.
pub fn check_galambos(spec: &SlowlyVarying, grid: &[f64], tol: f64) -> Result<GalambosReport> {
    if spec.is_tabulated() {
        return Err(LabError::Unsupported("Galambos check of a tabulated function".into()));
    }
    validate_grid(grid)?;
    if grid[0] < spec.floor() {
        return Err(LabError::Precondition(format!(
            "grid starts at {} below the threshold A = {}",
            grid[0],
            spec.floor()
        )));
    }
    let mut values = Vec::with_capacity(grid.len());
    for &x in grid {
        let r = x * spec.deriv(x)? / spec.eval(x)?;
        values.push((x, r));
    }
    let abs: Vec<f64> = values.iter().map(|(_, r)| r.abs()).collect();
    let pass = eventually_nonincreasing(&abs) && abs[abs.len() - 1] <= tol;
    Ok(GalambosReport { values, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ClosedForm,
    NumericInversion,
}

/// A de Bruijn conjugate `L̃`: either an explicit slowly varying function or
/// the pointwise solution of `t = 1 / L(x t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Conjugate {
    ClosedForm(SlowlyVarying),
    /// Holds the original `L`.
    NumericInversion(SlowlyVarying),
}

impl Conjugate {
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            Conjugate::ClosedForm(lt) => lt.eval(x),
            Conjugate::NumericInversion(l) => numeric_conjugate(l, x),
        }
    }

    pub fn provenance(&self) -> Provenance {
        match self {
            Conjugate::ClosedForm(_) => Provenance::ClosedForm,
            Conjugate::NumericInversion(_) => Provenance::NumericInversion,
        }
    }

    /// Threshold used as the normalizer cutoff.
    pub fn floor(&self) -> f64 {
        match self {
            Conjugate::ClosedForm(s) | Conjugate::NumericInversion(s) => s.floor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugatePair {
    pub l: SlowlyVarying,
    pub lt: Conjugate,
}

impl ConjugatePair {
    pub fn provenance(&self) -> Provenance {
        self.lt.provenance()
    }
}

/// Closed-form `1/L` for log and loglog powers (and products of them);
/// numeric fixed-point inversion otherwise.
pub fn de_bruijn_conjugate(spec: &SlowlyVarying) -> ConjugatePair {
    let lt = match spec.reciprocal() {
        Some(r) => Conjugate::ClosedForm(r),
        None => Conjugate::NumericInversion(spec.clone()),
    };
    ConjugatePair { l: spec.clone(), lt }
}

const FIXED_POINT_RTOL: f64 = 1e-10;
const FIXED_POINT_MAX_ITER: usize = 200;

/// Solves `t = 1 / L(x t)` by fixed-point iteration from `t = 1`, switching to
/// half-damped steps once the iterates oscillate without contracting.
pub fn numeric_conjugate(l: &SlowlyVarying, x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(LabError::Domain(format!("conjugate needs x >= 0, got {x}")));
    }
    let mut t = 1.0_f64;
    let mut prev_step = 0.0_f64;
    let mut damped = false;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let target = 1.0 / l.eval(x * t)?;
        let mut next = if damped { 0.5 * t + 0.5 * target } else { target };
        if !next.is_finite() || next <= 0.0 {
            return Err(LabError::NoConvergence { x, last: t });
        }
        let step = next - t;
        if !damped && step * prev_step < 0.0 && step.abs() >= prev_step.abs() {
            damped = true;
            next = 0.5 * t + 0.5 * target;
        }
        if (next - t).abs() <= FIXED_POINT_RTOL * next.abs() {
            return Ok(next);
        }
        prev_step = next - t;
        t = next;
    }
    Err(LabError::NoConvergence { x, last: t })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateRow {
    pub x: f64,
    pub l: f64,
    pub lt: f64,
    /// `L(x) L̃(x L(x))`
    pub forward: f64,
    /// `L̃(x) L(x L̃(x))`
    pub backward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateReport {
    pub rows: Vec<ConjugateRow>,
    pub pass: bool,
}

/// Default top-of-grid tolerance for the conjugacy ratios.
pub const CONJUGATE_TOL: f64 = 0.2;

/// Evaluates both conjugacy ratios on `grid` and checks that they approach
/// one monotonically over the last half of the grid, ending within `tol`.
pub fn verify_conjugate_pair(pair: &ConjugatePair, grid: &[f64], tol: f64) -> Result<ConjugateReport> {
    validate_grid(grid)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &x in grid {
        let l = pair.l.eval(x)?;
        let lt = pair.lt.eval(x)?;
        let (xl, xlt) = (x * l, x * lt);
        if !(xl.is_finite() && xlt.is_finite()) {
            return Err(LabError::Domain(format!(
                "grid point {x} overflows x L(x) or x L~(x); lower the top of the grid"
            )));
        }
        let forward = l * pair.lt.eval(xl)?;
        let backward = lt * pair.l.eval(xlt)?;
        rows.push(ConjugateRow { x, l, lt, forward, backward });
    }
    let dev_f: Vec<f64> = rows.iter().map(|r| (r.forward - 1.0).abs()).collect();
    let dev_b: Vec<f64> = rows.iter().map(|r| (r.backward - 1.0).abs()).collect();
    let last = rows.len() - 1;
    let pass = eventually_nonincreasing(&dev_f)
        && eventually_nonincreasing(&dev_b)
        && dev_f[last] <= tol
        && dev_b[last] <= tol;
    Ok(ConjugateReport { rows, pass })
}

/// The normalizing sequence `b_n = n^α L̃(max(n, A)^α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    alpha: f64,
    p: f64,
    lt: Conjugate,
    cutoff: f64,
}

impl Normalizer {
    pub fn new(alpha: f64, p: f64, lt: Conjugate, cutoff: f64) -> Result<Self> {
        if !(1.0..2.0).contains(&p) {
            return Err(LabError::Precondition(format!("p must lie in [1, 2), got {p}")));
        }
        if !(alpha.is_finite() && alpha >= 1.0 / p - 1e-12) {
            return Err(LabError::Precondition(format!("alpha must be >= 1/p = {}, got {alpha}", 1.0 / p)));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(LabError::Precondition(format!("cutoff A must be positive, got {cutoff}")));
        }
        Ok(Normalizer { alpha, p, lt, cutoff })
    }

    /// Normalizer with `L̃ ≡ 1` and `A = 1`, i.e. `b_n = n^α`.
    pub fn power(alpha: f64, p: f64) -> Result<Self> {
        Normalizer::new(alpha, p, Conjugate::ClosedForm(SlowlyVarying::one()), 1.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn conjugate(&self) -> &Conjugate {
        &self.lt
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn b(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(LabError::Domain("b_n is defined for n >= 1".into()));
        }
        let nf = n as f64;
        let arg = if nf < self.cutoff { self.cutoff } else { nf };
        Ok(nf.powf(self.alpha) * self.lt.eval(arg.powf(self.alpha))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn safe_log_examples() {
        assert_eq!(safe_log(0.0).unwrap(), 1.0);
        assert_eq!(safe_log(1.0).unwrap(), 1.0);
        assert!(close(safe_log(E * E).unwrap(), 2.0, 1e-15));
        assert!(matches!(safe_log(-1e-9), Err(LabError::Domain(_))));
    }

    #[test]
    fn eval_examples() {
        let x = 3.0_f64.exp();
        assert!(close(SlowlyVarying::log_pow(2.0).eval(x).unwrap(), 9.0, 1e-14));
        assert_eq!(SlowlyVarying::one().eval(1e6).unwrap(), 1.0);
        let x = (E * E).exp();
        assert!(close(SlowlyVarying::loglog_pow(1.0).eval(x).unwrap(), 2.0, 1e-14));
        assert!(SlowlyVarying::one().eval(-1.0).is_err());
    }

    #[test]
    fn product_multiplies_factors() {
        let p = SlowlyVarying::product(vec![SlowlyVarying::log_pow(1.0), SlowlyVarying::loglog_pow(2.0)]);
        let x: f64 = 1e40;
        let expect = x.ln() * x.ln().ln().powi(2);
        assert!(close(p.eval(x).unwrap(), expect, 1e-14));
        assert_eq!(p.floor(), E_POW_E);
    }

    #[test]
    fn tabulated_interpolates_and_refuses_extrapolation() {
        let t = SlowlyVarying::tabulated(vec![(1.0, 1.0), (100.0, 4.0)]).unwrap();
        assert!(close(t.eval(10.0).unwrap(), 2.0, 1e-14));
        assert_eq!(t.eval(100.0).unwrap(), 4.0);
        assert!(matches!(t.eval(100.5), Err(LabError::Range { .. })));
        assert!(matches!(t.eval(0.5), Err(LabError::Range { .. })));
        assert!(matches!(t.deriv(10.0), Err(LabError::Unsupported(_))));
        assert!(SlowlyVarying::tabulated(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn derivative_examples() {
        let x = E * E;
        assert!(close(SlowlyVarying::log_pow(1.0).deriv(x).unwrap(), 1.0 / x, 1e-14));
        assert_eq!(SlowlyVarying::one().deriv(123.0).unwrap(), 0.0);
        // At the kink x = e the right derivative is returned; compare with a
        // one-sided difference.
        let d = SlowlyVarying::log_pow(2.0).deriv(E).unwrap();
        assert!(close(d, 2.0 / E, 1e-14));
        let h = 1e-7;
        let l = SlowlyVarying::log_pow(2.0);
        let fd = (l.eval(E + h).unwrap() - l.eval(E).unwrap()) / h;
        assert!(close(d, fd, 1e-6));
        assert!(matches!(SlowlyVarying::log_pow(1.0).deriv(1.0), Err(LabError::Domain(_))));
    }

    #[test]
    fn galambos_examples() {
        let x = 10.0_f64.exp();
        let l = SlowlyVarying::log_pow(1.0);
        let r = x * l.deriv(x).unwrap() / l.eval(x).unwrap();
        assert!(close(r, 0.1, 1e-13));
        let x = 3.0_f64.exp().exp();
        let l = SlowlyVarying::loglog_pow(1.0);
        let r = x * l.deriv(x).unwrap() / l.eval(x).unwrap();
        assert!(close(r, 1.0 / (3.0_f64.exp() * 3.0), 1e-12));

        let grid = geometric_grid(1.0, 1e300, 32).unwrap();
        let rep = check_galambos(&SlowlyVarying::one(), &grid, 1e-3).unwrap();
        assert!(rep.pass);
        assert!(rep.values.iter().all(|(_, r)| *r == 0.0));
    }

    #[test]
    fn galambos_passes_for_builtin_kinds() {
        let specs = [
            SlowlyVarying::log_pow(2.0),
            SlowlyVarying::log_pow(-1.0),
            SlowlyVarying::loglog_pow(0.5),
            SlowlyVarying::loglog_pow(-2.0),
            SlowlyVarying::product(vec![SlowlyVarying::log_pow(1.0), SlowlyVarying::loglog_pow(-1.0)]),
        ];
        for spec in specs {
            let grid = geometric_grid(spec.floor(), 1e300, 40).unwrap();
            let rep = check_galambos(&spec, &grid, 0.05).unwrap();
            assert!(rep.pass, "{spec}");
        }
    }

    #[test]
    fn galambos_rejects_bad_grids() {
        let l = SlowlyVarying::log_pow(1.0);
        assert!(matches!(check_galambos(&l, &[3.0, 4.0, 5.0], 0.1), Err(LabError::Precondition(_))));
        let grid = geometric_grid(1.0, 1e10, 10).unwrap();
        assert!(matches!(check_galambos(&l, &grid, 0.1), Err(LabError::Precondition(_))));
    }

    #[test]
    fn conjugate_examples() {
        let pair = de_bruijn_conjugate(&SlowlyVarying::log_pow(2.0));
        assert_eq!(pair.lt, Conjugate::ClosedForm(SlowlyVarying::log_pow(-2.0)));
        let pair = de_bruijn_conjugate(&SlowlyVarying::one());
        assert_eq!(pair.lt, Conjugate::ClosedForm(SlowlyVarying::one()));
        let p = 1.5;
        let pair = de_bruijn_conjugate(&SlowlyVarying::loglog_pow(2.0 * (1.0 - p) / p));
        let x: f64 = 1e50;
        let expect = x.ln().ln().powf(2.0 / 3.0);
        assert!(close(pair.lt.eval(x).unwrap(), expect, 1e-12));
        let tab = SlowlyVarying::tabulated(vec![(1.0, 1.0), (1e10, 2.0)]).unwrap();
        assert_eq!(de_bruijn_conjugate(&tab).provenance(), Provenance::NumericInversion);
    }

    #[test]
    fn conjugate_ratio_examples() {
        let pair = de_bruijn_conjugate(&SlowlyVarying::log_pow(1.0));
        let grid = geometric_grid(100.0_f64.exp(), 700.0_f64.exp(), 8).unwrap();
        let rep = verify_conjugate_pair(&pair, &grid, CONJUGATE_TOL).unwrap();
        assert!(close(rep.rows[0].forward, 100.0 / (100.0 + 100.0_f64.ln()), 1e-12));
        assert!(close(rep.rows[7].forward, 700.0 / (700.0 + 700.0_f64.ln()), 1e-12));
        assert!((rep.rows[7].forward - 0.99073).abs() < 1e-5);

        let one = de_bruijn_conjugate(&SlowlyVarying::one());
        let grid = geometric_grid(1.0, 1e300, 16).unwrap();
        let rep = verify_conjugate_pair(&one, &grid, CONJUGATE_TOL).unwrap();
        assert!(rep.pass);
        assert!(rep.rows.iter().all(|r| r.forward == 1.0 && r.backward == 1.0));
    }

    #[test]
    fn conjugate_ratio_rejects_overflow() {
        let pair = de_bruijn_conjugate(&SlowlyVarying::log_pow(2.0));
        let grid = geometric_grid(1e2, 1.7e308, 16).unwrap();
        assert!(matches!(verify_conjugate_pair(&pair, &grid, 0.2), Err(LabError::Domain(_))));
    }

    #[test]
    fn numeric_inversion_solves_its_equation() {
        let l = SlowlyVarying::log_pow(2.0);
        for &x in &[10.0, 1e5, 1e50, 1e300] {
            let t = numeric_conjugate(&l, x).unwrap();
            assert!(close(t * l.eval(x * t).unwrap(), 1.0, 1e-9), "x = {x}");
        }
        assert_eq!(numeric_conjugate(&SlowlyVarying::one(), 1e9).unwrap(), 1.0);
    }

    #[test]
    fn numeric_inversion_reports_range_errors() {
        let tab = SlowlyVarying::tabulated(vec![(1.0, 1.0), (10.0, 2.0)]).unwrap();
        assert!(matches!(numeric_conjugate(&tab, 1e6), Err(LabError::Range { .. })));
    }

    #[test]
    fn normalizer_examples() {
        let b = Normalizer::power(2.0 / 3.0, 1.5).unwrap();
        assert!(close(b.b(64).unwrap(), 16.0, 1e-14));
        let b = Normalizer::power(1.0, 1.0).unwrap();
        assert!(close(b.b(1_000_000).unwrap(), 1e6, 1e-15));
        let lt = Conjugate::ClosedForm(SlowlyVarying::loglog_pow(2.0 / 3.0));
        let b = Normalizer::new(2.0 / 3.0, 1.5, lt, E).unwrap();
        let x = 4096.0_f64.powf(2.0 / 3.0);
        let expect = x * x.ln().ln().powf(2.0 / 3.0);
        assert!(close(b.b(4096).unwrap(), expect, 1e-14));
        assert!((b.b(4096).unwrap() - 366.49).abs() < 0.01);
        assert!(Normalizer::power(0.5, 1.5).is_err());
        assert!(Normalizer::power(1.0, 2.0).is_err());
    }

    #[test]
    fn normalizer_strictly_increasing() {
        let configs = [
            Normalizer::power(2.0 / 3.0, 1.5).unwrap(),
            Normalizer::power(1.0, 1.0).unwrap(),
            Normalizer::new(2.0 / 3.0, 1.5, Conjugate::ClosedForm(SlowlyVarying::loglog_pow(2.0 / 3.0)), E)
                .unwrap(),
            Normalizer::new(1.0, 1.0, Conjugate::ClosedForm(SlowlyVarying::log_pow(-1.0)), E).unwrap(),
        ];
        for norm in configs {
            let mut prev = 0.0;
            for n in 1..=(1u64 << 20) {
                let b = norm.b(n).unwrap();
                assert!(b > prev, "n = {n}");
                prev = b;
            }
        }
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["one", "logpow:2", "loglogpow:-0.6667", "product:logpow:1,loglogpow:2", "logpow:-1@10"] {
            let spec: SlowlyVarying = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("logpow:x".parse::<SlowlyVarying>().is_err());
        assert!("sqrt".parse::<SlowlyVarying>().is_err());
    }

    proptest! {
        #[test]
        fn safe_log_is_monotone_and_at_least_one(a in 0.0f64..1e300, b in 0.0f64..1e300) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (la, lb) = (safe_log(lo).unwrap(), safe_log(hi).unwrap());
            prop_assert!(la >= 1.0 && lb >= 1.0);
            prop_assert!(la <= lb);
        }

        #[test]
        fn derivative_matches_central_difference(
            gamma in -3.0f64..3.0,
            log_x in 3.5f64..600.0,
            which in 0usize..3,
        ) {
            let spec = match which {
                0 => SlowlyVarying::log_pow(gamma),
                1 => SlowlyVarying::loglog_pow(gamma),
                _ => SlowlyVarying::product(vec![SlowlyVarying::log_pow(gamma), SlowlyVarying::loglog_pow(1.0)]),
            };
            let x = log_x.exp();
            prop_assume!(x >= spec.floor() * 1.01 && gamma.abs() > 0.1);
            let h = x * 1e-3;
            let fd = (spec.eval(x + h).unwrap() - spec.eval(x - h).unwrap()) / (2.0 * h);
            let d = spec.deriv(x).unwrap();
            prop_assert!((d - fd).abs() <= 1e-5 * d.abs().max(1e-300) + 1e-14 * spec.eval(x).unwrap() / x,
                "d = {}, fd = {}", d, fd);
        }

        #[test]
        fn slow_variation_trend(gamma in -2.0f64..2.0, lambda in 0.1f64..10.0) {
            let spec = SlowlyVarying::log_pow(gamma);
            let devs: Vec<f64> = (10..40)
                .map(|k| {
                    let x = 2.0f64.powi(k * 25);
                    (spec.eval(lambda * x).unwrap() / spec.eval(x).unwrap() - 1.0).abs()
                })
                .collect();
            prop_assert!(eventually_nonincreasing(&devs));
            prop_assert!(devs[devs.len() - 1] < 0.01);
        }
    }
}
