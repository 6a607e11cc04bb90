//! Dominating tails and moments computed from tail integrals.
//!
//! A nonnegative `ξ` and a function `g` with `g(0) = 0` that is absolutely
//! continuous satisfy, for any cutoff `A >= 0`,
//!
//! ```text
//! E g(ξ) = ∫_0^A g'(x) (P(ξ > x) - P(ξ > A)) dx + g(A) P(ξ > A) + ∫_A^∞ g'(x) P(ξ > x) dx
//! ```
//!
//! The first term is `E g(ξ) 1(ξ <= A)`. [`moment_via_tail`] evaluates the
//! three terms separately and flags improper integrals that diverge.

use crate::counterexample::CounterexampleFamily;
use crate::error::{LabError, Result};
use crate::law::Law;
use crate::quadrature::{integrate, Tolerance};
use crate::rv_funcs::{geometric_grid, slog, sloglog, SlowlyVarying, E_POW_E};
use crate::stats::least_squares;
use std::f64::consts::E;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Default integration ceiling.
pub const DEFAULT_UPPER: f64 = 1e300;
/// Running integrals beyond this are reported as divergent.
pub const DIVERGENCE_CAP: f64 = 1e12;
/// Panels switch to the variable `u = ln x` beyond this point.
const LOG_SWITCH: f64 = 1_125_899_906_842_624.0; // 2^50

/// `P(|X| > t)` for `t >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum TailFunction {
    /// Tail of `|X|` for a closed-form law of `X`.
    ClosedForm(Law),
    /// Piecewise-linear interpolation of `(t, P(|X| > t))`, starting at
    /// `t = 0`.
    Tabulated(Vec<(f64, f64)>),
    Supremum(Vec<TailFunction>),
}

impl TailFunction {
    pub fn closed_form(law: Law) -> Result<Self> {
        law.validate()?;
        Ok(TailFunction::ClosedForm(law))
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |m: &str| Err(LabError::Validation(format!("tabulated tail: {m}")));
        if points.len() < 2 {
            return bad("needs at least two points");
        }
        if points[0].0 != 0.0 {
            return bad("first point must be at t = 0");
        }
        if points.iter().any(|&(t, s)| !t.is_finite() || !(0.0..=1.0).contains(&s)) {
            return bad("values must lie in [0, 1] at finite t");
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0) || w[1].1 > w[0].1) {
            return bad("t must increase strictly and values must not increase");
        }
        Ok(TailFunction::Tabulated(points))
    }

    pub fn supremum(members: Vec<TailFunction>) -> Result<Self> {
        dominating_tail(&members)
    }

    /// `P(|X| > t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t.is_nan() {
            return Err(LabError::Domain("tail evaluated at NaN".into()));
        }
        if t < 0.0 {
            return Ok(1.0);
        }
        Ok(match self {
            TailFunction::ClosedForm(law) => (law.sf(t) + law.negative_part().sf(t)).min(1.0),
            TailFunction::Tabulated(pts) => {
                let (t_last, s_last) = pts[pts.len() - 1];
                if t >= t_last {
                    if s_last == 0.0 {
                        return Ok(0.0);
                    }
                    return Err(LabError::Range { x: t, lo: 0.0, hi: t_last });
                }
                let idx = pts.partition_point(|p| p.0 <= t);
                let (t0, s0) = pts[idx - 1];
                let (t1, s1) = pts[idx];
                s0 + (s1 - s0) * (t - t0) / (t1 - t0)
            }
            TailFunction::Supremum(ms) => {
                let mut best = 0.0f64;
                for m in ms {
                    best = best.max(m.eval(t)?);
                }
                best
            }
        })
    }

    /// `ln P(|X| > t)`, accurate where the tail underflows.
    pub fn ln_eval(&self, t: f64) -> Result<f64> {
        match self {
            TailFunction::ClosedForm(law) if t >= 0.0 => {
                let a = law.ln_sf(t);
                let b = law.negative_part().ln_sf(t);
                let m = a.max(b);
                if m == f64::NEG_INFINITY {
                    return Ok(m);
                }
                Ok((m + ((a - m).exp() + (b - m).exp()).ln()).min(0.0))
            }
            TailFunction::Supremum(ms) if t >= 0.0 => {
                let mut best = f64::NEG_INFINITY;
                for m in ms {
                    best = best.max(m.ln_eval(t)?);
                }
                Ok(best)
            }
            _ => Ok(self.eval(t)?.ln()),
        }
    }

    /// Points where the tail may fail to be smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            TailFunction::ClosedForm(law) => {
                let mut pts = law.breakpoints();
                pts.extend(law.negative_part().breakpoints());
                pts.into_iter().filter(|&t| t > 0.0).collect()
            }
            TailFunction::Tabulated(pts) => pts.iter().map(|p| p.0).collect(),
            TailFunction::Supremum(ms) => ms.iter().flat_map(|m| m.breakpoints()).collect(),
        }
    }

    /// Smallest `t` with `P(|X| > t) = 0`, when the support is bounded.
    fn support_end(&self) -> Option<f64> {
        match self {
            TailFunction::ClosedForm(Law::Uniform { lo, hi }) => Some(hi.abs().max(lo.abs())),
            TailFunction::ClosedForm(Law::Atoms(a)) => Some(a.iter().map(|x| x.0.abs()).fold(0.0, f64::max)),
            TailFunction::ClosedForm(_) => None,
            TailFunction::Tabulated(pts) => {
                let last = pts[pts.len() - 1];
                (last.1 == 0.0).then(|| pts.iter().find(|p| p.1 == 0.0).map_or(last.0, |p| p.0))
            }
            TailFunction::Supremum(ms) => {
                let mut end = 0.0f64;
                for m in ms {
                    end = end.max(m.support_end()?);
                }
                Some(end)
            }
        }
    }
}

/// Pointwise supremum of a nonempty family of tails.
pub fn dominating_tail(family: &[TailFunction]) -> Result<TailFunction> {
    match family {
        [] => Err(LabError::Precondition("dominating tail of an empty family".into())),
        [one] => Ok(one.clone()),
        _ => {
            let mut flat = Vec::new();
            for m in family {
                match m {
                    TailFunction::Supremum(inner) => flat.extend(inner.iter().cloned()),
                    other => flat.push(other.clone()),
                }
            }
            Ok(TailFunction::Supremum(flat))
        }
    }
}

impl fmt::Display for TailFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailFunction::ClosedForm(law) => match law {
                Law::Normal { mu, sigma } => write!(f, "normal:mu={mu},sigma={sigma}"),
                Law::FoldedNormal { mu, sigma } => write!(f, "foldednormal:mu={mu},sigma={sigma}"),
                Law::Uniform { lo, hi } => write!(f, "uniform:lo={lo},hi={hi}"),
                Law::Pareto { alpha, scale } => write!(f, "pareto:alpha={alpha},scale={scale}"),
                Law::Exponential { rate } => write!(f, "exp:{rate}"),
                Law::Atoms(a) => {
                    let parts: Vec<String> = a.iter().map(|(x, w)| format!("{x}/{w}")).collect();
                    write!(f, "atoms:{}", parts.join(","))
                }
            },
            TailFunction::Tabulated(pts) => {
                let parts: Vec<String> = pts.iter().map(|(t, s)| format!("{t}/{s}")).collect();
                write!(f, "table:{}", parts.join(","))
            }
            TailFunction::Supremum(ms) => {
                let parts: Vec<String> = ms.iter().map(|m| m.to_string()).collect();
                write!(f, "sup:{}", parts.join(","))
            }
        }
    }
}

/// Splits `a=1,b=2` or `1,2` style argument lists against `names`.
fn named_args(whole: &str, args: &str, names: &[&str], defaults: &[Option<f64>]) -> Result<Vec<f64>> {
    let mut out: Vec<Option<f64>> = defaults.to_vec();
    if !args.is_empty() {
        for (pos, tok) in args.split(',').enumerate() {
            let (slot, val) = match tok.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim();
                    let slot = names
                        .iter()
                        .position(|n| *n == k)
                        .ok_or_else(|| LabError::Parse(format!("unknown parameter `{k}` in `{whole}`")))?;
                    (slot, v)
                }
                None if pos < names.len() => (pos, tok),
                None => return Err(LabError::Parse(format!("too many parameters in `{whole}`"))),
            };
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|_| LabError::Parse(format!("bad number `{}` in `{whole}`", val.trim())))?;
            out[slot] = Some(v);
        }
    }
    out.into_iter()
        .zip(names)
        .map(|(v, n)| v.ok_or_else(|| LabError::Parse(format!("missing parameter `{n}` in `{whole}`"))))
        .collect()
}

fn pairs(whole: &str, args: &str) -> Result<Vec<(f64, f64)>> {
    args.split(',')
        .map(|tok| {
            let (a, b) = tok
                .split_once('/')
                .ok_or_else(|| LabError::Parse(format!("expected `x/y` pairs in `{whole}`")))?;
            let p = |s: &str| s.trim().parse::<f64>().map_err(|_| LabError::Parse(format!("bad number `{s}` in `{whole}`")));
            Ok((p(a)?, p(b)?))
        })
        .collect()
}

/// True when `tok` opens a new member of a `sup:` list.
fn starts_member(tok: &str) -> bool {
    let head = tok.split(':').next().unwrap_or("");
    !head.is_empty() && head.chars().all(|c| c.is_ascii_alphabetic())
}

impl FromStr for TailFunction {
    type Err = LabError;

    /// Grammar: `exp[:rate]`, `pareto:alpha=a[,scale=s]`, `uniform:lo,hi`,
    /// `normal[:mu,sigma]`, `foldednormal:mu,sigma`, `atoms:x/w,...`,
    /// `table:t/s,...` and `sup:member,member,...`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let law = match name {
            "exp" => Law::Exponential { rate: named_args(s, args, &["rate"], &[Some(1.0)])?[0] },
            "pareto" => {
                let v = named_args(s, args, &["alpha", "scale"], &[None, Some(1.0)])?;
                Law::Pareto { alpha: v[0], scale: v[1] }
            }
            "uniform" => {
                let v = named_args(s, args, &["lo", "hi"], &[Some(0.0), Some(1.0)])?;
                Law::Uniform { lo: v[0], hi: v[1] }
            }
            "normal" => {
                let v = named_args(s, args, &["mu", "sigma"], &[Some(0.0), Some(1.0)])?;
                Law::Normal { mu: v[0], sigma: v[1] }
            }
            "foldednormal" => {
                let v = named_args(s, args, &["mu", "sigma"], &[Some(0.0), Some(1.0)])?;
                Law::FoldedNormal { mu: v[0], sigma: v[1] }
            }
            "atoms" => Law::Atoms(pairs(s, args)?),
            "table" => return TailFunction::tabulated(pairs(s, args)?),
            "sup" => {
                let mut members: Vec<String> = Vec::new();
                for tok in args.split(',') {
                    match members.last_mut() {
                        Some(last) if !starts_member(tok) => {
                            last.push(',');
                            last.push_str(tok);
                        }
                        _ => members.push(tok.to_string()),
                    }
                }
                let parsed = members.iter().map(|m| m.parse()).collect::<Result<Vec<TailFunction>>>()?;
                if parsed.is_empty() || args.is_empty() {
                    return Err(LabError::Parse(format!("`{s}` has no members")));
                }
                return dominating_tail(&parsed);
            }
            _ => return Err(LabError::Parse(format!("unknown tail `{s}`"))),
        };
        TailFunction::closed_form(law)
    }
}

/// Extra logarithmic factor multiplying `x^p L^p(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogWeight {
    None,
    /// `log x · log² log x`.
    LogLogLog2,
    /// `log x · log log x`.
    LogLogLog1,
}

impl LogWeight {
    fn eval(self, x: f64) -> f64 {
        match self {
            LogWeight::None => 1.0,
            LogWeight::LogLogLog2 => slog(x) * sloglog(x) * sloglog(x),
            LogWeight::LogLogLog1 => slog(x) * sloglog(x),
        }
    }

    /// `x w'(x) / w(x)` (right derivative at the kinks).
    fn log_slope(self, x: f64) -> f64 {
        let k = match self {
            LogWeight::None => return 0.0,
            LogWeight::LogLogLog2 => 2.0,
            LogWeight::LogLogLog1 => 1.0,
        };
        if x < E {
            return 0.0;
        }
        let l = x.ln();
        if x < E_POW_E {
            1.0 / l
        } else {
            1.0 / l + k / (l * l.ln())
        }
    }
}

impl fmt::Display for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogWeight::None => "none",
            LogWeight::LogLogLog2 => "loglog2",
            LogWeight::LogLogLog1 => "loglog1",
        })
    }
}

impl FromStr for LogWeight {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(LogWeight::None),
            "loglog2" => Ok(LogWeight::LogLogLog2),
            "loglog1" => Ok(LogWeight::LogLogLog1),
            other => Err(LabError::Parse(format!("unknown weight `{other}` (none, loglog2, loglog1)"))),
        }
    }
}

/// `g(x) = x^p L^p(x) w(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentFunctional {
    p: f64,
    l: SlowlyVarying,
    weight: LogWeight,
    cutoff: f64,
}

impl MomentFunctional {
    /// The cutoff is the regularity threshold of `L` for exponent `p`, past
    /// which `g` is strictly increasing.
    pub fn new(p: f64, l: SlowlyVarying, weight: LogWeight) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(LabError::Validation(format!("moment exponent must be positive, got {p}")));
        }
        if l.is_tabulated() {
            return Err(LabError::Unsupported("moment functionals need an analytic L".into()));
        }
        let cutoff = regularity_threshold(&l, p)?;
        Ok(MomentFunctional { p, l, weight, cutoff })
    }

    pub fn power(p: f64) -> Result<Self> {
        Self::new(p, SlowlyVarying::one(), LogWeight::None)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn l(&self) -> &SlowlyVarying {
        &self.l
    }

    pub fn weight(&self) -> LogWeight {
        self.weight
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Same `p` and `L` with another weight.
    pub fn with_weight(&self, weight: LogWeight) -> Self {
        MomentFunctional { weight, ..self.clone() }
    }

    pub fn ln_g(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.p * (x.ln() + self.l.eval(x).unwrap_or(f64::NAN).ln()) + self.weight.eval(x).ln()
    }

    pub fn g(&self, x: f64) -> f64 {
        self.ln_g(x).exp()
    }

    /// `x g'(x) / g(x)`.
    fn log_slope(&self, x: f64) -> f64 {
        self.p * (1.0 + self.l.log_slope(x)) + self.weight.log_slope(x)
    }

    /// `g'(x) P(ξ > x)` for `x > 0`, assembled in log space.
    fn density(&self, tail: &TailFunction, x: f64) -> Result<f64> {
        let c = self.log_slope(x);
        let ln_s = tail.ln_eval(x)?;
        if c == 0.0 || ln_s == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        Ok(c.signum() * (self.ln_g(x) - x.ln() + c.abs().ln() + ln_s).exp())
    }

    fn kinks(&self) -> Vec<f64> {
        let mut k = self.l.kinks();
        if self.weight != LogWeight::None {
            k.extend([E, E_POW_E]);
        }
        k
    }
}

impl fmt::Display for MomentFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p={},L={},weight={}", self.p, self.l, self.weight)
    }
}

/// First point of a geometric grid on `[1, 10^300]` beyond which
/// `|x L'(x) / L(x)| <= p / 2` at every later grid point. Past it
/// `g(x) = x^p L^p(x)` has `x g'/g >= p/2 > 0`.
pub fn regularity_threshold(l: &SlowlyVarying, p: f64) -> Result<f64> {
    if l.is_tabulated() {
        return Err(LabError::Unsupported("regularity threshold of a tabulated function".into()));
    }
    let grid = geometric_grid(1.0, 1e300, 14_000)?;
    let mut start = None;
    for (i, &x) in grid.iter().enumerate().rev() {
        if l.log_slope(x).abs() <= 0.5 * p {
            start = Some(i);
        } else {
            break;
        }
    }
    match start {
        Some(i) => Ok(grid[i].max(l.floor())),
        None => Err(LabError::Precondition(format!(
            "|x L'(x)/L(x)| exceeds p/2 = {} at 1e300 for L = {l}",
            0.5 * p
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    /// `E g(ξ)`, or `+∞` when divergence was detected.
    pub value: f64,
    pub diverged: bool,
    /// `E g(ξ) 1(ξ <= A)`.
    pub below: f64,
    /// `g(A) P(ξ > A)`.
    pub at_cutoff: f64,
    /// `∫_A^upper g'(x) P(ξ > x) dx`, possibly stopped early.
    pub above: f64,
    /// Local decay exponent of the integrand over the last decade.
    pub decay_exponent: Option<f64>,
    pub panels: usize,
}

/// Panels far out in the tail only need accuracy relative to the running
/// total; their integrands carry rounding from `exp` of large logarithms.
fn panel_tolerance(running: f64) -> Tolerance {
    Tolerance { abs: (1e-14 * running.abs()).max(1e-300), rel: 1e-11, max_intervals: 2000 }
}

fn integrate_x<F: Fn(f64) -> Result<f64>>(f: &F, a: f64, b: f64, running: f64) -> Result<f64> {
    let err = std::cell::Cell::new(None);
    let r = integrate(
        |x| match f(x) {
            Ok(v) => v,
            Err(e) => {
                err.set(Some(e));
                0.0
            }
        },
        a,
        b,
        panel_tolerance(running),
    )?;
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(r.value)
}

/// `E g(ξ)` for `ξ` with tail `tail`, split at the cutoff `A`.
///
/// `[A, upper]` is cut at every kink of `g` and breakpoint of the tail, then
/// into doubling panels up to `2^50` and unit panels in `u = ln x` beyond.
/// The integral is declared divergent when its running value exceeds
/// [`DIVERGENCE_CAP`] or when the integrand decays no faster than `1/x` over
/// the last decade below `upper`.
pub fn moment_via_tail(g: &MomentFunctional, tail: &TailFunction, a: f64, upper: f64) -> Result<MomentReport> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(LabError::Precondition(format!("cutoff must be finite and >= 0, got {a}")));
    }
    if !(upper > a.max(10.0) && upper.is_finite()) {
        return Err(LabError::Precondition(format!("ceiling {upper} must exceed max(A, 10) = {}", a.max(10.0))));
    }
    let mut edges: Vec<f64> = g.kinks();
    edges.extend(tail.breakpoints());
    let support_end = tail.support_end();

    // E g(ξ) 1(ξ <= A) = ∫_0^A g'(x) (S(x) - S(A)) dx.
    let s_a = tail.eval(a)?;
    let mut below = 0.0;
    let mut panels = 0;
    if a > 0.0 {
        let mut cuts: Vec<f64> = edges.iter().copied().filter(|&t| t > 0.0 && t < a).collect();
        cuts.push(0.0);
        cuts.push(a);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let f = |x: f64| -> Result<f64> {
            let c = g.log_slope(x);
            Ok(g.g(x) / x * c * (tail.eval(x)? - s_a))
        };
        for w in cuts.windows(2) {
            below += integrate_x(&f, w[0], w[1], below)?;
            panels += 1;
        }
    }
    let at_cutoff = if a > 0.0 && s_a > 0.0 { g.g(a) * s_a } else { 0.0 };

    let mut cuts: Vec<f64> = edges.into_iter().filter(|&t| t > a && t < upper).collect();
    cuts.push(a);
    if a < 1.0 {
        cuts.push(1.0);
    }
    let mut x = 2.0;
    while x <= LOG_SWITCH {
        if x > a {
            cuts.push(x);
        }
        x *= 2.0;
    }
    let mut u = a.max(LOG_SWITCH).ln().floor() + 1.0;
    while u < upper.ln() {
        cuts.push(u.exp());
        u += 1.0;
    }
    cuts.push(upper);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let dens = |x: f64| g.density(tail, x);
    let dens_u = |u: f64| -> Result<f64> {
        let x = u.exp();
        Ok(x * g.density(tail, x)?)
    };
    let mut above = 0.0;
    let mut diverged = false;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if support_end.is_some_and(|e| lo >= e) || tail.ln_eval(lo)? == f64::NEG_INFINITY {
            break;
        }
        let running = below + at_cutoff + above;
        above += if lo >= LOG_SWITCH {
            integrate_x(&dens_u, lo.ln(), hi.ln(), running)?
        } else {
            integrate_x(&dens, lo, hi, running)?
        };
        panels += 1;
        if above > DIVERGENCE_CAP {
            diverged = true;
            break;
        }
    }

    let decay_exponent = if diverged {
        None
    } else {
        let (lo, hi) = (upper / 10.0, upper);
        let d_lo = dens(lo)?;
        let d_hi = dens(hi)?;
        if d_lo > 0.0 && d_hi > 0.0 {
            Some(-(d_hi.ln() - d_lo.ln()) / 10f64.ln())
        } else {
            None
        }
    };
    // Exponent 1 is the borderline `1/x`; the slack absorbs rounding only.
    if decay_exponent.is_some_and(|s| s <= 1.0 + 1e-6) {
        diverged = true;
    }
    let value = if diverged { f64::INFINITY } else { below + at_cutoff + above };
    Ok(MomentReport { value, diverged, below, at_cutoff, above, decay_exponent, panels })
}

/// A family `{X_n}` whose per-index moments can be evaluated.
#[derive(Debug, Clone)]
pub enum MomentFamily {
    /// Identically distributed with the given tail of `|X_n|`.
    Iid(TailFunction),
    Counterexample(Arc<CounterexampleFamily>),
}

impl MomentFamily {
    /// `E g(|X_n|)`; `+∞` when the tail integral diverges.
    pub fn moment(&self, g: &MomentFunctional, n: f64) -> Result<f64> {
        match self {
            MomentFamily::Iid(tail) => Ok(moment_via_tail(g, tail, g.cutoff(), DEFAULT_UPPER)?.value),
            MomentFamily::Counterexample(fam) => {
                if n < fam.b() as f64 {
                    return Ok(0.0);
                }
                let h = fam.h(n)?;
                Ok((g.ln_g(h) + crate::counterexample::q_term(n).ln()).exp())
            }
        }
    }

    /// Smallest index carrying a nonzero law.
    fn first_index(&self) -> f64 {
        match self {
            MomentFamily::Iid(_) => 1.0,
            MomentFamily::Counterexample(fam) => fam.b() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformMomentReport {
    /// `(n, E g(|X_n|))` on the index grid.
    pub values: Vec<(f64, f64)>,
    pub finite: bool,
    /// Largest grid value when finite, `+∞` otherwise.
    pub sup: f64,
    /// Fitted coefficient of `log log n` over the top half of the grid.
    pub loglog_slope: f64,
    /// Grid point with the largest value.
    pub witness: (f64, f64),
}

/// Evaluates `E g(|X_n|)` at `n = 10^k`, `k = 1..300` (from the first
/// nonzero index on) and extrapolates. With `s = log log n`, the top half
/// of the grid is fitted by `a + βs + c/s`; the supremum is reported
/// infinite when `β` is positive beyond rounding.
pub fn check_uniform_moment(family: &MomentFamily, g: &MomentFunctional) -> Result<UniformMomentReport> {
    let start = family.first_index();
    let grid: Vec<f64> = (1..=300).map(|k| 10f64.powi(k)).filter(|&n| n >= start).collect();
    let mut values = Vec::with_capacity(grid.len());
    match family {
        MomentFamily::Iid(_) => {
            let v = family.moment(g, 1.0)?;
            values.extend(grid.iter().map(|&n| (n, v)));
        }
        MomentFamily::Counterexample(_) => {
            for &n in &grid {
                values.push((n, family.moment(g, n)?));
            }
        }
    }
    let witness = values.iter().copied().fold((f64::NAN, f64::NEG_INFINITY), |w, v| if v.1 > w.1 { v } else { w });
    if values.iter().any(|v| v.1.is_infinite()) {
        return Ok(UniformMomentReport { values, finite: false, sup: f64::INFINITY, loglog_slope: f64::NAN, witness });
    }
    let top = &values[values.len() / 2..];
    let rows: Vec<Vec<f64>> = top
        .iter()
        .map(|&(n, _)| {
            let s = n.ln().ln();
            vec![1.0, s, 1.0 / s]
        })
        .collect();
    let y: Vec<f64> = top.iter().map(|v| v.1).collect();
    let beta = least_squares(&rows, &y).map_or(f64::NAN, |c| c[1]);
    let v_top = y[y.len() - 1];
    let finite = !(beta > 1e-3 * v_top.abs().max(1.0));
    let sup = if finite { witness.1 } else { f64::INFINITY };
    Ok(UniformMomentReport { values, finite, sup, loglog_slope: beta, witness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{open01, stream_rng};
    use proptest::prelude::*;

    fn tail(s: &str) -> TailFunction {
        s.parse().unwrap()
    }

    #[test]
    fn parses_fixture_names() {
        assert_eq!(tail("exp:1"), TailFunction::ClosedForm(Law::Exponential { rate: 1.0 }));
        assert_eq!(tail("pareto:alpha=2.5,scale=1"), TailFunction::ClosedForm(Law::Pareto { alpha: 2.5, scale: 1.0 }));
        assert_eq!(
            tail("sup:exp:1,exp:2"),
            TailFunction::Supremum(vec![tail("exp:1"), tail("exp:2")])
        );
        assert_eq!(
            tail("sup:pareto:alpha=2.5,scale=1,uniform:0,2"),
            TailFunction::Supremum(vec![tail("pareto:alpha=2.5"), tail("uniform:lo=0,hi=2")])
        );
        for s in ["exp:2", "pareto:alpha=1.2,scale=3", "sup:exp:1,normal:mu=0,sigma=2", "table:0/1,1/0.5,2/0"] {
            let t = tail(s);
            assert_eq!(t.to_string().parse::<TailFunction>().unwrap(), t);
        }
        assert!("weibull:1".parse::<TailFunction>().is_err());
        assert!("pareto:scale=1".parse::<TailFunction>().is_err());
        assert!(matches!("exp:-1".parse::<TailFunction>(), Err(LabError::Validation(_))));
    }

    #[test]
    fn dominating_tail_examples() {
        let u = dominating_tail(&[tail("uniform:0,1"), tail("uniform:0,2")]).unwrap();
        let e = dominating_tail(&[tail("exp:1"), tail("exp:2")]).unwrap();
        for k in 0..=100 {
            let t = k as f64 * 0.03;
            assert_eq!(u.eval(t).unwrap(), tail("uniform:0,2").eval(t).unwrap());
            assert_eq!(e.eval(t).unwrap(), (-t).exp());
        }
        assert_eq!(dominating_tail(&[tail("exp:3")]).unwrap(), tail("exp:3"));
        assert!(matches!(dominating_tail(&[]), Err(LabError::Precondition(_))));
    }

    #[test]
    fn normal_tail_is_two_sided() {
        let t = tail("normal");
        assert!((t.eval(1.96).unwrap() - 0.049_995_790_296_440_4).abs() < 1e-12);
        // Continued fraction R(z) = 1/(z + 1/(z + 2/(z + 3/(z + ...)))) for
        // the Mills ratio P(Z > z)/φ(z).
        let z: f64 = 40.0;
        let mut cf = z;
        for k in (1..60).rev() {
            cf = z + k as f64 / cf;
        }
        let oracle = 2f64.ln() - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - cf.ln();
        assert!((t.ln_eval(z).unwrap() - oracle).abs() < 1e-10, "{} vs {oracle}", t.ln_eval(z).unwrap());
    }

    #[test]
    fn exponential_moments() {
        let e1 = tail("exp:1");
        let m1 = moment_via_tail(&MomentFunctional::power(1.0).unwrap(), &e1, 0.0, DEFAULT_UPPER).unwrap();
        assert!((m1.value - 1.0).abs() < 1e-10, "{m1:?}");
        let m2 = moment_via_tail(&MomentFunctional::power(2.0).unwrap(), &e1, 0.0, DEFAULT_UPPER).unwrap();
        assert!((m2.value - 2.0).abs() < 2e-10, "{m2:?}");
        // Gamma(p + 1) for non-integer p, split at a positive cutoff.
        let m = moment_via_tail(&MomentFunctional::power(1.5).unwrap(), &e1, 3.0, DEFAULT_UPPER).unwrap();
        let gamma_2_5 = 1.329_340_388_179_137;
        assert!((m.value - gamma_2_5).abs() < 1e-10, "{m:?}");
        assert!(m.below > 0.0 && m.at_cutoff > 0.0 && m.above > 0.0);
    }

    #[test]
    fn pareto_divergence_matches_exponent_comparison() {
        let g = MomentFunctional::power(1.5).unwrap();
        for (alpha, diverges) in [(1.2, true), (1.5, true), (1.45, true), (1.6, false), (2.5, false)] {
            let t = TailFunction::ClosedForm(Law::Pareto { alpha, scale: 1.0 });
            let m = moment_via_tail(&g, &t, 0.0, DEFAULT_UPPER).unwrap();
            assert_eq!(m.diverged, diverges, "alpha = {alpha}: {m:?}");
            if !diverges {
                let exact = alpha / (alpha - 1.5);
                assert!((m.value - exact).abs() < 1e-9 * exact, "alpha = {alpha}: {} vs {exact}", m.value);
            }
        }
    }

    #[test]
    fn slowly_divergent_log_case_is_flagged() {
        // g(x) = x log x against P(ξ > x) = 1/x grows like log² x, far below
        // the magnitude cap at 1e300.
        let g = MomentFunctional::new(1.0, SlowlyVarying::log_pow(1.0), LogWeight::None).unwrap();
        let t = TailFunction::ClosedForm(Law::Pareto { alpha: 1.0, scale: 1.0 });
        assert!(moment_via_tail(&g, &t, g.cutoff(), DEFAULT_UPPER).unwrap().diverged);
    }

    #[test]
    fn bounded_support_stops_early() {
        let m = moment_via_tail(&MomentFunctional::power(2.0).unwrap(), &tail("uniform:0,2"), 0.0, DEFAULT_UPPER).unwrap();
        assert!((m.value - 4.0 / 3.0).abs() < 1e-12);
        assert!(m.panels < 10);
        let tab = TailFunction::tabulated(vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.0)]).unwrap();
        // Density 1/2 on [0, 2]: E ξ = 1.
        let m = moment_via_tail(&MomentFunctional::power(1.0).unwrap(), &tab, 0.0, DEFAULT_UPPER).unwrap();
        assert!((m.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularity_thresholds() {
        assert_eq!(regularity_threshold(&SlowlyVarying::one(), 1.5).unwrap(), 1.0);
        // |x L'/L| = 3/ln x for L = log^-3, at most 3/4 once x >= e^4.
        let a = regularity_threshold(&SlowlyVarying::log_pow(-3.0), 1.5).unwrap();
        assert!(a >= 4f64.exp() && a < 4f64.exp() * 1.06, "{a}");
    }

    #[test]
    fn gaussian_weighted_moment_is_finite() {
        let g = MomentFunctional::new(1.5, SlowlyVarying::one(), LogWeight::LogLogLog2).unwrap();
        let r = check_uniform_moment(&MomentFamily::Iid(tail("normal")), &g).unwrap();
        assert!(r.finite && r.sup.is_finite() && r.sup > 0.0, "{r:?}");
    }

    #[test]
    fn counterexample_dichotomy() {
        let fam = Arc::new(CounterexampleFamily::new(1.5, SlowlyVarying::one()).unwrap());
        let family = MomentFamily::Counterexample(fam.clone());
        let g2 = MomentFunctional::new(1.5, SlowlyVarying::one(), LogWeight::LogLogLog2).unwrap();
        let g1 = g2.with_weight(LogWeight::LogLogLog1);
        let (d, s) = fam.moment_dichotomy(1e6).unwrap();
        assert!((family.moment(&g2, 1e6).unwrap() - d).abs() < 1e-12 * d);
        assert!((family.moment(&g1, 1e6).unwrap() - s).abs() < 1e-12 * s);
        let r2 = check_uniform_moment(&family, &g2).unwrap();
        assert!(!r2.finite && r2.sup.is_infinite());
        assert!((r2.loglog_slope - 2.0 / 3.0).abs() < 1e-6, "{}", r2.loglog_slope);
        let r1 = check_uniform_moment(&family, &g1).unwrap();
        assert!(r1.finite, "{r1:?}");
        assert!(r1.loglog_slope.abs() < 1e-6);
        // Values approach 2/3 from below as log log n grows.
        let last = r1.values.last().unwrap().1;
        assert!(last < 2.0 / 3.0 && last > 0.6, "{last}");
    }

    fn mc_check(t: &TailFunction, g: &MomentFunctional, sample: impl Fn(f64) -> f64) {
        let n = 200_000;
        let mut rng = stream_rng(11, 0);
        let xs: Vec<f64> = (0..n).map(|_| g.g(sample(open01(&mut rng)))).collect();
        let m = crate::stats::mean(&xs);
        let se = (crate::stats::variance(&xs) / n as f64).sqrt();
        let exact = moment_via_tail(g, t, g.cutoff(), DEFAULT_UPPER).unwrap();
        assert!((exact.value - m).abs() < 3.0 * se, "{t}: {} vs MC {m} ± {se}", exact.value);
    }

    #[test]
    fn agrees_with_monte_carlo() {
        let g = MomentFunctional::new(1.5, SlowlyVarying::log_pow(0.5), LogWeight::None).unwrap();
        mc_check(&tail("exp:1"), &g, |u| -(u.ln()));
        mc_check(&tail("uniform:0,3"), &g, |u| 3.0 * u);
        // Tail index 2.5 > p + 0.5 keeps the MC variance finite.
        mc_check(&tail("pareto:alpha=2.5"), &g, |u| u.powf(-1.0 / 2.5));
    }

    proptest! {
        #[test]
        fn enlarging_a_family_never_lowers_the_tail(r1 in 0.2f64..5.0, r2 in 0.2f64..5.0, a in 1.1f64..4.0, t in 0.0f64..20.0) {
            let small = dominating_tail(&[TailFunction::ClosedForm(Law::Exponential { rate: r1 })]).unwrap();
            let big = dominating_tail(&[
                TailFunction::ClosedForm(Law::Exponential { rate: r1 }),
                TailFunction::ClosedForm(Law::Exponential { rate: r2 }),
                TailFunction::ClosedForm(Law::Pareto { alpha: a, scale: 1.0 }),
            ]).unwrap();
            prop_assert!(big.eval(t).unwrap() >= small.eval(t).unwrap());
            for m in [Law::Exponential { rate: r2 }, Law::Pareto { alpha: a, scale: 1.0 }] {
                prop_assert!(big.eval(t).unwrap() >= TailFunction::ClosedForm(m).eval(t).unwrap());
            }
            let v = big.eval(t).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn weighted_finiteness_implies_plain_finiteness(p in 1.0f64..1.9, gamma in -2.0f64..2.0, rate in 0.2f64..4.0) {
            let l = SlowlyVarying::log_pow(gamma);
            let weighted = MomentFunctional::new(p, l.clone(), LogWeight::LogLogLog2).unwrap();
            let t = TailFunction::ClosedForm(Law::Exponential { rate });
            let r = check_uniform_moment(&MomentFamily::Iid(t.clone()), &weighted).unwrap();
            if r.finite {
                let plain = weighted.with_weight(LogWeight::None);
                prop_assert!(!moment_via_tail(&plain, &t, plain.cutoff(), DEFAULT_UPPER).unwrap().diverged);
            }
        }
    }
}
