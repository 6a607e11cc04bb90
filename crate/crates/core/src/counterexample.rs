//! The three-point sharpness family.
//!
//! For `n >= B` the variable `X_n` is `0` with probability `1 - q_n` and
//! `±h(n)` with probability `q_n / 2` each, where
//! `q_n = 1 / (n log n log log n)` and `h` inverts `g(x) = x^p L^p(x)`.
//! Indices below `B` carry the point mass at zero.

use crate::error::{LabError, Result};
use crate::law::Law;
use crate::rng::{open01, stream_rng};
use crate::rv_funcs::{geometric_grid, slog, sloglog, SlowlyVarying};
use crate::stats::neumaier_sum;
use rayon::prelude::*;

/// Terms up to this index are summed directly; the remainder of the
/// Borel–Cantelli series uses Euler–Maclaurin.
/// `ln` of the largest finite double.
const LN_MAX: f64 = 709.782_712_893_384;

const DIRECT_SUM_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleFamily {
    p: f64,
    l: SlowlyVarying,
    a: f64,
    b: u64,
}

/// One index of the family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreePoint {
    pub h: f64,
    pub q: f64,
}

impl ThreePoint {
    pub const ZERO: ThreePoint = ThreePoint { h: 0.0, q: 0.0 };

    /// Value for a uniform draw `u`: `-h` on `(0, q/2)`, `+h` on
    /// `(1 - q/2, 1)`, zero in between.
    #[inline]
    pub fn from_uniform(&self, u: f64) -> f64 {
        let half = 0.5 * self.q;
        if u < half {
            -self.h
        } else if u > 1.0 - half {
            self.h
        } else {
            0.0
        }
    }

    pub fn law(&self) -> Law {
        if self.q == 0.0 {
            Law::point(0.0)
        } else {
            Law::Atoms(vec![(-self.h, 0.5 * self.q), (0.0, 1.0 - self.q), (self.h, 0.5 * self.q)])
        }
    }
}

/// `q_n = 1 / (n log n log log n)` under the safe-log convention.
pub fn q_term(n: f64) -> f64 {
    1.0 / (n * slog(n) * sloglog(n))
}

fn lnlnln(x: f64) -> f64 {
    x.ln().ln().ln()
}

impl CounterexampleFamily {
    /// Builds the family, locating `A` by a monotonicity scan and using
    /// `B = ⌊A + g(A)⌋ + 1`.
    pub fn new(p: f64, l: SlowlyVarying) -> Result<Self> {
        Self::with_thresholds(p, l, None, None)
    }

    /// As [`CounterexampleFamily::new`] with `A` and/or `B` supplied. A given
    /// `A` is still validated; a given `B` must exceed `g(A)`.
    pub fn with_thresholds(p: f64, l: SlowlyVarying, a: Option<f64>, b: Option<u64>) -> Result<Self> {
        if !(1.0..2.0).contains(&p) {
            return Err(LabError::Precondition(format!("p must lie in [1, 2), got {p}")));
        }
        if l.is_tabulated() {
            return Err(LabError::Unsupported("counterexample family with a tabulated L".into()));
        }
        let grid = geometric_grid(1.0, 1e300, 14_000)?;
        let ln_g: Vec<f64> = grid.iter().map(|&x| p * (x.ln() + l.eval(x).map(f64::ln).unwrap_or(f64::NAN))).collect();
        if ln_g.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Precondition("g(x) = x^p L^p(x) is not finite on the scan grid".into()));
        }
        let last_drop = ln_g.windows(2).rposition(|w| !(w[1] > w[0]));
        let a = match a {
            Some(a) => {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(LabError::Precondition(format!("A must be positive, got {a}")));
                }
                if let Some(k) = last_drop {
                    if grid[k] >= a {
                        return Err(LabError::Precondition(format!(
                            "g is not strictly increasing beyond A = {a}: it drops between {} and {}",
                            grid[k],
                            grid[k + 1]
                        )));
                    }
                }
                a
            }
            None => match last_drop {
                Some(k) if k + 1 == grid.len() - 1 => {
                    return Err(LabError::Precondition("g is not eventually increasing on the scan grid".into()))
                }
                Some(k) => grid[k + 1],
                None => grid[0],
            },
        };
        let g_a = (p * (a.ln() + l.eval(a)?.ln())).exp();
        let formula_b = (a + g_a).floor() + 1.0;
        let b = match b {
            Some(b) => {
                if (b as f64) <= g_a || (b as f64) < 2.0 {
                    return Err(LabError::Precondition(format!(
                        "B = {b} must be at least 2 and exceed g(A) = {g_a}"
                    )));
                }
                b
            }
            None => {
                if formula_b >= 9e15 {
                    return Err(LabError::Precondition(format!("B = {formula_b} is too large")));
                }
                formula_b as u64
            }
        };
        let fam = CounterexampleFamily { p, l, a, b };
        let q = q_term(b as f64);
        if !(q > 0.0 && q < 1.0) {
            return Err(LabError::Precondition(format!("q_B = {q} is not in (0, 1)")));
        }
        Ok(fam)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn l(&self) -> &SlowlyVarying {
        &self.l
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> u64 {
        self.b
    }

    pub fn ln_g(&self, x: f64) -> Result<f64> {
        Ok(self.p * (x.ln() + self.l.eval(x)?.ln()))
    }

    pub fn g(&self, x: f64) -> Result<f64> {
        Ok(self.ln_g(x)?.exp())
    }

    /// `h(n)`, the solution of `g(x) = n` on `[A, ∞)`.
    pub fn h(&self, n: f64) -> Result<f64> {
        self.h_from(n, self.a.ln())
    }

    /// Root search in `u = ln x` starting from a known lower bracket.
    fn h_from(&self, n: f64, u_lo_hint: f64) -> Result<f64> {
        if !(n >= self.b as f64) {
            return Err(LabError::Domain(format!("h(n) needs n >= B = {}, got {n}", self.b)));
        }
        let target = n.ln();
        let f = |u: f64| -> Result<f64> { Ok(self.ln_g(u.exp())? - target) };
        let mut lo = u_lo_hint.max(self.a.ln());
        let mut f_lo = f(lo)?;
        if f_lo == 0.0 {
            return Ok(lo.exp());
        }
        if f_lo > 0.0 {
            lo = self.a.ln();
            f_lo = f(lo)?;
        }
        let mut step = (target / self.p - lo).abs().max(1e-3);
        let mut hi = (lo + step).min(LN_MAX);
        let mut f_hi = f(hi)?;
        while f_hi <= 0.0 {
            if f_hi == 0.0 {
                return Ok(hi.exp());
            }
            if hi >= LN_MAX {
                return Err(LabError::Numeric(format!("h({n}) exceeds the floating-point range")));
            }
            lo = hi;
            f_lo = f_hi;
            step *= 2.0;
            hi = (lo + step).min(LN_MAX);
            f_hi = f(hi)?;
        }
        // Illinois iteration, falling back to bisection when it stalls.
        let mut side = 0i8;
        for _ in 0..200 {
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
                break;
            }
            let mut u = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            if !(u > lo && u < hi) {
                u = 0.5 * (lo + hi);
            }
            let fu = f(u)?;
            if fu == 0.0 {
                return Ok(u.exp());
            }
            if fu < 0.0 {
                lo = u;
                f_lo = fu;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = u;
                f_hi = fu;
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            }
        }
        let u = if f_lo.abs() <= f_hi.abs() { lo } else { hi };
        Ok(u.exp())
    }

    /// `h(n)` for every integer `n` in `[B, n_max]`, warm-starting each root
    /// search at the previous root.
    pub fn h_table(&self, n_max: u64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n_max.saturating_sub(self.b - 1) as usize);
        let mut hint = self.a.ln();
        for n in self.b..=n_max {
            let h = self.h_from(n as f64, hint)?;
            hint = h.ln();
            out.push(h);
        }
        Ok(out)
    }

    /// Laws of `X_1, ..., X_{n_max}` (index `i` at position `i - 1`).
    pub fn index_laws(&self, n_max: u64) -> Result<Vec<ThreePoint>> {
        let mut laws = vec![ThreePoint::ZERO; (self.b - 1).min(n_max) as usize];
        for (k, h) in self.h_table(n_max)?.into_iter().enumerate() {
            let n = self.b + k as u64;
            laws.push(ThreePoint { h, q: q_term(n as f64) });
        }
        Ok(laws)
    }

    pub fn law(&self, n: u64) -> Result<ThreePoint> {
        if n < self.b {
            return Ok(ThreePoint::ZERO);
        }
        Ok(ThreePoint { h: self.h(n as f64)?, q: q_term(n as f64) })
    }

    /// The induced conjugate `L̃(x) = h(x^p) / x`.
    pub fn conjugate(&self, x: f64) -> Result<f64> {
        Ok(self.h(x.powf(self.p))? / x)
    }

    /// `E[g(|X_n|) log|X_n| log² log|X_n|]` and `E[g(|X_n|) log|X_n| log log|X_n|]`.
    pub fn moment_dichotomy(&self, n: f64) -> Result<(f64, f64)> {
        let h = self.h(n)?;
        let base = slog(h) / (slog(n) * sloglog(n));
        let ll = sloglog(h);
        Ok((base * ll * ll, base * ll))
    }

    /// Exact `E w(|X_n|) = w(h(n)) q_n` for a weight with `w(0) = 0`.
    pub fn expect<W: Fn(f64) -> f64>(&self, w: W, n: f64) -> Result<f64> {
        if n < self.b as f64 {
            return Ok(0.0);
        }
        Ok(w(self.h(n)?) * q_term(n))
    }

    /// Partial sums of the Borel–Cantelli series `Σ_{n=B}^N q_n`.
    pub fn bc_series(&self, n_max: u64) -> Result<BcSeries> {
        if n_max < self.b {
            return Err(LabError::Precondition(format!("N = {n_max} must be at least B = {}", self.b)));
        }
        let direct_top = n_max.min(DIRECT_SUM_LIMIT.max(self.b));
        let direct = neumaier_sum((self.b..=direct_top).map(|n| q_term(n as f64)));
        let tail = if n_max > direct_top { euler_maclaurin_tail(direct_top as f64, n_max as f64) } else { 0.0 };
        let start = (self.b as f64).max(16.0);
        let lower = if (n_max as f64 + 1.0) > start { lnlnln(n_max as f64 + 1.0) - lnlnln(start) } else { 0.0 };
        Ok(BcSeries { n_max, partial_sum: direct + tail, integral_lower_bound: lower, diverges: true })
    }

    /// Counts of `{B <= n <= N : |X_n| > h(n)/2}` per seed. The threshold is
    /// `b_n / 2` with `b_n = n^{1/p} L̃(n^{1/p}) = h(n)`.
    pub fn exceedance_counts(&self, n_max: u64, seeds: &[u64]) -> Result<ExceedanceReport> {
        let laws = self.index_laws(n_max)?;
        let counts: Vec<u64> = seeds
            .par_iter()
            .map(|&seed| {
                let mut rng = stream_rng(seed, 0);
                let mut count = 0u64;
                for law in &laws {
                    let x = law.from_uniform(open01(&mut rng));
                    if law.q > 0.0 && x.abs() > 0.5 * law.h {
                        count += 1;
                    }
                }
                count
            })
            .collect();
        let expected = if n_max >= self.b { self.bc_series(n_max)?.partial_sum } else { 0.0 };
        let variance = neumaier_sum(laws.iter().map(|l| l.q * (1.0 - l.q)));
        let mean = counts.iter().sum::<u64>() as f64 / counts.len().max(1) as f64;
        let se = (variance / counts.len().max(1) as f64).sqrt();
        Ok(ExceedanceReport { n_max, counts, mean, expected, variance, z: if se > 0.0 { (mean - expected) / se } else { 0.0 } })
    }
}

/// `Σ_{n=M+1}^{N} q_n` for `e^e < M < N` by Euler–Maclaurin with the first
/// derivative correction.
fn euler_maclaurin_tail(m: f64, n: f64) -> f64 {
    let f = |x: f64| 1.0 / (x * x.ln() * x.ln().ln());
    let df = |x: f64| {
        let (l, ll) = (x.ln(), x.ln().ln());
        -f(x) * (1.0 + 1.0 / l + 1.0 / (l * ll)) / x
    };
    let integral = (n.ln().ln() / m.ln().ln()).ln();
    integral + 0.5 * (f(n) - f(m)) + (df(n) - df(m)) / 12.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcSeries {
    pub n_max: u64,
    pub partial_sum: f64,
    /// `lnlnln(N+1) − lnlnln(max(B, 16))`, unbounded in `N`.
    pub integral_lower_bound: f64,
    pub diverges: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceReport {
    pub n_max: u64,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub expected: f64,
    /// Variance of a single count, `Σ q_n (1 − q_n)`.
    pub variance: f64,
    /// Standardized difference between the mean count and its expectation.
    pub z: f64,
}
