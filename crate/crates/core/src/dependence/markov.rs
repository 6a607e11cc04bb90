//! Finite-state Markov chains and their uniform mixing coefficients.

use crate::error::{LabError, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    transition: DMatrix<f64>,
    stationary: DVector<f64>,
    /// `None` means the chain starts from its stationary law.
    initial: Option<DVector<f64>>,
}

impl MarkovChain {
    /// Validates a row-stochastic, irreducible, aperiodic transition matrix
    /// and solves for its stationary law.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(LabError::Validation("transition matrix must be square and nonempty".into()));
        }
        let p = DMatrix::from_fn(k, k, |i, j| rows[i][j]);
        for i in 0..k {
            for j in 0..k {
                let v = p[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(LabError::Validation(format!("transition entry ({i}, {j}) = {v} is not a probability")));
                }
            }
            let s: f64 = p.row(i).sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(LabError::Validation(format!("row {i} of the transition matrix sums to {s}, not 1")));
            }
        }
        if !strongly_connected(&p) {
            return Err(LabError::Validation("transition matrix is reducible".into()));
        }
        let period = period(&p);
        if period != 1 {
            return Err(LabError::Validation(format!("chain is periodic with period {period}")));
        }
        let stationary = solve_stationary(&p)?;
        Ok(MarkovChain { transition: p, stationary, initial: None })
    }

    /// The chain on `{0, 1}` with `P(0 → 1) = a` and `P(1 → 0) = b`.
    pub fn two_state(a: f64, b: f64) -> Result<Self> {
        MarkovChain::new(&[vec![1.0 - a, a], vec![b, 1.0 - b]])
    }

    /// Replaces the initial law. A vector equal to the stationary law (to
    /// `1e-12`) is treated as stationary.
    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.states() {
            return Err(LabError::Validation("initial vector has the wrong length".into()));
        }
        let total: f64 = initial.iter().sum();
        if initial.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(LabError::Validation("initial vector is not a probability vector".into()));
        }
        let v = DVector::from_vec(initial);
        let stationary = (&v - &self.stationary).amax() <= 1e-12;
        self.initial = if stationary { None } else { Some(v) };
        Ok(self)
    }

    pub fn states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    pub fn initial(&self) -> &DVector<f64> {
        self.initial.as_ref().unwrap_or(&self.stationary)
    }

    pub fn is_stationary(&self) -> bool {
        self.initial.is_none()
    }

    /// True when `π_i P_ij = π_j P_ji` for all pairs.
    pub fn is_reversible(&self) -> bool {
        let k = self.states();
        let pi = &self.stationary;
        (0..k).all(|i| (0..k).all(|j| (pi[i] * self.transition[(i, j)] - pi[j] * self.transition[(j, i)]).abs() <= 1e-13))
    }

    /// Largest modulus among the non-unit eigenvalues, for reversible chains.
    pub fn second_eigenvalue_modulus(&self) -> Result<f64> {
        if !self.is_reversible() {
            return Err(LabError::Unsupported("spectral gap of a non-reversible chain".into()));
        }
        let k = self.states();
        let sq: Vec<f64> = self.stationary.iter().map(|v| v.sqrt()).collect();
        let s = DMatrix::from_fn(k, k, |i, j| sq[i] * self.transition[(i, j)] / sq[j]);
        let sym = (&s + s.transpose()) * 0.5;
        let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        Ok(eig[1..].iter().fold(0.0, |m, v| m.max(v.abs())))
    }
}

fn strongly_connected(p: &DMatrix<f64>) -> bool {
    let k = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..k {
                let w = if forward { p[(i, j)] } else { p[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Period of an irreducible chain: gcd of `level(i) + 1 − level(j)` over
/// edges `i → j` of a breadth-first search tree.
fn period(p: &DMatrix<f64>) -> usize {
    let k = p.nrows();
    let mut level = vec![usize::MAX; k];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    let mut g = 0usize;
    while let Some(i) = queue.pop_front() {
        for j in 0..k {
            if p[(i, j)] > 0.0 {
                if level[j] == usize::MAX {
                    level[j] = level[i] + 1;
                    queue.push_back(j);
                } else {
                    g = gcd(g, (level[i] + 1).abs_diff(level[j]));
                }
            }
        }
    }
    g
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn solve_stationary(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = p.nrows();
    // (Pᵀ − I) π = 0 with the last equation replaced by Σ π = 1.
    let mut a = p.transpose() - DMatrix::identity(k, k);
    let mut rhs = DVector::zeros(k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    rhs[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| LabError::Numeric("stationary system is singular".into()))?;
    let residual = (pi.transpose() * p - pi.transpose()).amax();
    if residual > STATIONARY_RESIDUAL_TOL || pi.iter().any(|v| *v < -1e-14) {
        return Err(LabError::Numeric(format!("stationary law residual {residual} exceeds tolerance")));
    }
    Ok(pi.map(|v| v.max(0.0)))
}

/// `φ(n) = max_i ½ Σ_j |Pⁿ(i, j) − π_j|` for a stationary chain.
pub fn phi_coefficient(chain: &MarkovChain, n: u64) -> Result<f64> {
    if !chain.is_stationary() {
        return Err(LabError::Unsupported(
            "phi coefficient of a chain with a non-stationary initial law".into(),
        ));
    }
    Ok(phi_from_parts(chain.transition(), chain.stationary(), n))
}

/// The same formula for an arbitrary stochastic matrix and reference law;
/// no irreducibility is assumed.
pub fn phi_from_parts(p: &DMatrix<f64>, pi: &DVector<f64>, n: u64) -> f64 {
    phi_of_deviation(&deviation_power(p, pi, n))
}

/// `Pⁿ − 1πᵀ`, computed as `(P − 1πᵀ)ⁿ` for `n >= 1`. Powers of the
/// deviation matrix decay to zero instead of cancelling against `π`.
fn deviation_power(p: &DMatrix<f64>, pi: &DVector<f64>, n: u64) -> DMatrix<f64> {
    let k = p.nrows();
    let big_pi = DMatrix::from_fn(k, k, |_, j| pi[j]);
    if n == 0 {
        return DMatrix::identity(k, k) - big_pi;
    }
    let mut base = p - &big_pi;
    let mut acc: Option<DMatrix<f64>> = None;
    let mut e = n;
    while e > 0 {
        if e & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(a) => a * &base,
            });
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    acc.expect("n >= 1")
}

fn phi_of_deviation(d: &DMatrix<f64>) -> f64 {
    (0..d.nrows())
        .map(|i| 0.5 * d.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayVerdict {
    GeometricDecay,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiSeriesReport {
    /// `(n, φ(2ⁿ), Σ_{k≤n} φ^{1/2}(2ᵏ))` for `n = 1..=n_max`.
    pub rows: Vec<(u32, f64, f64)>,
    pub partial_sum: f64,
    pub verdict: DecayVerdict,
}

impl PhiSeriesReport {
    pub fn geometric_bound_pass(&self) -> bool {
        self.verdict == DecayVerdict::GeometricDecay
    }
}

/// Partial sums of `Σ φ^{1/2}(2ⁿ)`; the verdict is geometric decay when the
/// last three consecutive term ratios are at most 0.9 (or the terms vanish).
pub fn phi_series_check(chain: &MarkovChain, n_max: u32) -> Result<PhiSeriesReport> {
    if n_max < 10 {
        return Err(LabError::Precondition(format!("n_max must be at least 10, got {n_max}")));
    }
    if n_max > 62 {
        return Err(LabError::Precondition(format!("n_max must be at most 62, got {n_max}")));
    }
    if !chain.is_stationary() {
        return Err(LabError::Unsupported(
            "phi coefficient of a chain with a non-stationary initial law".into(),
        ));
    }
    // D_{k+1} = D_k², so φ(2ᵏ) needs one squaring per step.
    let mut d = deviation_power(chain.transition(), chain.stationary(), 1);
    let mut rows = Vec::with_capacity(n_max as usize);
    let mut terms = Vec::with_capacity(n_max as usize);
    let mut sum = 0.0;
    for n in 1..=n_max {
        d = &d * &d;
        let phi = phi_of_deviation(&d).min(1.0);
        let term = phi.sqrt();
        sum += term;
        terms.push(term);
        rows.push((n, phi, sum));
    }
    let tail = &terms[terms.len() - 4..];
    let geometric = tail.windows(2).all(|w| w[1] == 0.0 || (w[0] > 0.0 && w[1] / w[0] <= 0.9));
    Ok(PhiSeriesReport {
        rows,
        partial_sum: sum,
        verdict: if geometric { DecayVerdict::GeometricDecay } else { DecayVerdict::Inconclusive },
    })
}
