//! Monte Carlo estimates of `Var(Σ f(X_i)) / Σ Var(f(X_i))` over windows
//! `i = k+1..k+ℓ`.

use super::model::DependenceModel;
use super::sampler::PathSampler;
use crate::error::{LabError, Result};
use crate::rng::{replicates, stream_rng};
use crate::special::norm_quantile;
use std::fmt;
use std::sync::Arc;

const MIN_REPS: usize = 1000;
const MONOTONE_GRID: usize = 10_000;
/// Family-wise coverage of the simultaneous intervals.
const FAMILY_LEVEL: f64 = 0.95;

/// A nondecreasing map applied to every coordinate.
#[derive(Clone)]
pub enum Transform {
    Identity,
    /// `x ↦ min(max(x, −t), t)`.
    Truncate(f64),
    /// `x ↦ x 1(x ≤ b) + b 1(x > b)`.
    Cap(f64),
    Custom { name: String, f: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl Transform {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Truncate(t) => x.clamp(-t, *t),
            Transform::Cap(b) => x.min(*b),
            Transform::Custom { f, .. } => f(x),
        }
    }

    /// The three transform sets used by the presets: identity, truncation
    /// at 1 and the cap at 1/2.
    pub fn standard_sets() -> Vec<Transform> {
        vec![Transform::Identity, Transform::Truncate(1.0), Transform::Cap(0.5)]
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Identity => write!(f, "identity"),
            Transform::Truncate(t) => write!(f, "truncate:{t}"),
            Transform::Cap(b) => write!(f, "cap:{b}"),
            Transform::Custom { name, .. } => write!(f, "{name}"),
        }
    }
}

impl fmt::Debug for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Transform({self})")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCell {
    pub k: usize,
    pub ell: usize,
    pub transform: String,
    pub ratio: f64,
    pub std_error: f64,
    /// Simultaneous (Bonferroni) half-width.
    pub halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDominationReport {
    pub cells: Vec<VarianceCell>,
    pub c_hat: f64,
    pub declared_c: f64,
    /// Normal quantile used for the half-widths.
    pub z: f64,
    pub reps: usize,
}

impl VarianceDominationReport {
    /// True when every cell satisfies `ratio − halfwidth ≤ C`.
    pub fn within_declared(&self) -> bool {
        self.cells.iter().all(|c| c.ratio - c.halfwidth <= self.declared_c)
    }

    pub fn cell(&self, k: usize, ell: usize, transform: &str) -> Option<&VarianceCell> {
        self.cells.iter().find(|c| c.k == k && c.ell == ell && c.transform == transform)
    }
}

/// Estimates the variance ratio for every `(k, ℓ, transform)` cell from
/// `reps` independent paths of length `max k + max ℓ`. All cells share the
/// same paths. Standard errors come from the delta method applied to the
/// ratio of the two variance estimators.
pub fn variance_domination_ratio(
    model: &DependenceModel,
    transforms: &[Transform],
    ks: &[usize],
    ells: &[usize],
    reps: usize,
    seed: u64,
) -> Result<VarianceDominationReport> {
    if reps < MIN_REPS {
        return Err(LabError::Precondition(format!("reps must be at least {MIN_REPS}, got {reps}")));
    }
    if transforms.is_empty() || ks.is_empty() || ells.is_empty() {
        return Err(LabError::Precondition("need at least one transform, offset and block length".into()));
    }
    if ells.contains(&0) {
        return Err(LabError::Precondition("block length must be at least 1".into()));
    }
    let len = ks.iter().max().unwrap() + ells.iter().max().unwrap();
    let sampler = PathSampler::new(model, len)?;
    let paths: Vec<Vec<f64>> = replicates(reps, |r| {
        let mut buf = vec![0.0; len];
        sampler.sample(&mut stream_rng(seed, r), &mut buf);
        buf
    });

    let (lo, hi) = paths.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    for t in transforms {
        check_nondecreasing(t, lo, hi)?;
    }

    let n_cells = transforms.len() * ks.len() * ells.len();
    let z = norm_quantile(1.0 - (1.0 - FAMILY_LEVEL) / (2.0 * n_cells as f64));
    let declared_c = model.declared_constant()?;
    let rf = reps as f64;
    let mut cells = Vec::with_capacity(n_cells);
    for t in transforms {
        let y: Vec<Vec<f64>> = paths.iter().map(|p| p.iter().map(|&x| t.apply(x)).collect()).collect();
        let mut means = vec![0.0; len];
        for row in &y {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= rf);
        let mut vars = vec![0.0; len];
        for row in &y {
            for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        vars.iter_mut().for_each(|s| *s /= rf - 1.0);

        for &k in ks {
            for &ell in ells {
                let window = k..k + ell;
                let denom: f64 = vars[window.clone()].iter().sum();
                if !(denom > 0.0) {
                    return Err(LabError::Degenerate(format!(
                        "sum of coordinate variances is zero for k = {k}, ell = {ell}, transform {t}"
                    )));
                }
                let totals: Vec<f64> = y.iter().map(|row| row[window.clone()].iter().sum()).collect();
                let t_mean = totals.iter().sum::<f64>() / rf;
                let v_t = totals.iter().map(|s| (s - t_mean) * (s - t_mean)).sum::<f64>() / (rf - 1.0);
                let ratio = v_t / denom;
                let mut psi_sq = 0.0;
                for (row, total) in y.iter().zip(&totals) {
                    let dev_num = (total - t_mean) * (total - t_mean) - v_t;
                    let dev_den: f64 = window
                        .clone()
                        .map(|i| (row[i] - means[i]) * (row[i] - means[i]) - vars[i])
                        .sum();
                    let psi = (dev_num - ratio * dev_den) / denom;
                    psi_sq += psi * psi;
                }
                let std_error = (psi_sq / (rf * (rf - 1.0))).sqrt();
                cells.push(VarianceCell {
                    k,
                    ell,
                    transform: t.to_string(),
                    ratio,
                    std_error,
                    halfwidth: z * std_error,
                });
            }
        }
    }
    let c_hat = cells.iter().map(|c| c.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(VarianceDominationReport { cells, c_hat, declared_c, z, reps })
}

fn check_nondecreasing(t: &Transform, lo: f64, hi: f64) -> Result<()> {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let step = (hi - lo) / (MONOTONE_GRID - 1) as f64;
    let mut prev = t.apply(lo);
    for j in 1..MONOTONE_GRID {
        let x = if j == MONOTONE_GRID - 1 { hi } else { lo + step * j as f64 };
        let v = t.apply(x);
        if v < prev {
            return Err(LabError::Precondition(format!("transform {t} decreases near x = {x}")));
        }
        prev = v;
    }
    Ok(())
}
