use crate::dependence::{DependenceModel, PathSampler};
use crate::error::{LabError, Result};
use crate::rng::{replicates, stream_rng};
use crate::rv_funcs::{de_bruijn_conjugate, geometric_grid, Conjugate, Normalizer, SlowlyVarying};
use crate::stats::{wilson, Proportion, Z95};
use rayon::prelude::*;
use std::fmt;

const MIN_REPS: usize = 100;
const MAX_K: u32 = 24;
/// Relative increment below which a series is called stabilizing.
pub const STABLE_RATIO: f64 = 1e-3;

/// `E X_i` for every coordinate of the sampler.
pub fn index_means(sampler: &PathSampler) -> Result<Vec<f64>> {
    sampler
        .laws()
        .iter()
        .enumerate()
        .map(|(i, law)| {
            law.mean()
                .ok_or_else(|| LabError::Precondition(format!("X_{} has no finite mean", i + 1)))
        })
        .collect()
}

/// `M_j = max_{i <= j} |Σ_{l <= i} (x_l - c_l)|` for every `j`.
pub fn max_abs_partial_sums(values: &[f64], centers: &[f64]) -> Result<Vec<f64>> {
    if values.len() != centers.len() {
        return Err(LabError::Precondition(format!(
            "path has {} values but {} centers",
            values.len(),
            centers.len()
        )));
    }
    let mut s = 0.0;
    let mut m = 0.0f64;
    Ok(values
        .iter()
        .zip(centers)
        .map(|(x, c)| {
            s += x - c;
            m = m.max(s.abs());
            m
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceEstimate {
    pub n: usize,
    pub eps: f64,
    pub threshold: f64,
    pub successes: u64,
    pub reps: u64,
    pub p_hat: f64,
    pub ci: Proportion,
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPS {
        return Err(LabError::Precondition(format!("reps must be at least {MIN_REPS}, got {reps}")));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LabError::Precondition(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Fraction of replicates with `M_n > ε b_n`, with a Wilson 95% interval.
pub fn exceedance_prob_mc(
    model: &DependenceModel,
    n: usize,
    eps: f64,
    norm: &Normalizer,
    reps: usize,
    seed: u64,
) -> Result<ExceedanceEstimate> {
    check_reps(reps)?;
    check_eps(eps)?;
    if n == 0 {
        return Err(LabError::Precondition("n must be at least 1".into()));
    }
    let sampler = PathSampler::new(model, n)?;
    let centers = index_means(&sampler)?;
    let threshold = eps * norm.b(n as u64)?;
    let hits = replicates(reps, |r| {
        let mut path = vec![0.0; n];
        sampler.sample(&mut stream_rng(seed, r), &mut path);
        let m = max_abs_partial_sums(&path, &centers).expect("lengths match");
        m[n - 1] > threshold
    });
    let successes = hits.iter().filter(|&&h| h).count() as u64;
    let ci = wilson(successes, reps as u64, Z95);
    Ok(ExceedanceEstimate {
        n,
        eps,
        threshold,
        successes,
        reps: reps as u64,
        p_hat: successes as f64 / reps as f64,
        ci,
    })
}

/// Heuristic trend of a partial-sum sequence; finite data cannot decide
/// convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stabilizing,
    Growing,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stabilizing => "stabilizing",
            Verdict::Growing => "growing",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Stabilizing when each of the last three increments is at most
/// [`STABLE_RATIO`] times the total, growing when the last four increments
/// do not decrease.
pub fn trend_verdict(increments: &[f64]) -> Verdict {
    let total: f64 = increments.iter().sum();
    let k = increments.len();
    if k >= 3 && increments[k - 3..].iter().all(|&d| d <= STABLE_RATIO * total) {
        Verdict::Stabilizing
    } else if k >= 4 && increments[k - 4..].windows(2).all(|w| w[1] >= w[0]) {
        Verdict::Growing
    } else {
        Verdict::Inconclusive
    }
}

/// One dyadic grid point `n = 2^k` of a series estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub k: u32,
    pub n: u64,
    pub eps: f64,
    /// Estimate of `P(M_n > ε b_n)`.
    pub p_hat: f64,
    pub ci: Proportion,
    /// `Σ m^{αp-2}` over the block `(2^{k-1}, 2^k]` (`[1, 2]` for `k = 1`).
    pub weight: f64,
    pub partial_sum: f64,
    /// Estimate of `P(M_{n-1} > ε b_n)`.
    pub dyadic_p_hat: f64,
    /// `2^{k(αp-1)}`.
    pub dyadic_weight: f64,
    pub dyadic_partial_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesEstimate {
    pub eps: f64,
    pub rows: Vec<SeriesRow>,
    pub verdict: Verdict,
    pub dyadic_verdict: Verdict,
    /// Last increment of the grouped series over its partial sum.
    pub last_ratio: f64,
}

impl SeriesEstimate {
    pub fn partial_sum(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.partial_sum)
    }

    pub fn forms_agree(&self) -> bool {
        self.verdict == self.dyadic_verdict
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaumKatzReport {
    pub estimates: Vec<SeriesEstimate>,
    pub reps: usize,
    pub seed: u64,
}

fn block_weight(k: u32, exponent: f64) -> f64 {
    let lo = if k == 1 { 1 } else { (1u64 << (k - 1)) + 1 };
    let hi = 1u64 << k;
    (lo..=hi).map(|m| (m as f64).powf(exponent)).sum()
}

/// For `p = 1` the slowly varying factor must satisfy `L >= 1` and be
/// nondecreasing.
fn check_p_one(l: &SlowlyVarying) -> Result<()> {
    let grid = geometric_grid(l.floor().max(1.0), 1e300, 2000)?;
    let mut prev = 0.0;
    for &x in &grid {
        let v = l.eval(x)?;
        if v < 1.0 || v < prev * (1.0 - 1e-14) {
            return Err(LabError::Precondition(format!(
                "p = 1 needs L >= 1 and nondecreasing; L = {l} fails at x = {x:e} (L = {v})"
            )));
        }
        prev = v;
    }
    Ok(())
}

/// Normalizer `b_n = n^α L̃(n^α)` built from the de Bruijn conjugate of `L`.
pub fn normalizer_for(p: f64, alpha: f64, l: &SlowlyVarying) -> Result<Normalizer> {
    if !(1.0..2.0).contains(&p) {
        return Err(LabError::Precondition(format!("p must lie in [1, 2), got {p}")));
    }
    if p == 1.0 {
        check_p_one(l)?;
    }
    let pair = de_bruijn_conjugate(l);
    Normalizer::new(alpha, p, pair.lt, l.floor().max(1.0))
}

/// Monte Carlo estimate of `Σ n^{αp-2} P(max_{j<=n} |S_j| > ε b_n)` on the
/// grid `n = 2^1..2^K`, grouped over dyadic blocks, together with the dyadic
/// form `Σ 2^{k(αp-1)} P(max_{j<2^k} |S_j| > ε b_{2^k})`. Every `ε` and every
/// grid point reuse the same replicate paths.
#[allow(clippy::too_many_arguments)]
pub fn baum_katz_series(
    model: &DependenceModel,
    p: f64,
    alpha: f64,
    l: &SlowlyVarying,
    eps: &[f64],
    k_max: u32,
    reps: usize,
    seed: u64,
) -> Result<BaumKatzReport> {
    check_reps(reps)?;
    if eps.is_empty() {
        return Err(LabError::Precondition("need at least one eps".into()));
    }
    for &e in eps {
        check_eps(e)?;
    }
    if !(1..=MAX_K).contains(&k_max) {
        return Err(LabError::Precondition(format!("K must lie in 1..={MAX_K}, got {k_max}")));
    }
    let norm = normalizer_for(p, alpha, l)?;
    let len = 1usize << k_max;
    let sampler = PathSampler::new(model, len)?;
    let centers = index_means(&sampler)?;

    // (M_{2^k}, M_{2^k - 1}) for k = 1..K, per replicate.
    let maxima: Vec<Vec<(f64, f64)>> = replicates(reps, |r| {
        let mut path = vec![0.0; len];
        sampler.sample(&mut stream_rng(seed, r), &mut path);
        let m = max_abs_partial_sums(&path, &centers).expect("lengths match");
        (1..=k_max).map(|k| (m[(1 << k) - 1], m[(1 << k) - 2])).collect()
    });

    let exponent = alpha * p - 2.0;
    let weights: Vec<f64> = (1..=k_max).into_par_iter().map(|k| block_weight(k, exponent)).collect();
    let mut levels = Vec::with_capacity(k_max as usize);
    for k in 1..=k_max {
        levels.push(norm.b(1u64 << k)?);
    }
    let mut estimates = Vec::with_capacity(eps.len());
    for &e in eps {
        let mut rows = Vec::with_capacity(k_max as usize);
        let (mut sum, mut dsum) = (0.0, 0.0);
        let (mut incs, mut dincs) = (Vec::new(), Vec::new());
        for k in 1..=k_max {
            let idx = (k - 1) as usize;
            let threshold = e * levels[idx];
            let hits = maxima.iter().filter(|m| m[idx].0 > threshold).count() as u64;
            let dhits = maxima.iter().filter(|m| m[idx].1 > threshold).count() as u64;
            let p_hat = hits as f64 / reps as f64;
            let dyadic_p_hat = dhits as f64 / reps as f64;
            let dyadic_weight = 2f64.powf(k as f64 * (alpha * p - 1.0));
            let inc = weights[idx] * p_hat;
            let dinc = dyadic_weight * dyadic_p_hat;
            sum += inc;
            dsum += dinc;
            incs.push(inc);
            dincs.push(dinc);
            rows.push(SeriesRow {
                k,
                n: 1u64 << k,
                eps: e,
                p_hat,
                ci: wilson(hits, reps as u64, Z95),
                weight: weights[idx],
                partial_sum: sum,
                dyadic_p_hat,
                dyadic_weight,
                dyadic_partial_sum: dsum,
            });
        }
        let last_ratio = if sum > 0.0 { incs[incs.len() - 1] / sum } else { 0.0 };
        estimates.push(SeriesEstimate {
            eps: e,
            rows,
            verdict: trend_verdict(&incs),
            dyadic_verdict: trend_verdict(&dincs),
            last_ratio,
        });
    }
    Ok(BaumKatzReport { estimates, reps, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub n: usize,
    pub seed: u64,
    pub normalized_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub rows: Vec<TrajectoryRow>,
    /// `max |value|` over seeds at the last checkpoint.
    pub final_max_abs: f64,
}

/// `Σ_{i<=n} (X_i - E X_i) / (n^{1/p} L̃(n^{1/p}))` at each checkpoint, one
/// path per seed.
pub fn slln_trajectory(
    model: &DependenceModel,
    p: f64,
    lt: &SlowlyVarying,
    checkpoints: &[usize],
    seeds: &[u64],
) -> Result<TrajectoryReport> {
    if checkpoints.is_empty() || checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::Precondition("checkpoints must be positive and strictly increasing".into()));
    }
    if seeds.is_empty() {
        return Err(LabError::Precondition("need at least one seed".into()));
    }
    let norm = Normalizer::new(1.0 / p, p, Conjugate::ClosedForm(lt.clone()), lt.floor().max(1.0))?;
    let len = *checkpoints.last().unwrap();
    let sampler = PathSampler::new(model, len)?;
    let centers = index_means(&sampler)?;
    let mut scale = Vec::with_capacity(checkpoints.len());
    for &n in checkpoints {
        scale.push(norm.b(n as u64)?);
    }
    let per_seed: Vec<Vec<TrajectoryRow>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut path = vec![0.0; len];
            sampler.sample(&mut stream_rng(seed, 0), &mut path);
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut s = 0.0;
            let mut next = 0;
            for (i, (x, c)) in path.iter().zip(&centers).enumerate() {
                s += x - c;
                if i + 1 == checkpoints[next] {
                    out.push(TrajectoryRow { n: i + 1, seed, normalized_sum: s / scale[next] });
                    next += 1;
                    if next == checkpoints.len() {
                        break;
                    }
                }
            }
            out
        })
        .collect();
    let final_max_abs = per_seed.iter().map(|r| r[r.len() - 1].normalized_sum.abs()).fold(0.0, f64::max);
    let mut rows: Vec<TrajectoryRow> = per_seed.into_iter().flatten().collect();
    rows.sort_by_key(|r| r.n);
    Ok(TrajectoryReport { rows, final_max_abs })
}
