//! Truncation at the levels `b_{2^m}` and the dyadic block decomposition of
//! the truncated partial sums.
//!
//! For a nonnegative path and `1 <= j < 2^n`, splitting `(0, j]` into the
//! blocks `(j_m, j_{m-1}]` and telescoping each truncated coordinate gives
//! the deterministic bound
//!
//! ```text
//! max_j |S_{j,n}| <= Σ_m max_k |Σ_{k2^m < i <= k2^m + 2^{m-1}} (X_{i,2^{m-1}} - E X_{i,2^{m-1}})|
//!                  + Σ_m max_k |Σ_{k2^m < i <= (k+1)2^m} Y_{i,m}|
//!                  + Σ_m 2^{m+1} E X 1(X > b_{2^{m-1}})
//! ```
//!
//! where the last expectation is the largest per-index tail expectation.

use crate::dependence::{generate_path, DependenceModel, PathSampler};
use crate::error::{LabError, Result};
use crate::law::Law;
use crate::rv_funcs::Normalizer;

/// `X_i 1(X_i <= b) + b 1(X_i > b)` for a nonnegative path.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPath {
    pub level: f64,
    pub values: Vec<f64>,
}

fn check_nonnegative(values: &[f64]) -> Result<()> {
    if let Some((i, x)) = values.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
        return Err(LabError::Precondition(format!(
            "X_{} = {x} is negative; split the path with split_parts and truncate each part",
            i + 1
        )));
    }
    Ok(())
}

pub fn truncate_path(values: &[f64], b: f64) -> Result<TruncatedPath> {
    if !(b > 0.0) {
        return Err(LabError::Precondition(format!("truncation level must be positive, got {b}")));
    }
    check_nonnegative(values)?;
    Ok(TruncatedPath { level: b, values: values.iter().map(|&x| x.min(b)).collect() })
}

/// `(max(x, 0), max(-x, 0))` coordinatewise.
pub fn split_parts(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    values.iter().map(|&x| (x.max(0.0), (-x).max(0.0))).unzip()
}

/// Path-independent ingredients: truncation levels, plug-in truncated means
/// and tail expectations.
#[derive(Debug, Clone)]
pub struct DecompositionPlan {
    n: u32,
    /// `b_{2^m}` for `m = 0..=n`.
    levels: Vec<f64>,
    /// `E X_{i,2^m}` indexed `[m][i]`.
    means: Vec<Vec<f64>>,
    /// `max_i E X_i 1(X_i > b_{2^{m-1}})` for `m = 1..=n`.
    excess: Vec<f64>,
}

impl DecompositionPlan {
    /// `laws` are the laws of the nonnegative coordinates (only their
    /// positive parts are used); at least `2^n - 1` are needed.
    pub fn new(laws: &[Law], norm: &Normalizer, n: u32) -> Result<Self> {
        if !(1..=30).contains(&n) {
            return Err(LabError::Precondition(format!("dyadic exponent must lie in 1..=30, got {n}")));
        }
        let len = (1usize << n) - 1;
        if laws.len() < len {
            return Err(LabError::Precondition(format!("need {len} laws, got {}", laws.len())));
        }
        let mut levels = Vec::with_capacity(n as usize + 1);
        for m in 0..=n {
            levels.push(norm.b(1u64 << m)?);
        }
        if levels.windows(2).any(|w| w[1] < w[0]) {
            return Err(LabError::Precondition("truncation levels b_{2^m} must be nondecreasing".into()));
        }
        let mut means = vec![vec![0.0; len]; n as usize + 1];
        let mut excess = vec![0.0f64; n as usize];
        let mut prev: Option<&Law> = None;
        for (i, law) in laws[..len].iter().enumerate() {
            if prev == Some(law) {
                for row in means.iter_mut() {
                    row[i] = row[i - 1];
                }
                continue;
            }
            prev = Some(law);
            for (m, &b) in levels.iter().enumerate() {
                means[m][i] = law.truncated_mean(b);
            }
            for (m, e) in excess.iter_mut().enumerate() {
                *e = e.max(law.excess(levels[m]));
            }
        }
        Ok(DecompositionPlan { n, levels, means, excess })
    }

    /// Plans for the positive and negative parts of signed coordinates.
    pub fn for_parts(laws: &[Law], norm: &Normalizer, n: u32) -> Result<(Self, Self)> {
        let neg: Vec<Law> = laws.iter().map(Law::negative_part).collect();
        Ok((Self::new(laws, norm, n)?, Self::new(&neg, norm, n)?))
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        (1usize << self.n) - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn level(&self, m: u32) -> f64 {
        self.levels[m as usize]
    }

    /// Builds the decomposition of the first `2^n - 1` values.
    pub fn decompose(&self, values: &[f64]) -> Result<DyadicDecomposition<'_>> {
        let len = self.len();
        if values.len() < len {
            return Err(LabError::Precondition(format!("path needs at least {len} values, got {}", values.len())));
        }
        check_nonnegative(&values[..len])?;
        let truncated = self.levels.iter().map(|&b| values[..len].iter().map(|&x| x.min(b)).collect()).collect();
        Ok(DyadicDecomposition { plan: self, truncated })
    }
}

/// Truncated coordinates `X_{i,2^m}` of one path with the block quantities
/// built from them. Indices `i`, `j` are 1-based.
#[derive(Debug, Clone)]
pub struct DyadicDecomposition<'a> {
    plan: &'a DecompositionPlan,
    truncated: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub n: u32,
    pub lhs: f64,
    pub rhs_terms: [f64; 3],
    pub rhs: f64,
    pub holds: bool,
    pub telescoping_exact: bool,
}

impl DyadicDecomposition<'_> {
    pub fn truncated(&self, i: usize, m: u32) -> f64 {
        self.truncated[m as usize][i - 1]
    }

    /// `Y_{i,m}` for `m >= 1`.
    pub fn y(&self, i: usize, m: u32) -> f64 {
        let (m, i) = (m as usize, i - 1);
        (self.truncated[m][i] - self.truncated[m - 1][i]) - (self.plan.means[m][i] - self.plan.means[m - 1][i])
    }

    /// `S_{j,m} = Σ_{i<=j} (X_{i,2^m} - E X_{i,2^m})`.
    pub fn s(&self, j: usize, m: u32) -> f64 {
        let m = m as usize;
        (0..j).map(|i| self.truncated[m][i] - self.plan.means[m][i]).sum()
    }

    pub fn k(j: usize, m: u32) -> usize {
        j >> m
    }

    pub fn j_m(j: usize, m: u32) -> usize {
        (j >> m) << m
    }

    /// `X_{i,2^n} = X_{i,1} + Σ_m (X_{i,2^m} - X_{i,2^{m-1}})` evaluated
    /// left to right, compared for exact equality.
    pub fn telescoping_exact(&self) -> bool {
        let n = self.plan.n as usize;
        (0..self.plan.len()).all(|i| {
            let mut acc = self.truncated[0][i];
            for m in 1..=n {
                acc += self.truncated[m][i] - self.truncated[m - 1][i];
            }
            acc == self.truncated[n][i]
        })
    }

    pub fn check(&self) -> DecompositionReport {
        let plan = self.plan;
        let n = plan.n;
        let len = plan.len();
        let top = n as usize;

        let mut s = 0.0;
        let mut lhs = 0.0f64;
        let mut scale = 0.0;
        for i in 0..len {
            let (x, mu) = (self.truncated[top][i], plan.means[top][i]);
            s += x - mu;
            lhs = lhs.max(s.abs());
            scale += x + mu;
        }

        let mut first = 0.0;
        let mut second = 0.0;
        let mut third = 0.0;
        for m in 1..=n {
            let mu = m as usize;
            let full = 1usize << m;
            let half = full >> 1;
            let mut best = 0.0f64;
            let mut start = 0;
            while start + half <= len {
                let t: f64 = (start..start + half).map(|i| self.truncated[mu - 1][i] - plan.means[mu - 1][i]).sum();
                best = best.max(t.abs());
                start += full;
            }
            first += best;

            let mut best = 0.0f64;
            let mut start = 0;
            while start < len {
                let end = (start + full).min(len);
                let t: f64 = (start + 1..=end).map(|i| self.y(i, m)).sum();
                best = best.max(t.abs());
                start += full;
            }
            second += best;
            third += 2f64.powi(m as i32 + 1) * plan.excess[mu - 1];
        }
        let rhs = first + second + third;
        let holds = lhs <= rhs + 1e-12 * scale.max(1.0);
        DecompositionReport {
            n,
            lhs,
            rhs_terms: [first, second, third],
            rhs,
            holds,
            telescoping_exact: self.telescoping_exact(),
        }
    }
}

/// Reports for the positive and negative parts of one signed path.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDecompositionReport {
    pub seed: u64,
    pub positive: DecompositionReport,
    pub negative: DecompositionReport,
}

impl SignedDecompositionReport {
    pub fn holds(&self) -> bool {
        self.positive.holds && self.negative.holds
    }
}

pub fn dyadic_decomposition_check(
    values: &[f64],
    positive: &DecompositionPlan,
    negative: &DecompositionPlan,
) -> Result<(DecompositionReport, DecompositionReport)> {
    let (pos, neg) = split_parts(values);
    Ok((positive.decompose(&pos)?.check(), negative.decompose(&neg)?.check()))
}

/// Runs the decomposition check on one generated path per seed.
pub fn decomposition_over_seeds(
    model: &DependenceModel,
    norm: &Normalizer,
    n: u32,
    seeds: &[u64],
) -> Result<Vec<SignedDecompositionReport>> {
    use rayon::prelude::*;
    let len = (1usize << n) - 1;
    let sampler = PathSampler::new(model, len)?;
    let (pos, neg) = DecompositionPlan::for_parts(sampler.laws(), norm, n)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let path = generate_path(model, len, seed)?;
            let (positive, negative) = dyadic_decomposition_check(&path.values, &pos, &neg)?;
            Ok(SignedDecompositionReport { seed, positive, negative })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependence::build_model;
    use crate::rv_funcs::{Conjugate, SlowlyVarying};
    use proptest::prelude::*;

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_path(&[0.5, 3.0, 7.0], 3.0).unwrap().values, vec![0.5, 3.0, 3.0]);
        assert_eq!(truncate_path(&[0.5, 3.0, 7.0], 7.0).unwrap().values, vec![0.5, 3.0, 7.0]);
        assert_eq!(truncate_path(&[4.0, 5.0], 1.5).unwrap().values, vec![1.5, 1.5]);
        let err = truncate_path(&[1.0, -0.1], 1.0).unwrap_err();
        assert!(matches!(&err, LabError::Precondition(m) if m.contains("split_parts")));
    }

    #[test]
    fn zero_path_holds_trivially() {
        let norm = Normalizer::power(2.0 / 3.0, 1.5).unwrap();
        let laws = vec![Law::point(0.0); 1023];
        let plan = DecompositionPlan::new(&laws, &norm, 10).unwrap();
        let r = plan.decompose(&[0.0; 1023]).unwrap().check();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn single_point_expansion() {
        // n = 1: one coordinate, levels b_1 and b_2.
        let norm = Normalizer::power(1.0, 1.0).unwrap();
        let law = Law::Exponential { rate: 1.0 };
        let plan = DecompositionPlan::new(std::slice::from_ref(&law), &norm, 1).unwrap();
        for x in [0.0, 0.3, 1.5, 2.0, 9.0] {
            let r = plan.decompose(&[x]).unwrap().check();
            let (c1, c2) = (x.min(1.0), x.min(2.0));
            let (m1, m2) = (1.0 - (-1.0f64).exp(), 1.0 - (-2.0f64).exp());
            assert!((r.lhs - (c2 - m2).abs()).abs() < 1e-15);
            assert!((r.rhs_terms[0] - (c1 - m1).abs()).abs() < 1e-15);
            assert!((r.rhs_terms[1] - ((c2 - c1) - (m2 - m1)).abs()).abs() < 1e-15);
            // E X 1(X > 1) = 2/e for Exp(1).
            assert!((r.rhs_terms[2] - 4.0 * 2.0 * (-1.0f64).exp()).abs() < 1e-14);
            assert!(r.holds);
        }
    }

    #[test]
    fn block_indices() {
        assert_eq!(DyadicDecomposition::k(13, 2), 3);
        assert_eq!(DyadicDecomposition::j_m(13, 2), 12);
        assert_eq!(DyadicDecomposition::j_m(13, 0), 13);
        assert_eq!(DyadicDecomposition::j_m(13, 4), 0);
    }

    #[test]
    fn partial_sums_start_at_zero_and_telescope() {
        let model = build_model("iid-normal").unwrap();
        let norm = Normalizer::power(2.0 / 3.0, 1.5).unwrap();
        let path = generate_path(&model, 255, 4).unwrap();
        let sampler = PathSampler::new(&model, 255).unwrap();
        let (pos, _) = DecompositionPlan::for_parts(sampler.laws(), &norm, 8).unwrap();
        let (p, _) = split_parts(&path.values);
        let d = pos.decompose(&p).unwrap();
        for m in 0..=8 {
            assert_eq!(d.s(0, m), 0.0);
        }
        assert!(d.telescoping_exact());
    }

    #[test]
    fn normal_paths_hold() {
        let model = build_model("iid:normal").unwrap();
        let norm = Normalizer::power(2.0 / 3.0, 1.5).unwrap();
        let seeds: Vec<u64> = (0..100).collect();
        let reports = decomposition_over_seeds(&model, &norm, 10, &seeds).unwrap();
        assert!(reports.iter().all(|r| r.holds()));
        assert!(reports.iter().all(|r| r.positive.telescoping_exact && r.negative.telescoping_exact));
    }

    #[test]
    fn slowly_varying_levels_hold() {
        let norm = Normalizer::new(0.7, 1.5, Conjugate::ClosedForm(SlowlyVarying::log_pow(-0.5)), 1.0).unwrap();
        let model = build_model("ce:p=1.5,L=one").unwrap();
        let seeds: Vec<u64> = (0..20).collect();
        assert!(decomposition_over_seeds(&model, &norm, 9, &seeds).unwrap().iter().all(|r| r.holds()));
    }

    proptest! {
        #[test]
        fn inequality_holds_on_arbitrary_paths(xs in proptest::collection::vec(0.0f64..20.0, 63), rate in 0.2f64..3.0, alpha in 0.5f64..1.0) {
            let norm = Normalizer::power(alpha.max(0.55), 1.9).unwrap();
            let laws = vec![Law::Exponential { rate }; 63];
            let plan = DecompositionPlan::new(&laws, &norm, 6).unwrap();
            let r = plan.decompose(&xs).unwrap().check();
            prop_assert!(r.holds, "{:?}", r);
            let t = truncate_path(&xs, 3.0).unwrap();
            prop_assert!(t.values.iter().zip(&xs).all(|(&c, &x)| (0.0..=3.0).contains(&c) && (x > 3.0 || c == x)));
        }
    }
}
