//! Monte Carlo estimates of complete-convergence series, strong-law
//! trajectories and the truncation machinery behind the maximal inequality.

mod decomposition;
mod series;

pub use decomposition::{
    decomposition_over_seeds, dyadic_decomposition_check, split_parts, truncate_path, DecompositionPlan,
    DecompositionReport, DyadicDecomposition, SignedDecompositionReport, TruncatedPath,
};
pub use series::{
    baum_katz_series, exceedance_prob_mc, index_means, max_abs_partial_sums, normalizer_for, slln_trajectory,
    trend_verdict, BaumKatzReport, ExceedanceEstimate, SeriesEstimate, SeriesRow, TrajectoryReport, TrajectoryRow,
    Verdict, STABLE_RATIO,
};
