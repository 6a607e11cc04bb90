//! Dependent sequences: the m-pairwise negatively dependent, negatively
//! associated Gaussian, interleaved extended negatively dependent and
//! φ-mixing Markov structures, with variance-domination diagnostics.

mod markov;
mod model;
mod sampler;
mod variance;

pub use markov::{phi_coefficient, phi_from_parts, phi_series_check, DecayVerdict, MarkovChain, PhiSeriesReport};
pub use model::{build_model, DependenceModel, Marginal, NaCorrelation, Structure};
pub use sampler::{generate_path, PathSampler, SamplePath};
pub use variance::{variance_domination_ratio, Transform, VarianceCell, VarianceDominationReport};
