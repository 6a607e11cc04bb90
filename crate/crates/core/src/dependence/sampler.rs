//! Path generation.
//!
//! Gaussian structures draw a latent standard normal vector and push each
//! coordinate through a nondecreasing map onto the marginal. Stationary
//! Gaussian sequences use circulant embedding; block structures factor the
//! block correlation once.

use super::model::{three_point_from_normal, DependenceModel, Marginal, NaCorrelation, Structure};
use crate::counterexample::ThreePoint;
use crate::error::{LabError, Result};
use crate::law::Law;
use crate::rng::{open01, stream_rng};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// A generated path with the data needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub values: Vec<f64>,
    pub seed: u64,
    pub fingerprint: String,
}

/// Generates `X_1..X_n` from stream 0 of `seed`.
pub fn generate_path(model: &DependenceModel, n: usize, seed: u64) -> Result<SamplePath> {
    let sampler = PathSampler::new(model, n)?;
    let mut values = vec![0.0; n];
    sampler.sample(&mut stream_rng(seed, 0), &mut values);
    Ok(SamplePath { values, seed, fingerprint: model.fingerprint() })
}

#[derive(Clone)]
enum Emission {
    Fixed(Marginal),
    Indexed(Arc<Vec<ThreePoint>>),
}

#[derive(Clone)]
enum Latent {
    /// One uniform per coordinate, mapped through the quantile function.
    Independent,
    Circulant { size: usize, fft: Arc<dyn Fft<f64>>, sqrt_eig: Arc<Vec<f64>> },
    Equicorrelated { dim: usize, s: f64, t: f64 },
    Factor { factor: Arc<DMatrix<f64>> },
    Markov { cum_initial: Vec<f64>, cum_rows: Vec<Vec<f64>>, emit: Vec<f64> },
    Interleaved { stride: usize, copies: Vec<PathSampler> },
}

/// Precomputed sampler for paths of one fixed length.
#[derive(Clone)]
pub struct PathSampler {
    n: usize,
    latent: Latent,
    emission: Option<Emission>,
    laws: Arc<Vec<Law>>,
}

impl std::fmt::Debug for PathSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PathSampler").field("n", &self.n).finish_non_exhaustive()
    }
}

fn cumulative(p: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p.map(|v| {
        acc += v;
        acc
    })
    .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

impl PathSampler {
    pub fn new(model: &DependenceModel, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(LabError::Precondition("path length must be at least 1".into()));
        }
        let (emission, laws) = match model.marginal() {
            Some(Marginal::ThreePoint(fam)) => {
                let idx = Arc::new(fam.index_laws(n as u64)?);
                let laws: Vec<Law> = idx.iter().map(ThreePoint::law).collect();
                (Some(Emission::Indexed(idx)), laws)
            }
            Some(m) => (Some(Emission::Fixed(m.clone())), vec![m.fixed_law().expect("fixed marginal"); n]),
            None => (None, vec![]),
        };
        let mut laws = laws;
        let latent = match model.structure() {
            Structure::Iid => Latent::Independent,
            Structure::MPairwiseNd { lags, .. } => circulant(lags, n)?,
            Structure::NegAssocGaussian(NaCorrelation::Stationary(lags)) => circulant(lags, n)?,
            Structure::NegAssocGaussian(NaCorrelation::Equicorrelated { rho, dim }) => {
                let s = (1.0 - rho).sqrt();
                let d = *dim as f64;
                let t = (-s + (s * s + d * rho).max(0.0).sqrt()) / d;
                Latent::Equicorrelated { dim: *dim, s, t }
            }
            Structure::NegAssocGaussian(NaCorrelation::Matrix(c)) => {
                let eig = c.clone().symmetric_eigen();
                let sqrt_l = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_l);
                Latent::Factor { factor: Arc::new(factor) }
            }
            Structure::PhiMixingMarkov { chain, emit } => {
                let p = chain.transition();
                laws = vec![Law::Atoms(emit.iter().zip(chain.stationary().iter()).map(|(v, w)| (*v, *w)).collect()); n];
                if !chain.is_stationary() {
                    // Only the first coordinate's law is exact here; later
                    // coordinates use the stationary law.
                    laws[0] = Law::Atoms(emit.iter().zip(chain.initial().iter()).map(|(v, w)| (*v, *w)).collect());
                }
                Latent::Markov {
                    cum_initial: cumulative(chain.initial().iter().copied()),
                    cum_rows: (0..p.nrows()).map(|i| cumulative(p.row(i).iter().copied())).collect(),
                    emit: emit.clone(),
                }
            }
            Structure::MExtendedNd { m, block } => {
                let m = *m;
                let mut copies = Vec::with_capacity(m.min(n));
                laws = vec![Law::point(0.0); n];
                for r in 0..m.min(n) {
                    let len = (n - r).div_ceil(m);
                    let copy = PathSampler::new(block, len)?;
                    for k in 0..len {
                        laws[r + k * m] = copy.laws[k].clone();
                    }
                    copies.push(copy);
                }
                Latent::Interleaved { stride: m, copies }
            }
        };
        Ok(PathSampler { n, latent, emission, laws: Arc::new(laws) })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Law of coordinate `i` (0-based).
    pub fn law(&self, i: usize) -> &Law {
        &self.laws[i]
    }

    pub fn laws(&self) -> &[Law] {
        &self.laws
    }

    /// Fills `out` (of length `n`) with one path.
    pub fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        assert_eq!(out.len(), self.n, "output buffer has the wrong length");
        match &self.latent {
            Latent::Independent => match self.emission.as_ref().expect("independent models carry a marginal") {
                Emission::Fixed(Marginal::Constant(c)) => out.fill(*c),
                Emission::Fixed(m) => {
                    for x in out.iter_mut() {
                        *x = m.quantile(open01(rng));
                    }
                }
                Emission::Indexed(laws) => {
                    for (x, law) in out.iter_mut().zip(laws.iter()) {
                        *x = law.from_uniform(open01(rng));
                    }
                }
            },
            Latent::Circulant { size, fft, sqrt_eig } => {
                let mut buf: Vec<Complex<f64>> = sqrt_eig
                    .iter()
                    .map(|s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                debug_assert_eq!(buf.len(), *size);
                fft.process(&mut buf);
                for (x, c) in out.iter_mut().zip(buf.iter()) {
                    *x = c.re;
                }
                self.emit(out);
            }
            Latent::Equicorrelated { dim, s, t } => {
                let mut e = vec![0.0; *dim];
                for chunk in out.chunks_mut(*dim) {
                    for v in e.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let total: f64 = e.iter().sum();
                    for (x, ei) in chunk.iter_mut().zip(e.iter()) {
                        *x = s * ei + t * total;
                    }
                }
                self.emit(out);
            }
            Latent::Factor { factor } => {
                let d = factor.nrows();
                let mut e = nalgebra::DVector::zeros(d);
                for chunk in out.chunks_mut(d) {
                    for v in e.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let z = &**factor * &e;
                    for (x, zi) in chunk.iter_mut().zip(z.iter()) {
                        *x = *zi;
                    }
                }
                self.emit(out);
            }
            Latent::Markov { cum_initial, cum_rows, emit } => {
                let pick = |cum: &[f64], u: f64| cum.iter().position(|c| u < *c).expect("last entry is infinite");
                let mut state = pick(cum_initial, open01(rng));
                out[0] = emit[state];
                for x in out.iter_mut().skip(1) {
                    state = pick(&cum_rows[state], open01(rng));
                    *x = emit[state];
                }
            }
            Latent::Interleaved { stride, copies } => {
                let stride = *stride;
                for (r, copy) in copies.iter().enumerate() {
                    let mut sub = vec![0.0; copy.n];
                    copy.sample(rng, &mut sub);
                    for (k, v) in sub.into_iter().enumerate() {
                        out[r + k * stride] = v;
                    }
                }
            }
        }
    }

    fn emit(&self, out: &mut [f64]) {
        match self.emission.as_ref().expect("Gaussian models carry a marginal") {
            Emission::Fixed(Marginal::Normal { mu, sigma }) if *mu == 0.0 && *sigma == 1.0 => {}
            Emission::Fixed(m) => {
                for x in out.iter_mut() {
                    *x = m.map_normal(*x);
                }
            }
            Emission::Indexed(laws) => {
                for (x, law) in out.iter_mut().zip(laws.iter()) {
                    *x = three_point_from_normal(law, *x);
                }
            }
        }
    }
}

/// Circulant embedding of the stationary correlation `1, lags[0], ...` for
/// paths of length `n`.
fn circulant(lags: &[f64], n: usize) -> Result<Latent> {
    let size = (2 * n.max(lags.len() + 1)).next_power_of_two().max(2);
    let mut row = vec![Complex::new(0.0, 0.0); size];
    row[0].re = 1.0;
    for (h, r) in lags.iter().enumerate() {
        let lag = h + 1;
        row[lag].re += r;
        row[size - lag].re += r;
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    fft.process(&mut row);
    let mut sqrt_eig = Vec::with_capacity(size);
    for (j, c) in row.iter().enumerate() {
        if c.re < -1e-9 {
            return Err(LabError::Numeric(format!(
                "circulant embedding has negative eigenvalue {} at index {j}",
                c.re
            )));
        }
        sqrt_eig.push((c.re.max(0.0) / size as f64).sqrt());
    }
    Ok(Latent::Circulant { size, fft, sqrt_eig: Arc::new(sqrt_eig) })
}
