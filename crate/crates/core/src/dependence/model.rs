//! Dependence structures, marginals and the preset grammar.

use super::markov::{phi_coefficient, MarkovChain};
use crate::counterexample::{CounterexampleFamily, ThreePoint};
use crate::error::{LabError, Result};
use crate::law::Law;
use crate::rv_funcs::SlowlyVarying;
use crate::special::{norm_cdf, norm_quantile, norm_sf};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Grid size for the spectral-density positivity check.
const SPECTRAL_GRID: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    Normal { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
    Pareto { alpha: f64, scale: f64 },
    Exponential { rate: f64 },
    Rademacher,
    Constant(f64),
    ThreePoint(Arc<CounterexampleFamily>),
}

impl Marginal {
    pub const STANDARD_NORMAL: Marginal = Marginal::Normal { mu: 0.0, sigma: 1.0 };

    fn validate(&self) -> Result<()> {
        match self {
            Marginal::Rademacher | Marginal::ThreePoint(_) => Ok(()),
            Marginal::Constant(c) if c.is_finite() => Ok(()),
            Marginal::Constant(c) => Err(LabError::Validation(format!("constant {c} is not finite"))),
            other => other.fixed_law().expect("continuous marginal").validate(),
        }
    }

    /// Law of every coordinate; `None` for the index-dependent three-point
    /// family.
    pub fn fixed_law(&self) -> Option<Law> {
        Some(match self {
            Marginal::Normal { mu, sigma } => Law::Normal { mu: *mu, sigma: *sigma },
            Marginal::Uniform { lo, hi } => Law::Uniform { lo: *lo, hi: *hi },
            Marginal::Pareto { alpha, scale } => Law::Pareto { alpha: *alpha, scale: *scale },
            Marginal::Exponential { rate } => Law::Exponential { rate: *rate },
            Marginal::Rademacher => Law::Atoms(vec![(-1.0, 0.5), (1.0, 0.5)]),
            Marginal::Constant(c) => Law::point(*c),
            Marginal::ThreePoint(_) => return None,
        })
    }

    /// Inverse distribution function at `u ∈ (0, 1)`; three-point marginals
    /// go through [`ThreePoint::from_uniform`] instead.
    #[inline]
    pub(crate) fn quantile(&self, u: f64) -> f64 {
        match self {
            Marginal::Normal { mu, sigma } => mu + sigma * norm_quantile(u),
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * u,
            Marginal::Pareto { alpha, scale } => scale * (-(-u).ln_1p() / alpha).exp(),
            Marginal::Exponential { rate } => -(-u).ln_1p() / rate,
            Marginal::Rademacher => {
                if u < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            Marginal::Constant(c) => *c,
            Marginal::ThreePoint(_) => f64::NAN,
        }
    }

    /// Nondecreasing map from a standard normal latent value to this
    /// marginal, written to keep precision in both tails.
    #[inline]
    pub(crate) fn map_normal(&self, z: f64) -> f64 {
        match self {
            Marginal::Normal { mu, sigma } => mu + sigma * z,
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * norm_cdf(z),
            Marginal::Pareto { alpha, scale } => scale * (-crate::law::ln_norm_sf(z) / alpha).exp(),
            Marginal::Exponential { rate } => {
                if z < 0.0 {
                    -(-norm_cdf(z)).ln_1p() / rate
                } else {
                    -crate::law::ln_norm_sf(z) / rate
                }
            }
            Marginal::Rademacher => {
                if z > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Marginal::Constant(c) => *c,
            Marginal::ThreePoint(_) => f64::NAN,
        }
    }
}

/// Three-point draw from a standard normal latent value.
#[inline]
pub(crate) fn three_point_from_normal(law: &ThreePoint, z: f64) -> f64 {
    if law.q == 0.0 {
        return 0.0;
    }
    if norm_sf(z.abs()) < 0.5 * law.q {
        law.h.copysign(z)
    } else {
        0.0
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

impl fmt::Display for Marginal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marginal::Normal { mu, sigma } => write!(f, "normal:{},{}", fmt_f(*mu), fmt_f(*sigma)),
            Marginal::Uniform { lo, hi } => write!(f, "uniform:{},{}", fmt_f(*lo), fmt_f(*hi)),
            Marginal::Pareto { alpha, scale } => write!(f, "pareto:{},{}", fmt_f(*alpha), fmt_f(*scale)),
            Marginal::Exponential { rate } => write!(f, "exp:{}", fmt_f(*rate)),
            Marginal::Rademacher => write!(f, "rademacher"),
            Marginal::Constant(c) => write!(f, "const:{}", fmt_f(*c)),
            Marginal::ThreePoint(fam) => write!(f, "{}", ce_string(fam)),
        }
    }
}

fn ce_string(fam: &CounterexampleFamily) -> String {
    format!("ce:p={},L={},A={},B={}", fmt_f(fam.p()), fam.l(), fmt_f(fam.a()), fam.b())
}

fn parse_f(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| LabError::Parse(format!("cannot parse {what} from `{s}`")))?;
    if !v.is_finite() {
        return Err(LabError::Parse(format!("{what} must be finite, got `{s}`")));
    }
    Ok(v)
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',').map(|t| parse_f(t, what)).collect()
}

impl FromStr for Marginal {
    type Err = LabError;

    /// `normal[:mu,sigma]`, `uniform:lo,hi`, `pareto:alpha,scale`,
    /// `exp:rate`, `rademacher`, `const:c`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let args = if args.is_empty() { vec![] } else { parse_list(args, "marginal parameter")? };
        let m = match (name, args.as_slice()) {
            ("normal", []) => Marginal::STANDARD_NORMAL,
            ("normal", [mu, sigma]) => Marginal::Normal { mu: *mu, sigma: *sigma },
            ("uniform", []) => Marginal::Uniform { lo: 0.0, hi: 1.0 },
            ("uniform", [lo, hi]) => Marginal::Uniform { lo: *lo, hi: *hi },
            ("pareto", [alpha, scale]) => Marginal::Pareto { alpha: *alpha, scale: *scale },
            ("exp", []) => Marginal::Exponential { rate: 1.0 },
            ("exp", [rate]) => Marginal::Exponential { rate: *rate },
            ("rademacher", []) => Marginal::Rademacher,
            ("const", [c]) => Marginal::Constant(*c),
            _ => return Err(LabError::Parse(format!("unknown marginal `{s}`"))),
        };
        m.validate()?;
        Ok(m)
    }
}

/// Nonpositive Gaussian correlation structures.
#[derive(Debug, Clone, PartialEq)]
pub enum NaCorrelation {
    /// Consecutive blocks of `dim` coordinates with pairwise correlation
    /// `rho <= 0` inside a block and independence across blocks.
    Equicorrelated { rho: f64, dim: usize },
    /// Stationary sequence with lag-`h` correlation `lags[h - 1] <= 0`.
    Stationary(Vec<f64>),
    /// Independent repetitions of a fixed correlation matrix.
    Matrix(DMatrix<f64>),
}

impl NaCorrelation {
    /// Largest block for which pairwise correlation `rho` is still positive
    /// semidefinite.
    pub fn default_dim(rho: f64) -> usize {
        if rho == 0.0 {
            1
        } else {
            (1.0 + 1.0 / rho.abs() + 1e-9).floor() as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Structure {
    Iid,
    MPairwiseNd { m: usize, lags: Vec<f64> },
    NegAssocGaussian(NaCorrelation),
    /// Coordinates `i ≡ r (mod m)` come from the `r`-th independent copy.
    MExtendedNd { m: usize, block: Box<DependenceModel> },
    PhiMixingMarkov { chain: MarkovChain, emit: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceModel {
    structure: Structure,
    /// Absent for Markov chains (emissions define the law) and for
    /// interleaved models (the block carries it).
    marginal: Option<Marginal>,
}

impl DependenceModel {
    pub fn new(structure: Structure, marginal: Option<Marginal>) -> Result<Self> {
        let model = DependenceModel { structure, marginal };
        model.validate()?;
        Ok(model)
    }

    pub fn iid(marginal: Marginal) -> Result<Self> {
        DependenceModel::new(Structure::Iid, Some(marginal))
    }

    pub fn counterexample(fam: CounterexampleFamily) -> Self {
        DependenceModel { structure: Structure::Iid, marginal: Some(Marginal::ThreePoint(Arc::new(fam))) }
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn marginal(&self) -> Option<&Marginal> {
        self.marginal.as_ref()
    }

    /// Hex SHA-256 of the canonical model string.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_string().as_bytes()))
    }

    fn validate(&self) -> Result<()> {
        let needs_marginal = !matches!(self.structure, Structure::MExtendedNd { .. } | Structure::PhiMixingMarkov { .. });
        match (&self.marginal, needs_marginal) {
            (Some(m), true) => m.validate()?,
            (None, true) => return Err(LabError::Validation("model needs a marginal".into())),
            (Some(_), false) => {
                return Err(LabError::Validation(
                    "interleaved and Markov models take their law from the block or the emissions".into(),
                ))
            }
            (None, false) => {}
        }
        if !matches!(self.structure, Structure::Iid) && matches!(self.marginal, Some(Marginal::ThreePoint(_))) {
            return Err(LabError::Validation("the three-point family is only available as an independent sequence".into()));
        }
        match &self.structure {
            Structure::Iid => Ok(()),
            Structure::MPairwiseNd { m, lags } => {
                if *m == 0 {
                    return Err(LabError::Validation("m must be a positive integer".into()));
                }
                for (h, r) in lags.iter().enumerate() {
                    let lag = h + 1;
                    if !(r.abs() < 1.0) {
                        return Err(LabError::Validation(format!("lag {lag} correlation {r} is not in (-1, 1)")));
                    }
                    if lag >= *m && *r > 0.0 {
                        return Err(LabError::Validation(format!(
                            "lag {lag} correlation {r} is positive but lags >= m = {m} must be nonpositive"
                        )));
                    }
                }
                check_spectral_density(lags)
            }
            Structure::NegAssocGaussian(na) => match na {
                NaCorrelation::Equicorrelated { rho, dim } => {
                    if !(*rho <= 0.0 && *rho > -1.0) || *dim == 0 {
                        return Err(LabError::Validation(format!("equicorrelation rho = {rho} must lie in (-1, 0]")));
                    }
                    if 1.0 + (*dim as f64 - 1.0) * rho < -1e-12 {
                        return Err(LabError::Validation(format!(
                            "rho = {rho} with block dimension {dim} is not positive semidefinite"
                        )));
                    }
                    Ok(())
                }
                NaCorrelation::Stationary(lags) => {
                    if let Some((h, r)) = lags.iter().enumerate().find(|(_, r)| !(**r <= 0.0 && **r > -1.0)) {
                        return Err(LabError::Validation(format!("lag {} correlation {r} must lie in (-1, 0]", h + 1)));
                    }
                    check_spectral_density(lags)
                }
                NaCorrelation::Matrix(c) => validate_na_matrix(c),
            },
            Structure::MExtendedNd { m, block } => {
                if *m == 0 {
                    return Err(LabError::Validation("m must be a positive integer".into()));
                }
                match block.structure {
                    Structure::Iid | Structure::NegAssocGaussian(_) => Ok(()),
                    _ => Err(LabError::Validation(
                        "interleaved block must be an independent or negatively associated Gaussian model".into(),
                    )),
                }
            }
            Structure::PhiMixingMarkov { chain, emit } => {
                if emit.len() != chain.states() {
                    return Err(LabError::Validation(format!(
                        "emission has {} values for {} states",
                        emit.len(),
                        chain.states()
                    )));
                }
                if emit.iter().any(|v| !v.is_finite()) || emit.windows(2).any(|w| w[1] < w[0]) {
                    return Err(LabError::Validation("emission must be finite and nondecreasing over states".into()));
                }
                Ok(())
            }
        }
    }

    /// Constant `C` for which the variance-domination inequality is known
    /// to hold for this model.
    ///
    /// Negatively dependent Gaussian structures give `C = 1`. Positive lags
    /// below `m` contribute at most their correlation, which bounds the
    /// maximal correlation of monotone transforms of a Gaussian pair. For a
    /// reversible chain the maximal correlation at lag `h` is at most
    /// `λ*^h`; otherwise `2 φ(h)^{1/2}` is used.
    pub fn declared_constant(&self) -> Result<f64> {
        Ok(match &self.structure {
            Structure::Iid | Structure::NegAssocGaussian(_) => 1.0,
            Structure::MExtendedNd { block, .. } => block.declared_constant()?,
            Structure::MPairwiseNd { m, lags } => {
                1.0 + 2.0 * lags.iter().take(m - 1).map(|r| r.max(0.0)).sum::<f64>()
            }
            Structure::PhiMixingMarkov { chain, .. } => {
                if chain.is_reversible() {
                    let lam = chain.second_eigenvalue_modulus()?;
                    (1.0 + lam) / (1.0 - lam)
                } else {
                    let mut total = 1.0;
                    for h in 1..=100_000u64 {
                        let t = (2.0 * phi_coefficient(chain, h)?.sqrt()).min(1.0);
                        total += 2.0 * t;
                        if t < 1e-16 {
                            return Ok(total);
                        }
                    }
                    return Err(LabError::Numeric("mixing bound did not converge within 1e5 lags".into()));
                }
            }
        })
    }

    /// Mean of coordinate `i` (1-based) when it does not depend on `i`.
    pub fn stationary_law(&self) -> Option<Law> {
        match &self.structure {
            Structure::PhiMixingMarkov { chain, emit } => {
                Some(Law::Atoms(emit.iter().zip(chain.stationary().iter()).map(|(v, p)| (*v, *p)).collect()))
            }
            Structure::MExtendedNd { block, .. } => block.stationary_law(),
            _ => self.marginal.as_ref().and_then(Marginal::fixed_law),
        }
    }
}

fn check_spectral_density(lags: &[f64]) -> Result<()> {
    if lags.is_empty() {
        return Ok(());
    }
    let mut worst = (f64::INFINITY, 0.0);
    for j in 0..=SPECTRAL_GRID {
        let w = std::f64::consts::PI * j as f64 / SPECTRAL_GRID as f64;
        let f = 1.0 + 2.0 * lags.iter().enumerate().map(|(h, r)| r * ((h + 1) as f64 * w).cos()).sum::<f64>();
        if f < worst.0 {
            worst = (f, w);
        }
    }
    if worst.0 < -1e-12 {
        return Err(LabError::Validation(format!(
            "lag correlations are not positive semidefinite: spectral density {:.6} at frequency {:.6}",
            worst.0, worst.1
        )));
    }
    Ok(())
}

fn validate_na_matrix(c: &DMatrix<f64>) -> Result<()> {
    let d = c.nrows();
    if d == 0 || c.ncols() != d {
        return Err(LabError::Validation("correlation matrix must be square and nonempty".into()));
    }
    for i in 0..d {
        if (c[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(LabError::Validation(format!("diagonal entry ({i}, {i}) = {} is not 1", c[(i, i)])));
        }
        for j in 0..d {
            if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 {
                return Err(LabError::Validation(format!("correlation matrix is not symmetric at ({i}, {j})")));
            }
            if i != j && c[(i, j)] > 0.0 {
                return Err(LabError::Validation(format!("off-diagonal entry ({i}, {j}) = {} is positive", c[(i, j)])));
            }
        }
    }
    let min_eig = c.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-10 {
        return Err(LabError::Validation(format!(
            "correlation matrix is not positive semidefinite (smallest eigenvalue {min_eig})"
        )));
    }
    Ok(())
}

impl fmt::Display for DependenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let std_normal = Some(Marginal::STANDARD_NORMAL);
        let list = |v: &[f64]| v.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(",");
        match &self.structure {
            Structure::Iid => {
                return match self.marginal.as_ref().expect("validated") {
                    Marginal::Normal { mu, sigma } if *mu == 0.0 && *sigma == 1.0 => write!(f, "iid-normal"),
                    Marginal::Rademacher => write!(f, "iid-rademacher"),
                    Marginal::Constant(c) if *c == 0.0 => write!(f, "zero"),
                    Marginal::Constant(c) => write!(f, "const:{}", fmt_f(*c)),
                    Marginal::ThreePoint(fam) => write!(f, "{}", ce_string(fam)),
                    m => write!(f, "iid:{m}"),
                };
            }
            Structure::MPairwiseNd { m, lags } => write!(f, "mpnd:m={m},lags={}", list(lags))?,
            Structure::NegAssocGaussian(NaCorrelation::Equicorrelated { rho, dim }) => {
                write!(f, "na-gauss:rho={}", fmt_f(*rho))?;
                if *dim != NaCorrelation::default_dim(*rho) {
                    write!(f, ",dim={dim}")?;
                }
            }
            Structure::NegAssocGaussian(NaCorrelation::Stationary(lags)) => write!(f, "na-gauss:lags={}", list(lags))?,
            Structure::NegAssocGaussian(NaCorrelation::Matrix(c)) => {
                write!(f, "na-gauss:matrix=")?;
                let rows: Vec<String> = c.row_iter().map(|r| r.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(" ")).collect();
                write!(f, "{}", rows.join("|"))?;
            }
            Structure::MExtendedNd { m, block } => return write!(f, "mend:m={m},block={block}"),
            Structure::PhiMixingMarkov { chain, emit } => {
                let p = chain.transition();
                let identity = emit.iter().enumerate().all(|(i, v)| *v == i as f64);
                let emit_s = if identity {
                    "identity".to_string()
                } else {
                    emit.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join("/")
                };
                if chain.states() == 2 {
                    write!(f, "phimix:a={},b={},emit={emit_s}", fmt_f(p[(0, 1)]), fmt_f(p[(1, 0)]))?;
                } else {
                    let rows: Vec<String> =
                        p.row_iter().map(|r| r.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(" ")).collect();
                    write!(f, "phimix:matrix={},emit={emit_s}", rows.join("|"))?;
                }
                return Ok(());
            }
        }
        if self.marginal != std_normal {
            write!(f, ";marginal={}", self.marginal.as_ref().expect("validated"))?;
        }
        Ok(())
    }
}

/// Splits `key=value,...` where list values may themselves contain commas:
/// a token without `=` continues the previous value.
fn parse_params(s: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for tok in s.split(',') {
        match tok.split_once('=') {
            Some((k, v)) if !k.contains(':') => out.push((k.trim().to_string(), v.trim().to_string())),
            _ => match out.last_mut() {
                Some((_, v)) => {
                    v.push(',');
                    v.push_str(tok.trim());
                }
                None => return Err(LabError::Parse(format!("expected key=value in `{s}`"))),
            },
        }
    }
    Ok(out)
}

fn take(params: &mut Vec<(String, String)>, key: &str) -> Option<String> {
    params.iter().position(|(k, _)| k == key).map(|i| params.remove(i).1)
}

fn no_leftovers(params: &[(String, String)], preset: &str) -> Result<()> {
    match params.first() {
        Some((k, _)) => Err(LabError::Parse(format!("unknown key `{k}` in `{preset}`"))),
        None => Ok(()),
    }
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| LabError::Parse(format!("cannot parse {what} from `{s}`")))
}

fn parse_matrix(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split('|')
        .map(|row| row.split_whitespace().map(|t| parse_f(t, "matrix entry")).collect())
        .collect()
}

impl FromStr for DependenceModel {
    type Err = LabError;

    /// Preset grammar:
    /// `iid-normal`, `iid-rademacher`, `iid:<marginal>`, `zero`, `const:c`,
    /// `mpnd:m=M,lags=r1,r2,...`, `na-gauss:rho=R[,dim=D]`,
    /// `na-gauss:lags=r1,...`, `na-gauss:matrix=<rows>`,
    /// `mend:m=M,block=<model>`, `phimix:a=A,b=B,emit=identity|v0/v1`,
    /// `phimix:matrix=<rows>,emit=...`, `ce:p=P,L=<spec>[,A=a][,B=b]`.
    /// Gaussian structures accept a trailing `;marginal=<marginal>`.
    /// Matrix rows are separated by `|`, entries by spaces.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("mend:") {
            let (m_part, block) = rest
                .split_once(",block=")
                .ok_or_else(|| LabError::Parse(format!("mend preset needs m=..,block=.. in `{s}`")))?;
            let m = parse_usize(
                m_part.strip_prefix("m=").ok_or_else(|| LabError::Parse(format!("mend preset needs m= in `{s}`")))?,
                "m",
            )?;
            let block: DependenceModel = block.parse()?;
            return DependenceModel::new(Structure::MExtendedNd { m, block: Box::new(block) }, None);
        }
        let (body, marginal) = match s.split_once(";marginal=") {
            Some((b, m)) => (b, Some(m.parse::<Marginal>()?)),
            None => (s, None),
        };
        let gaussian = |structure: Structure| {
            DependenceModel::new(structure, Some(marginal.clone().unwrap_or(Marginal::STANDARD_NORMAL)))
        };
        let reject_marginal = || -> Result<()> {
            if marginal.is_some() {
                Err(LabError::Parse(format!("`{body}` does not take a marginal")))
            } else {
                Ok(())
            }
        };
        let model = match body {
            "iid-normal" => {
                reject_marginal()?;
                DependenceModel::iid(Marginal::STANDARD_NORMAL)
            }
            "iid-rademacher" => {
                reject_marginal()?;
                DependenceModel::iid(Marginal::Rademacher)
            }
            "zero" => {
                reject_marginal()?;
                DependenceModel::iid(Marginal::Constant(0.0))
            }
            _ if body.starts_with("const:") => {
                reject_marginal()?;
                DependenceModel::iid(Marginal::Constant(parse_f(&body[6..], "constant")?))
            }
            _ if body.starts_with("iid:") => {
                reject_marginal()?;
                DependenceModel::iid(body[4..].parse()?)
            }
            _ if body.starts_with("mpnd:") => {
                let mut params = parse_params(&body[5..])?;
                let m = parse_usize(&take(&mut params, "m").ok_or_else(|| LabError::Parse("mpnd needs m=".into()))?, "m")?;
                let lags = match take(&mut params, "lags") {
                    Some(l) => parse_list(&l, "lag correlation")?,
                    None => vec![],
                };
                no_leftovers(&params, body)?;
                gaussian(Structure::MPairwiseNd { m, lags })
            }
            _ if body.starts_with("na-gauss:") => {
                let rest = &body[9..];
                if let Some(rows) = rest.strip_prefix("matrix=") {
                    let rows = parse_matrix(rows)?;
                    let d = rows.len();
                    if rows.iter().any(|r| r.len() != d) {
                        return Err(LabError::Parse("correlation matrix must be square".into()));
                    }
                    gaussian(Structure::NegAssocGaussian(NaCorrelation::Matrix(DMatrix::from_fn(d, d, |i, j| rows[i][j]))))
                } else {
                    let mut params = parse_params(rest)?;
                    let na = if let Some(lags) = take(&mut params, "lags") {
                        NaCorrelation::Stationary(parse_list(&lags, "lag correlation")?)
                    } else {
                        let rho = parse_f(
                            &take(&mut params, "rho").ok_or_else(|| LabError::Parse("na-gauss needs rho= or lags=".into()))?,
                            "rho",
                        )?;
                        let dim = match take(&mut params, "dim") {
                            Some(d) => parse_usize(&d, "dim")?,
                            None => NaCorrelation::default_dim(rho),
                        };
                        NaCorrelation::Equicorrelated { rho, dim }
                    };
                    no_leftovers(&params, body)?;
                    gaussian(Structure::NegAssocGaussian(na))
                }
            }
            _ if body.starts_with("phimix:") => {
                reject_marginal()?;
                let mut params = parse_params(&body[7..])?;
                let chain = if let Some(rows) = take(&mut params, "matrix") {
                    MarkovChain::new(&parse_matrix(&rows)?)
                } else {
                    let a = parse_f(&take(&mut params, "a").ok_or_else(|| LabError::Parse("phimix needs a=".into()))?, "a")?;
                    let b = parse_f(&take(&mut params, "b").ok_or_else(|| LabError::Parse("phimix needs b=".into()))?, "b")?;
                    MarkovChain::two_state(a, b)
                }?;
                let emit = match take(&mut params, "emit").as_deref() {
                    None | Some("identity") => (0..chain.states()).map(|i| i as f64).collect(),
                    Some(v) => v.split('/').map(|t| parse_f(t, "emission value")).collect::<Result<_>>()?,
                };
                no_leftovers(&params, body)?;
                DependenceModel::new(Structure::PhiMixingMarkov { chain, emit }, None)
            }
            _ if body.starts_with("ce:") => {
                reject_marginal()?;
                let mut params = parse_params(&body[3..])?;
                let p = parse_f(&take(&mut params, "p").ok_or_else(|| LabError::Parse("ce needs p=".into()))?, "p")?;
                let l: SlowlyVarying = take(&mut params, "L").unwrap_or_else(|| "one".into()).parse()?;
                let a = take(&mut params, "A").map(|v| parse_f(&v, "A")).transpose()?;
                let b = take(&mut params, "B").map(|v| parse_usize(&v, "B").map(|b| b as u64)).transpose()?;
                no_leftovers(&params, body)?;
                let fam = CounterexampleFamily::with_thresholds(p, l, a, b)?;
                Ok(DependenceModel::counterexample(fam))
            }
            _ => return Err(LabError::Parse(format!("unknown model preset `{s}`"))),
        };
        model
    }
}

/// Validated model from a preset string. Unknown presets are parse errors;
/// well-formed presets violating a structural constraint are validation
/// errors.
pub fn build_model(spec: &str) -> Result<DependenceModel> {
    spec.parse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for s in [
            "iid-normal",
            "iid-rademacher",
            "zero",
            "const:2.5",
            "iid:pareto:2.5,1",
            "mpnd:m=2,lags=0.3,-0.1",
            "mpnd:m=2,lags=0.5",
            "na-gauss:rho=-0.05",
            "na-gauss:rho=-0.01,dim=50",
            "na-gauss:lags=-0.2,-0.1",
            "mend:m=3,block=na-gauss:rho=-0.05",
            "phimix:a=0.3,b=0.2,emit=identity",
            "phimix:a=0.3,b=0.2,emit=0.5/2",
            "mpnd:m=1,lags=-0.2;marginal=exp:1",
            "ce:p=1.5,L=one,A=1,B=3",
        ] {
            let m = build_model(s).unwrap();
            assert_eq!(m.to_string(), s);
            assert_eq!(build_model(&m.to_string()).unwrap(), m);
        }
        let ce = build_model("ce:p=1.5,L=one").unwrap();
        assert_eq!(ce.to_string(), "ce:p=1.5,L=one,A=1,B=3");
    }

    #[test]
    fn lag_constraints() {
        assert!(build_model("mpnd:m=2,lags=0.5").is_ok());
        let err = build_model("mpnd:m=2,lags=0,0.2").unwrap_err();
        assert!(matches!(&err, LabError::Validation(msg) if msg.contains("lag 2")), "{err}");
        let err = build_model("mpnd:m=2,lags=0.5,-0.3").unwrap_err();
        assert!(matches!(&err, LabError::Validation(msg) if msg.contains("positive semidefinite")), "{err}");
        assert!(build_model("na-gauss:rho=0.1").is_err());
        assert!(build_model("na-gauss:rho=-0.05,dim=30").is_err());
        assert!(build_model("na-gauss:lags=-0.2,0.1").is_err());
    }

    #[test]
    fn unknown_presets_are_parse_errors() {
        assert!(matches!(build_model("garch"), Err(LabError::Parse(_))));
        assert!(matches!(build_model("mpnd:m=2,foo=1"), Err(LabError::Parse(_))));
        assert!(matches!(build_model("iid-normal;marginal=exp:1"), Err(LabError::Parse(_))));
    }

    #[test]
    fn default_block_dimension() {
        assert_eq!(NaCorrelation::default_dim(-0.05), 21);
        assert_eq!(NaCorrelation::default_dim(-0.01), 101);
        assert_eq!(NaCorrelation::default_dim(-0.3), 4);
    }

    #[test]
    fn declared_constants() {
        assert_eq!(build_model("iid-normal").unwrap().declared_constant().unwrap(), 1.0);
        assert_eq!(build_model("na-gauss:rho=-0.05").unwrap().declared_constant().unwrap(), 1.0);
        assert!((build_model("mpnd:m=2,lags=0.5").unwrap().declared_constant().unwrap() - 2.0).abs() < 1e-15);
        let c = build_model("phimix:a=0.3,b=0.2").unwrap().declared_constant().unwrap();
        assert!((c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_reversible_chain_constant_is_finite() {
        let m = build_model("phimix:matrix=0.1 0.8 0.1|0.1 0.1 0.8|0.8 0.1 0.1").unwrap();
        let c = m.declared_constant().unwrap();
        assert!(c.is_finite() && c > 1.0);
    }

    #[test]
    fn fingerprints_differ_between_models() {
        let a = build_model("iid-normal").unwrap().fingerprint();
        let b = build_model("iid-rademacher").unwrap().fingerprint();
        assert_eq!(a.len(), 64);
        assert_ne!(a, b);
    }

    #[test]
    fn latent_maps_are_nondecreasing() {
        let marginals = [
            Marginal::STANDARD_NORMAL,
            Marginal::Uniform { lo: -1.0, hi: 3.0 },
            Marginal::Pareto { alpha: 1.2, scale: 2.0 },
            Marginal::Exponential { rate: 0.5 },
            Marginal::Rademacher,
        ];
        for m in &marginals {
            let mut prev = f64::NEG_INFINITY;
            for k in -4000..=4000 {
                let v = m.map_normal(k as f64 * 0.01);
                assert!(v >= prev, "{m}");
                prev = v;
            }
            let mut prev = f64::NEG_INFINITY;
            for k in 1..10_000 {
                let v = m.quantile(k as f64 / 10_000.0);
                assert!(v >= prev, "{m}");
                prev = v;
            }
        }
    }

    #[test]
    fn latent_maps_agree_with_quantiles() {
        let m = Marginal::Exponential { rate: 2.0 };
        for &z in &[-3.0, -0.2, 0.0, 1.5, 6.0] {
            let a = m.map_normal(z);
            let b = -norm_sf(z).ln() / 2.0;
            assert!((a - b).abs() < 1e-12 * b.max(1e-3), "z = {z}");
        }
    }
}
