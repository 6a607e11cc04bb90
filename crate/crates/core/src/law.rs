//! One-dimensional laws with closed-form tail integrals.
//!
//! Every law exposes `P(X > t)` and `∫_a^b P(X > t) dt` for `t >= 0`, which is
//! all the truncation and domination machinery needs. Negative parts are
//! handled through [`Law::negative_part`], a law whose positive part equals
//! `X⁻ = max(-X, 0)`.

use crate::error::{LabError, Result};
use crate::special::{norm_pdf, norm_sf, norm_sf_antiderivative};

#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Normal { mu: f64, sigma: f64 },
    /// `|Y|` with `Y ~ Normal(mu, sigma)`.
    FoldedNormal { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
    /// `P(X > t) = (scale / t)^alpha` for `t >= scale`.
    Pareto { alpha: f64, scale: f64 },
    Exponential { rate: f64 },
    /// Finitely many `(value, probability)` atoms.
    Atoms(Vec<(f64, f64)>),
}

impl Law {
    pub fn point(x: f64) -> Law {
        Law::Atoms(vec![(x, 1.0)])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Law::Normal { mu, sigma } | Law::FoldedNormal { mu, sigma } => mu.is_finite() && *sigma > 0.0 && sigma.is_finite(),
            Law::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && hi > lo,
            Law::Pareto { alpha, scale } => *alpha > 0.0 && *scale > 0.0 && alpha.is_finite() && scale.is_finite(),
            Law::Exponential { rate } => *rate > 0.0 && rate.is_finite(),
            Law::Atoms(atoms) => {
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                !atoms.is_empty()
                    && atoms.iter().all(|(x, w)| x.is_finite() && *w >= 0.0)
                    && (total - 1.0).abs() <= 1e-12
            }
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::Validation(format!("invalid law parameters: {self:?}")))
        }
    }

    /// `E X`, or `None` when it does not exist.
    pub fn mean(&self) -> Option<f64> {
        match self {
            Law::Normal { mu, .. } => Some(*mu),
            Law::FoldedNormal { mu, sigma } => {
                let z = mu / sigma;
                Some(sigma * 2.0 * norm_pdf(z) + mu * (1.0 - 2.0 * norm_sf(z)))
            }
            Law::Uniform { lo, hi } => Some(0.5 * (lo + hi)),
            Law::Pareto { alpha, scale } => (*alpha > 1.0).then(|| alpha * scale / (alpha - 1.0)),
            Law::Exponential { rate } => Some(1.0 / rate),
            Law::Atoms(atoms) => Some(atoms.iter().map(|(x, w)| x * w).sum()),
        }
    }

    /// `P(X > t)`.
    pub fn sf(&self, t: f64) -> f64 {
        match self {
            Law::Normal { mu, sigma } => norm_sf((t - mu) / sigma),
            Law::FoldedNormal { mu, sigma } => {
                if t < 0.0 {
                    1.0
                } else {
                    norm_sf((t - mu) / sigma) + norm_sf((t + mu) / sigma)
                }
            }
            Law::Uniform { lo, hi } => ((hi - t) / (hi - lo)).clamp(0.0, 1.0),
            Law::Pareto { alpha, scale } => {
                if t < *scale {
                    1.0
                } else {
                    (scale / t).powf(*alpha)
                }
            }
            Law::Exponential { rate } => {
                if t < 0.0 {
                    1.0
                } else {
                    (-rate * t).exp()
                }
            }
            Law::Atoms(atoms) => atoms.iter().filter(|(x, _)| *x > t).map(|(_, w)| w).sum(),
        }
    }

    /// `ln P(X > t)`, finite far beyond the point where `sf` underflows.
    pub fn ln_sf(&self, t: f64) -> f64 {
        match self {
            Law::Normal { mu, sigma } => ln_norm_sf((t - mu) / sigma),
            Law::FoldedNormal { mu, sigma } if t >= 0.0 => {
                let a = ln_norm_sf((t - mu) / sigma);
                let b = ln_norm_sf((t + mu) / sigma);
                let m = a.max(b);
                if m == f64::NEG_INFINITY {
                    m
                } else {
                    m + ((a - m).exp() + (b - m).exp()).ln()
                }
            }
            Law::Pareto { alpha, scale } if t >= *scale => alpha * (scale.ln() - t.ln()),
            Law::Exponential { rate } if t >= 0.0 => -rate * t,
            _ => self.sf(t).ln(),
        }
    }

    /// `∫_a^b P(X > t) dt` for `0 <= a <= b <= ∞`.
    pub fn int_sf(&self, a: f64, b: f64) -> f64 {
        debug_assert!(0.0 <= a && a <= b);
        if a == b {
            return 0.0;
        }
        match self {
            Law::Normal { mu, sigma } => {
                sigma * (norm_sf_antiderivative((b - mu) / sigma) - norm_sf_antiderivative((a - mu) / sigma))
            }
            Law::FoldedNormal { mu, sigma } => {
                sigma
                    * (norm_sf_antiderivative((b - mu) / sigma) - norm_sf_antiderivative((a - mu) / sigma)
                        + norm_sf_antiderivative((b + mu) / sigma)
                        - norm_sf_antiderivative((a + mu) / sigma))
            }
            Law::Uniform { lo, hi } => {
                // sf is 1 below lo, linear on [lo, hi], 0 above hi.
                let flat = (b.min(*lo) - a).max(0.0);
                let (s, e) = (a.max(*lo), b.min(*hi));
                let ramp = if e > s {
                    ((hi - s) * (hi - s) - (hi - e) * (hi - e)) / (2.0 * (hi - lo))
                } else {
                    0.0
                };
                flat + ramp
            }
            Law::Pareto { alpha, scale } => {
                let flat = (b.min(*scale) - a).max(0.0);
                let s = a.max(*scale);
                if b <= s {
                    return flat;
                }
                let tail = if (*alpha - 1.0).abs() < 1e-12 {
                    scale * (b.ln() - s.ln())
                } else if b.is_infinite() {
                    if *alpha < 1.0 {
                        f64::INFINITY
                    } else {
                        scale.powf(*alpha) * s.powf(1.0 - alpha) / (alpha - 1.0)
                    }
                } else {
                    scale.powf(*alpha) * (s.powf(1.0 - alpha) - b.powf(1.0 - alpha)) / (alpha - 1.0)
                };
                flat + tail
            }
            Law::Exponential { rate } => ((-rate * a).exp() - (-rate * b).exp()) / rate,
            Law::Atoms(atoms) => atoms.iter().map(|(x, w)| w * (x.min(b) - a).max(0.0)).sum(),
        }
    }

    /// A law whose positive part has the distribution of `max(-X, 0)`.
    pub fn negative_part(&self) -> Law {
        match self {
            Law::Normal { mu, sigma } => Law::Normal { mu: -mu, sigma: *sigma },
            Law::Uniform { lo, hi } => Law::Uniform { lo: -hi, hi: -lo },
            Law::Atoms(atoms) => Law::Atoms(atoms.iter().map(|(x, w)| (-x, *w)).collect()),
            Law::FoldedNormal { .. } | Law::Pareto { .. } | Law::Exponential { .. } => Law::point(0.0),
        }
    }

    /// Points where `sf` is not smooth; used to split quadrature panels.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Law::Uniform { lo, hi } => vec![*lo, *hi],
            Law::Pareto { scale, .. } => vec![*scale],
            Law::Atoms(atoms) => atoms.iter().map(|a| a.0).collect(),
            _ => vec![],
        }
    }

    /// `E min(X⁺, b)`.
    pub fn truncated_mean(&self, b: f64) -> f64 {
        self.int_sf(0.0, b)
    }

    /// `E X⁺ 1(X⁺ > b)` for `b >= 0`.
    pub fn excess(&self, b: f64) -> f64 {
        b * self.sf(b) + self.int_sf(b, f64::INFINITY)
    }
}

/// `ln P(Z > z)` with an asymptotic series where the tail underflows.
pub fn ln_norm_sf(z: f64) -> f64 {
    if z < 30.0 {
        return norm_sf(z).ln();
    }
    // Asymptotic series of the Mills ratio; the first omitted term is below
    // 2e-14 relative at z = 30.
    let w = 1.0 / (z * z);
    let series = 1.0 - w * (1.0 - 3.0 * w * (1.0 - 5.0 * w * (1.0 - 7.0 * w * (1.0 - 9.0 * w))));
    -0.5 * z * z - (z * (2.0 * std::f64::consts::PI).sqrt()).ln() + series.ln()
}
