//! Experiment configuration: a TOML file with `[run]` and `[params]`
//! sections, overridden key by key from the command line.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A configuration problem, reported with exit code 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        ConfigError { key: key.to_string(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error in `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Conjugate,
    Galambos,
    Generate,
    VarRatio,
    Phi,
    Moment,
    BaumKatz,
    Slln,
    DecompositionCheck,
    Counterexample,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Conjugate => "conjugate",
            Subcommand::Galambos => "galambos",
            Subcommand::Generate => "generate",
            Subcommand::VarRatio => "var-ratio",
            Subcommand::Phi => "phi",
            Subcommand::Moment => "moment",
            Subcommand::BaumKatz => "baum-katz",
            Subcommand::Slln => "slln",
            Subcommand::DecompositionCheck => "decomposition-check",
            Subcommand::Counterexample => "counterexample",
        }
    }

    /// Parameter keys the subcommand reads.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Subcommand::Conjugate | Subcommand::Galambos => &["L", "grid", "tol"],
            Subcommand::Generate | Subcommand::Phi => &["model", "n"],
            Subcommand::VarRatio => &["model", "reps"],
            Subcommand::Moment => &["p", "L", "weight", "tail", "model"],
            Subcommand::BaumKatz => &["model", "p", "alpha", "L", "eps", "K", "reps"],
            Subcommand::Slln => &["model", "p", "L", "K", "reps"],
            Subcommand::DecompositionCheck => &["model", "p", "alpha", "L", "n", "reps"],
            Subcommand::Counterexample => &["p", "L", "n", "K", "reps"],
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `alpha = "auto"` (meaning `1/p`) or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Value(f64),
    Keyword(String),
}

impl AlphaSetting {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        if s.trim() == "auto" {
            return Ok(AlphaSetting::Keyword("auto".into()));
        }
        s.trim()
            .parse()
            .map(AlphaSetting::Value)
            .map_err(|_| ConfigError::new("alpha", format!("expected `auto` or a number, got `{s}`")))
    }

    pub fn resolve(&self, p: f64) -> Result<f64, ConfigError> {
        match self {
            AlphaSetting::Value(a) => Ok(*a),
            AlphaSetting::Keyword(k) if k == "auto" => Ok(1.0 / p),
            AlphaSetting::Keyword(k) => Err(ConfigError::new("alpha", format!("expected `auto` or a number, got `{k}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<Subcommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaSetting>,
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
}

impl Params {
    /// Keys that are set.
    pub fn present(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let mut push = |set: bool, k: &'static str| {
            if set {
                keys.push(k);
            }
        };
        push(self.model.is_some(), "model");
        push(self.p.is_some(), "p");
        push(self.alpha.is_some(), "alpha");
        push(self.l.is_some(), "L");
        push(self.eps.is_some(), "eps");
        push(self.k.is_some(), "K");
        push(self.n.is_some(), "n");
        push(self.reps.is_some(), "reps");
        push(self.grid.is_some(), "grid");
        push(self.tol.is_some(), "tol");
        push(self.tail.is_some(), "tail");
        push(self.weight.is_some(), "weight");
        keys
    }

    /// Fields of `other` that are set replace those of `self`.
    pub fn overlay(&mut self, other: Params) {
        macro_rules! take {
            ($($f:ident),*) => {$(if other.$f.is_some() { self.$f = other.$f; })*};
        }
        take!(model, p, alpha, l, eps, k, n, reps, grid, tol, tail, weight);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

/// Written by every run next to its outputs; ignored when the file is read
/// back as a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSection {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    #[serde(default)]
    pub outputs: Vec<OutputEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // toml reports unknown keys as "unknown field `x`, expected ...".
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field"))
                .unwrap_or("config")
                .to_string();
            ConfigError { key, message: msg }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Rejects keys that the subcommand does not read.
    pub fn check_keys(&self, sub: Subcommand) -> Result<(), ConfigError> {
        for key in self.params.present() {
            if !sub.keys().contains(&key) {
                return Err(ConfigError::new(key, format!("not used by `{sub}` (accepted: {})", sub.keys().join(", "))));
            }
        }
        Ok(())
    }
}

/// Parses `lo:hi:count`.
pub fn parse_grid(s: &str) -> Result<(f64, f64, usize), ConfigError> {
    let bad = || ConfigError::new("grid", format!("expected lo:hi:count, got `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    Ok((lo, hi, count))
}

pub fn parse_eps(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| ConfigError::new("eps", format!("bad number `{t}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig {
            run: RunSection {
                subcommand: Some(Subcommand::BaumKatz),
                seed: Some(7),
                workers: Some(4),
                out: Some("runs/a".into()),
            },
            params: Params {
                model: Some("iid-normal".into()),
                p: Some(1.5),
                alpha: Some(AlphaSetting::Keyword("auto".into())),
                l: Some("logpow:2".into()),
                eps: Some(vec![0.25, 0.5, 1.0]),
                k: Some(13),
                reps: Some(2000),
                ..Params::default()
            },
            manifest: None,
        };
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let numeric = Params { alpha: Some(AlphaSetting::Value(0.75)), ..Params::default() };
        let cfg = ExperimentConfig { params: numeric, ..ExperimentConfig::default() };
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml("[params]\nmodle = \"iid-normal\"\n").unwrap_err();
        assert_eq!(err.key, "modle");
        let err = ExperimentConfig::from_toml("[run]\nsubcommand = \"nope\"\n").unwrap_err();
        assert_eq!(err.key, "config");
        let cfg = ExperimentConfig::from_toml("[params]\ntail = \"exp:1\"\n").unwrap();
        assert_eq!(cfg.check_keys(Subcommand::BaumKatz).unwrap_err().key, "tail");
        assert!(cfg.check_keys(Subcommand::Moment).is_ok());
    }

    #[test]
    fn overlay_prefers_flags() {
        let mut base = Params { p: Some(1.2), reps: Some(10), ..Params::default() };
        base.overlay(Params { p: Some(1.5), ..Params::default() });
        assert_eq!((base.p, base.reps), (Some(1.5), Some(10)));
    }

    #[test]
    fn grid_and_alpha_parsing() {
        assert_eq!(parse_grid("1e2:1e300:32").unwrap(), (1e2, 1e300, 32));
        assert_eq!(parse_grid("1:2").unwrap_err().key, "grid");
        assert_eq!(AlphaSetting::parse("auto").unwrap().resolve(1.5).unwrap(), 1.0 / 1.5);
        assert_eq!(AlphaSetting::parse("0.8").unwrap().resolve(1.5).unwrap(), 0.8);
        assert!(AlphaSetting::parse("fast").is_err());
        assert_eq!(parse_eps("0.25, 1").unwrap(), vec![0.25, 1.0]);
    }
}
