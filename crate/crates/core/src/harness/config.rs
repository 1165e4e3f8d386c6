//! Experiment configuration (one JSON file, `"schema": 1`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackerSpec;
use crate::embedding::{EmbeddingTable, EncoderG};
use crate::error::{Error, Result};
use crate::metrics::{LeakageOrientation, N_MIN};
use crate::protection::ProtectionConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Evenly spaced 1-D vocabulary `t0..t{count-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub count: usize,
    pub start: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    #[default]
    Identity,
    /// Row-major square matrix.
    Matrix { rows: Vec<Vec<f64>> },
}

impl EncoderSpec {
    pub fn build(&self, dim: usize) -> Result<EncoderG> {
        match self {
            EncoderSpec::Identity => Ok(EncoderG::identity(dim)),
            EncoderSpec::Matrix { rows } => {
                let enc = EncoderG::from_rows(rows)?;
                if enc.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: enc.dim() });
                }
                Ok(enc)
            }
        }
    }
}

/// The client's private prompt. Each position's embedding is its token's
/// canonical embedding plus independent `N(0, diag(embedding_var))` jitter;
/// this defines P.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub prompt: String,
    #[serde(default)]
    pub embedding_var: Vec<f64>,
}

/// The prompt-independent reference distribution P̆.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    /// Every position drawn uniformly from the vocabulary.
    #[default]
    Uniform,
    /// Every position drawn from these token probabilities.
    Discrete { probs: Vec<f64> },
    /// The client's own embedding distribution (P̆ = P); a degenerate fixture.
    Client,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockCompletion {
    pub prompt: String,
    pub response: String,
}

/// Test-only knobs for checking that verification can fail.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    /// Replace the computed C1 with this value.
    #[serde(default)]
    pub c1_override: Option<f64>,
}

fn default_xi() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    /// Embedding file, relative to the config file.
    #[serde(default)]
    pub embedding_file: Option<PathBuf>,
    #[serde(default)]
    pub embedding_lattice: Option<LatticeSpec>,
    /// Rescale the table to unit diameter.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub encoder: EncoderSpec,
    /// Token-distance bound Ω; defaults to the vocabulary diameter.
    #[serde(default)]
    pub omega: Option<f64>,
    pub client: ClientSpec,
    pub grid: Vec<ProtectionConfig>,
    pub attacker: AttackerSpec,
    /// Test prompts s ~ P₀; defaults to the client prompt.
    #[serde(default)]
    pub utility_targets: Vec<String>,
    #[serde(default)]
    pub baseline: BaselineSpec,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Privacy budget ξ for picking the best grid point.
    #[serde(default = "default_xi")]
    pub xi: f64,
    /// Whitespace-tokenized sentences for the contextual attacker.
    #[serde(default)]
    pub corpus: Vec<String>,
    #[serde(default)]
    pub orientation: LeakageOrientation,
    #[serde(default)]
    pub mock_llm: Vec<MockCompletion>,
    #[serde(default)]
    pub fault_injection: FaultInjection,
    /// Directory relative paths are resolved against (not serialized).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("grid is empty".into()));
        }
        if self.n_samples < N_MIN {
            return Err(Error::InsufficientSamples { needed: N_MIN, got: self.n_samples });
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::InvalidConfig(format!("xi must lie in [0, 1], got {}", self.xi)));
        }
        match (&self.embedding_file, &self.embedding_lattice) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::InvalidConfig("give exactly one of embedding_file, embedding_lattice".into())),
        }
        if let Some(o) = self.omega {
            if !(o > 0.0 && o.is_finite()) {
                return Err(Error::InvalidConfig(format!("omega must be positive, got {o}")));
            }
        }
        if self.client.embedding_var.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("embedding_var entries must be >= 0".into()));
        }
        self.attacker.validate()
    }

    pub fn load_table(&self) -> Result<EmbeddingTable> {
        let table = match (&self.embedding_file, &self.embedding_lattice) {
            (Some(f), _) => EmbeddingTable::load(self.base_dir.join(f))?,
            (None, Some(l)) => EmbeddingTable::lattice_1d(l.count, l.start, l.step)?,
            (None, None) => return Err(Error::InvalidConfig("no embedding source".into())),
        };
        if self.normalize {
            table.normalized()
        } else {
            Ok(table)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "embedding_lattice": {"count": 5, "start": -1.0, "step": 0.5},
        "client": {"prompt": "t2", "embedding_var": [1.0]},
        "grid": [{"mechanism": "gaussian", "sigma_eps": 0.5}],
        "attacker": {"kind": "calibrated", "iterations": 64, "p": 0.5, "scale": 1.0},
        "n_samples": 100
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL, ".").unwrap();
        assert_eq!(c.baseline, BaselineSpec::Uniform);
        assert_eq!(c.encoder, EncoderSpec::Identity);
        assert_eq!(c.xi, 1.0);
        assert_eq!(c.load_table().unwrap().len(), 5);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |from: &str, to: &str| ExperimentConfig::from_json(&MINIMAL.replace(from, to), ".");
        assert!(bad(r#""schema": 1"#, r#""schema": 2"#).is_err());
        assert!(matches!(bad(r#""n_samples": 100"#, r#""n_samples": 99"#), Err(Error::InsufficientSamples { .. })));
        assert!(bad(r#""grid": [{"mechanism": "gaussian", "sigma_eps": 0.5}]"#, r#""grid": []"#).is_err());
        assert!(bad(r#""n_samples": 100"#, r#""n_samples": 100, "xi": 1.5"#).is_err());
        assert!(bad(r#""n_samples": 100"#, r#""n_samples": 100, "bogus": 1"#).is_err());
    }
}
