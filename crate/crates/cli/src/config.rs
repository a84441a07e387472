//! TOML run configuration. Every section is optional; command-line flags
//! override file values and the resolved result is echoed next to outputs.

use std::path::{Path, PathBuf};

use contesta_core::local_explain::{LatentWeights, DEFAULT_K, DEFAULT_OVERLAP_CUTOFF};
use contesta_core::models::metrics::DEFAULT_THRESHOLD;
use contesta_core::models::{Algorithm, ClassifierSpec};
use contesta_core::pipeline::{ProbeConfig, DEFAULT_TRAIN_FRACTION};
use contesta_core::signals::DEFAULT_MAX_LAG_S;
use contesta_core::synth::SynthConfig;
use contesta_core::vif::DEFAULT_VIF_THRESHOLD;
use contesta_core::global_explain::DEFAULT_PERMUTATIONS;
use serde::{Deserialize, Serialize};

use crate::Invalid;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub synth: SynthConfig,
    pub extract: ExtractConfig,
    pub prune: PruneConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
    pub explain_global: GlobalConfig,
    pub explain_local: LocalConfig,
    pub probe: ProbeSection,
    pub serve: ServeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub max_lag_s: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            max_lag_s: DEFAULT_MAX_LAG_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub vif_threshold: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            vif_threshold: DEFAULT_VIF_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Search settings; the seed inside is replaced by the run's training seed.
    pub spec: Option<ClassifierSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::RandomForest,
            spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub threshold: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub permutations: usize,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            permutations: DEFAULT_PERMUTATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalConfig {
    pub k: usize,
    pub overlap_cutoff: f64,
    pub weights: LatentWeights,
    /// Panel features; empty means the two most important dynamic features.
    pub features: Vec<String>,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            overlap_cutoff: DEFAULT_OVERLAP_CUTOFF,
            weights: LatentWeights::default(),
            features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub copies: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            copies: ProbeConfig::default().copies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        let d = contesta_service::ServiceConfig::default();
        Self {
            host: d.host,
            port: d.port,
            data_dir: d.data_dir,
            static_dir: d.static_dir,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
    }
}

/// What a subcommand ran with: the fully resolved configuration plus its
/// input and output paths.
#[derive(Debug, Serialize)]
pub struct Echo<'a> {
    pub command: &'a str,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
    pub config: &'a Config,
}

impl Echo<'_> {
    pub fn to_toml(&self) -> anyhow::Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            command: &'a str,
            inputs: std::collections::BTreeMap<&'a str, &'a str>,
            outputs: std::collections::BTreeMap<&'a str, &'a str>,
            config: &'a Config,
        }
        let doc = Doc {
            command: self.command,
            inputs: self.inputs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
            outputs: self.outputs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
            config: self.config,
        };
        Ok(toml::to_string(&doc)?)
    }
}
