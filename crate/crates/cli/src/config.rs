//! Optional TOML run configuration. Precedence is flags, then this file, then
//! environment variables (remote credentials only), then built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const PRECEDENCE: &str = "flags > config file > environment (remote client only) > defaults";

#[cfg_attr(not(feature = "remote"), allow(dead_code))]
pub const ENV_API_KEY: &str = "REFLECT_API_KEY";
pub const ENV_ENDPOINT: &str = "REFLECT_ENDPOINT";
pub const ENV_MODEL: &str = "REFLECT_MODEL";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub intrinsics: Option<IntrinsicsConfig>,
    pub demo: DemoSection,
    pub train: TrainSection,
    pub estimate: EstimateSection,
    pub remote: RemoteSection,
    pub grasp: GraspSection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsConfig {
    pub d0: f64,
    pub n: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub objects: Option<usize>,
    pub test_objects: Option<usize>,
    pub embedding_dim: Option<usize>,
    pub views: Option<u32>,
    pub sweep_noise: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub fusion: Option<String>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_floor: Option<f64>,
    pub batch_size: Option<usize>,
    pub hidden_units: Option<usize>,
    pub activation: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub trials: Option<u32>,
    pub split: Option<String>,
    pub precision: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_s: Option<u64>,
    pub max_retries: Option<u32>,
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspSection {
    pub repetitions: Option<u32>,
    pub seed: Option<u64>,
    pub noise: Option<f64>,
    pub standoff: Option<f64>,
    pub max_force: Option<f64>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub test: Option<String>,
    pub correction: Option<String>,
    pub std: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// First present value wins.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Parses an enum-like string field from the config file.
pub fn parse_field<T: std::str::FromStr<Err = String>>(
    value: Option<&String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    value
        .map(|v| {
            v.parse()
                .map_err(|e: String| CliError::Usage(format!("config `{key}`: {e}")))
        })
        .transpose()
}

pub fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}
