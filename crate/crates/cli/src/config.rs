//! Run configuration: a TOML file mirroring the core configs, resolved
//! against command-line overrides and echoed into the output directory.

use std::fmt;
use std::path::{Path, PathBuf};

use ciql_core::env::mixed_demonstrators;
use ciql_core::{DemonstratorSpec, EnvConfig, Mode, TrainConfig};
use serde::{Deserialize, Serialize};

/// A configuration problem; `key` is the dotted path of the offending entry.
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

impl From<ciql_core::Error> for ConfigError {
    fn from(e: ciql_core::Error) -> Self {
        match e {
            ciql_core::Error::Config { key, message } => ConfigError { key, message },
            other => ConfigError::new("<config>", other.to_string()),
        }
    }
}

/// Noise-angle settings. Angles are written in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceSection {
    pub theta_n_deg: f64,
    pub epsilon: f64,
    pub keypoint_confidence: f64,
}

impl Default for ConfidenceSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ConfidenceSection {
            theta_n_deg: t.theta_n.to_degrees().round(),
            epsilon: t.epsilon,
            keypoint_confidence: t.keypoint_confidence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub angles_deg: Vec<f64>,
    pub modes: Vec<Mode>,
    pub seeds: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            angles_deg: vec![10.0, 20.0, 40.0, 60.0, 90.0, 180.0],
            modes: vec![Mode::CiqlA, Mode::IqFilter, Mode::Iq],
            seeds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    /// Directory of the teleoperation UI assets.
    pub static_dir: Option<PathBuf>,
    /// Dataset (under the output directory) that uploads are appended to.
    pub dataset: String,
    /// Sample period of the browser recorder.
    pub tick_ms: u64,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            host: "127.0.0.1".into(),
            port: 8080,
            static_dir: None,
            dataset: "human".into(),
            tick_ms: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub confidence: ConfidenceSection,
    pub train: TrainConfig,
    pub demos: Vec<DemonstratorSpec>,
    pub sweep: SweepSection,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            confidence: ConfidenceSection::default(),
            train: TrainConfig::default(),
            demos: mixed_demonstrators(),
            sweep: SweepSection::default(),
            serve: ServeSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML document. Unknown keys are rejected by name.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::new(text);
        let mut record = |path: serde_ignored::Path<'_>| unknown.push(path.to_string());
        let tracked = serde_ignored::Deserializer::new(de, &mut record);
        let parsed: Result<RunConfig, _> = serde_path_to_error::deserialize(tracked);
        let config = parsed.map_err(|e| {
            let key = e.path().to_string();
            let message = e.into_inner().message().to_string();
            ConfigError::new(if key == "." { "<root>".to_string() } else { key }, message)
        })?;
        if let Some(key) = unknown.into_iter().next() {
            return Err(ConfigError::new(key, "unknown key"));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Copies the degree-valued confidence section into the trainer config
    /// and checks every section.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let c = &self.confidence;
        if !(c.theta_n_deg > 0.0 && c.theta_n_deg <= 180.0) {
            return Err(ConfigError::new("confidence.theta_n_deg", "must lie in (0, 180]"));
        }
        self.train.theta_n = c.theta_n_deg.to_radians();
        self.train.epsilon = c.epsilon;
        self.train.keypoint_confidence = c.keypoint_confidence;
        self.env.validate()?;
        self.train.validate()?;
        self.train.confidence(&self.env)?;
        for (i, d) in self.demos.iter().enumerate() {
            d.validate()
                .map_err(|e| ConfigError::new(format!("demos[{i}].noise_p"), ConfigError::from(e).message))?;
        }
        if let Some(a) = self.sweep.angles_deg.iter().find(|a| !(**a > 0.0 && **a <= 180.0)) {
            return Err(ConfigError::new("sweep.angles_deg", format!("{a} is outside (0, 180]")));
        }
        if self.sweep.seeds == 0 {
            return Err(ConfigError::new("sweep.seeds", "must be positive"));
        }
        if !valid_name(&self.serve.dataset) {
            return Err(ConfigError::new("serve.dataset", "must be a plain file stem"));
        }
        if self.serve.tick_ms == 0 {
            return Err(ConfigError::new("serve.tick_ms", "must be positive"));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Dataset names are file stems: ASCII letters, digits, `-` and `_`.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Degrees from a comma-separated list such as `10,40,180`.
pub fn parse_degrees(key: &str, list: &str) -> Result<Vec<f64>, ConfigError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| ConfigError::new(key, format!("`{s}` is not a number of degrees")))
        })
        .collect()
}

pub fn parse_modes(key: &str, list: &str) -> Result<Vec<Mode>, ConfigError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<Mode>()
                .map_err(|_| ConfigError::new(key, format!("unknown mode `{s}`")))
        })
        .collect()
}
