//! Gateway configuration file (JSON).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gatekeeper_core::access::{AccessPolicy, AnomalyConfig, Principal};
use gatekeeper_core::egress::EgressThresholds;
use gatekeeper_core::governance::DEFAULT_DECISION_WINDOW;
use gatekeeper_core::seqio::{check_k, DEFAULT_SCREENING_K};
use gatekeeper_core::time::Millis;
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "GATEKEEPER_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("no config file given (use --config or {CONFIG_ENV})")]
    NoConfig,
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("referenced file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreeningConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub thresholds: EgressThresholds,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig {
            k: DEFAULT_SCREENING_K,
            thresholds: EgressThresholds::default(),
        }
    }
}

fn default_k() -> usize {
    DEFAULT_SCREENING_K
}

/// A bearer token and the principal it authenticates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalEntry {
    pub token: String,
    /// Code the static second-factor verifier accepts for this principal.
    #[serde(default)]
    pub second_factor: Option<String>,
    pub principal: Principal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub store_dir: PathBuf,
    pub registry_path: PathBuf,
    pub signing_key_path: PathBuf,
    pub watermark_key_path: PathBuf,
    #[serde(default = "default_window")]
    pub decision_window: Millis,
    #[serde(default)]
    pub policy: AccessPolicy,
    #[serde(default)]
    pub anomaly: AnomalyConfig,
    #[serde(default)]
    pub screening: ScreeningConfig,
    /// One decoy per this many records in honeytoken tiers, at least one.
    #[serde(default = "default_density")]
    pub honeytoken_density: u64,
    #[serde(default = "default_decoy_codons")]
    pub decoy_codons: usize,
    /// Fraction of BDL-0 reads that are audited.
    #[serde(default)]
    pub bdl0_read_sample_rate: f64,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    /// Fixes the gateway RNG (decoy generation, read sampling) for reproducible runs.
    #[serde(default)]
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub principals: Vec<PrincipalEntry>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_window() -> Millis {
    DEFAULT_DECISION_WINDOW
}

fn default_density() -> u64 {
    100
}

fn default_decoy_codons() -> usize {
    120
}

fn default_snapshot_every() -> u64 {
    100
}

impl GatewayConfig {
    /// A config with defaults for everything but the paths.
    pub fn new(store_dir: PathBuf, registry_path: PathBuf, signing_key_path: PathBuf, watermark_key_path: PathBuf) -> Self {
        GatewayConfig {
            listen: default_listen(),
            store_dir,
            registry_path,
            signing_key_path,
            watermark_key_path,
            decision_window: default_window(),
            policy: AccessPolicy::default(),
            anomaly: AnomalyConfig::default(),
            screening: ScreeningConfig::default(),
            honeytoken_density: default_density(),
            decoy_codons: default_decoy_codons(),
            bdl0_read_sample_rate: 0.0,
            snapshot_every: default_snapshot_every(),
            rng_seed: None,
            principals: Vec::new(),
        }
    }

    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: GatewayConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.store_dir,
            &mut cfg.registry_path,
            &mut cfg.signing_key_path,
            &mut cfg.watermark_key_path,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for p in [&self.registry_path, &self.signing_key_path, &self.watermark_key_path] {
            if !p.is_file() {
                return Err(ConfigError::MissingFile(p.clone()));
            }
        }
        self.policy.risk.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.policy.rate.validate().map_err(ConfigError::Invalid)?;
        self.anomaly.validate().map_err(ConfigError::Invalid)?;
        self.screening.thresholds.validate().map_err(|e| ConfigError::Invalid(e.into()))?;
        if check_k(self.screening.k).is_err() {
            return invalid(format!("screening k {} out of range", self.screening.k));
        }
        if self.honeytoken_density == 0 {
            return invalid("honeytoken_density must be at least 1".into());
        }
        if self.decoy_codons < gatekeeper_core::watermark::honeytoken::MIN_DECOY_CODONS {
            return invalid(format!("decoy_codons {} is too short", self.decoy_codons));
        }
        if !(0.0..=1.0).contains(&self.bdl0_read_sample_rate) {
            return invalid("bdl0_read_sample_rate must lie in [0, 1]".into());
        }
        if self.snapshot_every == 0 {
            return invalid("snapshot_every must be at least 1".into());
        }
        let mut tokens = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for entry in &self.principals {
            entry.principal.validate().map_err(ConfigError::Invalid)?;
            if entry.token.is_empty() || !tokens.insert(&entry.token) {
                return invalid(format!("principal {}: empty or duplicate token", entry.principal.id));
            }
            if !ids.insert(&entry.principal.id) {
                return invalid(format!("principal {} listed twice", entry.principal.id));
            }
        }
        Ok(())
    }
}

/// The flag wins over the environment variable.
pub fn config_path(flag: Option<&Path>) -> Result<PathBuf, ConfigError> {
    match flag {
        Some(p) => Ok(p.to_owned()),
        None => std::env::var_os(CONFIG_ENV).map(PathBuf::from).ok_or(ConfigError::NoConfig),
    }
}
