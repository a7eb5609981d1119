use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stormcrew_core::model::AwcId;
use stormcrew_core::planner::PlannerConfig;
use stormcrew_core::priority::PriorityConfig;
use stormcrew_core::travel::TravelConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    /// Minutes between cadence triggers.
    pub cadence_minutes: f64,
    /// Seconds a draft may age before publishing needs confirmation.
    pub staleness_seconds: f64,
    pub beta_dist: f64,
    pub force_full: bool,
    pub solver: String,
    /// Append-only JSON-lines audit log; `None` keeps it in memory only.
    pub audit_log: Option<PathBuf>,
    /// When set, every request must carry it in `x-stormcrew-token`.
    pub auth_token: Option<String>,
    /// Run the planner on crew-available events instead of prompting.
    pub auto_run_on_event: bool,
    pub awcs: Vec<AwcId>,
    pub priority: PriorityConfig,
    pub travel: TravelConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".parse().expect("static address"),
            cadence_minutes: 15.0,
            staleness_seconds: 120.0,
            beta_dist: 1.0,
            force_full: true,
            solver: "hungarian".into(),
            audit_log: None,
            auth_token: None,
            auto_run_on_event: false,
            awcs: Vec::new(),
            priority: PriorityConfig::default(),
            travel: TravelConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let cfg: ServiceConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.cadence_minutes.is_finite() && self.cadence_minutes > 0.0) {
            return Err(ConfigError::Invalid("cadence_minutes must be positive".into()));
        }
        if !(self.staleness_seconds.is_finite() && self.staleness_seconds > 0.0) {
            return Err(ConfigError::Invalid("staleness_seconds must be positive".into()));
        }
        if self.awcs.is_empty() {
            return Err(ConfigError::Invalid("at least one [[awcs]] entry is required".into()));
        }
        let mut codes: Vec<&str> = self.awcs.iter().map(|a| a.code.as_str()).collect();
        codes.sort();
        if codes.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("duplicate AWC code".into()));
        }
        self.planner().validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            priority: self.priority.clone(),
            travel: self.travel.clone(),
            beta_dist: self.beta_dist,
            force_full: self.force_full,
            solver: self.solver.clone(),
            ..PlannerConfig::default()
        }
    }
}
