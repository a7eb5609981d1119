//! Travel-time providers and matrix construction.
//!
//! A provider answers "how many seconds from A to B". Three ship here:
//! great-circle distance at a storm-mode speed, a precomputed offline matrix
//! with nearest-node snapping, and an HTTP distance-matrix client. Providers
//! are looked up by name through [`provider_registry`].

mod haversine;
mod offline;
mod router;

pub use haversine::HaversineProvider;
pub use offline::OfflineMatrix;
pub use router::{MatrixRequest, MatrixResponse, RouterClient, ROUTER_KEY_ENV};

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::registry::{Registry, UnknownEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TravelError {
    #[error("router unavailable: {0}")]
    RouterUnavailable(String),
    #[error("no matrix node within {radius_m} m of ({lat}, {lon})")]
    MatrixMiss { lat: f64, lon: f64, radius_m: f64 },
    #[error("offline matrix has no entry {from} -> {to}")]
    MissingCell { from: String, to: String },
    #[error("travel config: {0}")]
    Config(String),
    #[error("matrix file: {0}")]
    File(String),
    #[error("empty origin or destination list")]
    EmptyInput,
    #[error("provider returned invalid travel time {0}")]
    InvalidValue(f64),
    #[error(transparent)]
    UnknownProvider(#[from] UnknownEntry),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderKind {
    Haversine,
    OfflineMatrix,
    ExternalRouter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TravelConfig {
    /// Registry name of the provider: `haversine`, `offline` or `router`.
    pub provider: String,
    pub fallback_speed_mph: f64,
    pub staleness_alpha: f64,
    /// Anchor age beyond which travel times are inflated.
    pub staleness_threshold_seconds: f64,
    pub router_endpoint: Option<String>,
    pub router_timeout_ms: u64,
    /// Fill cells the provider could not answer with great-circle estimates.
    pub fallback_enabled: bool,
    pub offline_nodes: Option<PathBuf>,
    pub offline_matrix: Option<PathBuf>,
    /// Per-cell overrides (same CSV layout as the matrix), e.g. closed roads.
    pub offline_overrides: Option<PathBuf>,
    pub snap_radius_m: f64,
}

impl Default for TravelConfig {
    fn default() -> Self {
        TravelConfig {
            provider: "haversine".into(),
            fallback_speed_mph: 22.5,
            staleness_alpha: 0.15,
            staleness_threshold_seconds: 15.0 * 60.0,
            router_endpoint: None,
            router_timeout_ms: 10_000,
            fallback_enabled: true,
            offline_nodes: None,
            offline_matrix: None,
            offline_overrides: None,
            snap_radius_m: 1_000.0,
        }
    }
}

impl TravelConfig {
    pub fn validate(&self) -> Result<(), TravelError> {
        if !(5.0..=80.0).contains(&self.fallback_speed_mph) {
            return Err(TravelError::Config(format!(
                "fallback_speed_mph {} outside [5, 80]",
                self.fallback_speed_mph
            )));
        }
        if !(self.staleness_alpha.is_finite() && self.staleness_alpha >= 0.0) {
            return Err(TravelError::Config("staleness_alpha must be >= 0".into()));
        }
        if !(self.staleness_threshold_seconds.is_finite() && self.staleness_threshold_seconds >= 0.0) {
            return Err(TravelError::Config("staleness_threshold_seconds must be >= 0".into()));
        }
        if !(self.snap_radius_m.is_finite() && self.snap_radius_m > 0.0) {
            return Err(TravelError::Config("snap_radius_m must be positive".into()));
        }
        Ok(())
    }
}

pub trait TravelProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    /// Travel time in seconds.
    fn seconds(&self, from: &GeoPoint, to: &GeoPoint) -> Result<f64, TravelError>;

    /// All pairs at once. `None` marks a cell the provider could not answer;
    /// an `Err` means the whole batch failed.
    fn batch(&self, origins: &[GeoPoint], destinations: &[GeoPoint]) -> Result<Vec<Vec<Option<f64>>>, TravelError> {
        Ok(origins
            .iter()
            .map(|o| destinations.iter().map(|d| self.seconds(o, d).ok()).collect())
            .collect())
    }
}

/// Travel time from `from` to `to`; identical points are always 0 s.
pub fn travel_time(from: &GeoPoint, to: &GeoPoint, provider: &dyn TravelProvider) -> Result<f64, TravelError> {
    if from == to {
        return Ok(0.0);
    }
    let s = provider.seconds(from, to)?;
    if !s.is_finite() || s < 0.0 {
        return Err(TravelError::InvalidValue(s));
    }
    Ok(s)
}

/// Inflate `tau` by `1 + alpha` once the anchor is older than the threshold.
pub fn robustify(tau: f64, anchor_age: Duration, cfg: &TravelConfig) -> f64 {
    let age = anchor_age.num_milliseconds() as f64 / 1000.0;
    if age > cfg.staleness_threshold_seconds {
        tau * (1.0 + cfg.staleness_alpha)
    } else {
        tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelMatrix {
    pub origins: Vec<GeoPoint>,
    pub destinations: Vec<GeoPoint>,
    pub seconds: Vec<Vec<f64>>,
    pub computed_at: DateTime<Utc>,
    pub provider: ProviderKind,
    /// Cells filled by the great-circle fallback, as `(origin, destination)`.
    pub fallback_cells: Vec<(usize, usize)>,
}

impl TravelMatrix {
    pub fn origin_index(&self, p: &GeoPoint) -> Option<usize> {
        self.origins.iter().position(|o| o == p)
    }

    pub fn destination_index(&self, p: &GeoPoint) -> Option<usize> {
        self.destinations.iter().position(|d| d == p)
    }
}

/// Fill one matrix for a solver run, falling back cell-by-cell when the
/// provider cannot answer.
pub fn build_matrix(
    origins: &[GeoPoint],
    destinations: &[GeoPoint],
    cfg: &TravelConfig,
    provider: &dyn TravelProvider,
    computed_at: DateTime<Utc>,
) -> Result<TravelMatrix, TravelError> {
    if origins.is_empty() || destinations.is_empty() {
        return Err(TravelError::EmptyInput);
    }
    let raw = match provider.batch(origins, destinations) {
        Ok(cells) if cells.len() == origins.len() && cells.iter().all(|r| r.len() == destinations.len()) => cells,
        Ok(_) => {
            if !cfg.fallback_enabled {
                return Err(TravelError::RouterUnavailable("matrix shape mismatch".into()));
            }
            vec![vec![None; destinations.len()]; origins.len()]
        }
        Err(e) if cfg.fallback_enabled => {
            tracing::warn!(error = %e, "travel provider failed, using great-circle fallback");
            vec![vec![None; destinations.len()]; origins.len()]
        }
        Err(e) => return Err(e),
    };
    let fallback = HaversineProvider::new(cfg.fallback_speed_mph);
    let mut seconds = vec![vec![0.0; destinations.len()]; origins.len()];
    let mut fallback_cells = Vec::new();
    for (i, o) in origins.iter().enumerate() {
        for (j, d) in destinations.iter().enumerate() {
            if o == d {
                continue;
            }
            match raw[i][j] {
                Some(s) if s.is_finite() && s >= 0.0 => seconds[i][j] = s,
                _ if cfg.fallback_enabled => {
                    seconds[i][j] = fallback.seconds(o, d)?;
                    fallback_cells.push((i, j));
                }
                Some(s) => return Err(TravelError::InvalidValue(s)),
                None => {
                    return Err(TravelError::RouterUnavailable(format!("no travel time for cell ({i}, {j})")));
                }
            }
        }
    }
    Ok(TravelMatrix {
        origins: origins.to_vec(),
        destinations: destinations.to_vec(),
        seconds,
        computed_at,
        provider: provider.kind(),
        fallback_cells,
    })
}

pub type ProviderFactory = fn(&TravelConfig) -> Result<Arc<dyn TravelProvider>, TravelError>;

fn make_haversine(cfg: &TravelConfig) -> Result<Arc<dyn TravelProvider>, TravelError> {
    Ok(Arc::new(HaversineProvider::new(cfg.fallback_speed_mph)))
}

fn make_offline(cfg: &TravelConfig) -> Result<Arc<dyn TravelProvider>, TravelError> {
    let (Some(nodes), Some(matrix)) = (&cfg.offline_nodes, &cfg.offline_matrix) else {
        return Err(TravelError::Config("offline provider needs offline_nodes and offline_matrix".into()));
    };
    let mut m = OfflineMatrix::from_files(nodes, matrix)?.with_snap_radius(cfg.snap_radius_m);
    if let Some(overrides) = &cfg.offline_overrides {
        m.apply_overrides_file(overrides)?;
    }
    Ok(Arc::new(m))
}

fn make_router(cfg: &TravelConfig) -> Result<Arc<dyn TravelProvider>, TravelError> {
    let Some(endpoint) = &cfg.router_endpoint else {
        return Err(TravelError::Config("router provider needs router_endpoint".into()));
    };
    Ok(Arc::new(RouterClient::from_env(endpoint, std::time::Duration::from_millis(cfg.router_timeout_ms))))
}

pub fn provider_registry() -> Registry<ProviderFactory> {
    Registry::new("travel provider")
        .with("haversine", make_haversine as ProviderFactory)
        .with("offline", make_offline as ProviderFactory)
        .with("router", make_router as ProviderFactory)
}

/// Validate `cfg` and build the provider it names.
pub fn provider_from_config(cfg: &TravelConfig) -> Result<Arc<dyn TravelProvider>, TravelError> {
    cfg.validate()?;
    let registry = provider_registry();
    let factory = registry.get(&cfg.provider)?;
    factory(cfg)
}
