//! Discrete-event replay of a timed outage stream under either dispatch
//! policy, plus the route metrics used to compare them.

mod engine;
mod generate;
pub mod metrics;
mod policy;

pub use engine::{replay, replay_with, Moment, PlanRecord, ReplayFailure, ReplayOutput, Sim, TriggerReason};
pub use generate::{generate_scenario, ArrivalProfile, GenError, GenParams, KEENE_YARD};
pub use policy::{policy_registry, BauPolicy, DispatchPolicy, OptimizedPolicy, PolicyFactory, ReplayConfig};

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::model::{AwcId, Category, CrewState, OutageTicket};
use crate::planner::PlanError;
use crate::registry::UnknownEntry;
use crate::travel::{TravelConfig, TravelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Planner(#[from] PlanError),
    #[error(transparent)]
    Travel(#[from] TravelError),
    #[error(transparent)]
    UnknownPolicy(#[from] UnknownEntry),
}

/// Minutes spent on site, resolved per ticket, then per category, then the
/// fixed default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessModel {
    pub fixed_minutes: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_category: BTreeMap<Category, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_ticket: BTreeMap<String, f64>,
}

impl Default for AssessModel {
    fn default() -> Self {
        AssessModel { fixed_minutes: 20.0, per_category: BTreeMap::new(), per_ticket: BTreeMap::new() }
    }
}

impl AssessModel {
    pub fn minutes(&self, ticket: &OutageTicket) -> f64 {
        self.per_ticket
            .get(&ticket.id)
            .or_else(|| self.per_category.get(&ticket.category))
            .copied()
            .unwrap_or(self.fixed_minutes)
    }

    fn validate(&self) -> Result<(), ReplayError> {
        let all = std::iter::once(&self.fixed_minutes).chain(self.per_category.values()).chain(self.per_ticket.values());
        for m in all {
            if !(m.is_finite() && *m > 0.0) {
                return Err(ReplayError::Scenario(format!("assessment minutes must be positive, got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub awc: AwcId,
    pub horizon_start: DateTime<Utc>,
    pub horizon_end: DateTime<Utc>,
    /// Sorted by `(created_at, id)`.
    pub outage_stream: Vec<OutageTicket>,
    pub crew_roster: Vec<CrewState>,
    #[serde(default)]
    pub assess_duration_model: AssessModel,
    #[serde(default)]
    pub travel: TravelConfig,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ReplayError> {
        let bad = |m: String| Err(ReplayError::Scenario(m));
        if self.horizon_end <= self.horizon_start {
            return bad("horizon end must be after start".into());
        }
        for w in self.outage_stream.windows(2) {
            if (w[0].created_at, &w[0].id) >= (w[1].created_at, &w[1].id) {
                return bad(format!("outage stream not sorted at {}", w[1].id));
            }
        }
        for t in &self.outage_stream {
            if t.created_at < self.horizon_start || t.created_at > self.horizon_end {
                return bad(format!("ticket {} created outside the horizon", t.id));
            }
            if t.awc != self.awc.code {
                return bad(format!("ticket {} belongs to AWC {}", t.id, t.awc));
            }
        }
        let mut ids: Vec<&str> = self.crew_roster.iter().map(|c| c.id.as_str()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate crew id".into());
        }
        for c in &self.crew_roster {
            if c.awc != self.awc.code {
                return bad(format!("crew {} belongs to AWC {}", c.id, c.awc));
            }
        }
        self.assess_duration_model.validate()?;
        self.travel.validate()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ReplayError> {
        let text = std::fs::read_to_string(path).map_err(|e| ReplayError::Scenario(format!("{}: {e}", path.display())))?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| ReplayError::Scenario(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyTag {
    #[serde(rename = "BAU")]
    Bau,
    Optimized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub outage_id: String,
    pub depart_time: DateTime<Utc>,
    pub arrive_time: DateTime<Utc>,
    pub complete_time: DateTime<Utc>,
    pub from: GeoPoint,
    pub to: GeoPoint,
    pub assessed_customers: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrewRoute {
    pub crew_id: String,
    pub visits: Vec<Visit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteLog {
    pub scenario_id: String,
    pub policy: PolicyTag,
    pub yard: GeoPoint,
    /// One entry per roster crew, sorted by id.
    pub routes: Vec<CrewRoute>,
    /// Tickets not completed by the horizon end.
    pub unfinished: Vec<String>,
}

impl RouteLog {
    pub fn route(&self, crew_id: &str) -> Option<&CrewRoute> {
        self.routes.iter().find(|r| r.crew_id == crew_id)
    }

    pub fn visit_count(&self) -> usize {
        self.routes.iter().map(|r| r.visits.len()).sum()
    }
}
