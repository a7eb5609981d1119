//! Domain types shared across the planner, baseline, replay and service.

mod merge;
mod schema;

pub use merge::{merge_duplicates, merge_duplicates_with, DuplicateRule};
pub use schema::{validate_snapshot, SchemaMode, Validated};

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::geo::GeoPoint;

/// Most jobs a crew can hold in one pipeline.
pub const MAX_ASSIGNMENTS: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("AWC mismatch: {0}")]
    AwcMismatch(String),
}

/// Outage classification. `FPS1`..`FPS3` are fire/police/safety calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    FPS1,
    FPS2,
    FPS3,
    Critical,
    Single,
    NonOutage,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::FPS1,
        Category::FPS2,
        Category::FPS3,
        Category::Critical,
        Category::Single,
        Category::NonOutage,
    ];

    pub fn is_fps(self) -> bool {
        matches!(self, Category::FPS1 | Category::FPS2 | Category::FPS3)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Area work center: the decomposition unit, with the yard crews start from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwcId {
    pub code: String,
    pub yard: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageTicket {
    pub id: String,
    pub awc: String,
    pub location: GeoPoint,
    pub created_at: DateTime<Utc>,
    pub customers: u32,
    pub category: Category,
    pub assessed_customers: u32,
    /// Ids of duplicate tickets folded into this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absorbed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrewState {
    pub id: String,
    pub awc: String,
    /// Last confirmed location.
    pub anchor: GeoPoint,
    pub anchor_confirmed_at: DateTime<Utc>,
    /// Raw availability flag from the outage management system.
    pub availability: bool,
    /// Operator freeze; a frozen crew is never offered new work.
    pub frozen: bool,
    pub locked_to: Option<String>,
    pub assigned_count: u8,
    pub shift_active: bool,
}

impl CrewState {
    /// Availability after operator controls and pipeline capacity.
    pub fn is_eligible(&self) -> bool {
        self.availability && !self.frozen && self.shift_active && self.assigned_count < MAX_ASSIGNMENTS
    }
}

/// Immutable view of outage-management state at `taken_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub awc: AwcId,
    pub taken_at: DateTime<Utc>,
    pub snapshot_id: String,
    pub tickets: Vec<OutageTicket>,
    pub crews: Vec<CrewState>,
    /// Tickets the operator has withheld from optimization.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub withheld: Vec<String>,
}

impl Snapshot {
    pub fn ticket(&self, id: &str) -> Option<&OutageTicket> {
        self.tickets.iter().find(|t| t.id == id)
    }

    pub fn crew(&self, id: &str) -> Option<&CrewState> {
        self.crews.iter().find(|c| c.id == id)
    }

    /// Re-check every invariant; used after controls are overlaid on a
    /// validated snapshot.
    pub fn check(&self) -> Result<(), ModelError> {
        if self.awc.code.is_empty() {
            return Err(ModelError::Invariant("awc code is empty".into()));
        }
        if self.snapshot_id.is_empty() {
            return Err(ModelError::Invariant("snapshot_id is empty".into()));
        }
        let mut ticket_ids = BTreeSet::new();
        for t in &self.tickets {
            if t.id.is_empty() {
                return Err(ModelError::Invariant("ticket with empty id".into()));
            }
            if !ticket_ids.insert(t.id.as_str()) {
                return Err(ModelError::Invariant(format!("duplicate ticket id {}", t.id)));
            }
            if t.customers < 1 {
                return Err(ModelError::Invariant(format!("ticket {} has customers=0", t.id)));
            }
            if t.assessed_customers > t.customers {
                return Err(ModelError::Invariant(format!(
                    "ticket {} assessed_customers {} exceeds customers {}",
                    t.id, t.assessed_customers, t.customers
                )));
            }
            if t.awc != self.awc.code {
                return Err(ModelError::AwcMismatch(format!(
                    "ticket {} belongs to {}, snapshot is {}",
                    t.id, t.awc, self.awc.code
                )));
            }
        }
        let mut crew_ids = BTreeSet::new();
        for c in &self.crews {
            if c.id.is_empty() {
                return Err(ModelError::Invariant("crew with empty id".into()));
            }
            if !crew_ids.insert(c.id.as_str()) {
                return Err(ModelError::Invariant(format!("duplicate crew id {}", c.id)));
            }
            if c.assigned_count > MAX_ASSIGNMENTS {
                return Err(ModelError::Invariant(format!(
                    "crew {} assigned_count {} exceeds {}",
                    c.id, c.assigned_count, MAX_ASSIGNMENTS
                )));
            }
            if c.awc != self.awc.code {
                return Err(ModelError::AwcMismatch(format!(
                    "crew {} belongs to {}, snapshot is {}",
                    c.id, c.awc, self.awc.code
                )));
            }
            if let Some(r) = &c.locked_to {
                if !ticket_ids.contains(r.as_str()) {
                    return Err(ModelError::Invariant(format!(
                        "crew {} locked to unknown ticket {}",
                        c.id, r
                    )));
                }
            }
        }
        let mut locked = BTreeSet::new();
        for c in &self.crews {
            if let Some(r) = &c.locked_to {
                if !locked.insert(r.as_str()) {
                    return Err(ModelError::Invariant(format!("ticket {r} locked to more than one crew")));
                }
            }
        }
        for w in &self.withheld {
            if !ticket_ids.contains(w.as_str()) {
                return Err(ModelError::Invariant(format!("withheld ticket {w} not in snapshot")));
            }
        }
        Ok(())
    }
}

/// Crews offered to the optimizer, sorted by id.
pub fn eligible_crews(snapshot: &Snapshot) -> Vec<String> {
    let mut ids: Vec<String> = snapshot
        .crews
        .iter()
        .filter(|c| c.is_eligible())
        .map(|c| c.id.clone())
        .collect();
    ids.sort();
    ids
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use chrono::TimeZone;

    pub fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 3, 7, 12, 0, 0).unwrap()
    }

    pub fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    pub fn ticket(id: &str, lat: f64, lon: f64, customers: u32, category: Category) -> OutageTicket {
        OutageTicket {
            id: id.into(),
            awc: "KEENE".into(),
            location: pt(lat, lon),
            created_at: t0(),
            customers,
            category,
            assessed_customers: 0,
            absorbed: vec![],
        }
    }

    pub fn crew(id: &str, lat: f64, lon: f64) -> CrewState {
        CrewState {
            id: id.into(),
            awc: "KEENE".into(),
            anchor: pt(lat, lon),
            anchor_confirmed_at: t0(),
            availability: true,
            frozen: false,
            locked_to: None,
            assigned_count: 0,
            shift_active: true,
        }
    }

    pub fn snapshot(tickets: Vec<OutageTicket>, crews: Vec<CrewState>) -> Snapshot {
        Snapshot {
            awc: AwcId { code: "KEENE".into(), yard: pt(42.93, -72.28) },
            taken_at: t0(),
            snapshot_id: "s1".into(),
            tickets,
            crews,
            withheld: vec![],
        }
    }
}
