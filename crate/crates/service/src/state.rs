//! Per-AWC session state, rebuilt from audit events.
//!
//! The live service and audit-log replay go through the same
//! [`SessionState::apply`], so a replayed log reproduces the state exactly.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use stormcrew_core::model::{ModelError, Snapshot};
use stormcrew_core::planner::PlanPipelines;

use crate::audit::{AuditError, AuditRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Normal,
    Failsafe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerSource {
    Cadence,
    CrewAvailableEvent,
    #[default]
    Manual,
}

/// Operator control, as posted to `/controls`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Control {
    Freeze { crew: String },
    Unfreeze { crew: String },
    Lock { crew: String, outage: String },
    Unlock { crew: String },
    Withhold { outage: String },
    /// Undo a withhold.
    Release { outage: String },
}

/// Operator controls ledger. Takes effect at the next solve.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Controls {
    pub frozen: BTreeSet<String>,
    /// Operator locks, crew to outage.
    pub locks: BTreeMap<String, String>,
    pub withheld: BTreeSet<String>,
    /// Slot-1 jobs of the last published plan, crew to outage.
    pub published_locks: BTreeMap<String, String>,
}

impl Controls {
    fn apply(&mut self, control: &Control) {
        match control {
            Control::Freeze { crew } => {
                self.frozen.insert(crew.clone());
            }
            Control::Unfreeze { crew } => {
                self.frozen.remove(crew);
            }
            Control::Lock { crew, outage } => {
                self.published_locks.remove(crew);
                self.locks.insert(crew.clone(), outage.clone());
            }
            Control::Unlock { crew } => {
                self.locks.remove(crew);
                self.published_locks.remove(crew);
            }
            Control::Withhold { outage } => {
                self.withheld.insert(outage.clone());
            }
            Control::Release { outage } => {
                self.withheld.remove(outage);
            }
        }
    }

    fn prune(&mut self, snapshot: &Snapshot) {
        let present = |id: &String| snapshot.ticket(id).is_some();
        self.locks.retain(|_, r| present(r));
        self.published_locks.retain(|_, r| present(r));
        self.withheld.retain(present);
    }
}

/// Controls as they were applied to one solve.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Overrides {
    pub frozen: Vec<String>,
    pub locks: BTreeMap<String, String>,
    pub withheld: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LockSource {
    Operator,
    Published,
    Oms,
}

/// Lay the controls ledger over a raw snapshot.
///
/// Lock precedence is operator, then published slot 1, then the OMS flag;
/// a lock whose ticket is gone or withheld is dropped, and the loser of any
/// clash over a crew or a ticket is dropped.
pub fn overlay(snapshot: &Snapshot, controls: &Controls) -> Result<(Snapshot, Overrides), ModelError> {
    let mut withheld: BTreeSet<String> = snapshot.withheld.iter().cloned().collect();
    withheld.extend(controls.withheld.iter().filter(|r| snapshot.ticket(r).is_some()).cloned());

    let mut candidates: Vec<(LockSource, &str, &str)> = Vec::new();
    for c in &snapshot.crews {
        if let Some(r) = controls.locks.get(&c.id) {
            candidates.push((LockSource::Operator, &c.id, r));
        }
        if let Some(r) = controls.published_locks.get(&c.id) {
            candidates.push((LockSource::Published, &c.id, r));
        }
        if let Some(r) = &c.locked_to {
            candidates.push((LockSource::Oms, &c.id, r));
        }
    }
    candidates.retain(|(_, _, r)| snapshot.ticket(r).is_some() && !withheld.contains(*r));
    candidates.sort();
    let mut locks: BTreeMap<String, String> = BTreeMap::new();
    let mut taken: BTreeSet<&str> = BTreeSet::new();
    for (_, crew, outage) in candidates {
        if locks.contains_key(crew) || taken.contains(outage) {
            continue;
        }
        taken.insert(outage);
        locks.insert(crew.to_string(), outage.to_string());
    }

    let mut out = snapshot.clone();
    for c in &mut out.crews {
        c.frozen |= controls.frozen.contains(&c.id);
        c.locked_to = locks.get(&c.id).cloned();
    }
    out.withheld = withheld.iter().cloned().collect();
    out.check()?;
    let overrides = Overrides {
        frozen: out.crews.iter().filter(|c| c.frozen).map(|c| c.id.clone()).collect(),
        locks,
        withheld: out.withheld.clone(),
    };
    Ok((out, overrides))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub draft_id: String,
    pub snapshot_id: String,
    pub source: TriggerSource,
    pub solved_at: DateTime<Utc>,
    pub plan: PlanPipelines,
}

/// What `GET /plan` serves. Serialized once at publish time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedPlan {
    pub awc: String,
    pub draft_id: String,
    pub published_at: DateTime<Utc>,
    pub stale_confirmed: bool,
    pub plan: PlanPipelines,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Published {
    pub plan: PublishedPlan,
    /// Exact response bytes; never re-rendered.
    pub body: String,
}

impl Published {
    fn new(plan: PublishedPlan) -> Self {
        let body = serde_json::to_string(&plan).expect("plan serializes");
        Published { plan, body }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub crew_id: String,
    pub outage_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunObjective {
    pub run: u8,
    pub objective: f64,
    pub pairs: usize,
    pub weight_sum: f64,
    pub travel_minutes_sum: f64,
    pub solve_micros: u64,
}

/// One audit record's meaning. Every variant names its AWC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum AuditEvent {
    SnapshotIngested {
        awc: String,
        snapshot: Snapshot,
        warnings: Vec<String>,
    },
    IngestRejected {
        awc: String,
        error: String,
    },
    TriggerCompleted {
        awc: String,
        draft: Draft,
        runtime_ms: f64,
        objectives: Vec<RunObjective>,
        overrides: Overrides,
    },
    TriggerRejected {
        awc: String,
        source: TriggerSource,
        reason: String,
    },
    /// An event trigger fired but the operator has to start the run.
    TriggerPrompted {
        awc: String,
        source: TriggerSource,
        newly_available: Vec<String>,
    },
    ControlApplied {
        awc: String,
        control: Control,
    },
    ControlRejected {
        awc: String,
        control: Control,
        error: String,
    },
    Published {
        awc: String,
        plan: PublishedPlan,
        notifications: Vec<Notification>,
    },
    PublishRejected {
        awc: String,
        draft_id: String,
        error: String,
    },
    ProviderFailed {
        awc: String,
        source: TriggerSource,
        snapshot_id: String,
        error: String,
    },
}

impl AuditEvent {
    pub fn awc(&self) -> &str {
        match self {
            AuditEvent::SnapshotIngested { awc, .. }
            | AuditEvent::IngestRejected { awc, .. }
            | AuditEvent::TriggerCompleted { awc, .. }
            | AuditEvent::TriggerRejected { awc, .. }
            | AuditEvent::TriggerPrompted { awc, .. }
            | AuditEvent::ControlApplied { awc, .. }
            | AuditEvent::ControlRejected { awc, .. }
            | AuditEvent::Published { awc, .. }
            | AuditEvent::PublishRejected { awc, .. }
            | AuditEvent::ProviderFailed { awc, .. } => awc,
        }
    }

    pub fn to_parts(&self) -> (String, Value) {
        let mut v = serde_json::to_value(self).expect("audit event serializes");
        let kind = v["kind"].as_str().expect("tagged").to_string();
        (kind, v["payload"].take())
    }

    pub fn from_parts(kind: &str, payload: &Value) -> Result<Self, serde_json::Error> {
        serde_json::from_value(serde_json::json!({ "kind": kind, "payload": payload }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub awc: String,
    pub latest: Option<Snapshot>,
    pub draft: Option<Draft>,
    pub published: Option<Published>,
    pub mode: Mode,
    pub controls: Controls,
    pub last_seq: u64,
    pub drafts_created: u32,
}

impl SessionState {
    pub fn new(awc: impl Into<String>) -> Self {
        SessionState {
            awc: awc.into(),
            latest: None,
            draft: None,
            published: None,
            mode: Mode::Normal,
            controls: Controls::default(),
            last_seq: 0,
            drafts_created: 0,
        }
    }

    pub fn next_draft_id(&self) -> String {
        format!("{}-d{:04}", self.awc, self.drafts_created + 1)
    }

    /// Fold one record into the state.
    pub fn apply(&mut self, rec: &AuditRecord) -> Result<(), AuditError> {
        let bad = |message: String| AuditError::Payload { seq: rec.seq, kind: rec.kind.clone(), message };
        if rec.seq <= self.last_seq {
            return Err(bad(format!("sequence {} is not after {}", rec.seq, self.last_seq)));
        }
        let event = rec.event()?;
        if event.awc() != self.awc {
            return Err(bad(format!("record is for AWC {}, state is {}", event.awc(), self.awc)));
        }
        match event {
            AuditEvent::SnapshotIngested { snapshot, .. } => {
                self.controls.prune(&snapshot);
                self.latest = Some(snapshot);
                self.mode = Mode::Normal;
            }
            AuditEvent::IngestRejected { .. } | AuditEvent::ProviderFailed { .. } => {
                self.mode = Mode::Failsafe;
                self.draft = None;
            }
            AuditEvent::TriggerCompleted { draft, .. } => {
                self.draft = Some(draft);
                self.drafts_created += 1;
            }
            AuditEvent::ControlApplied { control, .. } => self.controls.apply(&control),
            AuditEvent::Published { plan, .. } => {
                self.controls.published_locks = plan
                    .plan
                    .pipelines
                    .iter()
                    .filter_map(|p| p.slots.first().map(|s| (p.crew_id.clone(), s.outage_id.clone())))
                    .collect();
                self.published = Some(Published::new(plan));
                self.draft = None;
            }
            AuditEvent::TriggerRejected { .. }
            | AuditEvent::TriggerPrompted { .. }
            | AuditEvent::ControlRejected { .. }
            | AuditEvent::PublishRejected { .. } => {}
        }
        self.last_seq = rec.seq;
        Ok(())
    }

    /// Rebuild one AWC's state from a whole log.
    pub fn replay<'a>(awc: &str, records: impl IntoIterator<Item = &'a AuditRecord>) -> Result<Self, AuditError> {
        let mut state = SessionState::new(awc);
        for rec in records {
            if rec.awc() == Some(awc) {
                state.apply(rec)?;
            }
        }
        Ok(state)
    }
}
