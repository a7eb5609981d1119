use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stormcrew_core::model::{validate_snapshot, ModelError, SchemaMode, Snapshot};
use stormcrew_core::planner::{freeze_first, plan_pipelines_traced, PlanError, PlannerConfig, RunTrace};
use stormcrew_core::travel::TravelProvider;
use tokio::sync::broadcast;
use tokio::task::JoinHandle;

use crate::audit::{AuditLog, AuditRecord};
use crate::clock::Clock;
use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::state::{
    overlay, AuditEvent, Control, Controls, Draft, Mode, Notification, PublishedPlan, RunObjective, SessionState,
    TriggerSource,
};

/// Pushed to `/events` subscribers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceEvent {
    pub awc: String,
    pub kind: &'static str,
    pub data: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestAck {
    pub snapshot_id: String,
    pub seq: u64,
    pub warnings: Vec<String>,
    /// Outcome of the event trigger, when the snapshot showed a crew come free.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_trigger: Option<TriggerOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TriggerOutcome {
    Drafted { draft_id: String, snapshot_id: String, runtime_ms: f64, objectives: Vec<RunObjective> },
    Prompted { newly_available: Vec<String> },
    Rejected { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishRequest {
    pub draft_id: String,
    #[serde(default)]
    pub confirm_stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Staleness {
    pub draft_id: String,
    pub solved_at: DateTime<Utc>,
    pub age_seconds: f64,
    pub remaining_seconds: f64,
    pub threshold_seconds: f64,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Status {
    pub awc: String,
    pub mode: Mode,
    pub snapshot_id: Option<String>,
    pub draft_id: Option<String>,
    pub published_draft_id: Option<String>,
    pub solving: bool,
    pub last_seq: u64,
}

struct Core {
    sessions: BTreeMap<String, SessionState>,
    audit: AuditLog,
}

struct Shared {
    cfg: ServiceConfig,
    planner: PlannerConfig,
    clock: Arc<dyn Clock>,
    provider: Arc<dyn TravelProvider>,
    core: Mutex<Core>,
    busy: BTreeMap<String, AtomicBool>,
    events: broadcast::Sender<ServiceEvent>,
    /// Draft ids a staleness warning has already gone out for.
    warned: Mutex<BTreeMap<String, String>>,
}

/// Clears the per-AWC solve flag when dropped.
struct BusyGuard<'a>(&'a AtomicBool);

impl<'a> BusyGuard<'a> {
    fn acquire(flag: &'a AtomicBool) -> Option<Self> {
        flag.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).ok().map(|_| BusyGuard(flag))
    }
}

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

/// Dispatch service for a fixed set of AWCs. Cheap to clone.
#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

impl Service {
    /// Build the service, rebuilding each AWC's state from `audit`.
    pub fn new(
        cfg: ServiceConfig,
        clock: Arc<dyn Clock>,
        provider: Arc<dyn TravelProvider>,
        audit: AuditLog,
    ) -> Result<Self, ServiceError> {
        cfg.validate().map_err(|e| ServiceError::Internal(e.to_string()))?;
        let mut sessions = BTreeMap::new();
        for awc in &cfg.awcs {
            sessions.insert(awc.code.clone(), SessionState::replay(&awc.code, audit.records())?);
        }
        let busy = cfg.awcs.iter().map(|a| (a.code.clone(), AtomicBool::new(false))).collect();
        let (events, _) = broadcast::channel(256);
        Ok(Service {
            shared: Arc::new(Shared {
                planner: cfg.planner(),
                cfg,
                clock,
                provider,
                core: Mutex::new(Core { sessions, audit }),
                busy,
                events,
                warned: Mutex::new(BTreeMap::new()),
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.cfg
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServiceEvent> {
        self.shared.events.subscribe()
    }

    pub fn audit_records(&self) -> Vec<AuditRecord> {
        self.core().audit.records().to_vec()
    }

    pub fn session(&self, awc: &str) -> Result<SessionState, ServiceError> {
        let core = self.core();
        core.sessions.get(awc).cloned().ok_or_else(|| ServiceError::UnknownAwc(awc.into()))
    }

    fn core(&self) -> MutexGuard<'_, Core> {
        self.shared.core.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn known(&self, awc: &str) -> Result<(), ServiceError> {
        if self.shared.busy.contains_key(awc) {
            Ok(())
        } else {
            Err(ServiceError::UnknownAwc(awc.into()))
        }
    }

    fn emit(&self, awc: &str, kind: &'static str, data: Value) {
        // No subscribers is fine.
        let _ = self.shared.events.send(ServiceEvent { awc: awc.into(), kind, data });
    }

    /// Append one audit record and fold it into the session it names.
    fn commit(&self, core: &mut Core, event: AuditEvent) -> Result<AuditRecord, ServiceError> {
        let rec = core.audit.append(self.shared.clock.now(), &event)?;
        let session = core.sessions.get_mut(event.awc()).expect("known AWC");
        session.apply(&rec)?;
        tracing::info!(seq = rec.seq, kind = %rec.kind, awc = event.awc(), "audit");
        Ok(rec)
    }

    pub async fn ingest(&self, awc: &str, body: &[u8]) -> Result<IngestAck, ServiceError> {
        self.known(awc)?;
        let parsed = serde_json::from_slice::<Value>(body)
            .map_err(|e| ModelError::Schema(format!("not JSON: {e}")))
            .and_then(|raw| validate_snapshot(&raw, SchemaMode::Strict))
            .and_then(|v| {
                if v.snapshot.awc.code == awc {
                    Ok(v)
                } else {
                    Err(ModelError::AwcMismatch(format!("snapshot is for {}, posted to {awc}", v.snapshot.awc.code)))
                }
            });
        let (ack, newly_available) = {
            let mut core = self.core();
            let validated = match parsed {
                Ok(v) => v,
                Err(e) => {
                    self.commit(&mut core, AuditEvent::IngestRejected { awc: awc.into(), error: e.to_string() })?;
                    drop(core);
                    self.emit(awc, "failsafe_entered", json!({ "reason": e.to_string() }));
                    return Err(e.into());
                }
            };
            let session = &core.sessions[awc];
            let before = session.latest.as_ref().map(|s| eligible(s, &session.controls));
            let snapshot_id = validated.snapshot.snapshot_id.clone();
            let rec = self.commit(
                &mut core,
                AuditEvent::SnapshotIngested {
                    awc: awc.into(),
                    snapshot: validated.snapshot,
                    warnings: validated.warnings.clone(),
                },
            )?;
            let session = &core.sessions[awc];
            let snapshot = session.latest.as_ref().expect("just ingested");
            let after = eligible(snapshot, &session.controls);
            let newly: Vec<String> = match before {
                Some(before) if !snapshot.tickets.is_empty() => after.difference(&before).cloned().collect(),
                _ => vec![],
            };
            (IngestAck { snapshot_id, seq: rec.seq, warnings: validated.warnings, event_trigger: None }, newly)
        };
        let mut ack = ack;
        if !newly_available.is_empty() {
            ack.event_trigger = Some(self.event_trigger(awc, newly_available).await?);
        }
        Ok(ack)
    }

    async fn event_trigger(&self, awc: &str, newly_available: Vec<String>) -> Result<TriggerOutcome, ServiceError> {
        if !self.shared.cfg.auto_run_on_event {
            return self.prompt(awc, newly_available);
        }
        match self.trigger(awc, TriggerSource::CrewAvailableEvent).await {
            Ok(outcome) => Ok(outcome),
            Err(ServiceError::Audit(e)) => Err(e.into()),
            Err(e) => Ok(TriggerOutcome::Rejected { error: e.to_string() }),
        }
    }

    /// Ask the operator to start a run instead of starting one.
    fn prompt(&self, awc: &str, newly_available: Vec<String>) -> Result<TriggerOutcome, ServiceError> {
        let mut core = self.core();
        self.commit(
            &mut core,
            AuditEvent::TriggerPrompted {
                awc: awc.into(),
                source: TriggerSource::CrewAvailableEvent,
                newly_available: newly_available.clone(),
            },
        )?;
        drop(core);
        self.emit(awc, "run_prompt", json!({ "newly_available": newly_available }));
        Ok(TriggerOutcome::Prompted { newly_available })
    }

    fn reject_trigger(&self, awc: &str, source: TriggerSource, err: ServiceError) -> ServiceError {
        let mut core = self.core();
        match self.commit(&mut core, AuditEvent::TriggerRejected { awc: awc.into(), source, reason: err.to_string() }) {
            Ok(_) => err,
            Err(audit) => audit,
        }
    }

    /// Run the planner on the latest snapshot with controls applied and store
    /// the result as the draft. At most one solve per AWC is in flight.
    pub async fn trigger(&self, awc: &str, source: TriggerSource) -> Result<TriggerOutcome, ServiceError> {
        self.known(awc)?;
        if source == TriggerSource::CrewAvailableEvent && !self.shared.cfg.auto_run_on_event {
            return self.prompt(awc, vec![]);
        }
        let Some(_guard) = BusyGuard::acquire(&self.shared.busy[awc]) else {
            return Err(self.reject_trigger(awc, source, ServiceError::Busy));
        };
        let prepared = {
            let core = self.core();
            let session = &core.sessions[awc];
            match (&session.mode, &session.latest) {
                (Mode::Failsafe, _) => Err(ServiceError::Failsafe),
                (_, None) => Err(ServiceError::NoSnapshot),
                (_, Some(snap)) => overlay(snap, &session.controls).map_err(ServiceError::from),
            }
        };
        let (snapshot, overrides) = match prepared {
            Ok(p) => p,
            Err(e) => return Err(self.reject_trigger(awc, source, e)),
        };

        let started = Instant::now();
        let provider = Arc::clone(&self.shared.provider);
        let cfg = self.shared.planner.clone();
        let snap = snapshot.clone();
        let result = tokio::task::spawn_blocking(move || plan_pipelines_traced(&snap, &cfg, provider.as_ref()))
            .await
            .map_err(|e| ServiceError::Internal(format!("solve task: {e}")))?;
        let runtime_ms = started.elapsed().as_secs_f64() * 1000.0;

        let provider_failure = match &result {
            Ok((plan, _)) if plan.partial => plan.partial_reason.clone(),
            Err(PlanError::Travel(e)) => Some(e.to_string()),
            _ => None,
        };
        let mut core = self.core();
        if let Some(error) = provider_failure {
            self.commit(
                &mut core,
                AuditEvent::ProviderFailed {
                    awc: awc.into(),
                    source,
                    snapshot_id: snapshot.snapshot_id.clone(),
                    error: error.clone(),
                },
            )?;
            drop(core);
            self.emit(awc, "failsafe_entered", json!({ "reason": error }));
            return Err(ServiceError::Provider(error));
        }
        let (plan, runs) = match result {
            Ok(r) => r,
            Err(e) => {
                drop(core);
                return Err(self.reject_trigger(awc, source, e.into()));
            }
        };
        // An ingest failure may have landed while we were solving.
        if core.sessions[awc].mode == Mode::Failsafe {
            drop(core);
            return Err(self.reject_trigger(awc, source, ServiceError::Failsafe));
        }
        let draft = Draft {
            draft_id: core.sessions[awc].next_draft_id(),
            snapshot_id: snapshot.snapshot_id.clone(),
            source,
            solved_at: self.shared.clock.now(),
            plan,
        };
        let objectives = objectives(&runs);
        let draft_id = draft.draft_id.clone();
        self.commit(
            &mut core,
            AuditEvent::TriggerCompleted {
                awc: awc.into(),
                draft,
                runtime_ms,
                objectives: objectives.clone(),
                overrides,
            },
        )?;
        drop(core);
        self.emit(awc, "draft_ready", json!({ "draft_id": draft_id, "snapshot_id": snapshot.snapshot_id }));
        Ok(TriggerOutcome::Drafted { draft_id, snapshot_id: snapshot.snapshot_id, runtime_ms, objectives })
    }

    pub fn apply_control(&self, awc: &str, control: Control) -> Result<Controls, ServiceError> {
        self.known(awc)?;
        let mut core = self.core();
        let checked = check_control(&core.sessions[awc], &control);
        match checked {
            Ok(()) => {
                self.commit(&mut core, AuditEvent::ControlApplied { awc: awc.into(), control })?;
                Ok(core.sessions[awc].controls.clone())
            }
            Err(e) => {
                self.commit(&mut core, AuditEvent::ControlRejected { awc: awc.into(), control, error: e.to_string() })?;
                Err(e)
            }
        }
    }

    pub fn controls(&self, awc: &str) -> Result<Controls, ServiceError> {
        Ok(self.session(awc)?.controls)
    }

    /// Publish the current draft with slot 1 frozen. Returns the bytes
    /// `GET /plan` will serve from now on.
    pub fn publish(&self, awc: &str, req: &PublishRequest) -> Result<String, ServiceError> {
        self.known(awc)?;
        let now = self.shared.clock.now();
        let threshold = self.shared.cfg.staleness_seconds;
        let mut core = self.core();
        let session = &core.sessions[awc];
        let checked = match (&session.mode, &session.draft) {
            (Mode::Failsafe, _) => Err(ServiceError::Failsafe),
            (_, None) => Err(ServiceError::NoDraft),
            (_, Some(d)) if d.draft_id != req.draft_id => {
                Err(ServiceError::DraftMismatch { requested: req.draft_id.clone(), current: d.draft_id.clone() })
            }
            (_, Some(d)) => {
                let age = age_seconds(now, d.solved_at);
                if age > threshold && !req.confirm_stale {
                    Err(ServiceError::StalePlan { age_seconds: age, threshold_seconds: threshold })
                } else {
                    Ok((d.clone(), age > threshold))
                }
            }
        };
        let (draft, stale_confirmed) = match checked {
            Ok(d) => d,
            Err(e) => {
                self.commit(
                    &mut core,
                    AuditEvent::PublishRejected { awc: awc.into(), draft_id: req.draft_id.clone(), error: e.to_string() },
                )?;
                return Err(e);
            }
        };
        let plan = freeze_first(&draft.plan);
        let notifications: Vec<Notification> = plan
            .pipelines
            .iter()
            .filter(|p| !p.slots.is_empty())
            .map(|p| Notification {
                crew_id: p.crew_id.clone(),
                outage_ids: p.slots.iter().map(|s| s.outage_id.clone()).collect(),
            })
            .collect();
        let published = PublishedPlan {
            awc: awc.into(),
            draft_id: draft.draft_id.clone(),
            published_at: now,
            stale_confirmed,
            plan,
        };
        self.commit(
            &mut core,
            AuditEvent::Published { awc: awc.into(), plan: published, notifications: notifications.clone() },
        )?;
        let body = core.sessions[awc].published.as_ref().expect("just published").body.clone();
        drop(core);
        self.emit(
            awc,
            "published",
            json!({ "draft_id": draft.draft_id, "stale_confirmed": stale_confirmed, "notifications": notifications }),
        );
        Ok(body)
    }

    pub fn staleness(&self, awc: &str) -> Result<Staleness, ServiceError> {
        let session = self.session(awc)?;
        let draft = session.draft.ok_or(ServiceError::NoDraft)?;
        let threshold = self.shared.cfg.staleness_seconds;
        let age = age_seconds(self.shared.clock.now(), draft.solved_at);
        Ok(Staleness {
            draft_id: draft.draft_id,
            solved_at: draft.solved_at,
            age_seconds: age,
            remaining_seconds: (threshold - age).max(0.0),
            threshold_seconds: threshold,
            stale: age > threshold,
        })
    }

    pub fn snapshot(&self, awc: &str) -> Result<Snapshot, ServiceError> {
        self.session(awc)?.latest.ok_or(ServiceError::NoSnapshot)
    }

    pub fn draft(&self, awc: &str) -> Result<Draft, ServiceError> {
        self.session(awc)?.draft.ok_or(ServiceError::NoDraft)
    }

    /// Published plan bytes; served unchanged in fail-safe mode.
    pub fn plan_body(&self, awc: &str) -> Result<String, ServiceError> {
        self.known(awc)?;
        let core = self.core();
        core.sessions[awc].published.as_ref().map(|p| p.body.clone()).ok_or(ServiceError::NoPlan)
    }

    pub fn status(&self, awc: &str) -> Result<Status, ServiceError> {
        let s = self.session(awc)?;
        Ok(Status {
            awc: s.awc,
            mode: s.mode,
            snapshot_id: s.latest.map(|l| l.snapshot_id),
            draft_id: s.draft.map(|d| d.draft_id),
            published_draft_id: s.published.map(|p| p.plan.draft_id),
            solving: self.shared.busy[awc].load(Ordering::Acquire),
            last_seq: s.last_seq,
        })
    }

    /// Emit `staleness_warning` once per draft that has passed the limit.
    pub fn check_staleness(&self) -> Vec<String> {
        let mut warned = self.shared.warned.lock().unwrap_or_else(|e| e.into_inner());
        let mut fired = Vec::new();
        for awc in self.shared.busy.keys() {
            let Ok(s) = self.staleness(awc) else { continue };
            if s.stale && warned.get(awc) != Some(&s.draft_id) {
                warned.insert(awc.clone(), s.draft_id.clone());
                self.emit(awc, "staleness_warning", serde_json::to_value(&s).expect("serializes"));
                fired.push(awc.clone());
            }
        }
        fired
    }

    /// Cadence trigger for every AWC, plus a one-second staleness watch.
    pub fn spawn_background(&self) -> Vec<JoinHandle<()>> {
        let cadence = StdDuration::from_secs_f64(self.shared.cfg.cadence_minutes * 60.0);
        let svc = self.clone();
        let cadence_task = tokio::spawn(async move {
            let mut every = tokio::time::interval(cadence);
            every.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            every.tick().await;
            loop {
                every.tick().await;
                for awc in svc.shared.busy.keys() {
                    if let Err(e) = svc.trigger(awc, TriggerSource::Cadence).await {
                        tracing::warn!(awc = %awc, error = %e, "cadence trigger");
                    }
                }
            }
        });
        let svc = self.clone();
        let watch_task = tokio::spawn(async move {
            let mut every = tokio::time::interval(StdDuration::from_secs(1));
            loop {
                every.tick().await;
                svc.check_staleness();
            }
        });
        vec![cadence_task, watch_task]
    }
}

fn age_seconds(now: DateTime<Utc>, then: DateTime<Utc>) -> f64 {
    (now - then).num_milliseconds() as f64 / 1000.0
}

fn eligible(snapshot: &Snapshot, controls: &Controls) -> BTreeSet<String> {
    let effective = overlay(snapshot, controls).map(|(s, _)| s).unwrap_or_else(|_| snapshot.clone());
    effective.crews.iter().filter(|c| c.is_eligible()).map(|c| c.id.clone()).collect()
}

fn objectives(runs: &[RunTrace]) -> Vec<RunObjective> {
    runs.iter()
        .map(|r| {
            let (mut weight_sum, mut travel) = (0.0, 0.0);
            for p in &r.assignment.pairs {
                let i = r.profits.crew_index(&p.crew_id).expect("assigned crew");
                let j = r.profits.outage_index(&p.outage_id).expect("assigned outage");
                weight_sum += r.profits.weights[j];
                travel += r.profits.travel_minutes[i][j];
            }
            RunObjective {
                run: r.assignment.run_index,
                objective: r.assignment.objective,
                pairs: r.assignment.pairs.len(),
                weight_sum,
                travel_minutes_sum: travel,
                solve_micros: r.solve_micros,
            }
        })
        .collect()
}

fn check_control(session: &SessionState, control: &Control) -> Result<(), ServiceError> {
    let snapshot = session.latest.as_ref().ok_or(ServiceError::NoSnapshot)?;
    let crew = |id: &str| snapshot.crew(id).map(|_| ()).ok_or_else(|| ServiceError::UnknownCrew(id.into()));
    let outage = |id: &str| snapshot.ticket(id).map(|_| ()).ok_or_else(|| ServiceError::UnknownOutage(id.into()));
    match control {
        Control::Freeze { crew: c } | Control::Unfreeze { crew: c } | Control::Unlock { crew: c } => crew(c),
        Control::Withhold { outage: r } | Control::Release { outage: r } => outage(r),
        Control::Lock { crew: c, outage: r } => {
            crew(c)?;
            outage(r)?;
            let (effective, overrides) = overlay(snapshot, &session.controls)?;
            if effective.withheld.contains(r) {
                return Err(ServiceError::Withheld(r.clone()));
            }
            match overrides.locks.iter().find(|(holder, target)| *target == r && *holder != c) {
                Some((holder, _)) => Err(ServiceError::ConflictingLock { outage: r.clone(), crew: holder.clone() }),
                None => Ok(()),
            }
        }
    }
}
