//! Rolling assignment: up to `k_max` matching runs per snapshot, each one
//! dequeuing the outages it assigned and moving the assigned crews' anchors
//! onto them, so every crew ends up with an ordered pipeline of up to three
//! outages.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::model::{merge_duplicates_with, DuplicateRule, ModelError, Snapshot, MAX_ASSIGNMENTS};
use crate::priority::{weigh_all, PriorityConfig, PriorityError, WeightedOutage};
use crate::registry::UnknownEntry;
use crate::solver::{profit_matrix, solver_registry, Assignment, CrewAnchor, ProfitMatrix, SolveError};
use crate::travel::{build_matrix, TravelConfig, TravelError, TravelProvider};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Priority(#[from] PriorityError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Travel(#[from] TravelError),
    #[error(transparent)]
    UnknownSolver(#[from] UnknownEntry),
    #[error("stale run: planner is at run {expected}, assignment is for run {got}")]
    StaleRun { expected: u8, got: u8 },
    #[error("planner config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub priority: PriorityConfig,
    pub travel: TravelConfig,
    /// Profit lost per minute of travel.
    pub beta_dist: f64,
    /// Give every crew work while outages remain, even at negative profit.
    pub force_full: bool,
    pub k_max: u8,
    pub duplicates: DuplicateRule,
    pub solver: String,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            priority: PriorityConfig::default(),
            travel: TravelConfig::default(),
            beta_dist: 1.0,
            force_full: true,
            k_max: MAX_ASSIGNMENTS,
            duplicates: DuplicateRule::default(),
            solver: "hungarian".into(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        self.priority.validate()?;
        self.travel.validate()?;
        if !(self.beta_dist.is_finite() && self.beta_dist > 0.0) {
            return Err(PlanError::Config(format!("beta_dist must be positive, got {}", self.beta_dist)));
        }
        if self.k_max == 0 || self.k_max > MAX_ASSIGNMENTS {
            return Err(PlanError::Config(format!("k_max must be in 1..={MAX_ASSIGNMENTS}, got {}", self.k_max)));
        }
        solver_registry().get(&self.solver)?;
        Ok(())
    }
}

/// State between runs: the remaining queue, where each crew will be, and how
/// many slots each crew already holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub run_index: u8,
    pub candidate_outages: Vec<WeightedOutage>,
    pub anchors: BTreeMap<String, GeoPoint>,
    pub assigned_counts: BTreeMap<String, u8>,
}

/// Remove assigned outages from the queue, move assigned crews onto their
/// outage and advance the run index. Unassigned crews keep their anchor.
pub fn apply_run(state: &PlannerState, asg: &Assignment) -> Result<PlannerState, PlanError> {
    if asg.run_index != state.run_index {
        return Err(PlanError::StaleRun { expected: state.run_index, got: asg.run_index });
    }
    let mut next = state.clone();
    let taken: BTreeSet<&str> = asg.pairs.iter().map(|p| p.outage_id.as_str()).collect();
    for pair in &asg.pairs {
        let loc = state
            .candidate_outages
            .iter()
            .find(|o| o.ticket.id == pair.outage_id)
            .map(|o| o.ticket.location)
            .ok_or_else(|| PlanError::Config(format!("assigned outage {} is not queued", pair.outage_id)))?;
        next.anchors.insert(pair.crew_id.clone(), loc);
        *next.assigned_counts.entry(pair.crew_id.clone()).or_insert(0) += 1;
    }
    next.candidate_outages.retain(|o| !taken.contains(o.ticket.id.as_str()));
    next.run_index += 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSlot {
    pub outage_id: String,
    pub frozen: bool,
    pub rationale: String,
    pub rank: u8,
    pub weight: f64,
    pub travel_minutes: f64,
    pub profit: f64,
    /// Fixed by an operator lock or a previously published frozen slot.
    pub locked: bool,
    /// Chosen by the tie-break rule among equally profitable options.
    pub tie_break: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrewPipeline {
    pub crew_id: String,
    pub slots: Vec<PipelineSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPipelines {
    pub awc: String,
    pub snapshot_id: String,
    pub created_at: DateTime<Utc>,
    /// Every crew in the snapshot, sorted by id; ineligible crews are empty.
    pub pipelines: Vec<CrewPipeline>,
    pub runs: u8,
    /// Set when a run failed and only earlier runs are present.
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_reason: Option<String>,
}

impl PlanPipelines {
    pub fn pipeline(&self, crew_id: &str) -> Option<&CrewPipeline> {
        self.pipelines.iter().find(|p| p.crew_id == crew_id)
    }

    pub fn outage_ids(&self) -> Vec<&str> {
        self.pipelines.iter().flat_map(|p| p.slots.iter().map(|s| s.outage_id.as_str())).collect()
    }
}

/// Mark slot 1 of every non-empty pipeline frozen.
pub fn freeze_first(plan: &PlanPipelines) -> PlanPipelines {
    let mut out = plan.clone();
    for p in &mut out.pipelines {
        if let Some(first) = p.slots.first_mut() {
            first.frozen = true;
        }
    }
    out
}

/// One solver run as seen by the planner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub before: PlannerState,
    pub profits: ProfitMatrix,
    pub assignment: Assignment,
    pub after: PlannerState,
    /// Wall-clock solve time; not part of the plan.
    pub solve_micros: u64,
}

pub fn plan_pipelines(
    snapshot: &Snapshot,
    cfg: &PlannerConfig,
    provider: &dyn TravelProvider,
) -> Result<PlanPipelines, PlanError> {
    plan_pipelines_traced(snapshot, cfg, provider).map(|(plan, _)| plan)
}

/// Tickets the planner may use: already created, not withheld, duplicates
/// folded, weighted, ordered by `(created_at, id)`.
pub fn candidate_outages(snapshot: &Snapshot, cfg: &PlannerConfig) -> Result<Vec<WeightedOutage>, PlanError> {
    let withheld: BTreeSet<&str> = snapshot.withheld.iter().map(String::as_str).collect();
    let visible: Vec<_> = snapshot
        .tickets
        .iter()
        .filter(|t| t.created_at <= snapshot.taken_at && !withheld.contains(t.id.as_str()))
        .cloned()
        .collect();
    let merged = merge_duplicates_with(&visible, &cfg.duplicates);
    Ok(weigh_all(&merged, &cfg.priority)?)
}

pub fn plan_pipelines_traced(
    snapshot: &Snapshot,
    cfg: &PlannerConfig,
    provider: &dyn TravelProvider,
) -> Result<(PlanPipelines, Vec<RunTrace>), PlanError> {
    cfg.validate()?;
    snapshot.check()?;
    let registry = solver_registry();
    let solver = registry.get(&cfg.solver)?;

    let mut queue = candidate_outages(snapshot, cfg)?;
    // Resolve locks against the merged queue: a lock on an absorbed duplicate
    // follows its survivor.
    let resolve = |id: &str, queue: &[WeightedOutage]| {
        queue
            .iter()
            .find(|o| o.ticket.id == id || o.ticket.absorbed.iter().any(|a| a == id))
            .map(|o| o.ticket.id.clone())
    };
    let mut locks = Vec::new();
    let mut held = BTreeSet::new();
    for crew in &snapshot.crews {
        let Some(target) = crew.locked_to.as_deref().and_then(|id| resolve(id, &queue)) else {
            continue;
        };
        if crew.is_eligible() {
            locks.push((crew.id.clone(), target));
        } else {
            held.insert(target);
        }
    }
    // An outage reserved for a crew that cannot take work right now is kept
    // away from everyone else.
    queue.retain(|o| !held.contains(&o.ticket.id));

    let mut state = PlannerState {
        run_index: 1,
        candidate_outages: queue,
        anchors: snapshot.crews.iter().map(|c| (c.id.clone(), c.anchor)).collect(),
        assigned_counts: snapshot.crews.iter().map(|c| (c.id.clone(), c.assigned_count)).collect(),
    };
    let mut crews: Vec<_> = snapshot.crews.iter().collect();
    crews.sort_by(|a, b| a.id.cmp(&b.id));
    let mut slots: BTreeMap<String, Vec<PipelineSlot>> = crews.iter().map(|c| (c.id.clone(), vec![])).collect();
    let mut traces = Vec::new();
    let mut partial_reason = None;

    while state.run_index <= cfg.k_max {
        let k = state.run_index;
        let eligible: Vec<&&crate::model::CrewState> = crews
            .iter()
            .filter(|c| {
                c.availability && !c.frozen && c.shift_active && state.assigned_counts[&c.id] < MAX_ASSIGNMENTS
            })
            .collect();
        if eligible.is_empty() || state.candidate_outages.is_empty() {
            break;
        }
        let anchors: Vec<CrewAnchor> = eligible
            .iter()
            .map(|c| CrewAnchor {
                crew_id: c.id.clone(),
                anchor: state.anchors[&c.id],
                // Later runs start from a planned position, not a stale fix.
                anchor_age: if k == 1 { snapshot.taken_at - c.anchor_confirmed_at } else { Duration::zero() },
            })
            .collect();
        let origins = distinct(anchors.iter().map(|a| a.anchor));
        let destinations = distinct(state.candidate_outages.iter().map(|o| o.ticket.location));
        let matrix = match build_matrix(&origins, &destinations, &cfg.travel, provider, snapshot.taken_at) {
            Ok(m) => m,
            Err(e) => {
                partial_reason = Some(format!("run {k}: {e}"));
                break;
            }
        };
        let pm = match profit_matrix(&anchors, &state.candidate_outages, &matrix, cfg.beta_dist, &cfg.travel, k) {
            Ok(pm) => pm,
            Err(e @ SolveError::MissingTau { .. }) => {
                partial_reason = Some(format!("run {k}: {e}"));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let run_locks: Vec<(String, String)> = if k == 1 {
            locks.iter().filter(|(c, _)| pm.crew_index(c).is_some()).cloned().collect()
        } else {
            vec![]
        };
        let started = Instant::now();
        let asg = solver.solve(&pm, &run_locks, cfg.force_full)?;
        let solve_micros = started.elapsed().as_micros() as u64;

        for pair in &asg.pairs {
            let (i, j) = (pm.crew_index(&pair.crew_id).unwrap(), pm.outage_index(&pair.outage_id).unwrap());
            let (w, tau) = (pm.weights[j], pm.travel_minutes[i][j]);
            slots.get_mut(&pair.crew_id).expect("crew from snapshot").push(PipelineSlot {
                outage_id: pair.outage_id.clone(),
                frozen: false,
                rationale: format!("w={w} τ={tau:.1} π={:.1} rank={k}", pair.profit),
                rank: k,
                weight: w,
                travel_minutes: tau,
                profit: pair.profit,
                locked: pair.locked,
                tie_break: asg.provenance.tie_breaks.contains(&pair.outage_id),
            });
        }
        let after = apply_run(&state, &asg)?;
        tracing::debug!(run = k, pairs = asg.pairs.len(), objective = asg.objective, "planner run");
        traces.push(RunTrace { before: state, profits: pm, assignment: asg, after: after.clone(), solve_micros });
        state = after;
    }

    if let Some(reason) = &partial_reason {
        tracing::warn!(%reason, "returning partial plan");
    }
    let plan = PlanPipelines {
        awc: snapshot.awc.code.clone(),
        snapshot_id: snapshot.snapshot_id.clone(),
        created_at: snapshot.taken_at,
        pipelines: slots.into_iter().map(|(crew_id, slots)| CrewPipeline { crew_id, slots }).collect(),
        runs: traces.len() as u8,
        partial: partial_reason.is_some(),
        partial_reason,
    };
    Ok((plan, traces))
}

fn distinct(points: impl Iterator<Item = GeoPoint>) -> Vec<GeoPoint> {
    let mut out: Vec<GeoPoint> = Vec::new();
    for p in points {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}
