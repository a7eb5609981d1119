use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bau::{nearest_open, BauEvent};
use crate::model::{CrewState, Snapshot};
use crate::planner::{freeze_first, plan_pipelines_traced, PlannerConfig};
use crate::registry::Registry;

use super::engine::{to_dt, Moment, PlanRecord, PlannedJob, Sim, TicketStatus, TriggerReason};
use super::{PolicyTag, ReplayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// Travel settings are taken from the scenario, not from here.
    pub planner: PlannerConfig,
    pub cadence_minutes: f64,
    /// Re-plan as soon as a crew sits idle with an empty pipeline while
    /// unplanned work exists, instead of waiting for the next tick. Off by
    /// default, like the service, where such events only prompt the
    /// operator.
    pub event_triggers: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig { planner: PlannerConfig::default(), cadence_minutes: 15.0, event_triggers: false }
    }
}

pub trait DispatchPolicy: Send {
    fn tag(&self) -> PolicyTag;

    /// Period of cadence ticks, if the policy uses them.
    fn cadence_ms(&self) -> Option<i64>;

    /// Called once per event instant after completions and arrivals.
    fn dispatch(&mut self, sim: &mut Sim<'_>, moment: &Moment) -> Result<(), ReplayError>;

    /// Planning records and baseline decisions collected during the run.
    fn finish(&mut self) -> (Vec<PlanRecord>, Vec<BauEvent>);
}

pub type PolicyFactory = fn(&ReplayConfig) -> Box<dyn DispatchPolicy>;

pub fn policy_registry() -> Registry<PolicyFactory> {
    fn bau(_: &ReplayConfig) -> Box<dyn DispatchPolicy> {
        Box::new(BauPolicy::default())
    }
    fn opt(cfg: &ReplayConfig) -> Box<dyn DispatchPolicy> {
        Box::new(OptimizedPolicy::new(cfg.clone()))
    }
    Registry::new("policy").with("bau", bau as PolicyFactory).with("opt", opt as PolicyFactory)
}

/// Idle crews, in id order, each take the nearest open ticket.
#[derive(Debug, Default)]
pub struct BauPolicy {
    events: Vec<BauEvent>,
}

impl DispatchPolicy for BauPolicy {
    fn tag(&self) -> PolicyTag {
        PolicyTag::Bau
    }

    fn cadence_ms(&self) -> Option<i64> {
        None
    }

    fn dispatch(&mut self, sim: &mut Sim<'_>, _: &Moment) -> Result<(), ReplayError> {
        for c in 0..sim.crews.len() {
            if sim.crews[c].busy.is_some() {
                continue;
            }
            let open = sim.open().map(|(_, t)| t);
            let Some((t, d)) = nearest_open(&sim.crews[c].location, open, &sim.projection) else {
                break;
            };
            let (id, idx) = (t.id.clone(), sim.ticket_index(&t.id).expect("open ticket"));
            self.events.push(BauEvent {
                time: to_dt(sim.now),
                crew_id: sim.crews[c].id.clone(),
                outage_id: id,
                distance_proxy: d,
            });
            sim.start_job(c, idx, vec![])?;
        }
        Ok(())
    }

    fn finish(&mut self) -> (Vec<PlanRecord>, Vec<BauEvent>) {
        (vec![], std::mem::take(&mut self.events))
    }
}

/// Rolling planner in headless mode: every plan is published immediately.
#[derive(Debug)]
pub struct OptimizedPolicy {
    cfg: ReplayConfig,
    plans: Vec<PlanRecord>,
}

impl OptimizedPolicy {
    pub fn new(cfg: ReplayConfig) -> Self {
        OptimizedPolicy { cfg, plans: vec![] }
    }

    fn reason(&self, sim: &Sim<'_>, moment: &Moment) -> Option<TriggerReason> {
        if moment.start {
            return Some(TriggerReason::Start);
        }
        if moment.tick {
            return Some(TriggerReason::Cadence);
        }
        if !self.cfg.event_triggers {
            return None;
        }
        let starving = sim.crews.iter().any(|c| c.busy.is_none() && c.pipeline.is_empty());
        let planned: Vec<usize> = sim.crews.iter().flat_map(|c| c.pipeline.iter().map(|j| j.ticket)).collect();
        let unplanned = sim.open().any(|(i, _)| !planned.contains(&i));
        (starving && unplanned).then_some(TriggerReason::CrewAvailable)
    }

    fn snapshot(&self, sim: &Sim<'_>) -> Snapshot {
        let s = sim.scenario;
        let crews = sim
            .crews
            .iter()
            .zip(&s.crew_roster_sorted())
            .map(|(c, roster)| CrewState {
                id: c.id.clone(),
                awc: s.awc.code.clone(),
                anchor: c.busy.as_ref().map_or(c.location, |j| sim.tickets[j.ticket].location),
                anchor_confirmed_at: to_dt(c.last_completed),
                availability: roster.availability,
                frozen: false,
                locked_to: c.pipeline.front().filter(|j| j.frozen).map(|j| sim.tickets[j.ticket].id.clone()),
                assigned_count: 0,
                shift_active: roster.shift_active,
            })
            .collect();
        Snapshot {
            awc: s.awc.clone(),
            taken_at: to_dt(sim.now),
            snapshot_id: format!("{}-{:04}", s.scenario_id, self.plans.len() + 1),
            tickets: sim.open().map(|(_, t)| t.clone()).collect(),
            crews,
            withheld: vec![],
        }
    }
}

impl super::Scenario {
    fn crew_roster_sorted(&self) -> Vec<&CrewState> {
        let mut v: Vec<&CrewState> = self.crew_roster.iter().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }
}

impl DispatchPolicy for OptimizedPolicy {
    fn tag(&self) -> PolicyTag {
        PolicyTag::Optimized
    }

    fn cadence_ms(&self) -> Option<i64> {
        Some((self.cfg.cadence_minutes * 60_000.0).round() as i64)
    }

    fn dispatch(&mut self, sim: &mut Sim<'_>, moment: &Moment) -> Result<(), ReplayError> {
        start_next(sim)?;
        let Some(reason) = self.reason(sim, moment) else {
            return Ok(());
        };
        let snapshot = self.snapshot(sim);
        let mut cfg = self.cfg.planner.clone();
        cfg.travel = sim.scenario.travel.clone();
        let (plan, runs) = plan_pipelines_traced(&snapshot, &cfg, sim.provider)?;
        let published = freeze_first(&plan);

        let absorbed: BTreeMap<&str, Vec<usize>> = runs
            .first()
            .map(|r| {
                r.before
                    .candidate_outages
                    .iter()
                    .map(|o| {
                        let ids = o.ticket.absorbed.iter().filter_map(|a| sim.ticket_index(a)).collect();
                        (o.ticket.id.as_str(), ids)
                    })
                    .collect()
            })
            .unwrap_or_default();
        for (crew, pipeline) in sim.crews.iter_mut().zip(&published.pipelines) {
            debug_assert_eq!(crew.id, pipeline.crew_id);
            crew.pipeline = pipeline
                .slots
                .iter()
                .map(|slot| PlannedJob {
                    ticket: sim.tickets.iter().position(|t| t.id == slot.outage_id).expect("planned ticket"),
                    frozen: slot.frozen,
                    absorbed: absorbed.get(slot.outage_id.as_str()).cloned().unwrap_or_default(),
                })
                .collect();
        }
        start_next(sim)?;
        self.plans.push(PlanRecord { at: to_dt(sim.now), reason, snapshot, plan: published, runs });
        Ok(())
    }

    fn finish(&mut self) -> (Vec<PlanRecord>, Vec<BauEvent>) {
        (std::mem::take(&mut self.plans), vec![])
    }
}

/// Idle crews begin the head of their pipeline.
fn start_next(sim: &mut Sim<'_>) -> Result<(), ReplayError> {
    for c in 0..sim.crews.len() {
        if sim.crews[c].busy.is_some() {
            continue;
        }
        while let Some(job) = sim.crews[c].pipeline.pop_front() {
            if sim.status[job.ticket] == TicketStatus::Open {
                sim.start_job(c, job.ticket, job.absorbed)?;
                break;
            }
        }
    }
    Ok(())
}
