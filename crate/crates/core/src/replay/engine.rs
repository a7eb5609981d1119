use std::collections::VecDeque;

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::bau::BauEvent;
use crate::geo::{GeoPoint, LocalProjection};
use crate::model::{OutageTicket, Snapshot};
use crate::planner::{PlanPipelines, RunTrace};
use crate::travel::{provider_from_config, travel_time, TravelProvider};

use super::policy::{policy_registry, DispatchPolicy, ReplayConfig};
use super::{CrewRoute, PolicyTag, ReplayError, RouteLog, Scenario, Visit};

/// Milliseconds since the Unix epoch; the engine's clock.
pub(crate) type Millis = i64;

pub(crate) fn to_dt(ms: Millis) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(ms).expect("simulation time in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    Start,
    Cadence,
    CrewAvailable,
}

/// One planning cycle of the optimized arm.
#[derive(Debug, Clone, Serialize)]
pub struct PlanRecord {
    pub at: DateTime<Utc>,
    pub reason: TriggerReason,
    pub snapshot: Snapshot,
    pub plan: PlanPipelines,
    pub runs: Vec<RunTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayOutput {
    pub log: RouteLog,
    pub plans: Vec<PlanRecord>,
    pub bau_events: Vec<BauEvent>,
}

/// A replay that stopped early, with the route log up to the failure.
#[derive(Debug, Clone)]
pub struct ReplayFailure {
    pub error: ReplayError,
    pub partial: Option<RouteLog>,
}

impl std::fmt::Display for ReplayFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for ReplayFailure {}

impl From<ReplayError> for ReplayFailure {
    fn from(error: ReplayError) -> Self {
        ReplayFailure { error, partial: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TicketStatus {
    Pending,
    Open,
    Started,
    Done,
}

#[derive(Debug, Clone)]
pub(crate) struct Job {
    pub ticket: usize,
    pub depart: Millis,
    pub arrive: Millis,
    pub complete: Millis,
    pub from: GeoPoint,
}

#[derive(Debug, Clone)]
pub(crate) struct PlannedJob {
    pub ticket: usize,
    pub frozen: bool,
    /// Tickets merged into this one by the planner; closed with it.
    pub absorbed: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct SimCrew {
    pub id: String,
    pub location: GeoPoint,
    pub last_completed: Millis,
    pub busy: Option<Job>,
    pub pipeline: VecDeque<PlannedJob>,
    pub closes_with_current: Vec<usize>,
    pub visits: Vec<Visit>,
}

pub struct Sim<'a> {
    pub(crate) scenario: &'a Scenario,
    pub(crate) provider: &'a dyn TravelProvider,
    pub(crate) projection: LocalProjection,
    pub(crate) now: Millis,
    pub(crate) crews: Vec<SimCrew>,
    pub(crate) tickets: Vec<OutageTicket>,
    pub(crate) status: Vec<TicketStatus>,
}

impl Sim<'_> {
    pub(crate) fn ticket_index(&self, id: &str) -> Option<usize> {
        self.tickets.iter().position(|t| t.id == id)
    }

    pub(crate) fn open(&self) -> impl Iterator<Item = (usize, &OutageTicket)> {
        self.tickets.iter().enumerate().filter(|(i, _)| self.status[*i] == TicketStatus::Open)
    }

    /// Send crew `c` to ticket `t` now, travelling on the provider's times.
    pub(crate) fn start_job(&mut self, c: usize, t: usize, absorbed: Vec<usize>) -> Result<(), ReplayError> {
        debug_assert!(self.crews[c].busy.is_none());
        debug_assert_eq!(self.status[t], TicketStatus::Open);
        let from = self.crews[c].location;
        let to = self.tickets[t].location;
        let tau = travel_time(&from, &to, self.provider)?;
        let assess = self.scenario.assess_duration_model.minutes(&self.tickets[t]);
        let arrive = self.now + (tau * 1000.0).round() as Millis;
        let complete = arrive + (assess * 60_000.0).round() as Millis;
        self.status[t] = TicketStatus::Started;
        for &a in &absorbed {
            if self.status[a] == TicketStatus::Open {
                self.status[a] = TicketStatus::Started;
            }
        }
        let crew = &mut self.crews[c];
        crew.closes_with_current = absorbed;
        crew.busy = Some(Job { ticket: t, depart: self.now, arrive, complete, from });
        Ok(())
    }
}

fn build_log(sim: &Sim<'_>, tag: PolicyTag) -> RouteLog {
    RouteLog {
        scenario_id: sim.scenario.scenario_id.clone(),
        policy: tag,
        yard: sim.scenario.awc.yard,
        routes: sim.crews.iter().map(|c| CrewRoute { crew_id: c.id.clone(), visits: c.visits.clone() }).collect(),
        unfinished: sim
            .tickets
            .iter()
            .zip(&sim.status)
            .filter(|(_, s)| **s != TicketStatus::Done)
            .map(|(t, _)| t.id.clone())
            .collect(),
    }
}

/// What happened at the current instant, handed to the policy.
#[derive(Debug, Clone, Default)]
pub struct Moment {
    pub(crate) start: bool,
    pub(crate) tick: bool,
    pub(crate) completed: Vec<usize>,
    pub(crate) arrived: Vec<usize>,
}

/// Replay with the policy registered under `policy` (`bau` or `opt`).
pub fn replay(scenario: &Scenario, policy: &str, cfg: &ReplayConfig) -> Result<ReplayOutput, ReplayFailure> {
    let registry = policy_registry();
    let factory = registry.get(policy).map_err(ReplayError::from)?;
    let mut p = factory(cfg);
    let provider = provider_from_config(&scenario.travel).map_err(ReplayError::from)?;
    replay_with(scenario, p.as_mut(), provider.as_ref())
}

/// Event loop. At each instant completions are applied first, then ticket
/// arrivals, then the cadence tick; the policy then dispatches once.
pub fn replay_with(
    scenario: &Scenario,
    policy: &mut dyn DispatchPolicy,
    provider: &dyn TravelProvider,
) -> Result<ReplayOutput, ReplayFailure> {
    scenario.validate()?;
    let start = scenario.horizon_start.timestamp_millis();
    let end = scenario.horizon_end.timestamp_millis();
    let mut crews: Vec<SimCrew> = scenario
        .crew_roster
        .iter()
        .map(|c| SimCrew {
            id: c.id.clone(),
            location: c.anchor,
            last_completed: start,
            busy: None,
            pipeline: VecDeque::new(),
            closes_with_current: vec![],
            visits: vec![],
        })
        .collect();
    crews.sort_by(|a, b| a.id.cmp(&b.id));
    let mut sim = Sim {
        scenario,
        provider,
        projection: LocalProjection::new(scenario.awc.yard),
        now: start,
        crews,
        tickets: scenario.outage_stream.clone(),
        status: vec![TicketStatus::Pending; scenario.outage_stream.len()],
    };
    let cadence = policy.cadence_ms();
    let mut next_tick = cadence.map(|d| start + d);
    let mut first = true;

    loop {
        let mut instant = Moment { start: first, ..Default::default() };
        first = false;
        for c in 0..sim.crews.len() {
            let done = sim.crews[c].busy.as_ref().is_some_and(|j| j.complete == sim.now);
            if !done {
                continue;
            }
            let job = sim.crews[c].busy.take().expect("checked above");
            let ticket = &sim.tickets[job.ticket];
            let crew = &mut sim.crews[c];
            crew.visits.push(Visit {
                outage_id: ticket.id.clone(),
                depart_time: to_dt(job.depart),
                arrive_time: to_dt(job.arrive),
                complete_time: to_dt(job.complete),
                from: job.from,
                to: ticket.location,
                assessed_customers: ticket.customers,
            });
            crew.location = ticket.location;
            crew.last_completed = sim.now;
            sim.status[job.ticket] = TicketStatus::Done;
            for a in std::mem::take(&mut sim.crews[c].closes_with_current) {
                sim.status[a] = TicketStatus::Done;
            }
            instant.completed.push(c);
        }
        for i in 0..sim.tickets.len() {
            if sim.status[i] == TicketStatus::Pending && sim.tickets[i].created_at.timestamp_millis() <= sim.now {
                sim.status[i] = TicketStatus::Open;
                instant.arrived.push(i);
            }
        }
        if next_tick == Some(sim.now) {
            instant.tick = true;
            next_tick = cadence.map(|d| sim.now + d);
        }
        if let Err(error) = policy.dispatch(&mut sim, &instant) {
            return Err(ReplayFailure { error, partial: Some(build_log(&sim, policy.tag())) });
        }

        let next_completion = sim.crews.iter().filter_map(|c| c.busy.as_ref().map(|j| j.complete)).min();
        let next_arrival = sim
            .tickets
            .iter()
            .zip(&sim.status)
            .filter(|(_, s)| **s == TicketStatus::Pending)
            .map(|(t, _)| t.created_at.timestamp_millis())
            .min();
        let work_left = next_completion.is_some() || next_arrival.is_some() || sim.open().next().is_some();
        let candidates = [next_completion, next_arrival, next_tick.filter(|_| work_left)];
        match candidates.into_iter().flatten().min() {
            Some(t) if t <= end => sim.now = t,
            _ => break,
        }
    }

    let (plans, bau_events) = policy.finish();
    Ok(ReplayOutput { log: build_log(&sim, policy.tag()), plans, bau_events })
}
