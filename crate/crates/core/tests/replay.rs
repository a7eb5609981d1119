use chrono::{Duration, TimeZone, Utc};
use stormcrew_core::geo::GeoPoint;
use stormcrew_core::model::{AwcId, Category, CrewState, OutageTicket};
use stormcrew_core::replay::metrics::{arm_metrics, catr_curve, MetricsConfig};
use stormcrew_core::replay::{
    generate_scenario, replay, replay_with, AssessModel, GenParams, OptimizedPolicy, PolicyTag, ReplayConfig,
    Scenario,
};
use stormcrew_core::travel::{ProviderKind, TravelConfig, TravelError, TravelProvider};

fn yard() -> GeoPoint {
    GeoPoint::new(42.9337, -72.2781).unwrap()
}

fn ticket(id: &str, at: GeoPoint, minute: i64, customers: u32, category: Category) -> OutageTicket {
    OutageTicket {
        id: id.into(),
        awc: "KEENE".into(),
        location: at,
        created_at: Utc.with_ymd_and_hms(2025, 3, 7, 12, 0, 0).unwrap() + Duration::minutes(minute),
        customers,
        category,
        assessed_customers: 0,
        absorbed: vec![],
    }
}

fn scenario(tickets: Vec<OutageTicket>, crews: usize) -> Scenario {
    let start = Utc.with_ymd_and_hms(2025, 3, 7, 12, 0, 0).unwrap();
    Scenario {
        scenario_id: "fixture".into(),
        awc: AwcId { code: "KEENE".into(), yard: yard() },
        horizon_start: start,
        horizon_end: start + Duration::hours(6),
        outage_stream: tickets,
        crew_roster: (1..=crews)
            .map(|i| CrewState {
                id: format!("c{i:02}"),
                awc: "KEENE".into(),
                anchor: yard(),
                anchor_confirmed_at: start,
                availability: true,
                frozen: false,
                locked_to: None,
                assigned_count: 0,
                shift_active: true,
            })
            .collect(),
        assess_duration_model: AssessModel::default(),
        travel: TravelConfig::default(),
        rng_seed: 0,
    }
}

/// Every trip takes exactly 30 minutes.
struct HalfHour;

impl TravelProvider for HalfHour {
    fn kind(&self) -> ProviderKind {
        ProviderKind::OfflineMatrix
    }
    fn seconds(&self, _: &GeoPoint, _: &GeoPoint) -> Result<f64, TravelError> {
        Ok(1800.0)
    }
}

#[test]
fn hand_timeline_single_job() {
    let s = scenario(vec![ticket("r1", yard().offset_m(0.0, 5000.0), 0, 10, Category::Single)], 1);
    let mut policy = OptimizedPolicy::new(ReplayConfig::default());
    let out = replay_with(&s, &mut policy, &HalfHour).unwrap();
    let v = &out.log.routes[0].visits[0];
    assert_eq!(v.arrive_time, s.horizon_start + Duration::minutes(30));
    assert_eq!(v.complete_time, s.horizon_start + Duration::minutes(50));
}

#[test]
fn zero_outages_empty_log() {
    let s = scenario(vec![], 3);
    for policy in ["bau", "opt"] {
        let out = replay(&s, policy, &ReplayConfig::default()).unwrap();
        assert_eq!(out.log.visit_count(), 0);
        assert_eq!(out.log.routes.len(), 3);
    }
}

#[test]
fn late_ticket_not_served_early() {
    let s = scenario(
        vec![
            ticket("r1", yard().offset_m(1000.0, 0.0), 0, 10, Category::Single),
            ticket("r2", yard().offset_m(0.0, 800.0), 300, 10, Category::Single),
        ],
        2,
    );
    for policy in ["bau", "opt"] {
        let out = replay(&s, policy, &ReplayConfig::default()).unwrap();
        let r2 = out.log.routes.iter().flat_map(|r| &r.visits).find(|v| v.outage_id == "r2").unwrap();
        assert!(r2.depart_time >= s.horizon_start + Duration::minutes(300), "{policy}");
    }
}

#[test]
fn bau_takes_near_single_opt_takes_far_fps() {
    let s = scenario(
        vec![
            ticket("r1", yard().offset_m(0.0, 4000.0), 0, 3, Category::FPS2),
            ticket("r2", yard().offset_m(300.0, 0.0), 0, 400, Category::Single),
        ],
        1,
    );
    let bau = replay(&s, "bau", &ReplayConfig::default()).unwrap();
    let opt = replay(&s, "opt", &ReplayConfig::default()).unwrap();
    assert_eq!(bau.log.routes[0].visits[0].outage_id, "r2");
    assert_eq!(opt.log.routes[0].visits[0].outage_id, "r1");
}

#[test]
fn bau_simultaneous_crews_in_id_order() {
    let s = scenario(
        vec![
            ticket("r1", yard().offset_m(500.0, 0.0), 0, 1, Category::Single),
            ticket("r2", yard().offset_m(900.0, 0.0), 0, 1, Category::Single),
        ],
        2,
    );
    let out = replay(&s, "bau", &ReplayConfig::default()).unwrap();
    assert_eq!(out.bau_events[0].crew_id, "c01");
    assert_eq!(out.bau_events[0].outage_id, "r1");
    assert_eq!(out.bau_events[1].outage_id, "r2");
}

#[test]
fn route_log_invariants_on_reference_scenario() {
    let s = generate_scenario(42, &GenParams::default()).unwrap();
    for policy in ["bau", "opt"] {
        let out = replay(&s, policy, &ReplayConfig::default()).unwrap();
        let created = |id: &str| s.outage_stream.iter().find(|t| t.id == id).unwrap().created_at;
        for r in &out.log.routes {
            let mut prev = s.horizon_start;
            for v in &r.visits {
                assert!(v.depart_time >= prev && v.depart_time >= created(&v.outage_id));
                assert!(v.arrive_time >= v.depart_time && v.complete_time > v.arrive_time);
                assert!(v.complete_time <= s.horizon_end);
                prev = v.complete_time;
            }
            let curve = catr_curve(&out.log, &r.crew_id).unwrap();
            assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        }
        let expected = if policy == "bau" { PolicyTag::Bau } else { PolicyTag::Optimized };
        assert_eq!(out.log.policy, expected);
    }
}

#[test]
fn every_plan_step_dequeues_and_reanchors() {
    let s = generate_scenario(42, &GenParams::default()).unwrap();
    let out = replay(&s, "opt", &ReplayConfig::default()).unwrap();
    assert!(!out.plans.is_empty());
    for rec in &out.plans {
        for t in &rec.snapshot.tickets {
            assert!(t.created_at <= rec.at);
        }
        for run in &rec.runs {
            let assigned: Vec<&str> = run.assignment.pairs.iter().map(|p| p.outage_id.as_str()).collect();
            let before: Vec<&str> = run.before.candidate_outages.iter().map(|o| o.ticket.id.as_str()).collect();
            let after: Vec<&str> = run.after.candidate_outages.iter().map(|o| o.ticket.id.as_str()).collect();
            let expected: Vec<&str> = before.iter().copied().filter(|id| !assigned.contains(id)).collect();
            assert_eq!(after, expected);
            for (crew, anchor) in &run.after.anchors {
                match run.assignment.pairs.iter().find(|p| &p.crew_id == crew) {
                    Some(p) => {
                        let loc = run.before.candidate_outages.iter().find(|o| o.ticket.id == p.outage_id).unwrap();
                        assert_eq!(*anchor, loc.ticket.location);
                    }
                    None => assert_eq!(anchor, &run.before.anchors[crew]),
                }
            }
        }
    }
}

#[test]
fn replay_is_deterministic() {
    let s = generate_scenario(9, &GenParams { n_outages: 40, ..GenParams::default() }).unwrap();
    let a = replay(&s, "opt", &ReplayConfig::default()).unwrap();
    let b = replay(&s, "opt", &ReplayConfig::default()).unwrap();
    assert_eq!(a.log, b.log);
    let m = MetricsConfig::default();
    assert_eq!(arm_metrics(&a.log, &m), arm_metrics(&b.log, &m));
}

#[test]
fn unknown_policy_rejected() {
    let s = scenario(vec![], 1);
    assert!(replay(&s, "psychic", &ReplayConfig::default()).is_err());
}

#[test]
fn scenario_json_round_trip() {
    let s = generate_scenario(5, &GenParams { n_outages: 10, ..GenParams::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, serde_json::to_string_pretty(&s).unwrap()).unwrap();
    assert_eq!(Scenario::load(&path).unwrap(), s);
    assert!(Scenario::load(&dir.path().join("missing.json")).is_err());
}
