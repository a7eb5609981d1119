use std::sync::Arc;
use std::time::Duration as StdDuration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{DateTime, Duration, TimeZone, Utc};
use serde_json::{json, Value};
use stormcrew_core::model::{AwcId, Category, CrewState, GeoPoint, OutageTicket, Snapshot};
use stormcrew_core::travel::{HaversineProvider, ProviderKind, TravelError, TravelProvider};
use stormcrew_service::audit::{read_log, AuditLog};
use stormcrew_service::clock::ManualClock;
use stormcrew_service::service::{PublishRequest, TriggerOutcome};
use stormcrew_service::state::{Control, Mode, SessionState, TriggerSource};
use stormcrew_service::{api, Service, ServiceConfig, ServiceError};
use tower::ServiceExt;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 7, 14, 0, 0).unwrap()
}

fn yard() -> GeoPoint {
    GeoPoint::new(42.9337, -72.2781).unwrap()
}

fn snapshot(id: &str, taken_at: DateTime<Utc>, crews: usize, outages: usize) -> Snapshot {
    let tickets = (1..=outages)
        .map(|i| OutageTicket {
            id: format!("r{i}"),
            awc: "KEENE".into(),
            location: yard().offset_m(400.0 * i as f64, 250.0 * (i % 3) as f64),
            created_at: t0() - Duration::minutes(30),
            customers: 10 * i as u32,
            category: if i == outages { Category::FPS2 } else { Category::Single },
            assessed_customers: 0,
            absorbed: vec![],
        })
        .collect();
    let crews = (1..=crews)
        .map(|i| CrewState {
            id: format!("c{i}"),
            awc: "KEENE".into(),
            anchor: yard().offset_m(-300.0 * i as f64, 0.0),
            anchor_confirmed_at: taken_at,
            availability: true,
            frozen: false,
            locked_to: None,
            assigned_count: 0,
            shift_active: true,
        })
        .collect();
    Snapshot {
        awc: AwcId { code: "KEENE".into(), yard: yard() },
        taken_at,
        snapshot_id: id.into(),
        tickets,
        crews,
        withheld: vec![],
    }
}

fn body(s: &Snapshot) -> Vec<u8> {
    serde_json::to_vec(s).unwrap()
}

fn config() -> ServiceConfig {
    ServiceConfig { awcs: vec![AwcId { code: "KEENE".into(), yard: yard() }], ..ServiceConfig::default() }
}

struct Harness {
    svc: Service,
    clock: Arc<ManualClock>,
}

fn harness_with(cfg: ServiceConfig, provider: Arc<dyn TravelProvider>, audit: AuditLog) -> Harness {
    let clock = Arc::new(ManualClock::new(t0()));
    let svc = Service::new(cfg, clock.clone(), provider, audit).unwrap();
    Harness { svc, clock }
}

fn harness() -> Harness {
    harness_with(config(), Arc::new(HaversineProvider::new(22.5)), AuditLog::in_memory())
}

async fn drafted(h: &Harness) -> String {
    match h.svc.trigger("KEENE", TriggerSource::Manual).await.unwrap() {
        TriggerOutcome::Drafted { draft_id, .. } => draft_id,
        other => panic!("expected a draft, got {other:?}"),
    }
}

/// Haversine times, but every batch takes a while.
struct SlowProvider(HaversineProvider);

impl TravelProvider for SlowProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::ExternalRouter
    }
    fn seconds(&self, a: &GeoPoint, b: &GeoPoint) -> Result<f64, TravelError> {
        self.0.seconds(a, b)
    }
    fn batch(&self, o: &[GeoPoint], d: &[GeoPoint]) -> Result<Vec<Vec<Option<f64>>>, TravelError> {
        std::thread::sleep(StdDuration::from_millis(150));
        Ok(o.iter().map(|a| d.iter().map(|b| self.0.seconds(a, b).ok()).collect()).collect())
    }
}

struct DeadProvider;

impl TravelProvider for DeadProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::ExternalRouter
    }
    fn seconds(&self, _: &GeoPoint, _: &GeoPoint) -> Result<f64, TravelError> {
        Err(TravelError::RouterUnavailable("connection refused".into()))
    }
    fn batch(&self, _: &[GeoPoint], _: &[GeoPoint]) -> Result<Vec<Vec<Option<f64>>>, TravelError> {
        Err(TravelError::RouterUnavailable("connection refused".into()))
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn trigger_storm_yields_one_draft() {
    let h = harness_with(config(), Arc::new(SlowProvider(HaversineProvider::new(22.5))), AuditLog::in_memory());
    h.svc.ingest("KEENE", &body(&snapshot("s1", t0(), 3, 6))).await.unwrap();
    let barrier = Arc::new(tokio::sync::Barrier::new(10));
    let tasks: Vec<_> = (0..10)
        .map(|_| {
            let (svc, barrier) = (h.svc.clone(), barrier.clone());
            tokio::spawn(async move {
                barrier.wait().await;
                svc.trigger("KEENE", TriggerSource::Manual).await
            })
        })
        .collect();
    let mut ok = 0;
    let mut busy = 0;
    for t in tasks {
        match t.await.unwrap() {
            Ok(TriggerOutcome::Drafted { .. }) => ok += 1,
            Err(ServiceError::Busy) => busy += 1,
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!((ok, busy), (1, 9));
    assert_eq!(h.svc.session("KEENE").unwrap().drafts_created, 1);
    let kinds: Vec<String> = h.svc.audit_records().into_iter().map(|r| r.kind).collect();
    assert_eq!(kinds.iter().filter(|k| *k == "trigger_completed").count(), 1);
    assert_eq!(kinds.iter().filter(|k| *k == "trigger_rejected").count(), 9);
}

#[tokio::test]
async fn staleness_countdown_and_stale_publish() {
    let h = harness();
    assert!(matches!(h.svc.staleness("KEENE"), Err(ServiceError::NoDraft)));
    h.svc.ingest("KEENE", &body(&snapshot("s1", t0(), 2, 3))).await.unwrap();
    let draft_id = drafted(&h).await;

    h.clock.advance(Duration::seconds(30));
    let s = h.svc.staleness("KEENE").unwrap();
    assert_eq!((s.age_seconds, s.remaining_seconds, s.stale), (30.0, 90.0, false));

    h.clock.advance(Duration::seconds(91));
    let s = h.svc.staleness("KEENE").unwrap();
    assert_eq!((s.remaining_seconds, s.stale), (0.0, true));
    let req = PublishRequest { draft_id: draft_id.clone(), confirm_stale: false };
    assert!(matches!(h.svc.publish("KEENE", &req), Err(ServiceError::StalePlan { .. })));

    let body = h.svc.publish("KEENE", &PublishRequest { draft_id, confirm_stale: true }).unwrap();
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["stale_confirmed"], true);
    assert!(h.svc.audit_records().iter().any(|r| r.kind == "publish_rejected"));
}

#[tokio::test]
async fn publish_within_limit_freezes_slot_one() {
    let h = harness();
    h.svc.ingest("KEENE", &body(&snapshot("s1", t0(), 2, 5))).await.unwrap();
    let draft_id = drafted(&h).await;
    h.clock.advance(Duration::seconds(60));
    let mut rx = h.svc.subscribe();
    let served = h.svc.publish("KEENE", &PublishRequest { draft_id, confirm_stale: false }).unwrap();
    assert_eq!(h.svc.plan_body("KEENE").unwrap(), served);
    let v: Value = serde_json::from_str(&served).unwrap();
    for p in v["plan"]["pipelines"].as_array().unwrap() {
        for (i, slot) in p["slots"].as_array().unwrap().iter().enumerate() {
            assert_eq!(slot["frozen"], i == 0);
        }
    }
    assert_eq!(v["stale_confirmed"], false);
    let ev = rx.try_recv().unwrap();
    assert_eq!(ev.kind, "published");
    assert_eq!(ev.data["notifications"].as_array().unwrap().len(), 2);
    assert!(matches!(h.svc.draft("KEENE"), Err(ServiceError::NoDraft)));
}

#[tokio::test]
async fn empty_draft_publishes() {
    let h = harness();
    let mut snap = snapshot("s1", t0(), 2, 3);
    for c in &mut snap.crews {
        c.availability = false;
    }
    h.svc.ingest("KEENE", &body(&snap)).await.unwrap();
    let draft_id = drafted(&h).await;
    assert!(h.svc.draft("KEENE").unwrap().plan.outage_ids().is_empty());
    h.svc.publish("KEENE", &PublishRequest { draft_id, confirm_stale: false }).unwrap();
}

#[tokio::test]
async fn failsafe_keeps_serving_published_bytes() {
    let h = harness();
    h.svc.ingest("KEENE", &body(&snapshot("s1", t0(), 2, 4))).await.unwrap();
    let draft_id = drafted(&h).await;
    let before = h.svc.publish("KEENE", &PublishRequest { draft_id, confirm_stale: false }).unwrap();

    let mut rx = h.svc.subscribe();
    let err = h.svc.ingest("KEENE", br#"{"awc": "KEENE", "tickets": 7}"#).await.unwrap_err();
    assert_eq!(err.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rx.try_recv().unwrap().kind, "failsafe_entered");
    assert_eq!(h.svc.status("KEENE").unwrap().mode, Mode::Failsafe);
    assert_eq!(h.svc.snapshot("KEENE").unwrap().snapshot_id, "s1");
    assert_eq!(h.svc.plan_body("KEENE").unwrap(), before);
    assert!(matches!(h.svc.trigger("KEENE", TriggerSource::Manual).await, Err(ServiceError::Failsafe)));

    let app = api::router(h.svc.clone());
    let resp = app.oneshot(Request::get("/v1/awcs/KEENE/plan").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(bytes, before.as_bytes());

    h.svc.ingest("KEENE", &body(&snapshot("s2", t0() + Duration::minutes(5), 2, 4))).await.unwrap();
    assert_eq!(h.svc.status("KEENE").unwrap().mode, Mode::Normal);
}

#[tokio::test]
async fn provider_failure_enters_failsafe() {
    let mut cfg = config();
    cfg.travel.fallback_enabled = false;
    let h = harness_with(cfg, Arc::new(DeadProvider), AuditLog::in_memory());
    h.svc.ingest("KEENE", &body(&snapshot("s1", t0(), 2, 3))).await.unwrap();
    let err = h.svc.trigger("KEENE", TriggerSource::Cadence).await.unwrap_err();
    assert!(matches!(err, ServiceError::Provider(_)));
    let s = h.svc.session("KEENE").unwrap();
    assert_eq!(s.mode, Mode::Failsafe);
    assert!(s.draft.is_none());
    assert_eq!(h.svc.audit_records().last().unwrap().kind, "provider_failed");
}

#[tokio::test]
async fn freeze_and_lock_are_hard_constraints() {
    let h = harness();
    h.svc.ingest("KEENE", &body(&snapshot("s1", t0(), 3, 8))).await.unwrap();

    h.svc.apply_control("KEENE", Control::Freeze { crew: "c3".into() }).unwrap();
    drafted(&h).await;
    let plan = h.svc.draft("KEENE").unwrap().plan;
    assert!(plan.pipeline("c3").unwrap().slots.is_empty());
    assert!(!plan.pipeline("c1").unwrap().slots.is_empty());

    h.svc.apply_control("KEENE", Control::Lock { crew: "c1".into(), outage: "r7".into() }).unwrap();
    drafted(&h).await;
    let plan = h.svc.draft("KEENE").unwrap().plan;
    let first = &plan.pipeline("c1").unwrap().slots[0];
    assert_eq!(first.outage_id, "r7");
    assert!(first.locked);

    let err = h.svc.apply_control("KEENE", Control::Lock { crew: "c2".into(), outage: "r7".into() }).unwrap_err();
    assert!(matches!(err, ServiceError::ConflictingLock { .. }), "{err}");
    let err = h.svc.apply_control("KEENE", Control::Freeze { crew: "c9".into() }).unwrap_err();
    assert!(matches!(err, ServiceError::UnknownCrew(_)));
    let err = h.svc.apply_control("KEENE", Control::Withhold { outage: "r99".into() }).unwrap_err();
    assert!(matches!(err, ServiceError::UnknownOutage(_)));

    h.svc.apply_control("KEENE", Control::Withhold { outage: "r2".into() }).unwrap();
    drafted(&h).await;
    assert!(!h.svc.draft("KEENE").unwrap().plan.outage_ids().contains(&"r2"));
    let kinds: Vec<String> = h.svc.audit_records().into_iter().map(|r| r.kind).collect();
    assert_eq!(kinds.iter().filter(|k| *k == "control_rejected").count(), 3);
}

#[tokio::test]
async fn published_slot_one_survives_next_solve() {
    let h = harness();
    h.svc.ingest("KEENE", &body(&snapshot("s1", t0(), 3, 8))).await.unwrap();
    let draft_id = drafted(&h).await;
    h.svc.publish("KEENE", &PublishRequest { draft_id, confirm_stale: false }).unwrap();
    let first: Vec<(String, String)> = h
        .svc
        .session("KEENE")
        .unwrap()
        .published
        .unwrap()
        .plan
        .plan
        .pipelines
        .iter()
        .filter_map(|p| p.slots.first().map(|s| (p.crew_id.clone(), s.outage_id.clone())))
        .collect();
    assert_eq!(first.len(), 3);

    // Crews report in from new positions; the published slot 1 still holds.
    let mut next = snapshot("s2", t0() + Duration::minutes(10), 3, 8);
    for (i, c) in next.crews.iter_mut().enumerate() {
        c.anchor = yard().offset_m(2500.0, 900.0 * i as f64);
    }
    h.clock.advance(Duration::minutes(10));
    h.svc.ingest("KEENE", &body(&next)).await.unwrap();
    drafted(&h).await;
    let plan = h.svc.draft("KEENE").unwrap().plan;
    for (crew, outage) in first {
        let slot = &plan.pipeline(&crew).unwrap().slots[0];
        assert_eq!(&slot.outage_id, &outage);
        assert!(slot.locked);
    }
}

#[tokio::test]
async fn audit_log_replay_rebuilds_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let mut cfg = config();
    cfg.audit_log = Some(path.clone());
    let h = harness_with(cfg.clone(), Arc::new(HaversineProvider::new(22.5)), AuditLog::open(&path).unwrap());

    h.svc.ingest("KEENE", &body(&snapshot("s1", t0(), 3, 6))).await.unwrap();
    h.svc.apply_control("KEENE", Control::Freeze { crew: "c2".into() }).unwrap();
    h.svc.apply_control("KEENE", Control::Lock { crew: "c1".into(), outage: "r4".into() }).unwrap();
    let _ = h.svc.apply_control("KEENE", Control::Unfreeze { crew: "nobody".into() });
    let d = drafted(&h).await;
    h.clock.advance(Duration::seconds(20));
    h.svc.publish("KEENE", &PublishRequest { draft_id: d, confirm_stale: false }).unwrap();
    let _ = h.svc.ingest("KEENE", b"not json").await;
    h.svc.ingest("KEENE", &body(&snapshot("s2", t0() + Duration::minutes(3), 3, 5))).await.unwrap();
    drafted(&h).await;

    let records = read_log(&path).unwrap();
    assert_eq!(records, h.svc.audit_records());
    assert!(records.windows(2).all(|w| w[1].seq == w[0].seq + 1));
    let live = h.svc.session("KEENE").unwrap();
    assert_eq!(SessionState::replay("KEENE", &records).unwrap(), live);

    // A restarted service picks up where the log left off.
    let again = harness_with(cfg, Arc::new(HaversineProvider::new(22.5)), AuditLog::open(&path).unwrap());
    assert_eq!(again.svc.session("KEENE").unwrap(), live);
    assert_eq!(again.svc.plan_body("KEENE").unwrap(), h.svc.plan_body("KEENE").unwrap());
}

#[tokio::test]
async fn ingest_rejections() {
    let h = harness();
    let mut other = snapshot("s1", t0(), 1, 1);
    other.awc.code = "CONCORD".into();
    for t in &mut other.tickets {
        t.awc = "CONCORD".into();
    }
    for c in &mut other.crews {
        c.awc = "CONCORD".into();
    }
    let err = h.svc.ingest("KEENE", &body(&other)).await.unwrap_err();
    assert_eq!(err.code(), "awc_mismatch");
    assert!(matches!(h.svc.ingest("CONCORD", &body(&other)).await, Err(ServiceError::UnknownAwc(_))));
    let mut dangling = snapshot("s1", t0(), 1, 1);
    dangling.crews[0].locked_to = Some("r99".into());
    assert_eq!(h.svc.ingest("KEENE", &body(&dangling)).await.unwrap_err().code(), "invariant_error");
    assert!(matches!(h.svc.snapshot("KEENE"), Err(ServiceError::NoSnapshot)));
}

#[tokio::test]
async fn event_trigger_prompts_unless_auto_run() {
    let mut busy = snapshot("s1", t0(), 2, 4);
    busy.crews[1].availability = false;
    let mut free = snapshot("s2", t0() + Duration::minutes(2), 2, 4);
    free.crews[1].availability = true;

    let h = harness();
    let mut rx = h.svc.subscribe();
    h.svc.ingest("KEENE", &body(&busy)).await.unwrap();
    let ack = h.svc.ingest("KEENE", &body(&free)).await.unwrap();
    assert_eq!(ack.event_trigger, Some(TriggerOutcome::Prompted { newly_available: vec!["c2".into()] }));
    assert_eq!(rx.try_recv().unwrap().kind, "run_prompt");
    assert!(h.svc.session("KEENE").unwrap().draft.is_none());

    let cfg = ServiceConfig { auto_run_on_event: true, ..config() };
    let h = harness_with(cfg, Arc::new(HaversineProvider::new(22.5)), AuditLog::in_memory());
    h.svc.ingest("KEENE", &body(&busy)).await.unwrap();
    let ack = h.svc.ingest("KEENE", &body(&free)).await.unwrap();
    assert!(matches!(ack.event_trigger, Some(TriggerOutcome::Drafted { .. })));
}

#[tokio::test]
async fn staleness_warning_fires_once() {
    let h = harness();
    h.svc.ingest("KEENE", &body(&snapshot("s1", t0(), 2, 3))).await.unwrap();
    drafted(&h).await;
    let mut rx = h.svc.subscribe();
    h.clock.advance(Duration::seconds(120));
    assert!(h.svc.check_staleness().is_empty());
    h.clock.advance(Duration::seconds(1));
    assert_eq!(h.svc.check_staleness(), vec!["KEENE".to_string()]);
    assert!(h.svc.check_staleness().is_empty());
    let ev = rx.try_recv().unwrap();
    assert_eq!(ev.kind, "staleness_warning");
    assert_eq!(ev.data["remaining_seconds"], 0.0);
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post(uri: &str, body: impl Into<Body>) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(body.into()).unwrap()
}

#[tokio::test]
async fn http_round_trip() {
    let h = harness();
    let app = api::router(h.svc.clone());
    let get = |uri: &str| Request::get(uri).body(Body::empty()).unwrap();

    let (st, v) = call(&app, get("/v1/awcs/KEENE/staleness")).await;
    assert_eq!((st, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("no_draft")));
    let (st, _) = call(&app, post("/v1/awcs/KEENE/trigger", "")).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, get("/v1/awcs/NOPE/status")).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let (st, v) = call(&app, post("/v1/awcs/KEENE/snapshot", body(&snapshot("s1", t0(), 2, 4)))).await;
    assert_eq!((st, v["snapshot_id"].as_str()), (StatusCode::CREATED, Some("s1")));
    let (st, v) = call(&app, post("/v1/awcs/KEENE/controls", r#"{"op":"lock","crew":"c1","outage":"r3"}"#)).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["locks"]["c1"], "r3");
    let (st, v) = call(&app, post("/v1/awcs/KEENE/controls", r#"{"op":"lock","crew":"c2","outage":"r3"}"#)).await;
    assert_eq!((st, v["error"].as_str()), (StatusCode::CONFLICT, Some("conflicting_lock")));
    let (st, _) = call(&app, post("/v1/awcs/KEENE/controls", r#"{"op":"explode"}"#)).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    let (st, v) = call(&app, post("/v1/awcs/KEENE/trigger", r#"{"source":"manual"}"#)).await;
    assert_eq!((st, v["outcome"].as_str()), (StatusCode::CREATED, Some("drafted")));
    let draft_id = v["draft_id"].as_str().unwrap().to_string();
    assert_eq!(draft_id, "KEENE-d0001");
    let (_, d) = call(&app, get("/v1/awcs/KEENE/draft")).await;
    assert_eq!(d["plan"]["pipelines"][0]["slots"][0]["outage_id"], "r3");
    let (st, v) = call(&app, get("/v1/awcs/KEENE/staleness")).await;
    assert_eq!((st, v["remaining_seconds"].as_f64()), (StatusCode::OK, Some(120.0)));

    let (st, v) = call(&app, post("/v1/awcs/KEENE/publish", json!({ "draft_id": "KEENE-d0009" }).to_string())).await;
    assert_eq!((st, v["error"].as_str()), (StatusCode::CONFLICT, Some("draft_mismatch")));
    let (st, published) = call(&app, post("/v1/awcs/KEENE/publish", json!({ "draft_id": draft_id }).to_string())).await;
    assert_eq!(st, StatusCode::OK);
    let (_, plan) = call(&app, get("/v1/awcs/KEENE/plan")).await;
    assert_eq!(plan, published);
    assert_eq!(plan["plan"]["pipelines"][0]["slots"][0]["frozen"], true);

    let (st, v) = call(&app, post("/v1/awcs/KEENE/snapshot", "{")).await;
    assert_eq!((st, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("schema_error")));
    let (_, v) = call(&app, get("/v1/awcs/KEENE/status")).await;
    assert_eq!(v["mode"], "failsafe");
    let (st, _) = call(&app, post("/v1/awcs/KEENE/trigger", "")).await;
    assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE);
    let (_, again) = call(&app, get("/v1/awcs/KEENE/plan")).await;
    assert_eq!(again, published);
}

#[tokio::test]
async fn token_required_when_configured() {
    let cfg = ServiceConfig { auth_token: Some("s3cret".into()), ..config() };
    let h = harness_with(cfg, Arc::new(HaversineProvider::new(22.5)), AuditLog::in_memory());
    let app = api::router(h.svc.clone());
    let (st, _) = call(&app, Request::get("/v1/awcs/KEENE/status").body(Body::empty()).unwrap()).await;
    assert_eq!(st, StatusCode::UNAUTHORIZED);
    let req = Request::get("/v1/awcs/KEENE/status").header("authorization", "Bearer s3cret").body(Body::empty());
    let (st, _) = call(&app, req.unwrap()).await;
    assert_eq!(st, StatusCode::OK);
    let (st, _) = call(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(st, StatusCode::OK);
}
