//! Route comparison metrics: distance, crossovers, overlap, workload spread
//! and customers assessed by visit position.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{segments_cross, LocalProjection, Planar};

use super::{PlanRecord, PolicyTag, RouteLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("logs cover different scenarios: {0}")]
    MismatchedScenario(String),
    #[error("crew {0} not in route log")]
    UnknownCrew(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Two legs only count as a crossover if their travel windows come
    /// within this many minutes of each other.
    pub crossover_window_minutes: f64,
    pub raster_cell_m: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { crossover_window_minutes: 30.0, raster_cell_m: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub policy: PolicyTag,
    pub crew_miles: BTreeMap<String, f64>,
    pub total_miles: f64,
    pub crossover_count: usize,
    pub overlap_index: f64,
    pub crew_outages: BTreeMap<String, usize>,
    /// Population standard deviation of outages per crew.
    pub workload_dispersion: f64,
    pub locality_radius_miles: BTreeMap<String, f64>,
    pub outages_completed: usize,
    pub catr_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrewComparison {
    pub test_miles: f64,
    pub base_miles: f64,
    pub miles_saved: f64,
    /// `None` when the baseline crew drove nowhere.
    pub percent_reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub miles_saved: f64,
    pub percent_reduction: Option<f64>,
    pub crews: BTreeMap<String, CrewComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub solves: usize,
    pub total_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl RuntimeStats {
    pub fn from_plans(plans: &[PlanRecord]) -> Self {
        let times: Vec<f64> = plans.iter().flat_map(|p| p.runs.iter().map(|r| r.solve_micros as f64 / 1000.0)).collect();
        let total: f64 = times.iter().sum();
        RuntimeStats {
            solves: times.len(),
            total_ms: total,
            mean_ms: if times.is_empty() { 0.0 } else { total / times.len() as f64 },
            max_ms: times.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub test: ArmMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<ArmMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<RuntimeStats>,
}

pub fn miles_saved(test: f64, base: f64) -> f64 {
    base - test
}

/// `(base - test) / base * 100`; `None` when `base` is zero.
pub fn percent_reduction(test: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| (base - test) / base * 100.0)
}

pub fn metrics_report(test: &RouteLog, base: Option<&RouteLog>, cfg: &MetricsConfig) -> Result<MetricsReport, MetricsError> {
    if let Some(b) = base {
        if b.scenario_id != test.scenario_id {
            return Err(MetricsError::MismatchedScenario(format!("{} vs {}", test.scenario_id, b.scenario_id)));
        }
        let crews = |l: &RouteLog| l.routes.iter().map(|r| r.crew_id.clone()).collect::<BTreeSet<_>>();
        if crews(test) != crews(b) {
            return Err(MetricsError::MismatchedScenario("crew rosters differ".into()));
        }
    }
    let t = arm_metrics(test, cfg);
    let b = base.map(|l| arm_metrics(l, cfg));
    let comparison = b.as_ref().map(|b| Comparison {
        miles_saved: miles_saved(t.total_miles, b.total_miles),
        percent_reduction: percent_reduction(t.total_miles, b.total_miles),
        crews: t
            .crew_miles
            .iter()
            .map(|(id, &tm)| {
                let bm = b.crew_miles[id];
                let c = CrewComparison {
                    test_miles: tm,
                    base_miles: bm,
                    miles_saved: miles_saved(tm, bm),
                    percent_reduction: percent_reduction(tm, bm),
                };
                (id.clone(), c)
            })
            .collect(),
    });
    Ok(MetricsReport { scenario_id: test.scenario_id.clone(), test: t, base: b, comparison, runtime: None })
}

pub fn arm_metrics(log: &RouteLog, cfg: &MetricsConfig) -> ArmMetrics {
    let proj = LocalProjection::new(log.yard);
    let mut crew_miles = BTreeMap::new();
    let mut crew_outages = BTreeMap::new();
    let mut locality = BTreeMap::new();
    for r in &log.routes {
        let miles: f64 = r.visits.iter().map(|v| v.from.distance_miles(&v.to)).sum();
        crew_miles.insert(r.crew_id.clone(), miles);
        crew_outages.insert(r.crew_id.clone(), r.visits.len());
        locality.insert(r.crew_id.clone(), locality_radius(r.visits.iter().map(|v| proj.project(&v.to))));
    }
    let counts: Vec<f64> = crew_outages.values().map(|&n| n as f64).collect();
    ArmMetrics {
        policy: log.policy,
        total_miles: crew_miles.values().sum(),
        crew_miles,
        crossover_count: crossover_count(log, cfg.crossover_window_minutes),
        overlap_index: overlap_index(log, cfg.raster_cell_m),
        crew_outages,
        workload_dispersion: population_stddev(&counts),
        locality_radius_miles: locality,
        outages_completed: log.visit_count(),
        catr_total: log.routes.iter().flat_map(|r| &r.visits).map(|v| u64::from(v.assessed_customers)).sum(),
    }
}

fn population_stddev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Mean distance of a crew's visited sites from their centroid, in miles.
fn locality_radius(points: impl Iterator<Item = Planar>) -> f64 {
    let pts: Vec<Planar> = points.collect();
    if pts.is_empty() {
        return 0.0;
    }
    let n = pts.len() as f64;
    let c = Planar { x: pts.iter().map(|p| p.x).sum::<f64>() / n, y: pts.iter().map(|p| p.y).sum::<f64>() / n };
    pts.iter().map(|p| p.dist_sq(&c).sqrt()).sum::<f64>() / n / crate::geo::METRES_PER_MILE
}

struct Leg {
    crew: usize,
    a: Planar,
    b: Planar,
    depart_ms: i64,
    arrive_ms: i64,
}

fn legs(log: &RouteLog) -> Vec<Leg> {
    let proj = LocalProjection::new(log.yard);
    let mut out = Vec::new();
    for (ci, r) in log.routes.iter().enumerate() {
        for v in &r.visits {
            if v.from == v.to {
                continue;
            }
            out.push(Leg {
                crew: ci,
                a: proj.project(&v.from),
                b: proj.project(&v.to),
                depart_ms: v.depart_time.timestamp_millis(),
                arrive_ms: v.arrive_time.timestamp_millis(),
            });
        }
    }
    out
}

/// Pairs of legs from different crews that properly cross while travelled
/// within `window_minutes` of each other.
pub fn crossover_count(log: &RouteLog, window_minutes: f64) -> usize {
    let tol = (window_minutes * 60_000.0) as i64;
    let legs = legs(log);
    let mut n = 0;
    for (i, p) in legs.iter().enumerate() {
        for q in &legs[i + 1..] {
            if p.crew == q.crew {
                continue;
            }
            let close_in_time = p.depart_ms <= q.arrive_ms + tol && q.depart_ms <= p.arrive_ms + tol;
            if close_in_time && segments_cross(p.a, p.b, q.a, q.b) {
                n += 1;
            }
        }
    }
    n
}

/// Share of raster cells touched by more than one crew, out of all cells
/// touched by any crew.
pub fn overlap_index(log: &RouteLog, cell_m: f64) -> f64 {
    let mut owners: HashMap<(i64, i64), BTreeSet<usize>> = HashMap::new();
    for leg in legs(log) {
        let len = leg.a.dist_sq(&leg.b).sqrt();
        let steps = ((len / (cell_m / 4.0)).ceil() as usize).max(1);
        for s in 0..=steps {
            let f = s as f64 / steps as f64;
            let x = leg.a.x + (leg.b.x - leg.a.x) * f;
            let y = leg.a.y + (leg.b.y - leg.a.y) * f;
            let cell = ((x / cell_m).floor() as i64, (y / cell_m).floor() as i64);
            owners.entry(cell).or_default().insert(leg.crew);
        }
    }
    if owners.is_empty() {
        return 0.0;
    }
    owners.values().filter(|s| s.len() > 1).count() as f64 / owners.len() as f64
}

/// Cumulative assessed customers after each completed visit of `crew_id`.
pub fn catr_curve(log: &RouteLog, crew_id: &str) -> Result<Vec<u64>, MetricsError> {
    let route = log.route(crew_id).ok_or_else(|| MetricsError::UnknownCrew(crew_id.to_string()))?;
    let mut acc = 0u64;
    Ok(route
        .visits
        .iter()
        .map(|v| {
            acc += u64::from(v.assessed_customers);
            acc
        })
        .collect())
}

/// `crew,position,outage,arrive,complete,customers`
pub fn route_csv(log: &RouteLog) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["crew", "position", "outage", "arrive", "complete", "customers"]).expect("in-memory write");
    for r in &log.routes {
        for (i, v) in r.visits.iter().enumerate() {
            w.write_record([
                r.crew_id.clone(),
                (i + 1).to_string(),
                v.outage_id.clone(),
                v.arrive_time.to_rfc3339(),
                v.complete_time.to_rfc3339(),
                v.assessed_customers.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// `metric,crew,value`; totals use the crew column `all`.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let mut arm = |prefix: &str, m: &ArmMetrics| {
        for (c, v) in &m.crew_miles {
            rows.push((format!("{prefix}_miles"), c.clone(), format!("{v:.3}")));
        }
        rows.push((format!("{prefix}_miles"), "all".into(), format!("{:.3}", m.total_miles)));
        for (c, v) in &m.crew_outages {
            rows.push((format!("{prefix}_outages"), c.clone(), v.to_string()));
        }
        for (c, v) in &m.locality_radius_miles {
            rows.push((format!("{prefix}_locality_radius_miles"), c.clone(), format!("{v:.3}")));
        }
        rows.push((format!("{prefix}_crossovers"), "all".into(), m.crossover_count.to_string()));
        rows.push((format!("{prefix}_overlap_index"), "all".into(), format!("{:.4}", m.overlap_index)));
        rows.push((format!("{prefix}_workload_dispersion"), "all".into(), format!("{:.4}", m.workload_dispersion)));
        rows.push((format!("{prefix}_outages_completed"), "all".into(), m.outages_completed.to_string()));
        rows.push((format!("{prefix}_catr_total"), "all".into(), m.catr_total.to_string()));
    };
    arm("test", &report.test);
    if let Some(b) = &report.base {
        arm("base", b);
    }
    let pct = |p: Option<f64>| p.map_or_else(String::new, |p| format!("{p:.1}"));
    if let Some(c) = &report.comparison {
        for (id, cc) in &c.crews {
            rows.push(("miles_saved".into(), id.clone(), format!("{:.3}", cc.miles_saved)));
            rows.push(("percent_reduction".into(), id.clone(), pct(cc.percent_reduction)));
        }
        rows.push(("miles_saved".into(), "all".into(), format!("{:.3}", c.miles_saved)));
        rows.push(("percent_reduction".into(), "all".into(), pct(c.percent_reduction)));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "crew", "value"]).expect("in-memory write");
    for (m, c, v) in rows {
        w.write_record([m, c, v]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// `policy,crew,position,cumulative_customers` for every crew in each log.
pub fn catr_csv(logs: &[&RouteLog]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["policy", "crew", "position", "cumulative_customers"]).expect("in-memory write");
    for log in logs {
        let tag = match log.policy {
            PolicyTag::Bau => "BAU",
            PolicyTag::Optimized => "Optimized",
        };
        for r in &log.routes {
            let curve = catr_curve(log, &r.crew_id).expect("crew from this log");
            for (i, v) in curve.iter().enumerate() {
                w.write_record([tag.to_string(), r.crew_id.clone(), (i + 1).to_string(), v.to_string()])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::replay::{CrewRoute, Visit};
    use chrono::{Duration, TimeZone, Utc};

    fn visit(id: &str, from: GeoPoint, to: GeoPoint, depart_min: i64, customers: u32) -> Visit {
        let t0 = Utc.with_ymd_and_hms(2025, 3, 7, 12, 0, 0).unwrap();
        Visit {
            outage_id: id.into(),
            depart_time: t0 + Duration::minutes(depart_min),
            arrive_time: t0 + Duration::minutes(depart_min + 10),
            complete_time: t0 + Duration::minutes(depart_min + 30),
            from,
            to,
            assessed_customers: customers,
        }
    }

    fn log(routes: Vec<(&str, Vec<Visit>)>) -> RouteLog {
        RouteLog {
            scenario_id: "s".into(),
            policy: PolicyTag::Optimized,
            yard: GeoPoint::new(42.93, -72.28).unwrap(),
            routes: routes.into_iter().map(|(c, v)| CrewRoute { crew_id: c.into(), visits: v }).collect(),
            unfinished: vec![],
        }
    }

    #[test]
    fn savings_arithmetic() {
        assert_eq!(miles_saved(365.0, 762.0), 397.0);
        assert!((percent_reduction(365.0, 762.0).unwrap() - 52.1).abs() < 0.05);
        assert!((percent_reduction(34.0, 223.0).unwrap() - 84.8).abs() < 0.05);
        assert_eq!(percent_reduction(5.0, 0.0), None);
    }

    #[test]
    fn catr_prefix_sums() {
        let y = GeoPoint::new(42.93, -72.28).unwrap();
        let l = log(vec![
            ("c1", vec![visit("r1", y, y.offset_m(100.0, 0.0), 0, 20), visit("r2", y, y, 30, 15), visit("r3", y, y, 60, 10)]),
            ("c2", vec![]),
        ]);
        assert_eq!(catr_curve(&l, "c1").unwrap(), vec![20, 35, 45]);
        assert_eq!(catr_curve(&l, "c2").unwrap(), Vec::<u64>::new());
        assert_eq!(catr_curve(&l, "zz"), Err(MetricsError::UnknownCrew("zz".into())));
    }

    #[test]
    fn crossing_needs_time_overlap_and_different_crews() {
        let y = GeoPoint::new(42.93, -72.28).unwrap();
        let (w, e) = (y.offset_m(-1000.0, 0.0), y.offset_m(1000.0, 0.0));
        let (s, n) = (y.offset_m(0.0, -1000.0), y.offset_m(0.0, 1000.0));
        let l = log(vec![("c1", vec![visit("r1", w, e, 0, 1)]), ("c2", vec![visit("r2", s, n, 20, 1)])]);
        assert_eq!(crossover_count(&l, 30.0), 1);
        let l = log(vec![("c1", vec![visit("r1", w, e, 0, 1)]), ("c2", vec![visit("r2", s, n, 200, 1)])]);
        assert_eq!(crossover_count(&l, 30.0), 0);
        let l = log(vec![("c1", vec![visit("r1", w, e, 0, 1), visit("r2", s, n, 0, 1)])]);
        assert_eq!(crossover_count(&l, 30.0), 0);
        // shared endpoint only
        let l = log(vec![("c1", vec![visit("r1", w, y, 0, 1)]), ("c2", vec![visit("r2", y, n, 0, 1)])]);
        assert_eq!(crossover_count(&l, 30.0), 0);
    }

    #[test]
    fn overlap_bounds() {
        let y = GeoPoint::new(42.93, -72.28).unwrap();
        let e = y.offset_m(2000.0, 0.0);
        let same = log(vec![("c1", vec![visit("r1", y, e, 0, 1)]), ("c2", vec![visit("r2", y, e, 0, 1)])]);
        assert_eq!(overlap_index(&same, 100.0), 1.0);
        let apart = log(vec![
            ("c1", vec![visit("r1", y, e, 0, 1)]),
            ("c2", vec![visit("r2", y.offset_m(0.0, 3000.0), e.offset_m(0.0, 3000.0), 0, 1)]),
        ]);
        assert_eq!(overlap_index(&apart, 100.0), 0.0);
        assert_eq!(overlap_index(&log(vec![("c1", vec![])]), 100.0), 0.0);
    }

    #[test]
    fn self_comparison_is_zero() {
        let y = GeoPoint::new(42.93, -72.28).unwrap();
        let l = log(vec![("c1", vec![visit("r1", y, y.offset_m(500.0, 500.0), 0, 3)]), ("c2", vec![])]);
        let r = metrics_report(&l, Some(&l), &MetricsConfig::default()).unwrap();
        let c = r.comparison.unwrap();
        assert_eq!(c.miles_saved, 0.0);
        assert_eq!(c.percent_reduction, Some(0.0));
        assert_eq!(r.test.crossover_count, 0);
    }

    #[test]
    fn mismatched_logs_rejected() {
        let l = log(vec![("c1", vec![])]);
        let mut other = l.clone();
        other.scenario_id = "t".into();
        assert!(matches!(metrics_report(&l, Some(&other), &MetricsConfig::default()), Err(MetricsError::MismatchedScenario(_))));
        let mut other = l.clone();
        other.routes[0].crew_id = "c9".into();
        assert!(metrics_report(&l, Some(&other), &MetricsConfig::default()).is_err());
    }

    #[test]
    fn dispersion_and_locality() {
        assert_eq!(population_stddev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), 2.0);
        let r = locality_radius([Planar { x: -1609.344, y: 0.0 }, Planar { x: 1609.344, y: 0.0 }].into_iter());
        assert!((r - 1.0).abs() < 1e-12);
    }
}
