use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::model::{AwcId, Category, CrewState, OutageTicket};
use crate::travel::TravelConfig;

use super::{AssessModel, Scenario};

/// Keene, NH service yard.
pub const KEENE_YARD: (f64, f64) = (42.9337, -72.2781);

#[derive(Debug, Error, Clone, PartialEq)]
#[error("scenario parameters: {0}")]
pub struct GenError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProfile {
    /// Offsets `W * u^2` over the arrival window `W`: most tickets early.
    FrontLoaded,
    Uniform,
    /// Every ticket exists at the start.
    AllAtStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub n_crews: usize,
    pub n_outages: usize,
    pub fps_fraction: f64,
    /// Radius of the disc, around the yard, that tickets fall in.
    pub area_km: f64,
    pub horizon_hours: f64,
    /// Tickets arrive within this leading share of the horizon, leaving
    /// the rest for crews to clear the queue.
    pub arrival_window: f64,
    pub arrival_profile: ArrivalProfile,
    pub start: DateTime<Utc>,
    pub awc_code: String,
    pub yard: (f64, f64),
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            n_crews: 7,
            n_outages: 90,
            fps_fraction: 0.05,
            area_km: 5.0,
            horizon_hours: 6.0,
            arrival_window: 0.75,
            arrival_profile: ArrivalProfile::FrontLoaded,
            start: Utc.with_ymd_and_hms(2025, 3, 7, 12, 0, 0).unwrap(),
            awc_code: "KEENE".into(),
            yard: KEENE_YARD,
        }
    }
}

const MAX_CUSTOMERS: f64 = 500.0;

/// Category mix of non-FPS tickets.
const NON_FPS_MIX: [(Category, f64); 3] = [(Category::Critical, 0.1), (Category::Single, 0.7), (Category::NonOutage, 0.2)];

pub fn generate_scenario(seed: u64, params: &GenParams) -> Result<Scenario, GenError> {
    let bad = |m: &str| Err(GenError(m.into()));
    if params.n_crews == 0 {
        return bad("n_crews must be positive");
    }
    if !(0.0..=1.0).contains(&params.fps_fraction) {
        return bad("fps_fraction must be in [0, 1]");
    }
    if !(params.area_km.is_finite() && params.area_km > 0.0) {
        return bad("area_km must be positive");
    }
    if !(params.horizon_hours.is_finite() && params.horizon_hours > 0.0) {
        return bad("horizon_hours must be positive");
    }
    if !(params.arrival_window > 0.0 && params.arrival_window <= 1.0) {
        return bad("arrival_window must be in (0, 1]");
    }
    let yard = GeoPoint::new(params.yard.0, params.yard.1).map_err(|e| GenError(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon_s = (params.horizon_hours * 3600.0).floor() as i64;
    let window_s = horizon_s as f64 * params.arrival_window;
    let radius_m = params.area_km * 1000.0;

    let mut tickets = Vec::with_capacity(params.n_outages);
    for i in 0..params.n_outages {
        let r = radius_m * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let location = yard.offset_m(r * theta.cos(), r * theta.sin());
        let u: f64 = rng.random();
        let offset_s = match params.arrival_profile {
            ArrivalProfile::FrontLoaded => (window_s * u * u).floor() as i64,
            ArrivalProfile::Uniform => (window_s * u).floor() as i64,
            ArrivalProfile::AllAtStart => 0,
        };
        let customers = (MAX_CUSTOMERS.powf(rng.random::<f64>()).floor() as u32).clamp(1, MAX_CUSTOMERS as u32);
        let category = if rng.random::<f64>() < params.fps_fraction {
            [Category::FPS1, Category::FPS2, Category::FPS3][rng.random_range(0..3)]
        } else {
            let x: f64 = rng.random();
            let mut acc = 0.0;
            NON_FPS_MIX
                .iter()
                .find(|(_, p)| {
                    acc += p;
                    x < acc
                })
                .map_or(Category::Single, |(c, _)| *c)
        };
        tickets.push(OutageTicket {
            id: format!("r{:03}", i + 1),
            awc: params.awc_code.clone(),
            location,
            created_at: params.start + Duration::seconds(offset_s),
            customers,
            category,
            assessed_customers: 0,
            absorbed: vec![],
        });
    }
    tickets.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));

    let crews = (1..=params.n_crews)
        .map(|i| CrewState {
            id: format!("c{i:02}"),
            awc: params.awc_code.clone(),
            anchor: yard,
            anchor_confirmed_at: params.start,
            availability: true,
            frozen: false,
            locked_to: None,
            assigned_count: 0,
            shift_active: true,
        })
        .collect();

    Ok(Scenario {
        scenario_id: format!("seed{seed}-{}c-{}r", params.n_crews, params.n_outages),
        awc: AwcId { code: params.awc_code.clone(), yard },
        horizon_start: params.start,
        horizon_end: params.start + Duration::seconds(horizon_s),
        outage_stream: tickets,
        crew_roster: crews,
        assess_duration_model: AssessModel::default(),
        travel: TravelConfig::default(),
        rng_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shape() {
        let s = generate_scenario(42, &GenParams::default()).unwrap();
        assert_eq!(s.outage_stream.len(), 90);
        assert_eq!(s.crew_roster.len(), 7);
        assert_eq!(s.horizon_end - s.horizon_start, Duration::hours(6));
        s.validate().unwrap();
        let yard = s.awc.yard;
        assert!(s.outage_stream.iter().all(|t| t.location.distance_m(&yard) <= 5_000.0 + 1.0));
        assert!(s.outage_stream.iter().all(|t| (1..=500).contains(&t.customers)));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let p = GenParams::default();
        assert_eq!(generate_scenario(7, &p).unwrap(), generate_scenario(7, &p).unwrap());
        assert_ne!(generate_scenario(7, &p).unwrap(), generate_scenario(8, &p).unwrap());
    }

    #[test]
    fn no_fps_when_fraction_zero() {
        let p = GenParams { fps_fraction: 0.0, n_outages: 300, ..GenParams::default() };
        let s = generate_scenario(3, &p).unwrap();
        assert!(s.outage_stream.iter().all(|t| !t.category.is_fps()));
        let p = GenParams { fps_fraction: 1.0, n_outages: 50, ..GenParams::default() };
        assert!(generate_scenario(3, &p).unwrap().outage_stream.iter().all(|t| t.category.is_fps()));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(generate_scenario(1, &GenParams { n_crews: 0, ..GenParams::default() }).is_err());
        assert!(generate_scenario(1, &GenParams { fps_fraction: 1.5, ..GenParams::default() }).is_err());
        assert!(generate_scenario(1, &GenParams { area_km: -1.0, ..GenParams::default() }).is_err());
    }
}
