use crate::geo::GeoPoint;

use super::{ProviderKind, TravelError, TravelProvider};

/// Great-circle distance divided by a constant storm-mode speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaversineProvider {
    speed_mph: f64,
}

impl HaversineProvider {
    pub fn new(speed_mph: f64) -> Self {
        HaversineProvider { speed_mph }
    }

    pub fn speed_mph(&self) -> f64 {
        self.speed_mph
    }
}

impl TravelProvider for HaversineProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Haversine
    }

    fn seconds(&self, from: &GeoPoint, to: &GeoPoint) -> Result<f64, TravelError> {
        Ok(from.distance_miles(to) / self.speed_mph * 3600.0)
    }
}
