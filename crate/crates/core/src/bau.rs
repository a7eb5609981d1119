//! Business-as-usual baseline: each available crew is sent to the nearest
//! open outage, one job at a time, ignoring priority and road network.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::geo::{GeoPoint, LocalProjection};
use crate::model::{CrewState, OutageTicket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BauEvent {
    pub time: DateTime<Utc>,
    pub crew_id: String,
    pub outage_id: String,
    /// Squared planar distance in m^2.
    pub distance_proxy: f64,
}

/// Index and squared planar distance of the open outage nearest `from`.
/// Ties go to the earlier ticket, then the lower id.
pub fn nearest_open<'a>(
    from: &GeoPoint,
    open: impl IntoIterator<Item = &'a OutageTicket>,
    projection: &LocalProjection,
) -> Option<(&'a OutageTicket, f64)> {
    let origin = projection.project(from);
    let mut best: Option<(&OutageTicket, f64)> = None;
    for t in open {
        let d = origin.dist_sq(&projection.project(&t.location));
        let better = match best {
            None => true,
            Some((b, bd)) => d < bd || (d == bd && (t.created_at, &t.id) < (b.created_at, &b.id)),
        };
        if better {
            best = Some((t, d));
        }
    }
    best
}

/// Outage the baseline operator would give `crew`, measured from its anchor
/// in a local projection about `yard`.
pub fn bau_assign(crew: &CrewState, open_outages: &[OutageTicket], yard: &GeoPoint) -> Option<String> {
    nearest_open(&crew.anchor, open_outages, &LocalProjection::new(*yard)).map(|(t, _)| t.id.clone())
}
