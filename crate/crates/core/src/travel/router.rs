use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;

use super::{ProviderKind, TravelError, TravelProvider};

/// Environment variable carrying the routing service token.
pub const ROUTER_KEY_ENV: &str = "ROUTER_API_KEY";

/// Body of a distance-matrix request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRequest {
    pub origins: Vec<GeoPoint>,
    pub destinations: Vec<GeoPoint>,
}

/// `seconds[i][j]` is origin i to destination j; `null` marks a cell the
/// router could not route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResponse {
    pub seconds: Vec<Vec<Option<f64>>>,
}

/// Blocking HTTP client for a road-network distance-matrix service.
/// Requests to one endpoint are serialized.
pub struct RouterClient {
    endpoint: String,
    token: Option<String>,
    agent: Mutex<ureq::Agent>,
}

impl RouterClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        RouterClient { endpoint: endpoint.into(), token, agent: Mutex::new(agent) }
    }

    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self::new(endpoint, timeout, std::env::var(ROUTER_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn request(&self, req: &MatrixRequest) -> Result<MatrixResponse, TravelError> {
        let agent = self.agent.lock().unwrap_or_else(|e| e.into_inner());
        let mut call = agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            call = call.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = call
            .send_json(req)
            .map_err(|e| TravelError::RouterUnavailable(format!("{}: {e}", self.endpoint)))?;
        resp.body_mut()
            .read_json::<MatrixResponse>()
            .map_err(|e| TravelError::RouterUnavailable(format!("bad response body: {e}")))
    }
}

impl TravelProvider for RouterClient {
    fn kind(&self) -> ProviderKind {
        ProviderKind::ExternalRouter
    }

    fn seconds(&self, from: &GeoPoint, to: &GeoPoint) -> Result<f64, TravelError> {
        let resp = self.request(&MatrixRequest { origins: vec![*from], destinations: vec![*to] })?;
        resp.seconds
            .first()
            .and_then(|r| r.first())
            .copied()
            .flatten()
            .ok_or_else(|| TravelError::RouterUnavailable("router returned no value".into()))
    }

    fn batch(&self, origins: &[GeoPoint], destinations: &[GeoPoint]) -> Result<Vec<Vec<Option<f64>>>, TravelError> {
        let resp = self.request(&MatrixRequest { origins: origins.to_vec(), destinations: destinations.to_vec() })?;
        if resp.seconds.len() != origins.len() || resp.seconds.iter().any(|r| r.len() != destinations.len()) {
            return Err(TravelError::RouterUnavailable("response shape does not match request".into()));
        }
        Ok(resp.seconds)
    }
}
