use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::geo::GeoPoint;

use super::{ProviderKind, TravelError, TravelProvider};

#[derive(Deserialize)]
struct NodeRow {
    node_id: String,
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct CellRow {
    from_id: String,
    to_id: String,
    seconds: f64,
}

/// Precomputed node-to-node travel times. Queries snap each endpoint to the
/// nearest node and refuse points farther than the snap radius.
#[derive(Debug, Clone)]
pub struct OfflineMatrix {
    node_ids: Vec<String>,
    nodes: Vec<GeoPoint>,
    index: HashMap<String, usize>,
    cells: HashMap<(usize, usize), f64>,
    snap_radius_m: f64,
}

impl OfflineMatrix {
    pub fn from_files(nodes: &Path, matrix: &Path) -> Result<Self, TravelError> {
        let open = |p: &Path| std::fs::File::open(p).map_err(|e| TravelError::File(format!("{}: {e}", p.display())));
        Self::from_readers(open(nodes)?, open(matrix)?)
    }

    /// `nodes`: CSV `node_id,lat,lon`; `matrix`: CSV `from_id,to_id,seconds`.
    pub fn from_readers(nodes: impl Read, matrix: impl Read) -> Result<Self, TravelError> {
        let mut m = OfflineMatrix {
            node_ids: Vec::new(),
            nodes: Vec::new(),
            index: HashMap::new(),
            cells: HashMap::new(),
            snap_radius_m: 1_000.0,
        };
        for row in csv::Reader::from_reader(nodes).deserialize::<NodeRow>() {
            let row = row.map_err(|e| TravelError::File(format!("nodes: {e}")))?;
            let p = GeoPoint::new(row.lat, row.lon).map_err(|e| TravelError::File(format!("node {}: {e}", row.node_id)))?;
            if m.index.insert(row.node_id.clone(), m.nodes.len()).is_some() {
                return Err(TravelError::File(format!("duplicate node id {}", row.node_id)));
            }
            m.node_ids.push(row.node_id);
            m.nodes.push(p);
        }
        m.load_cells(matrix)?;
        Ok(m)
    }

    pub fn with_snap_radius(mut self, radius_m: f64) -> Self {
        self.snap_radius_m = radius_m;
        self
    }

    /// Replace cells from another `from_id,to_id,seconds` file.
    pub fn apply_overrides_file(&mut self, path: &Path) -> Result<(), TravelError> {
        let f = std::fs::File::open(path).map_err(|e| TravelError::File(format!("{}: {e}", path.display())))?;
        self.load_cells(f)
    }

    pub fn apply_overrides(&mut self, overrides: impl Read) -> Result<(), TravelError> {
        self.load_cells(overrides)
    }

    fn load_cells(&mut self, reader: impl Read) -> Result<(), TravelError> {
        for row in csv::Reader::from_reader(reader).deserialize::<CellRow>() {
            let row = row.map_err(|e| TravelError::File(format!("matrix: {e}")))?;
            let lookup = |id: &str| {
                self.index
                    .get(id)
                    .copied()
                    .ok_or_else(|| TravelError::File(format!("matrix references unknown node {id}")))
            };
            let (i, j) = (lookup(&row.from_id)?, lookup(&row.to_id)?);
            if !row.seconds.is_finite() || row.seconds < 0.0 {
                return Err(TravelError::File(format!(
                    "cell {} -> {} has invalid seconds {}",
                    row.from_id, row.to_id, row.seconds
                )));
            }
            self.cells.insert((i, j), row.seconds);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn snap(&self, p: &GeoPoint) -> Result<usize, TravelError> {
        let best = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, n.distance_m(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, d)) if d <= self.snap_radius_m => Ok(i),
            _ => Err(TravelError::MatrixMiss { lat: p.lat(), lon: p.lon(), radius_m: self.snap_radius_m }),
        }
    }
}

impl TravelProvider for OfflineMatrix {
    fn kind(&self) -> ProviderKind {
        ProviderKind::OfflineMatrix
    }

    fn seconds(&self, from: &GeoPoint, to: &GeoPoint) -> Result<f64, TravelError> {
        let (i, j) = (self.snap(from)?, self.snap(to)?);
        if i == j {
            return Ok(self.cells.get(&(i, j)).copied().unwrap_or(0.0));
        }
        self.cells.get(&(i, j)).copied().ok_or_else(|| TravelError::MissingCell {
            from: self.node_ids[i].clone(),
            to: self.node_ids[j].clone(),
        })
    }
}
