//! One assignment run: profit matrix construction and max-profit matching.
//!
//! Profits are `w_r - beta * tau` with `tau` in (robustified) minutes. Each
//! crew takes at most one outage and each outage at most one crew; operator
//! locks are fixed before solving. Among equal-profit optima the solvers pick
//! the same matching: outages are visited in id order and each takes the
//! lowest-id crew still compatible with an optimum, "unassigned" ranking last.
//!
//! Solvers compare objectives on profits quantized to 1e-6, so optima that
//! differ by less than that are treated as ties.

mod brute;
mod hungarian;

pub use brute::BruteForceSolver;
pub use hungarian::HungarianSolver;

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::priority::WeightedOutage;
use crate::registry::Registry;
use crate::travel::{robustify, TravelConfig, TravelMatrix};

/// Profit resolution used for exact objective comparison.
pub const PROFIT_SCALE: f64 = 1e6;

/// Largest instance the exhaustive solver accepts on either side.
pub const BRUTE_FORCE_MAX: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("infeasible locks: {0}")]
    InfeasibleLocks(String),
    #[error("instance too large for exhaustive search: {crews} crews x {outages} outages (max {BRUTE_FORCE_MAX})")]
    TooLarge { crews: usize, outages: usize },
    #[error("no travel time for crew {crew} -> outage {outage}")]
    MissingTau { crew: String, outage: String },
    #[error("non-finite profit for crew {crew} -> outage {outage}")]
    NonFinite { crew: String, outage: String },
    #[error("beta_dist must be positive and finite, got {0}")]
    BadBeta(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitMatrix {
    pub crew_ids: Vec<String>,
    pub outage_ids: Vec<String>,
    /// `profit[c][r]`, net profit of sending crew `c` to outage `r`.
    pub profit: Vec<Vec<f64>>,
    pub beta_dist: f64,
    pub run_index: u8,
    /// Outage weights by column; empty for matrices built from raw profits.
    pub weights: Vec<f64>,
    /// Robustified travel minutes; empty for matrices built from raw profits.
    pub travel_minutes: Vec<Vec<f64>>,
}

/// Where a crew departs from in this run and how old that fix is.
#[derive(Debug, Clone, PartialEq)]
pub struct CrewAnchor {
    pub crew_id: String,
    pub anchor: GeoPoint,
    pub anchor_age: Duration,
}

impl ProfitMatrix {
    /// Matrix from explicit profits with ids `c01.. / r01..`.
    pub fn from_profits(profit: Vec<Vec<f64>>, run_index: u8) -> Self {
        let n = profit.len();
        let m = profit.first().map_or(0, Vec::len);
        ProfitMatrix {
            crew_ids: (1..=n).map(|i| format!("c{i:02}")).collect(),
            outage_ids: (1..=m).map(|j| format!("r{j:02}")).collect(),
            profit,
            beta_dist: 1.0,
            run_index,
            weights: Vec::new(),
            travel_minutes: Vec::new(),
        }
    }

    pub fn crew_index(&self, id: &str) -> Option<usize> {
        self.crew_ids.iter().position(|c| c == id)
    }

    pub fn outage_index(&self, id: &str) -> Option<usize> {
        self.outage_ids.iter().position(|r| r == id)
    }

    pub fn is_empty(&self) -> bool {
        self.crew_ids.is_empty() || self.outage_ids.is_empty()
    }
}

/// Build `profit[c][r] = w_r - beta * robustify(tau(anchor_c, L_r)) / 60`.
pub fn profit_matrix(
    crews: &[CrewAnchor],
    outages: &[WeightedOutage],
    matrix: &TravelMatrix,
    beta: f64,
    travel: &TravelConfig,
    run_index: u8,
) -> Result<ProfitMatrix, SolveError> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(SolveError::BadBeta(beta));
    }
    let mut profit = Vec::with_capacity(crews.len());
    let mut minutes = Vec::with_capacity(crews.len());
    for c in crews {
        let oi = matrix.origin_index(&c.anchor);
        let mut prow = Vec::with_capacity(outages.len());
        let mut mrow = Vec::with_capacity(outages.len());
        for o in outages {
            let missing = || SolveError::MissingTau { crew: c.crew_id.clone(), outage: o.ticket.id.clone() };
            let tau = if c.anchor == o.ticket.location {
                0.0
            } else {
                let i = oi.ok_or_else(missing)?;
                let j = matrix.destination_index(&o.ticket.location).ok_or_else(missing)?;
                matrix.seconds[i][j]
            };
            let tau_min = robustify(tau, c.anchor_age, travel) / 60.0;
            let p = o.weight - beta * tau_min;
            if !p.is_finite() {
                return Err(SolveError::NonFinite { crew: c.crew_id.clone(), outage: o.ticket.id.clone() });
            }
            prow.push(p);
            mrow.push(tau_min);
        }
        profit.push(prow);
        minutes.push(mrow);
    }
    Ok(ProfitMatrix {
        crew_ids: crews.iter().map(|c| c.crew_id.clone()).collect(),
        outage_ids: outages.iter().map(|o| o.ticket.id.clone()).collect(),
        profit,
        beta_dist: beta,
        run_index,
        weights: outages.iter().map(|o| o.weight).collect(),
        travel_minutes: minutes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedPair {
    pub crew_id: String,
    pub outage_id: String,
    pub profit: f64,
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub locked: Vec<(String, String)>,
    /// Outages whose crew was chosen by the tie-break rule among several
    /// equally profitable options.
    pub tie_breaks: Vec<String>,
    pub solver: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Sorted by crew id.
    pub pairs: Vec<AssignedPair>,
    pub objective: f64,
    pub run_index: u8,
    pub provenance: Provenance,
}

impl Assignment {
    pub fn outage_for(&self, crew_id: &str) -> Option<&str> {
        self.pairs.iter().find(|p| p.crew_id == crew_id).map(|p| p.outage_id.as_str())
    }

    pub fn pair_set(&self) -> BTreeSet<(String, String)> {
        self.pairs.iter().map(|p| (p.crew_id.clone(), p.outage_id.clone())).collect()
    }
}

pub trait AssignmentSolver: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(
        &self,
        pm: &ProfitMatrix,
        locks: &[(String, String)],
        force_full: bool,
    ) -> Result<Assignment, SolveError>;
}

/// Max-profit matching via shortest augmenting paths, O(n^3).
pub fn solve_assignment(
    pm: &ProfitMatrix,
    locks: &[(String, String)],
    force_full: bool,
) -> Result<Assignment, SolveError> {
    HungarianSolver.solve(pm, locks, force_full)
}

/// Exhaustive search; a test oracle for instances up to 8 x 8.
pub fn brute_force_assignment(
    pm: &ProfitMatrix,
    locks: &[(String, String)],
    force_full: bool,
) -> Result<Assignment, SolveError> {
    BruteForceSolver.solve(pm, locks, force_full)
}

pub fn solver_registry() -> Registry<Arc<dyn AssignmentSolver>> {
    Registry::new("solver")
        .with("hungarian", Arc::new(HungarianSolver) as Arc<dyn AssignmentSolver>)
        .with("brute-force", Arc::new(BruteForceSolver) as Arc<dyn AssignmentSolver>)
}

/// Unlocked rows and columns in id order with quantized profits.
pub(crate) struct Reduced {
    /// Original row index per reduced row.
    pub rows: Vec<usize>,
    /// Original column index per reduced column.
    pub cols: Vec<usize>,
    pub q: Vec<Vec<i64>>,
    pub locks: Vec<(usize, usize)>,
}

/// Solver output over a [`Reduced`] instance: per reduced column, the
/// reduced row it is matched to.
pub(crate) struct Canonical {
    pub col_to_row: Vec<Option<usize>>,
    pub tie_cols: Vec<usize>,
}

fn quantize(p: f64) -> Option<i64> {
    let scaled = (p * PROFIT_SCALE).round();
    (scaled.is_finite() && scaled.abs() < 9.0e15).then_some(scaled as i64)
}

pub(crate) fn reduce(pm: &ProfitMatrix, locks: &[(String, String)]) -> Result<Reduced, SolveError> {
    let n = pm.crew_ids.len();
    let m = pm.outage_ids.len();
    if pm.profit.len() != n || pm.profit.iter().any(|r| r.len() != m) {
        return Err(SolveError::InfeasibleLocks("profit matrix shape does not match ids".into()));
    }
    let mut lock_idx = Vec::with_capacity(locks.len());
    let (mut crews_seen, mut outages_seen) = (BTreeSet::new(), BTreeSet::new());
    for (c, r) in locks {
        let ci = pm
            .crew_index(c)
            .ok_or_else(|| SolveError::InfeasibleLocks(format!("lock references unknown crew {c}")))?;
        let ri = pm
            .outage_index(r)
            .ok_or_else(|| SolveError::InfeasibleLocks(format!("lock references unknown outage {r}")))?;
        if !crews_seen.insert(ci) {
            return Err(SolveError::InfeasibleLocks(format!("crew {c} locked twice")));
        }
        if !outages_seen.insert(ri) {
            return Err(SolveError::InfeasibleLocks(format!("outage {r} locked to two crews")));
        }
        lock_idx.push((ci, ri));
    }
    let mut rows: Vec<usize> = (0..n).filter(|i| !crews_seen.contains(i)).collect();
    let mut cols: Vec<usize> = (0..m).filter(|j| !outages_seen.contains(j)).collect();
    rows.sort_by(|&a, &b| pm.crew_ids[a].cmp(&pm.crew_ids[b]));
    cols.sort_by(|&a, &b| pm.outage_ids[a].cmp(&pm.outage_ids[b]));
    let mut q = Vec::with_capacity(rows.len());
    for &i in &rows {
        let mut row = Vec::with_capacity(cols.len());
        for &j in &cols {
            row.push(quantize(pm.profit[i][j]).ok_or_else(|| SolveError::NonFinite {
                crew: pm.crew_ids[i].clone(),
                outage: pm.outage_ids[j].clone(),
            })?);
        }
        q.push(row);
    }
    for &(i, j) in &lock_idx {
        if !pm.profit[i][j].is_finite() {
            return Err(SolveError::NonFinite { crew: pm.crew_ids[i].clone(), outage: pm.outage_ids[j].clone() });
        }
    }
    Ok(Reduced { rows, cols, q, locks: lock_idx })
}

pub(crate) fn assemble(pm: &ProfitMatrix, red: &Reduced, canon: &Canonical, solver: &str) -> Assignment {
    let mut pairs: Vec<AssignedPair> = red
        .locks
        .iter()
        .map(|&(i, j)| AssignedPair {
            crew_id: pm.crew_ids[i].clone(),
            outage_id: pm.outage_ids[j].clone(),
            profit: pm.profit[i][j],
            locked: true,
        })
        .collect();
    for (cj, row) in canon.col_to_row.iter().enumerate() {
        if let Some(ri) = row {
            let (i, j) = (red.rows[*ri], red.cols[cj]);
            pairs.push(AssignedPair {
                crew_id: pm.crew_ids[i].clone(),
                outage_id: pm.outage_ids[j].clone(),
                profit: pm.profit[i][j],
                locked: false,
            });
        }
    }
    pairs.sort_by(|a, b| a.crew_id.cmp(&b.crew_id));
    let objective = pairs.iter().map(|p| p.profit).sum();
    let mut locked: Vec<(String, String)> = pairs
        .iter()
        .filter(|p| p.locked)
        .map(|p| (p.crew_id.clone(), p.outage_id.clone()))
        .collect();
    locked.sort();
    Assignment {
        pairs,
        objective,
        run_index: pm.run_index,
        provenance: Provenance {
            locked,
            tie_breaks: canon.tie_cols.iter().map(|&cj| pm.outage_ids[red.cols[cj]].clone()).collect(),
            solver: solver.to_string(),
        },
    }
}
