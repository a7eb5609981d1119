use super::{assemble, reduce, Assignment, AssignmentSolver, Canonical, ProfitMatrix, Reduced, SolveError};

const INF: i64 = i64::MAX / 4;

#[derive(Debug, Clone, Copy, Default)]
pub struct HungarianSolver;

impl AssignmentSolver for HungarianSolver {
    fn name(&self) -> &'static str {
        "hungarian"
    }

    fn solve(&self, pm: &ProfitMatrix, locks: &[(String, String)], force_full: bool) -> Result<Assignment, SolveError> {
        let red = reduce(pm, locks)?;
        let canon = canonical(&red, force_full);
        Ok(assemble(pm, &red, &canon, self.name()))
    }
}

/// Min-cost assignment of every row to a distinct column (`rows <= cols`).
/// Returns the row matched to each column plus the final potentials.
struct Potentials {
    row_of: Vec<Option<usize>>,
    u: Vec<i64>,
    v: Vec<i64>,
}

fn shortest_augmenting(cost: &[Vec<i64>], cols: usize) -> Potentials {
    let n = cost.len();
    // 1-based with a virtual column 0, as in the classical formulation.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    Potentials {
        row_of: (1..=cols).map(|j| (p[j] != 0).then(|| p[j] - 1)).collect(),
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

/// Optimal matching, then a walk over outage columns in order that pins each
/// one to its most preferred partner still consistent with some optimum.
///
/// The problem is completed to a square one with zero-cost filler rows. A
/// pair can appear in an optimum iff it is tight under the final potentials,
/// so pinning reduces to finding alternating cycles in the tight graph.
fn canonical(red: &Reduced, force_full: bool) -> Canonical {
    let n = red.rows.len();
    let m = red.cols.len();
    if n == 0 || m == 0 {
        return Canonical { col_to_row: vec![None; m], tie_cols: vec![] };
    }
    // Idle columns: in relaxed mode every crew may sit out; in full mode
    // only the surplus crews do.
    let idle = if force_full { n.saturating_sub(m) } else { n };
    let total = m + idle;
    let cost: Vec<Vec<i64>> = red
        .q
        .iter()
        .map(|row| row.iter().map(|&q| -q).chain(std::iter::repeat_n(0, idle)).collect())
        .collect();
    let pot = shortest_augmenting(&cost, total);

    // Square completion: rows n..total are fillers with potential 0 and zero
    // cost everywhere, so they are tight exactly where v == 0.
    let filler_tight: Vec<usize> = (0..total).filter(|&j| pot.v[j] == 0).collect();
    let real_tight: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..total).filter(|&j| cost[i][j] - pot.u[i] - pot.v[j] == 0).collect())
        .collect();
    let mut g = TightGraph {
        n,
        real_tight: &real_tight,
        filler_tight: &filler_tight,
        col_row: vec![usize::MAX; total],
        row_col: vec![usize::MAX; total],
        row_fixed: vec![false; total],
        col_fixed: vec![false; total],
    };
    let mut next_filler = n;
    for (j, r) in pot.row_of.iter().enumerate() {
        let r = match r {
            Some(r) => *r,
            None => {
                next_filler += 1;
                next_filler - 1
            }
        };
        g.col_row[j] = r;
        g.row_col[r] = j;
    }

    let mut tie_cols = Vec::new();
    for j in 0..m {
        let mut chosen: Option<Vec<(usize, usize)>> = None;
        let mut tie = false;
        for cand in candidates(&g, j) {
            if let Some(plan) = g.force(cand, j) {
                if chosen.is_none() {
                    chosen = Some(plan);
                } else {
                    tie = true;
                    break;
                }
            }
        }
        let plan = chosen.expect("the current matching always realises some candidate");
        for (r, c) in plan {
            g.col_row[c] = r;
            g.row_col[r] = c;
        }
        g.col_fixed[j] = true;
        g.row_fixed[g.col_row[j]] = true;
        if tie {
            tie_cols.push(j);
        }
    }
    let col_to_row = (0..m).map(|j| (g.col_row[j] < n).then_some(g.col_row[j])).collect();
    Canonical { col_to_row, tie_cols }
}

/// Real rows in index order, then one representative filler row, if any.
fn candidates(g: &TightGraph<'_>, col: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..g.n).filter(|&i| !g.row_fixed[i] && g.is_tight(i, col)).collect();
    let filler = if g.col_row[col] >= g.n && !g.row_fixed[g.col_row[col]] {
        Some(g.col_row[col])
    } else {
        (g.n..g.row_fixed.len()).find(|&r| !g.row_fixed[r])
    };
    if let Some(r) = filler {
        if g.is_tight(r, col) {
            out.push(r);
        }
    }
    out
}

struct TightGraph<'a> {
    n: usize,
    real_tight: &'a [Vec<usize>],
    filler_tight: &'a [usize],
    col_row: Vec<usize>,
    row_col: Vec<usize>,
    row_fixed: Vec<bool>,
    col_fixed: Vec<bool>,
}

impl TightGraph<'_> {
    fn tight_cols(&self, row: usize) -> &[usize] {
        if row < self.n {
            &self.real_tight[row]
        } else {
            self.filler_tight
        }
    }

    fn is_tight(&self, row: usize, col: usize) -> bool {
        self.tight_cols(row).binary_search(&col).is_ok()
    }

    /// Re-match so that `row` takes `col`, keeping only tight edges and
    /// leaving fixed pairs alone. Returns the new `(row, col)` edges, or
    /// `None` when no perfect tight matching contains the pair.
    fn force(&self, row: usize, col: usize) -> Option<Vec<(usize, usize)>> {
        let start = self.col_row[col];
        if start == row {
            return Some(vec![]);
        }
        let target = self.row_col[row];
        // Alternating path start -> ... -> target over free tight edges.
        let total = self.col_row.len();
        let mut came_from = vec![usize::MAX; total];
        let mut queue = std::collections::VecDeque::from([start]);
        let mut seen_row = vec![false; total];
        seen_row[start] = true;
        let mut found = false;
        'bfs: while let Some(r) = queue.pop_front() {
            for &c in self.tight_cols(r) {
                if c == col || self.col_fixed[c] || came_from[c] != usize::MAX {
                    continue;
                }
                came_from[c] = r;
                if c == target {
                    found = true;
                    break 'bfs;
                }
                let next = self.col_row[c];
                if next != row && !self.row_fixed[next] && !seen_row[next] {
                    seen_row[next] = true;
                    queue.push_back(next);
                }
            }
        }
        if !found {
            return None;
        }
        let mut edges = vec![(row, col)];
        let mut c = target;
        loop {
            let r = came_from[c];
            edges.push((r, c));
            if r == start {
                break;
            }
            c = self.row_col[r];
        }
        Some(edges)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{brute_force_assignment, solve_assignment, ProfitMatrix};
    use proptest::prelude::*;

    fn pairs(pm: &ProfitMatrix, locks: &[(&str, &str)], full: bool) -> Vec<(String, String)> {
        let locks: Vec<(String, String)> = locks.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        solve_assignment(pm, &locks, full)
            .unwrap()
            .pairs
            .into_iter()
            .map(|p| (p.crew_id, p.outage_id))
            .collect()
    }

    fn owned(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn two_by_two() {
        let pm = ProfitMatrix::from_profits(vec![vec![10.0, 3.0], vec![8.0, 9.0]], 1);
        let a = solve_assignment(&pm, &[], true).unwrap();
        assert_eq!(a.objective, 19.0);
        assert_eq!(pairs(&pm, &[], true), owned(&[("c01", "r01"), ("c02", "r02")]));
    }

    #[test]
    fn lock_overrides_optimum() {
        let pm = ProfitMatrix::from_profits(vec![vec![10.0, 3.0], vec![8.0, 9.0]], 1);
        let locks = owned(&[("c01", "r02")]);
        let a = solve_assignment(&pm, &locks, true).unwrap();
        assert_eq!(a.objective, 11.0);
        assert_eq!(a.provenance.locked, locks);
    }

    #[test]
    fn negative_pair_full_vs_relaxed() {
        let pm = ProfitMatrix::from_profits(vec![vec![-5.0]], 1);
        assert_eq!(solve_assignment(&pm, &[], true).unwrap().objective, -5.0);
        let relaxed = solve_assignment(&pm, &[], false).unwrap();
        assert!(relaxed.pairs.is_empty());
        assert_eq!(relaxed.objective, 0.0);
    }

    #[test]
    fn all_equal_picks_identity() {
        let pm = ProfitMatrix::from_profits(vec![vec![1.0; 3]; 3], 1);
        let a = solve_assignment(&pm, &[], true).unwrap();
        assert_eq!(pairs(&pm, &[], true), owned(&[("c01", "r01"), ("c02", "r02"), ("c03", "r03")]));
        assert_eq!(a.provenance.tie_breaks, vec!["r01", "r02"]);
    }

    #[test]
    fn more_crews_than_outages() {
        let pm = ProfitMatrix::from_profits(vec![vec![1.0], vec![5.0], vec![5.0]], 1);
        assert_eq!(pairs(&pm, &[], true), owned(&[("c02", "r01")]));
    }

    #[test]
    fn empty_instances() {
        let pm = ProfitMatrix::from_profits(vec![], 1);
        assert!(solve_assignment(&pm, &[], true).unwrap().pairs.is_empty());
        let pm = ProfitMatrix::from_profits(vec![vec![], vec![]], 1);
        assert!(solve_assignment(&pm, &[], true).unwrap().pairs.is_empty());
    }

    #[test]
    fn bad_locks() {
        let pm = ProfitMatrix::from_profits(vec![vec![1.0, 2.0], vec![3.0, 4.0]], 1);
        for locks in [
            owned(&[("c01", "r01"), ("c01", "r02")]),
            owned(&[("c01", "r01"), ("c02", "r01")]),
            owned(&[("c09", "r01")]),
            owned(&[("c01", "r09")]),
        ] {
            assert!(matches!(
                solve_assignment(&pm, &locks, true),
                Err(super::super::SolveError::InfeasibleLocks(_))
            ));
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, bool)> {
        (1usize..=6, 1usize..=6, any::<bool>()).prop_flat_map(|(n, m, full)| {
            // Small integer range so ties are common.
            (prop::collection::vec(prop::collection::vec(-3i32..6, m), n), Just(full))
                .prop_map(|(rows, full)| (rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect(), full))
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((profit, full) in instance(), lock_seed in any::<u8>()) {
            let pm = ProfitMatrix::from_profits(profit, 1);
            let n = pm.crew_ids.len();
            let m = pm.outage_ids.len();
            let locks = if lock_seed % 3 == 0 {
                vec![(pm.crew_ids[lock_seed as usize % n].clone(), pm.outage_ids[lock_seed as usize % m].clone())]
            } else {
                vec![]
            };
            let h = solve_assignment(&pm, &locks, full).unwrap();
            let b = brute_force_assignment(&pm, &locks, full).unwrap();
            prop_assert_eq!(h.objective, b.objective);
            prop_assert_eq!(h.pair_set(), b.pair_set());
            prop_assert_eq!(h.provenance.tie_breaks, b.provenance.tie_breaks);
        }

        #[test]
        fn row_permutation_invariant((profit, full) in instance()) {
            let pm = ProfitMatrix::from_profits(profit, 1);
            let mut shuffled = pm.clone();
            shuffled.crew_ids.reverse();
            shuffled.profit.reverse();
            let a = solve_assignment(&pm, &[], full).unwrap();
            let b = solve_assignment(&shuffled, &[], full).unwrap();
            prop_assert_eq!(a.pair_set(), b.pair_set());
        }
    }
}
