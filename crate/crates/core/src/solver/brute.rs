use super::{
    assemble, reduce, Assignment, AssignmentSolver, Canonical, ProfitMatrix, Reduced, SolveError, BRUTE_FORCE_MAX,
};

/// Enumerates every admissible matching. Slow; meant as a reference.
#[derive(Debug, Clone, Copy, Default)]
pub struct BruteForceSolver;

impl AssignmentSolver for BruteForceSolver {
    fn name(&self) -> &'static str {
        "brute-force"
    }

    fn solve(&self, pm: &ProfitMatrix, locks: &[(String, String)], force_full: bool) -> Result<Assignment, SolveError> {
        let (n, m) = (pm.crew_ids.len(), pm.outage_ids.len());
        if n > BRUTE_FORCE_MAX || m > BRUTE_FORCE_MAX {
            return Err(SolveError::TooLarge { crews: n, outages: m });
        }
        let red = reduce(pm, locks)?;
        let canon = enumerate(&red, force_full);
        Ok(assemble(pm, &red, &canon, self.name()))
    }
}

struct Search<'a> {
    q: &'a [Vec<i64>],
    n: usize,
    m: usize,
    target: Option<usize>,
    used: Vec<bool>,
    current: Vec<usize>,
    best: i64,
    optima: Vec<Vec<usize>>,
}

impl Search<'_> {
    /// Columns are filled in order, each trying rows `0..n` then "none"
    /// (encoded as `n`).
    fn go(&mut self, col: usize, assigned: usize, score: i64) {
        if let Some(t) = self.target {
            if assigned + (self.m - col) < t {
                return;
            }
        }
        if col == self.m {
            if self.target.is_some_and(|t| assigned != t) {
                return;
            }
            if self.optima.is_empty() || score > self.best {
                self.best = score;
                self.optima.clear();
            }
            if score == self.best {
                self.optima.push(self.current.clone());
            }
            return;
        }
        for r in 0..self.n {
            if self.used[r] {
                continue;
            }
            self.used[r] = true;
            self.current.push(r);
            self.go(col + 1, assigned + 1, score + self.q[r][col]);
            self.current.pop();
            self.used[r] = false;
        }
        self.current.push(self.n);
        self.go(col + 1, assigned, score);
        self.current.pop();
    }
}

fn enumerate(red: &Reduced, force_full: bool) -> Canonical {
    let (n, m) = (red.rows.len(), red.cols.len());
    let mut s = Search {
        q: &red.q,
        n,
        m,
        target: force_full.then_some(n.min(m)),
        used: vec![false; n],
        current: Vec::with_capacity(m),
        best: 0,
        optima: Vec::new(),
    };
    s.go(0, 0, 0);
    // Enumeration order is lexicographic, so the first optimum is the
    // preferred one. A column is a tie when optima agreeing on every
    // earlier column disagree on it.
    let chosen = s.optima[0].clone();
    let mut alive: Vec<&Vec<usize>> = s.optima.iter().collect();
    let mut tie_cols = Vec::new();
    for (j, &pick) in chosen.iter().enumerate() {
        if alive.iter().any(|v| v[j] != pick) {
            tie_cols.push(j);
        }
        alive.retain(|v| v[j] == pick);
    }
    Canonical {
        col_to_row: chosen.into_iter().map(|r| (r < n).then_some(r)).collect(),
        tie_cols,
    }
}
