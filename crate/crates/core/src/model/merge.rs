use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::OutageTicket;

/// Two tickets are duplicates when they share a category and lie within
/// `radius_m` of each other with creation times at most `window_minutes` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DuplicateRule {
    pub radius_m: f64,
    pub window_minutes: i64,
}

impl Default for DuplicateRule {
    fn default() -> Self {
        DuplicateRule { radius_m: 25.0, window_minutes: 15 }
    }
}

impl DuplicateRule {
    pub fn matches(&self, a: &OutageTicket, b: &OutageTicket) -> bool {
        a.category == b.category
            && (a.created_at - b.created_at).abs() <= Duration::minutes(self.window_minutes)
            && a.location.distance_m(&b.location) <= self.radius_m
    }
}

pub fn merge_duplicates(tickets: &[OutageTicket]) -> Vec<OutageTicket> {
    merge_duplicates_with(tickets, &DuplicateRule::default())
}

/// Fold duplicate clusters (transitive closure of the pairwise rule) into
/// their earliest ticket. The survivor carries the largest customer count and
/// lists the absorbed ids. Output is ordered by `(created_at, id)`.
pub fn merge_duplicates_with(tickets: &[OutageTicket], rule: &DuplicateRule) -> Vec<OutageTicket> {
    let mut sorted: Vec<&OutageTicket> = tickets.iter().collect();
    sorted.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));

    let n = sorted.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rule.matches(sorted[i], sorted[j]) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                // keep the earliest index as root so it survives
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut out: Vec<OutageTicket> = Vec::new();
    let mut slot_of_root = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if root == i {
            slot_of_root[i] = out.len();
            out.push(sorted[i].clone());
        } else {
            let survivor = &mut out[slot_of_root[root]];
            let absorbed = sorted[i];
            survivor.customers = survivor.customers.max(absorbed.customers);
            survivor.assessed_customers = survivor.assessed_customers.max(absorbed.assessed_customers);
            survivor.absorbed.push(absorbed.id.clone());
            survivor.absorbed.extend(absorbed.absorbed.iter().cloned());
        }
    }
    for t in &mut out {
        t.absorbed.sort();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{t0, ticket};
    use crate::model::Category;
    use proptest::prelude::*;

    fn near(id: &str, metres_north: f64, minutes: i64, customers: u32, cat: Category) -> OutageTicket {
        let mut t = ticket(id, 42.93, -72.28, customers, cat);
        t.location = t.location.offset_m(0.0, metres_north);
        t.created_at = t0() + Duration::minutes(minutes);
        t
    }

    #[test]
    fn merges_close_same_category_pair() {
        let a = near("r1", 0.0, 0, 5, Category::FPS1);
        let b = near("r2", 10.0, 5, 8, Category::FPS1);
        // brute-force oracle: pairwise distance and time gap
        assert!(a.location.distance_m(&b.location) < 25.0);
        let out = merge_duplicates(&[b.clone(), a.clone()]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "r1");
        assert_eq!(out[0].customers, 8);
        assert_eq!(out[0].created_at, a.created_at);
        assert_eq!(out[0].absorbed, vec!["r2".to_string()]);
    }

    #[test]
    fn category_gate_keeps_both() {
        let a = near("r1", 0.0, 0, 5, Category::FPS1);
        let b = near("r2", 10.0, 5, 8, Category::Single);
        assert_eq!(merge_duplicates(&[a, b]).len(), 2);
    }

    #[test]
    fn time_and_distance_gates() {
        let a = near("r1", 0.0, 0, 5, Category::Single);
        let late = near("r2", 5.0, 16, 5, Category::Single);
        let far = near("r3", 40.0, 1, 5, Category::Single);
        assert_eq!(merge_duplicates(&[a, late, far]).len(), 3);
    }

    #[test]
    fn empty_in_empty_out() {
        assert!(merge_duplicates(&[]).is_empty());
    }

    #[test]
    fn output_ordered_by_time_then_id() {
        let out = merge_duplicates(&[
            near("b", 0.0, 3, 1, Category::Single),
            near("a", 500.0, 3, 1, Category::Single),
            near("c", 1000.0, 0, 1, Category::Single),
        ]);
        let ids: Vec<_> = out.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    fn arb_tickets() -> impl Strategy<Value = Vec<OutageTicket>> {
        prop::collection::vec((0.0f64..80.0, 0i64..40, 1u32..50, 0usize..2), 0..12).prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, (m, min, q, c))| {
                    let cat = [Category::FPS2, Category::Single][c];
                    near(&format!("r{i:02}"), m, min, q, cat)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn merge_is_idempotent(tickets in arb_tickets()) {
            let once = merge_duplicates(&tickets);
            let twice = merge_duplicates(&once);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn merge_never_adds_customers(tickets in arb_tickets()) {
            let before: u64 = tickets.iter().map(|t| t.customers as u64).sum();
            let after: u64 = merge_duplicates(&tickets).iter().map(|t| t.customers as u64).sum();
            prop_assert!(after <= before);
        }
    }
}
