//! Iterated k-core pruning of the user-item interaction multigraph.

use std::collections::HashMap;

use super::ingest::InteractionRecord;

/// Repeatedly drop interactions of users or items with fewer than `k`
/// records until every remaining user and item has at least `k`. Input
/// order of the surviving records is preserved. The result may be empty.
pub fn k_core_filter(records: &[InteractionRecord], k: usize) -> Vec<InteractionRecord> {
    assert!(k >= 1, "k must be >= 1");
    let mut current: Vec<InteractionRecord> = records.to_vec();
    loop {
        let keeps: Vec<bool> = {
            let mut user_counts: HashMap<&str, usize> = HashMap::new();
            let mut item_counts: HashMap<&str, usize> = HashMap::new();
            for r in &current {
                *user_counts.entry(r.user.as_str()).or_default() += 1;
                *item_counts.entry(r.item.as_str()).or_default() += 1;
            }
            current
                .iter()
                .map(|r| user_counts[r.user.as_str()] >= k && item_counts[r.item.as_str()] >= k)
                .collect()
        };
        if keeps.iter().all(|&b| b) {
            return current;
        }
        let mut idx = 0;
        current.retain(|_| {
            let keep = keeps[idx];
            idx += 1;
            keep
        });
    }
}
