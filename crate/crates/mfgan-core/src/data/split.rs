//! Per-user chronological sequences and the leave-one-out split.

use std::collections::{HashMap, HashSet};

use super::ingest::InteractionRecord;
use crate::error::{Error, Result};

/// A user's chronologically ordered interactions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSequence {
    pub user: String,
    pub items: Vec<String>,
}

/// Per-user leave-one-out assignment over dense item ids.
///
/// For a sequence `[i_1 .. i_n]`: `train = [i_1 .. i_{n-2}]`, the validation
/// target is `i_{n-1}` (its prefix is exactly `train`), and the test target
/// is `i_n` (its prefix is `train` plus the validation target).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSplit {
    pub user: String,
    pub train: Vec<usize>,
    pub valid_target: usize,
    pub test_target: usize,
}

impl UserSplit {
    pub fn valid_prefix(&self) -> &[usize] {
        &self.train
    }

    pub fn test_prefix(&self) -> Vec<usize> {
        let mut p = self.train.clone();
        p.push(self.valid_target);
        p
    }

    /// Every item this user has interacted with, across all three parts.
    pub fn interacted(&self) -> HashSet<usize> {
        let mut s: HashSet<usize> = self.train.iter().copied().collect();
        s.insert(self.valid_target);
        s.insert(self.test_target);
        s
    }
}

/// The full split plus the string↔dense catalog mappings. Dense item ids are
/// contiguous from 1; id 0 is the reserved padding id. Users and items are
/// ordered lexicographically for determinism.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    item_names: Vec<String>,
    item_index: HashMap<String, usize>,
    pub users: Vec<UserSplit>,
    pub dropped_short: usize,
}

impl DatasetSplit {
    /// Number of real items `|I|` (excluding the padding id).
    pub fn item_count(&self) -> usize {
        self.item_names.len()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    /// Dense id (>= 1) of an item string.
    pub fn item_id(&self, name: &str) -> Option<usize> {
        self.item_index.get(name).copied()
    }

    /// Item string of a dense id (>= 1).
    pub fn item_name(&self, id: usize) -> &str {
        &self.item_names[id - 1]
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    /// Train-split interaction count per item id (index 0 unused).
    pub fn train_popularity(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.item_count() + 1];
        for u in &self.users {
            for &it in &u.train {
                counts[it] += 1;
            }
        }
        counts
    }

    pub(crate) fn from_parts(
        item_names: Vec<String>,
        users: Vec<UserSplit>,
        dropped_short: usize,
    ) -> Self {
        let item_index = item_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i + 1))
            .collect();
        DatasetSplit { item_names, item_index, users, dropped_short }
    }
}

/// Group records by user and sort each user's items by ascending timestamp.
/// Timestamp ties keep input file order (stable sort). Users are returned in
/// lexicographic order.
pub fn build_user_sequences(records: &[InteractionRecord]) -> Vec<UserSequence> {
    let mut per_user: HashMap<&str, Vec<(i64, &str)>> = HashMap::new();
    for r in records {
        per_user.entry(&r.user).or_default().push((r.timestamp, &r.item));
    }
    let mut users: Vec<&str> = per_user.keys().copied().collect();
    users.sort_unstable();
    users
        .into_iter()
        .map(|u| {
            let mut entries = per_user.remove(u).unwrap();
            entries.sort_by_key(|&(ts, _)| ts);
            UserSequence {
                user: u.to_string(),
                items: entries.into_iter().map(|(_, it)| it.to_string()).collect(),
            }
        })
        .collect()
}

/// Assign dense ids and split every sequence of length >= 3; shorter users
/// are dropped and counted.
pub fn leave_one_out_split(sequences: &[UserSequence]) -> Result<DatasetSplit> {
    let usable: Vec<&UserSequence> = sequences.iter().filter(|s| s.items.len() >= 3).collect();
    let dropped_short = sequences.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Data("no user sequence of length >= 3".into()));
    }

    let mut item_names: Vec<String> = usable
        .iter()
        .flat_map(|s| s.items.iter().cloned())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    item_names.sort_unstable();
    let item_index: HashMap<&str, usize> = item_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i + 1))
        .collect();

    let users = usable
        .iter()
        .map(|s| {
            let ids: Vec<usize> = s.items.iter().map(|it| item_index[it.as_str()]).collect();
            let n = ids.len();
            UserSplit {
                user: s.user.clone(),
                train: ids[..n - 2].to_vec(),
                valid_target: ids[n - 2],
                test_target: ids[n - 1],
            }
        })
        .collect();

    Ok(DatasetSplit::from_parts(item_names, users, dropped_short))
}
