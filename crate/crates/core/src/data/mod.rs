//! Interaction data, modality features, splits and samplers.

mod bipartite;
mod features;
mod sampling;
mod split;
pub mod synthetic;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

pub use bipartite::{build_bipartite_graph, NormalizedBipartite};
pub use features::{load_features, write_features, ModalityFeatures};
pub use sampling::sample_negative;
pub use split::{select_cold_items, split_cold, split_warm, Partition, Split, SplitMode};

use crate::error::{LatticeError, Result};

/// Dense index assignment for external string IDs, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Identity mapping `"0"`, `"1"`, ... used for generated data.
    pub fn sequential(n: usize) -> Self {
        let mut m = IdMap::default();
        for i in 0..n {
            m.get_or_insert(&i.to_string());
        }
        m
    }
}

/// Binary implicit feedback: a set of observed (user, item) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    pairs: Vec<(usize, usize)>,
    user_positives: Vec<Vec<usize>>,
    user_ids: IdMap,
    item_ids: IdMap,
}

impl InteractionDataset {
    /// Builds a dataset over fixed index spaces. Duplicate pairs are collapsed,
    /// keeping the first occurrence; out-of-range indices are rejected.
    pub fn from_pairs(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut user_positives = vec![Vec::new(); num_users];
        let mut kept = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (u, i) in pairs {
            if u >= num_users || i >= num_items {
                return Err(LatticeError::Shape(format!(
                    "pair ({}, {}) outside {} users x {} items",
                    u, i, num_users, num_items
                )));
            }
            if seen.insert((u, i)) {
                kept.push((u, i));
                user_positives[u].push(i);
            }
        }
        for p in &mut user_positives {
            p.sort_unstable();
        }
        Ok(InteractionDataset {
            num_users,
            num_items,
            pairs: kept,
            user_positives,
            user_ids: IdMap::sequential(num_users),
            item_ids: IdMap::sequential(num_items),
        })
    }

    /// Same index spaces and ID tables as `self`, different pairs.
    pub fn view(&self, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut ds = Self::from_pairs(self.num_users, self.num_items, pairs)?;
        ds.user_ids = self.user_ids.clone();
        ds.item_ids = self.item_ids.clone();
        Ok(ds)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Sorted positive items of `user`.
    pub fn positives(&self, user: usize) -> &[usize] {
        &self.user_positives[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.user_positives[user].binary_search(&item).is_ok()
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.item_ids
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_items];
        for &(_, i) in &self.pairs {
            deg[i] += 1;
        }
        deg
    }
}

/// Reads `user<TAB>item` lines. IDs are arbitrary strings, indexed in order of
/// first appearance. Blank lines are skipped.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| LatticeError::io(path, e))?;
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LatticeError::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (u, i) = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), None) if !u.is_empty() && !i.is_empty() => (u, i),
            _ => {
                return Err(LatticeError::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected `user<TAB>item`, got {:?}", line),
                })
            }
        };
        pairs.push((users.get_or_insert(u), items.get_or_insert(i)));
    }
    if pairs.is_empty() {
        return Err(LatticeError::Empty(format!(
            "{} contains no interactions",
            path.display()
        )));
    }
    let mut ds = InteractionDataset::from_pairs(users.len(), items.len(), pairs)?;
    ds.user_ids = users;
    ds.item_ids = items;
    Ok(ds)
}
