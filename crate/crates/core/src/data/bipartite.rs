use super::InteractionDataset;
use crate::error::{LatticeError, Result};
use crate::sparse::SparseGraph;

/// Symmetrically normalized user-item adjacency over `num_users + num_items`
/// nodes. Users occupy `0..num_users`, item `i` is node `num_users + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedBipartite {
    pub num_users: usize,
    pub num_items: usize,
    pub graph: SparseGraph,
}

/// Edge `(u, i)` for every training pair, weighted `1 / sqrt(deg(u) deg(i))`.
pub fn build_bipartite_graph(train: &InteractionDataset) -> Result<NormalizedBipartite> {
    if train.num_pairs() == 0 {
        return Err(LatticeError::Empty("training set has no pairs".into()));
    }
    let (nu, ni) = (train.num_users(), train.num_items());
    let item_deg = train.item_degrees();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nu + ni];
    for u in 0..nu {
        let du = train.positives(u).len() as f64;
        for &i in train.positives(u) {
            let w = 1.0 / (du * item_deg[i] as f64).sqrt();
            rows[u].push((nu + i, w));
            rows[nu + i].push((u, w));
        }
    }
    Ok(NormalizedBipartite {
        num_users: nu,
        num_items: ni,
        graph: SparseGraph::from_rows(nu + ni, rows)?,
    })
}
