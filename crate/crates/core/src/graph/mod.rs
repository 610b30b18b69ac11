//! Modality-aware item graphs.
//!
//! For every modality an item-item graph is mined from feature similarity:
//! cosine similarity with negatives suppressed, kNN sparsification per row, and
//! symmetric degree normalization. A graph built from the raw features is fixed
//! for the whole run; a second one is rebuilt from linearly transformed features
//! during training. The two are blended with a skip coefficient and the
//! per-modality results are mixed with softmax weights into one latent graph.

mod dump;

use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;

pub use dump::{write_graph_dump, GraphDumpHeader};

use crate::error::{LatticeError, Result};
use crate::sparse::SparseGraph;

/// Rows with a smaller L2 norm have zero similarity to everything.
pub const NORM_EPS: f64 = 1e-12;

pub fn row_norms(features: &Array2<f64>) -> Vec<f64> {
    features
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt())
        .collect()
}

/// Rows scaled to unit length; rows with norm below [`NORM_EPS`] become zero.
fn unit_rows(features: &Array2<f64>) -> (Array2<f64>, Vec<bool>) {
    let norms = row_norms(features);
    let usable: Vec<bool> = norms.iter().map(|&n| n >= NORM_EPS).collect();
    let mut unit = features.as_standard_layout().into_owned();
    for (mut row, (&n, &ok)) in unit.axis_iter_mut(Axis(0)).zip(norms.iter().zip(&usable)) {
        if ok {
            row /= n;
        } else {
            row.fill(0.0);
        }
    }
    (unit, usable)
}

/// Turns raw inner products of unit rows into clamped similarities: exactly 1
/// on the diagonal of usable rows, 0 for unusable rows, `[0, 1]` elsewhere.
fn clamp_similarities(i: usize, row: &mut [f64], usable: &[bool]) {
    for (j, v) in row.iter_mut().enumerate() {
        *v = if !usable[i] || !usable[j] {
            0.0
        } else if i == j {
            1.0
        } else {
            v.clamp(0.0, 1.0)
        };
    }
}

/// Similarities of item `i` to every item, negatives suppressed to zero.
/// Self-similarity is exactly 1 for any row with a usable norm.
pub fn cosine_similarity_row(features: &Array2<f64>, i: usize) -> Vec<f64> {
    let (unit, usable) = unit_rows(features);
    let mut row = unit.dot(&unit.row(i)).to_vec();
    clamp_similarities(i, &mut row, &usable);
    row
}

/// The `k` largest strictly positive entries of `row`, ties going to the
/// smaller column, returned in column order.
pub fn select_top_k(row: &[f64], k: usize) -> Vec<(usize, f64)> {
    if k == 0 {
        return Vec::new();
    }
    let mut cand: Vec<(usize, f64)> = row
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(j, &v)| (j, v))
        .collect();
    if cand.len() > k {
        let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        cand.select_nth_unstable_by(k - 1, order);
    }
    let mut kept = cand[..cand.len().min(k)].to_vec();
    kept.sort_unstable_by_key(|&(j, _)| j);
    kept
}

/// Neighbours of item `i` from its similarity row: the item itself whenever its
/// self-similarity is positive, even if other items tie it at 1, then the
/// best `k - 1` others by [`select_top_k`].
fn select_neighbours(i: usize, row: &mut [f64], k: usize) -> Vec<(usize, f64)> {
    let own = row[i];
    if k == 0 || own <= 0.0 {
        return select_top_k(row, k);
    }
    row[i] = 0.0;
    let mut kept = select_top_k(row, k - 1);
    row[i] = own;
    let at = kept.partition_point(|&(j, _)| j < i);
    kept.insert(at, (i, own));
    kept
}

/// Directed kNN graph from dense similarity rows. Row `i` of the output keeps
/// the `k` largest positive entries of the `i`-th input row.
pub fn topk_sparsify<I>(sim_rows: I, k: usize) -> Result<SparseGraph>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let rows: Vec<Vec<(usize, f64)>> = sim_rows
        .into_iter()
        .map(|row| select_top_k(&row, k))
        .collect();
    SparseGraph::from_rows(rows.len(), rows)
}

/// Rows of the similarity matrix computed together in one product.
const ROW_BLOCK: usize = 128;

/// Sparsified cosine kNN graph of the rows of `features`, before normalization.
///
/// Similarities are produced a block of rows at a time and reduced to their
/// top `k` immediately, so peak memory is O(N·k) plus O(ROW_BLOCK·N) per
/// worker; the dense N×N matrix never exists. Blocks are independent, so the
/// result does not depend on the thread count.
pub fn knn_cosine_graph(features: &Array2<f64>, k: usize) -> Result<SparseGraph> {
    let n = features.nrows();
    if k == 0 || n == 0 {
        return Ok(SparseGraph::empty(n));
    }
    let (unit, usable) = unit_rows(features);
    let starts: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let rows: Vec<Vec<(usize, f64)>> = starts
        .into_par_iter()
        .flat_map_iter(|start| {
            let end = (start + ROW_BLOCK).min(n);
            let sims = unit.slice(s![start..end, ..]).dot(&unit.t());
            let usable = &usable;
            let mut row = vec![0.0; n];
            (start..end)
                .map(|i| {
                    for (r, v) in row.iter_mut().zip(sims.row(i - start)) {
                        *r = *v;
                    }
                    clamp_similarities(i, &mut row, usable);
                    select_neighbours(i, &mut row, k)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    SparseGraph::from_rows(n, rows)
}

/// `D^{-1/2} G D^{-1/2}` with `D` the row sums of `g`. Entries touching a node
/// of zero degree become zero; the sparsity pattern is preserved.
pub fn normalize_sym(g: &SparseGraph) -> SparseGraph {
    let inv_sqrt: Vec<f64> = g
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut values = Vec::with_capacity(g.nnz());
    for (i, j, v) in g.iter() {
        values.push(v * inv_sqrt[i] * inv_sqrt[j]);
    }
    g.with_values(values)
}

/// Normalized kNN graph of the raw modality features.
pub fn build_initial_graph(features: &Array2<f64>, k: usize) -> Result<SparseGraph> {
    Ok(normalize_sym(&knn_cosine_graph(features, k)?))
}

/// Normalized kNN graph of transformed features; same pipeline as the initial graph.
pub fn build_learned_graph(highlevel: &Array2<f64>, k: usize) -> Result<SparseGraph> {
    build_initial_graph(highlevel, k)
}

/// Affine map of raw modality features into the shared high-level space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityTransform {
    /// `d' x d_m`
    pub weight: Array2<f64>,
    /// `d'`
    pub bias: Array1<f64>,
}

impl ModalityTransform {
    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Row `i` of the result is `W e_i + b`.
pub fn transform_features(features: &Array2<f64>, t: &ModalityTransform) -> Result<Array2<f64>> {
    if features.ncols() != t.in_dim() || t.bias.len() != t.out_dim() {
        return Err(LatticeError::Shape(format!(
            "features have {} columns, transform is {}x{} with bias {}",
            features.ncols(),
            t.out_dim(),
            t.in_dim(),
            t.bias.len()
        )));
    }
    let mut out = features.dot(&t.weight.t());
    out += &t.bias;
    Ok(out)
}

/// `λ · initial + (1 − λ) · learned` over the union of both supports.
pub fn fuse_skip(initial: &SparseGraph, learned: &SparseGraph, lambda: f64) -> Result<SparseGraph> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(LatticeError::InvalidArgument(format!(
            "skip coefficient must lie in [0, 1], got {}",
            lambda
        )));
    }
    if initial.num_nodes() != learned.num_nodes() {
        return Err(LatticeError::Shape(format!(
            "initial graph has {} nodes, learned graph {}",
            initial.num_nodes(),
            learned.num_nodes()
        )));
    }
    SparseGraph::linear_combination(&[(lambda, initial), (1.0 - lambda, learned)])
}

/// Learnable importance of each modality, normalized with a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityMixer {
    pub logits: Vec<f64>,
}

impl ModalityMixer {
    pub fn uniform(num_modalities: usize) -> Self {
        ModalityMixer {
            logits: vec![0.0; num_modalities],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `Σ_m α_m A^m` with `α = softmax(logits)`.
pub fn aggregate_modalities(graphs: &[SparseGraph], mixer: &ModalityMixer) -> Result<SparseGraph> {
    if graphs.is_empty() {
        return Err(LatticeError::InvalidArgument(
            "cannot aggregate an empty modality set".into(),
        ));
    }
    if graphs.len() != mixer.logits.len() {
        return Err(LatticeError::Shape(format!(
            "{} graphs but {} mixer logits",
            graphs.len(),
            mixer.logits.len()
        )));
    }
    let alpha = mixer.weights();
    let terms: Vec<(f64, &SparseGraph)> = alpha.iter().copied().zip(graphs).collect();
    SparseGraph::linear_combination(&terms)
}
