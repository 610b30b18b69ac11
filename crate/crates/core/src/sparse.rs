//! Compressed sparse row storage for weighted item-item and user-item graphs.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{LatticeError, Result};

/// Square sparse matrix in CSR form.
///
/// Column indices are strictly increasing within each row and every stored
/// weight is finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    num_nodes: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseGraph {
    pub fn empty(num_nodes: usize) -> Self {
        SparseGraph {
            num_nodes,
            indptr: vec![0; num_nodes + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a graph from per-row `(column, weight)` lists. Rows may be given in
    /// any column order; duplicate columns are rejected.
    pub fn from_rows(num_nodes: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != num_nodes {
            return Err(LatticeError::Shape(format!(
                "expected {} rows, got {}",
                num_nodes,
                rows.len()
            )));
        }
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indptr = Vec::with_capacity(num_nodes + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(LatticeError::InvalidArgument(format!(
                        "duplicate column {} in row {}",
                        w[0].0, i
                    )));
                }
            }
            for (j, v) in row {
                if j >= num_nodes {
                    return Err(LatticeError::Shape(format!(
                        "column {} out of range for {} nodes",
                        j, num_nodes
                    )));
                }
                if !v.is_finite() || v < 0.0 {
                    return Err(LatticeError::InvalidArgument(format!(
                        "weight ({}, {}) = {} is not a finite non-negative value",
                        i, j, v
                    )));
                }
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(SparseGraph {
            num_nodes,
            indptr,
            indices,
            values,
        })
    }

    /// Keeps every strictly positive entry of a dense matrix.
    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Result<Self> {
        let (r, c) = dense.dim();
        if r != c {
            return Err(LatticeError::Shape(format!("dense matrix is {}x{}", r, c)));
        }
        let rows = dense
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self::from_rows(r, rows)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Iterates `(row, column, weight)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.num_nodes)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    /// Same sparsity pattern with new values.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        SparseGraph {
            num_nodes: self.num_nodes,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values,
        }
    }

    pub fn transpose(&self) -> SparseGraph {
        let n = self.num_nodes;
        let mut counts = vec![0usize; n + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows visited in ascending order, so transposed rows come out sorted
        for (i, j, v) in self.iter() {
            let p = next[j];
            indices[p] = i;
            values[p] = v;
            next[j] += 1;
        }
        SparseGraph {
            num_nodes: n,
            indptr,
            indices,
            values,
        }
    }

    /// Σ_t c_t · G_t over a union of supports. Entries that sum to exactly zero
    /// are not stored.
    pub fn linear_combination(terms: &[(f64, &SparseGraph)]) -> Result<SparseGraph> {
        let n = match terms.first() {
            Some((_, g)) => g.num_nodes,
            None => {
                return Err(LatticeError::InvalidArgument(
                    "linear combination of zero graphs".into(),
                ))
            }
        };
        if let Some((_, g)) = terms.iter().find(|(_, g)| g.num_nodes != n) {
            return Err(LatticeError::Shape(format!(
                "graph node counts differ: {} vs {}",
                n, g.num_nodes
            )));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            acc.clear();
            for &(c, g) in terms {
                let (cols, vals) = g.row(i);
                acc.extend(cols.iter().zip(vals).map(|(&j, &v)| (j, c * v)));
            }
            // stable sort keeps term order for equal columns, so the summation
            // order per entry is the order of `terms`
            acc.sort_by_key(|&(j, _)| j);
            let mut p = 0;
            while p < acc.len() {
                let j = acc[p].0;
                let mut s = acc[p].1;
                p += 1;
                while p < acc.len() && acc[p].0 == j {
                    s += acc[p].1;
                    p += 1;
                }
                if s != 0.0 {
                    indices.push(j);
                    values.push(s);
                }
            }
            indptr.push(indices.len());
        }
        Ok(SparseGraph {
            num_nodes: n,
            indptr,
            indices,
            values,
        })
    }

    /// `self · x` for a dense `x` with one row per node.
    pub fn matmul(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.num_nodes {
            return Err(LatticeError::Shape(format!(
                "graph has {} nodes but matrix has {} rows",
                self.num_nodes,
                x.nrows()
            )));
        }
        let mut out = Array2::<f64>::zeros(x.raw_dim());
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut out_row)| {
                let (cols, vals) = self.row(i);
                for (&j, &w) in cols.iter().zip(vals) {
                    out_row.scaled_add(w, &x.row(j));
                }
            });
        Ok(out)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.num_nodes, self.num_nodes));
        for (i, j, v) in self.iter() {
            d[[i, j]] = v;
        }
        d
    }

    /// Writes `src<TAB>dst<TAB>weight` lines.
    pub fn write_tsv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, j, v) in self.iter() {
            writeln!(w, "{}\t{}\t{}", i, j, v)?;
        }
        Ok(())
    }
}
