use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LatticeError, Result};
use crate::sparse::SparseGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDumpHeader {
    pub modality: String,
    pub k: usize,
    pub lambda: f64,
    pub alpha: Vec<f64>,
    pub num_nodes: usize,
    pub nnz: usize,
}

/// Writes `<stem>.tsv` (`src<TAB>dst<TAB>weight`) and `<stem>.json` into `dir`.
pub fn write_graph_dump(
    dir: impl AsRef<Path>,
    stem: &str,
    graph: &SparseGraph,
    header: &GraphDumpHeader,
) -> Result<()> {
    let dir = dir.as_ref();
    let tsv = dir.join(format!("{}.tsv", stem));
    let file = File::create(&tsv).map_err(|e| LatticeError::io(&tsv, e))?;
    graph
        .write_tsv(BufWriter::new(file))
        .map_err(|e| LatticeError::io(&tsv, e))?;
    let json = dir.join(format!("{}.json", stem));
    let body = serde_json::to_string_pretty(header)?;
    std::fs::write(&json, body + "\n").map_err(|e| LatticeError::io(&json, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = SparseGraph::from_rows(2, vec![vec![(1, 0.5)], vec![(0, 0.25)]]).unwrap();
        let header = GraphDumpHeader {
            modality: "visual".into(),
            k: 1,
            lambda: 0.9,
            alpha: vec![1.0],
            num_nodes: 2,
            nnz: 2,
        };
        write_graph_dump(dir.path(), "graph_visual", &g, &header).unwrap();
        let tsv = std::fs::read_to_string(dir.path().join("graph_visual.tsv")).unwrap();
        assert_eq!(tsv, "0\t1\t0.5\n1\t0\t0.25\n");
        let back: GraphDumpHeader = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("graph_visual.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(back, header);
    }
}
