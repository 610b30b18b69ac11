//! Multimodal recommendation with mined item-item graphs.
//!
//! Item content in every modality induces a kNN similarity graph. The graphs
//! are partly learned from transformed features, mixed across modalities, and
//! used to propagate item embeddings that enrich a collaborative-filtering
//! backbone (matrix factorization or LightGCN) trained with BPR.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod sparse;
pub mod train;

pub use config::RunConfig;
pub use data::{InteractionDataset, ModalityFeatures, Partition, Split, SplitMode};
pub use error::{LatticeError, Result};
pub use eval::{evaluate, EvalReport};
pub use model::{forward, Backend, ForwardOutput, ModelConfig, ModelContext, ParameterSet, Variant};
pub use sparse::SparseGraph;
pub use train::{fit, FitResult, GraphRefresh, TrainConfig};
