//! Item-graph convolution, CF backends, embedding enhancement and scoring.

mod forward;
mod params;

use serde::{Deserialize, Serialize};

pub use forward::{
    cf_forward, enhance_items, forward, propagate_item_graph, score, score_items, ForwardOutput,
    ModelContext,
};
pub(crate) use forward::{forward_trace, layer_mean, ForwardTrace};
pub use params::ParameterSet;

use crate::error::{LatticeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mf,
    LightGcn,
}

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Graph convolution over item ID embeddings.
    Full,
    /// Graph convolution over projected transformed features.
    ConvOnFeats,
    /// Projected transformed features added directly, no item graph.
    FeatsSideInfo,
    /// Plain CF.
    Base,
}

impl Variant {
    pub fn uses_item_graph(self) -> bool {
        matches!(self, Variant::Full | Variant::ConvOnFeats)
    }

    pub fn uses_projected_features(self) -> bool {
        matches!(self, Variant::ConvOnFeats | Variant::FeatsSideInfo)
    }
}

impl std::str::FromStr for Backend {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Backend::Mf),
            "lightgcn" => Ok(Backend::LightGcn),
            _ => Err(LatticeError::InvalidArgument(format!(
                "backend must be `mf` or `lightgcn`, got `{}`",
                s
            ))),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "conv_on_feats" => Ok(Variant::ConvOnFeats),
            "feats_side_info" => Ok(Variant::FeatsSideInfo),
            "base" => Ok(Variant::Base),
            _ => Err(LatticeError::InvalidArgument(format!(
                "variant must be one of full, conv_on_feats, feats_side_info, base; got `{}`",
                s
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backend: Backend,
    pub variant: Variant,
    /// Convolution layers on the item graph.
    pub item_layers: usize,
    /// LightGCN propagation layers; ignored by MF.
    pub cf_layers: usize,
    /// Neighbours kept per item.
    pub k: usize,
    /// Weight of the initial graph in the skip connection.
    pub lambda: f64,
    /// ID embedding size.
    pub embed_dim: usize,
    /// Size of the transformed feature space.
    pub feat_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backend: Backend::LightGcn,
            variant: Variant::Full,
            item_layers: 1,
            cf_layers: 3,
            k: 10,
            lambda: 0.9,
            embed_dim: 64,
            feat_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(LatticeError::InvalidArgument(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.embed_dim == 0 || self.feat_dim == 0 {
            return Err(LatticeError::InvalidArgument(
                "embedding and feature dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}
