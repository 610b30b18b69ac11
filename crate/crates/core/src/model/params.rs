use ndarray::{Array1, Array2};
use rand::Rng;

use super::ModelConfig;
use crate::error::{LatticeError, Result};
use crate::graph::{ModalityMixer, ModalityTransform};
use crate::train::xavier_init;

/// Every trainable tensor of the model. All blocks exist for every variant so
/// that initialization consumes the generator identically across variants;
/// blocks a variant does not read simply receive zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub user_embedding: Array2<f64>,
    pub item_embedding: Array2<f64>,
    pub transforms: Vec<ModalityTransform>,
    pub mixer: ModalityMixer,
    /// `embed_dim x (feat_dim * num_modalities)`, maps concatenated transformed
    /// features to the embedding size.
    pub projection: Array2<f64>,
}

impl ParameterSet {
    /// Xavier-uniform matrices, zero biases and zero mixer logits.
    pub fn init<R: Rng + ?Sized>(
        config: &ModelConfig,
        num_users: usize,
        num_items: usize,
        modality_dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if num_users == 0 || num_items == 0 {
            return Err(LatticeError::InvalidArgument(
                "need at least one user and one item".into(),
            ));
        }
        let d = config.embed_dim;
        let user_embedding = xavier_init((num_users, d), rng)?;
        let item_embedding = xavier_init((num_items, d), rng)?;
        let mut transforms = Vec::with_capacity(modality_dims.len());
        for &dm in modality_dims {
            transforms.push(ModalityTransform {
                weight: xavier_init((config.feat_dim, dm), rng)?,
                bias: Array1::zeros(config.feat_dim),
            });
        }
        let concat = (config.feat_dim * modality_dims.len()).max(1);
        let projection = xavier_init((d, concat), rng)?;
        Ok(ParameterSet {
            user_embedding,
            item_embedding,
            transforms,
            mixer: ModalityMixer::uniform(modality_dims.len()),
            projection,
        })
    }

    /// All-zero blocks with the shapes [`ParameterSet::init`] would produce.
    pub fn zeros(config: &ModelConfig, num_users: usize, num_items: usize, modality_dims: &[usize]) -> Self {
        let d = config.embed_dim;
        ParameterSet {
            user_embedding: Array2::zeros((num_users, d)),
            item_embedding: Array2::zeros((num_items, d)),
            transforms: modality_dims
                .iter()
                .map(|&dm| ModalityTransform {
                    weight: Array2::zeros((config.feat_dim, dm)),
                    bias: Array1::zeros(config.feat_dim),
                })
                .collect(),
            mixer: ModalityMixer::uniform(modality_dims.len()),
            projection: Array2::zeros((d, (config.feat_dim * modality_dims.len()).max(1))),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            user_embedding: Array2::zeros(self.user_embedding.raw_dim()),
            item_embedding: Array2::zeros(self.item_embedding.raw_dim()),
            transforms: self
                .transforms
                .iter()
                .map(|t| ModalityTransform {
                    weight: Array2::zeros(t.weight.raw_dim()),
                    bias: Array1::zeros(t.bias.raw_dim()),
                })
                .collect(),
            mixer: ModalityMixer::uniform(self.mixer.logits.len()),
            projection: Array2::zeros(self.projection.raw_dim()),
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.transforms.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.user_embedding.ncols()
    }

    /// Block names in declaration order, e.g. `transform.1.weight`.
    pub fn block_names(&self) -> Vec<String> {
        let mut names = vec!["user_embedding".to_string(), "item_embedding".to_string()];
        for m in 0..self.transforms.len() {
            names.push(format!("transform.{}.weight", m));
            names.push(format!("transform.{}.bias", m));
        }
        names.push("mixer.logits".into());
        names.push("projection".into());
        names
    }

    pub fn block_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![
            self.user_embedding.shape().to_vec(),
            self.item_embedding.shape().to_vec(),
        ];
        for t in &self.transforms {
            shapes.push(t.weight.shape().to_vec());
            shapes.push(t.bias.shape().to_vec());
        }
        shapes.push(vec![self.mixer.logits.len()]);
        shapes.push(self.projection.shape().to_vec());
        shapes
    }

    /// Flat views of every block, in declaration order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.user_embedding.as_slice().expect("standard layout"),
            self.item_embedding.as_slice().expect("standard layout"),
        ];
        for t in &self.transforms {
            out.push(t.weight.as_slice().expect("standard layout"));
            out.push(t.bias.as_slice().expect("standard layout"));
        }
        out.push(&self.mixer.logits);
        out.push(self.projection.as_slice().expect("standard layout"));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.user_embedding.as_slice_mut().expect("standard layout"),
            self.item_embedding.as_slice_mut().expect("standard layout"),
        ];
        for t in &mut self.transforms {
            out.push(t.weight.as_slice_mut().expect("standard layout"));
            out.push(t.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(&mut self.mixer.logits);
        out.push(self.projection.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Name of the first block holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.block_names()
            .into_iter()
            .zip(self.blocks())
            .find(|(_, b)| b.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    pub fn same_shapes(&self, other: &ParameterSet) -> bool {
        self.block_shapes() == other.block_shapes()
    }
}
