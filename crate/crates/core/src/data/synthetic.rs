//! Clustered toy data for cold-start experiments.
//!
//! Items belong to one of several clusters. Each item's single modality is its
//! cluster mean (every coordinate ±1) plus Gaussian noise. Every user prefers one
//! cluster and only interacts with items from it. The generator knows which
//! items the matching [`split_cold`](super::split_cold) call will hold out, so it
//! can give each user an exact number of training positives plus a few
//! interactions with held-out items of the same cluster.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{select_cold_items, write_features, InteractionDataset, ModalityFeatures};
use crate::error::{LatticeError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub num_clusters: usize,
    pub items_per_cluster: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub num_users: usize,
    pub train_positives: usize,
    pub cold_positives: usize,
    pub cold_fraction: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            num_clusters: 2,
            items_per_cluster: 100,
            feature_dim: 16,
            noise_std: 0.1,
            num_users: 200,
            train_positives: 10,
            cold_positives: 4,
            cold_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterData {
    pub dataset: InteractionDataset,
    pub features: ModalityFeatures,
    pub item_cluster: Vec<usize>,
    pub user_cluster: Vec<usize>,
}

impl ClusterConfig {
    pub fn num_items(&self) -> usize {
        self.num_clusters * self.items_per_cluster
    }

    /// Data whose `split_cold(&data.dataset, cfg.cold_fraction, seed)` leaves
    /// exactly `train_positives` training pairs per user.
    pub fn generate(&self, seed: u64) -> Result<ClusterData> {
        let n_items = self.num_items();
        let (valid_cold, test_cold) = select_cold_items(n_items, self.cold_fraction, seed)?;
        let mut is_cold = vec![false; n_items];
        for &i in valid_cold.iter().chain(&test_cold) {
            is_cold[i] = true;
        }
        let item_cluster: Vec<usize> = (0..n_items).map(|i| i / self.items_per_cluster).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let noise = Normal::new(0.0, self.noise_std)
            .map_err(|e| LatticeError::InvalidArgument(format!("noise_std: {}", e)))?;
        let means: Vec<Vec<f64>> = (0..self.num_clusters)
            .map(|_| {
                (0..self.feature_dim)
                    .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        let mut matrix = Array2::zeros((n_items, self.feature_dim));
        for i in 0..n_items {
            for d in 0..self.feature_dim {
                matrix[[i, d]] = means[item_cluster[i]][d] + noise.sample(&mut rng);
            }
        }

        let mut pairs = Vec::new();
        let mut user_cluster = Vec::with_capacity(self.num_users);
        for u in 0..self.num_users {
            let c = u % self.num_clusters;
            user_cluster.push(c);
            let members = c * self.items_per_cluster..(c + 1) * self.items_per_cluster;
            let warm: Vec<usize> = members.clone().filter(|&i| !is_cold[i]).collect();
            let cold: Vec<usize> = members.filter(|&i| is_cold[i]).collect();
            if warm.len() < self.train_positives {
                return Err(LatticeError::InvalidArgument(format!(
                    "cluster {} has only {} warm items",
                    c,
                    warm.len()
                )));
            }
            let mut chosen: Vec<usize> = warm
                .choose_multiple(&mut rng, self.train_positives)
                .copied()
                .collect();
            chosen.extend(
                cold.choose_multiple(&mut rng, self.cold_positives.min(cold.len()))
                    .copied(),
            );
            chosen.shuffle(&mut rng);
            pairs.extend(chosen.into_iter().map(|i| (u, i)));
        }
        let dataset = InteractionDataset::from_pairs(self.num_users, n_items, pairs)?;
        let features = ModalityFeatures::new("content", matrix)?;
        Ok(ClusterData {
            dataset,
            features,
            item_cluster,
            user_cluster,
        })
    }
}

impl ClusterData {
    /// Writes `interactions.tsv` (IDs `u<index>` / `i<index>`) and `content.latf`
    /// into `dir`. Pairs are ordered by item, so loading the TSV gives items
    /// their original relative order and feature row `r` matches loaded item `r`.
    /// Items without interactions are left out of both files.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        let mut pairs = self.dataset.pairs().to_vec();
        pairs.sort_unstable_by_key(|&(u, i)| (i, u));
        let mut tsv = String::new();
        for &(u, i) in &pairs {
            tsv.push_str(&format!("u{}\ti{}\n", u, i));
        }
        let tsv_path = dir.join("interactions.tsv");
        fs::write(&tsv_path, tsv).map_err(|e| LatticeError::io(&tsv_path, e))?;
        let mut present: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        present.dedup();
        let rows = self.features.matrix.select(Axis(0), &present);
        let feat_path = dir.join("content.latf");
        write_features(&feat_path, &rows)?;
        Ok((tsv_path, feat_path))
    }
}
