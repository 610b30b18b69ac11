use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::{Backend, ModelConfig, ParameterSet, Variant};
use crate::data::{build_bipartite_graph, InteractionDataset, ModalityFeatures, NormalizedBipartite};
use crate::error::{LatticeError, Result};
use crate::graph::{
    aggregate_modalities, build_initial_graph, fuse_skip, knn_cosine_graph, normalize_sym,
    transform_features, NORM_EPS,
};
use crate::sparse::SparseGraph;

/// Everything the model reads besides its parameters: features, the cached
/// initial item graphs and (for LightGCN) the training bipartite graph.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub config: ModelConfig,
    pub num_users: usize,
    pub num_items: usize,
    pub features: Vec<ModalityFeatures>,
    /// Normalized raw-feature kNN graph per modality. Empty when the variant
    /// has no item graph.
    pub initial_graphs: Vec<SparseGraph>,
    pub bipartite: Option<NormalizedBipartite>,
}

impl ModelContext {
    pub fn new(
        config: ModelConfig,
        train: &InteractionDataset,
        features: Vec<ModalityFeatures>,
    ) -> Result<Self> {
        config.validate()?;
        for f in &features {
            if f.num_items() != train.num_items() {
                return Err(LatticeError::Shape(format!(
                    "modality {} has {} rows, dataset has {} items",
                    f.name,
                    f.num_items(),
                    train.num_items()
                )));
            }
        }
        if config.variant != Variant::Base && features.is_empty() {
            return Err(LatticeError::InvalidArgument(format!(
                "variant {:?} needs at least one modality",
                config.variant
            )));
        }
        let initial_graphs = if config.variant.uses_item_graph() && config.item_layers > 0 {
            features
                .iter()
                .map(|f| build_initial_graph(&f.matrix, config.k))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let bipartite = match config.backend {
            Backend::LightGcn => Some(build_bipartite_graph(train)?),
            Backend::Mf => None,
        };
        Ok(ModelContext {
            config,
            num_users: train.num_users(),
            num_items: train.num_items(),
            features,
            initial_graphs,
            bipartite,
        })
    }

    pub fn modality_dims(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.dim()).collect()
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet> {
        ParameterSet::init(
            &self.config,
            self.num_users,
            self.num_items,
            &self.modality_dims(),
            rng,
        )
    }

    pub(crate) fn builds_item_graph(&self) -> bool {
        self.config.variant.uses_item_graph() && self.config.item_layers > 0
    }

    pub(crate) fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let d = self.config.embed_dim;
        let ok = params.user_embedding.dim() == (self.num_users, d)
            && params.item_embedding.dim() == (self.num_items, d)
            && params.transforms.len() == self.features.len()
            && params.mixer.logits.len() == self.features.len()
            && params
                .transforms
                .iter()
                .zip(&self.features)
                .all(|(t, f)| t.weight.dim() == (self.config.feat_dim, f.dim()))
            && params.projection.dim() == (d, (self.config.feat_dim * self.features.len()).max(1));
        if ok {
            Ok(())
        } else {
            Err(LatticeError::Shape(
                "parameter shapes do not match the model context".into(),
            ))
        }
    }
}

/// Model outputs for all users and items.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// CF user embeddings.
    pub user_embeddings: Array2<f64>,
    /// CF item embeddings before enhancement.
    pub item_embeddings: Array2<f64>,
    /// Last item-graph layer, for variants with an item graph.
    pub item_graph_output: Option<Array2<f64>>,
    /// Item embeddings used for scoring.
    pub enhanced_items: Array2<f64>,
}

impl ForwardOutput {
    pub fn score(&self, user: usize, item: usize) -> f64 {
        self.user_embeddings
            .row(user)
            .dot(&self.enhanced_items.row(item))
    }

    pub fn score_all(&self, user: usize) -> Array1<f64> {
        score_items(self.user_embeddings.row(user), &self.enhanced_items)
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub alpha: Vec<f64>,
    /// Transformed features per modality; empty when nothing reads them.
    pub transformed: Vec<Array2<f64>>,
    /// Unnormalized learned kNN graphs; empty when frozen or unused.
    pub learned_raw: Vec<SparseGraph>,
    /// Normalized learned graphs; empty when unused.
    pub learned: Vec<SparseGraph>,
    pub graph: Option<SparseGraph>,
    pub concat: Option<Array2<f64>>,
    pub side: Option<Array2<f64>>,
    /// Item-graph layers 0..=L.
    pub layers: Vec<Array2<f64>>,
    pub user_out: Array2<f64>,
    pub item_out: Array2<f64>,
    pub enhanced: Array2<f64>,
}

impl ForwardTrace {
    /// Rows normalized and added to the CF item embeddings, if any.
    pub fn enhancement_source(&self, variant: Variant) -> Option<&Array2<f64>> {
        match variant {
            Variant::Full | Variant::ConvOnFeats => self.layers.last(),
            Variant::FeatsSideInfo => self.side.as_ref(),
            Variant::Base => None,
        }
    }

    pub fn into_output(self) -> ForwardOutput {
        ForwardOutput {
            user_embeddings: self.user_out,
            item_embeddings: self.item_out,
            item_graph_output: self.layers.last().cloned(),
            enhanced_items: self.enhanced,
        }
    }
}

/// `H^{(l)} = A H^{(l-1)}` applied `layers` times; returns `H^{(layers)}`.
pub fn propagate_item_graph(a: &SparseGraph, h0: &Array2<f64>, layers: usize) -> Result<Array2<f64>> {
    Ok(propagate_layers(a, h0, layers)?.pop().expect("layer 0 present"))
}

pub(crate) fn propagate_layers(
    a: &SparseGraph,
    h0: &Array2<f64>,
    layers: usize,
) -> Result<Vec<Array2<f64>>> {
    if a.num_nodes() != h0.nrows() {
        return Err(LatticeError::Shape(format!(
            "graph has {} nodes, embeddings have {} rows",
            a.num_nodes(),
            h0.nrows()
        )));
    }
    let mut out = Vec::with_capacity(layers + 1);
    out.push(h0.clone());
    for l in 0..layers {
        let next = a.matmul(&out[l])?;
        out.push(next);
    }
    Ok(out)
}

/// CF backend outputs. MF passes the tables through; LightGCN averages layers
/// `0..=cf_layers` of propagation over the normalized bipartite graph.
pub fn cf_forward(
    backend: Backend,
    users: &Array2<f64>,
    items: &Array2<f64>,
    bipartite: Option<&NormalizedBipartite>,
    cf_layers: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    match backend {
        Backend::Mf => Ok((users.clone(), items.clone())),
        Backend::LightGcn => {
            let b = bipartite.ok_or_else(|| {
                LatticeError::InvalidArgument("LightGCN needs the bipartite graph".into())
            })?;
            if b.num_users != users.nrows() || b.num_items != items.nrows() {
                return Err(LatticeError::Shape(format!(
                    "bipartite graph is {}+{}, tables are {}+{}",
                    b.num_users,
                    b.num_items,
                    users.nrows(),
                    items.nrows()
                )));
            }
            let stacked = concatenate(Axis(0), &[users.view(), items.view()])
                .map_err(|e| LatticeError::Shape(e.to_string()))?;
            let mean = layer_mean(&b.graph, &stacked, cf_layers)?;
            let nu = users.nrows();
            Ok((
                mean.slice(s![..nu, ..]).to_owned(),
                mean.slice(s![nu.., ..]).to_owned(),
            ))
        }
    }
}

/// `(1 / (L+1)) Σ_{l=0..L} B^l X`
pub(crate) fn layer_mean(b: &SparseGraph, x: &Array2<f64>, layers: usize) -> Result<Array2<f64>> {
    let mut acc = x.clone();
    let mut cur = x.clone();
    for _ in 0..layers {
        cur = b.matmul(&cur)?;
        acc += &cur;
    }
    acc /= (layers + 1) as f64;
    Ok(acc)
}

/// `x̂_i = x̃_i + h_i / ‖h_i‖`, skipping rows with `‖h_i‖ < 1e-12`.
pub fn enhance_items(items: &Array2<f64>, h: &Array2<f64>) -> Result<Array2<f64>> {
    if items.dim() != h.dim() {
        return Err(LatticeError::Shape(format!(
            "item embeddings {:?} vs graph output {:?}",
            items.dim(),
            h.dim()
        )));
    }
    let mut out = items.clone();
    for (mut row, src) in out.axis_iter_mut(Axis(0)).zip(h.axis_iter(Axis(0))) {
        let norm = src.dot(&src).sqrt();
        if norm >= NORM_EPS {
            row.zip_mut_with(&src, |o, &v| *o += v / norm);
        }
    }
    Ok(out)
}

pub fn score(user: &[f64], item: &[f64]) -> Result<f64> {
    if user.len() != item.len() {
        return Err(LatticeError::Shape(format!(
            "user vector has {} dims, item vector {}",
            user.len(),
            item.len()
        )));
    }
    Ok(user.iter().zip(item).map(|(a, b)| a * b).sum())
}

/// Scores of one user against every item row.
pub fn score_items(user: ArrayView1<'_, f64>, items: &Array2<f64>) -> Array1<f64> {
    items.dot(&user)
}

pub fn forward(ctx: &ModelContext, params: &ParameterSet) -> Result<ForwardOutput> {
    Ok(forward_trace(ctx, params, None)?.into_output())
}

/// Full forward pass. `frozen_learned` replaces the learned graphs with
/// precomputed constants.
pub(crate) fn forward_trace(
    ctx: &ModelContext,
    params: &ParameterSet,
    frozen_learned: Option<&[SparseGraph]>,
) -> Result<ForwardTrace> {
    ctx.check_params(params)?;
    let cfg = &ctx.config;
    let variant = cfg.variant;
    let builds_graph = ctx.builds_item_graph();
    let needs_learned = builds_graph && cfg.k > 0 && frozen_learned.is_none();
    let needs_transformed = needs_learned || variant.uses_projected_features();

    let transformed = if needs_transformed {
        ctx.features
            .iter()
            .zip(&params.transforms)
            .map(|(f, t)| transform_features(&f.matrix, t))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let (concat, side) = if variant.uses_projected_features() {
        let views: Vec<_> = transformed.iter().map(|t| t.view()).collect();
        let c = concatenate(Axis(1), &views).map_err(|e| LatticeError::Shape(e.to_string()))?;
        let f = c.dot(&params.projection.t());
        (Some(c), Some(f))
    } else {
        (None, None)
    };

    let alpha = params.mixer.weights();
    let mut learned_raw = Vec::new();
    let mut learned = Vec::new();
    let mut graph = None;
    let mut layers = Vec::new();
    if builds_graph {
        if let Some(frozen) = frozen_learned {
            learned = frozen.to_vec();
        } else if cfg.k > 0 {
            for t in &transformed {
                let raw = knn_cosine_graph(t, cfg.k)?;
                learned.push(normalize_sym(&raw));
                learned_raw.push(raw);
            }
        } else {
            learned = vec![SparseGraph::empty(ctx.num_items); ctx.features.len()];
        }
        let fused = ctx
            .initial_graphs
            .iter()
            .zip(&learned)
            .map(|(s, a)| fuse_skip(s, a, cfg.lambda))
            .collect::<Result<Vec<_>>>()?;
        let a = aggregate_modalities(&fused, &params.mixer)?;
        let h0 = match variant {
            Variant::Full => params.item_embedding.clone(),
            _ => side.clone().expect("projected features computed"),
        };
        layers = propagate_layers(&a, &h0, cfg.item_layers)?;
        graph = Some(a);
    } else if variant.uses_item_graph() {
        // zero item-graph layers: H^(L) = H^(0)
        layers.push(match variant {
            Variant::Full => params.item_embedding.clone(),
            _ => side.clone().expect("projected features computed"),
        });
    }

    let (user_out, item_out) = cf_forward(
        cfg.backend,
        &params.user_embedding,
        &params.item_embedding,
        ctx.bipartite.as_ref(),
        cfg.cf_layers,
    )?;

    let mut trace = ForwardTrace {
        alpha,
        transformed,
        learned_raw,
        learned,
        graph,
        concat,
        side,
        layers,
        user_out,
        item_out,
        enhanced: Array2::zeros((0, 0)),
    };
    trace.enhanced = match trace.enhancement_source(variant) {
        Some(src) => enhance_items(&trace.item_out, src)?,
        None => trace.item_out.clone(),
    };
    Ok(trace)
}
