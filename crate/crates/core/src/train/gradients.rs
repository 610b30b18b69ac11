//! Reverse-mode gradients of the batch objective, written out by hand.
//!
//! The kNN supports of the learned graphs are constants of the forward pass:
//! no gradient flows through which neighbours were selected. Gradients do flow
//! through the retained cosine values, the degree normalization of the learned
//! graphs, the skip blend, the softmax mixer, the item-graph convolution, the
//! embedding enhancement and the CF backend. The initial graphs are constants.

use ndarray::{s, Array2, Axis};

use super::loss::{bpr_loss, l2_penalty, sigmoid};
use crate::error::{LatticeError, Result};
use crate::graph::NORM_EPS;
use crate::model::{forward_trace, Backend, ForwardTrace, ModelContext, ParameterSet, Variant};
use crate::sparse::SparseGraph;

/// A (user, observed item, sampled negative) training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// `bpr + l2`
    pub loss: f64,
    pub bpr: f64,
    pub l2: f64,
    pub grads: ParameterSet,
    /// Learned graphs built during this pass (empty if frozen or unused).
    pub learned_graphs: Vec<SparseGraph>,
}

fn check_batch(ctx: &ModelContext, batch: &[Triple]) -> Result<()> {
    if batch.is_empty() {
        return Err(LatticeError::InvalidArgument("empty batch".into()));
    }
    for t in batch {
        if t.user >= ctx.num_users || t.pos >= ctx.num_items || t.neg >= ctx.num_items {
            return Err(LatticeError::Shape(format!("triple {:?} out of range", t)));
        }
    }
    Ok(())
}

fn objective_parts(trace: &ForwardTrace, params: &ParameterSet, batch: &[Triple], l2_coeff: f64) -> (f64, f64) {
    let mut pos = Vec::with_capacity(batch.len());
    let mut neg = Vec::with_capacity(batch.len());
    for t in batch {
        let u = trace.user_out.row(t.user);
        pos.push(u.dot(&trace.enhanced.row(t.pos)));
        neg.push(u.dot(&trace.enhanced.row(t.neg)));
    }
    let bpr = bpr_loss(&pos, &neg);
    let l2 = l2_penalty(
        l2_coeff,
        batch.iter().map(|t| {
            [
                params.user_embedding.row(t.user).to_slice().expect("contiguous"),
                params.item_embedding.row(t.pos).to_slice().expect("contiguous"),
                params.item_embedding.row(t.neg).to_slice().expect("contiguous"),
            ]
        }),
    );
    (bpr, l2)
}

/// BPR loss plus L2 penalty for one batch, without gradients.
pub fn batch_objective(
    ctx: &ModelContext,
    params: &ParameterSet,
    batch: &[Triple],
    l2_coeff: f64,
    frozen_learned: Option<&[SparseGraph]>,
) -> Result<f64> {
    check_batch(ctx, batch)?;
    let trace = forward_trace(ctx, params, frozen_learned)?;
    let (bpr, l2) = objective_parts(&trace, params, batch, l2_coeff);
    Ok(bpr + l2)
}

/// Gradient of `bpr_loss + l2_penalty` with respect to every parameter block.
pub fn compute_gradients(
    ctx: &ModelContext,
    params: &ParameterSet,
    batch: &[Triple],
    l2_coeff: f64,
    frozen_learned: Option<&[SparseGraph]>,
) -> Result<BatchGradients> {
    check_batch(ctx, batch)?;
    let cfg = &ctx.config;
    let trace = forward_trace(ctx, params, frozen_learned)?;
    let (bpr, l2) = objective_parts(&trace, params, batch, l2_coeff);
    let n = batch.len() as f64;
    let mut grads = params.zeros_like();

    // scores
    let mut g_user_out = Array2::<f64>::zeros(trace.user_out.raw_dim());
    let mut g_enhanced = Array2::<f64>::zeros(trace.enhanced.raw_dim());
    for t in batch {
        let u = trace.user_out.row(t.user);
        let xi = trace.enhanced.row(t.pos);
        let xj = trace.enhanced.row(t.neg);
        let delta = u.dot(&xi) - u.dot(&xj);
        let coef = -sigmoid(-delta) / n;
        {
            let mut gu = g_user_out.row_mut(t.user);
            gu.scaled_add(coef, &xi);
            gu.scaled_add(-coef, &xj);
        }
        g_enhanced.row_mut(t.pos).scaled_add(coef, &u);
        g_enhanced.row_mut(t.neg).scaled_add(-coef, &u);
    }

    // enhancement: x̂ = x̃ + v / ‖v‖
    let g_source = trace
        .enhancement_source(cfg.variant)
        .map(|src| normalize_rows_backward(src, &g_enhanced));
    let g_item_out = g_enhanced;

    // CF backend
    let (mut g_user, mut g_item) = match cfg.backend {
        Backend::Mf => (g_user_out, g_item_out),
        Backend::LightGcn => {
            let b = ctx.bipartite.as_ref().expect("LightGCN context has a bipartite graph");
            let stacked = ndarray::concatenate(Axis(0), &[g_user_out.view(), g_item_out.view()])
                .map_err(|e| LatticeError::Shape(e.to_string()))?;
            // the normalized bipartite adjacency is symmetric, so the adjoint of
            // the layer mean is the layer mean itself
            let g = crate::model::layer_mean(&b.graph, &stacked, cfg.cf_layers)?;
            let nu = ctx.num_users;
            (g.slice(s![..nu, ..]).to_owned(), g.slice(s![nu.., ..]).to_owned())
        }
    };

    let m_count = ctx.features.len();
    let mut g_transformed: Vec<Option<Array2<f64>>> = vec![None; m_count];
    let mut g_side: Option<Array2<f64>> = None;

    match cfg.variant {
        Variant::Full | Variant::ConvOnFeats => {
            let g_last = g_source.expect("graph variants have an enhancement source");
            let g_h0 = if let Some(graph) = trace.graph.as_ref() {
                graph_backward(ctx, &trace, graph, g_last, &mut grads, &mut g_transformed)?
            } else {
                g_last
            };
            if cfg.variant == Variant::Full {
                g_item += &g_h0;
            } else {
                g_side = Some(g_h0);
            }
        }
        Variant::FeatsSideInfo => g_side = g_source,
        Variant::Base => {}
    }

    // F = [Ẽ_1 | ... | Ẽ_M] Pᵀ
    if let Some(gf) = g_side {
        let concat = trace.concat.as_ref().expect("projected variants keep the concatenation");
        grads.projection.assign(&gf.t().dot(concat));
        let g_concat = gf.dot(&params.projection);
        let width = cfg.feat_dim;
        for (m, slot) in g_transformed.iter_mut().enumerate() {
            let part = g_concat.slice(s![.., m * width..(m + 1) * width]);
            match slot {
                Some(g) => *g += &part,
                None => *slot = Some(part.to_owned()),
            }
        }
    }

    // Ẽ = E Wᵀ + b
    for (m, g) in g_transformed.into_iter().enumerate() {
        if let Some(g) = g {
            grads.transforms[m].weight.assign(&g.t().dot(&ctx.features[m].matrix));
            grads.transforms[m].bias = g.sum_axis(Axis(0));
        }
    }

    if l2_coeff != 0.0 {
        let c = l2_coeff / n;
        for t in batch {
            g_user
                .row_mut(t.user)
                .scaled_add(c, &params.user_embedding.row(t.user));
            g_item.row_mut(t.pos).scaled_add(c, &params.item_embedding.row(t.pos));
            g_item.row_mut(t.neg).scaled_add(c, &params.item_embedding.row(t.neg));
        }
    }
    grads.user_embedding = g_user;
    grads.item_embedding = g_item;

    if let Some(name) = grads.first_non_finite() {
        return Err(LatticeError::NonFiniteGradient(name));
    }
    Ok(BatchGradients {
        loss: bpr + l2,
        bpr,
        l2,
        grads,
        learned_graphs: if trace.learned_raw.is_empty() {
            Vec::new()
        } else {
            trace.learned
        },
    })
}

/// Adjoint of `v ↦ v / ‖v‖` applied row-wise; rows below the norm guard get zero.
fn normalize_rows_backward(src: &Array2<f64>, g_out: &Array2<f64>) -> Array2<f64> {
    let mut g = Array2::<f64>::zeros(src.raw_dim());
    for ((mut gr, v), go) in g
        .axis_iter_mut(Axis(0))
        .zip(src.axis_iter(Axis(0)))
        .zip(g_out.axis_iter(Axis(0)))
    {
        let norm = v.dot(&v).sqrt();
        if norm < NORM_EPS {
            continue;
        }
        let proj = v.dot(&go) / (norm * norm);
        gr.assign(&go);
        gr.scaled_add(-proj, &v);
        gr /= norm;
    }
    g
}

/// Backward through `H^(L) = A^L H^(0)` and through `A` itself. Returns the
/// gradient with respect to `H^(0)`; mixer logits and transformed-feature
/// gradients are written into `grads` and `g_transformed`.
fn graph_backward(
    ctx: &ModelContext,
    trace: &ForwardTrace,
    graph: &SparseGraph,
    g_last: Array2<f64>,
    grads: &mut ParameterSet,
    g_transformed: &mut [Option<Array2<f64>>],
) -> Result<Array2<f64>> {
    let cfg = &ctx.config;
    let layers = cfg.item_layers;
    let at = graph.transpose();
    let mut g_layers = vec![Array2::<f64>::zeros((0, 0)); layers + 1];
    g_layers[layers] = g_last;
    for l in (1..=layers).rev() {
        g_layers[l - 1] = at.matmul(&g_layers[l])?;
    }
    let h = &trace.layers;
    // ∂L/∂A_ij = Σ_l G_l[i] · H_{l-1}[j]
    let edge_grad = |i: usize, j: usize| -> f64 {
        (1..=layers)
            .map(|l| g_layers[l].row(i).dot(&h[l - 1].row(j)))
            .sum()
    };

    let lambda = cfg.lambda;
    let alpha = &trace.alpha;
    let mut g_alpha = vec![0.0; alpha.len()];
    for m in 0..alpha.len() {
        let initial = &ctx.initial_graphs[m];
        let learned = &trace.learned[m];
        let mut from_initial = 0.0;
        for (i, j, v) in initial.iter() {
            from_initial += edge_grad(i, j) * v;
        }
        let mut from_learned = 0.0;
        let mut g_learned = Vec::with_capacity(learned.nnz());
        for (i, j, v) in learned.iter() {
            let e = edge_grad(i, j);
            from_learned += e * v;
            g_learned.push(alpha[m] * (1.0 - lambda) * e);
        }
        g_alpha[m] = lambda * from_initial + (1.0 - lambda) * from_learned;

        if let Some(raw) = trace.learned_raw.get(m) {
            let g_raw = normalize_sym_backward(raw, learned, &g_learned);
            let g = cosine_backward(&trace.transformed[m], raw, &g_raw);
            g_transformed[m] = Some(g);
        }
    }

    // softmax
    let weighted: f64 = alpha.iter().zip(&g_alpha).map(|(a, g)| a * g).sum();
    for (m, z) in grads.mixer.logits.iter_mut().enumerate() {
        *z = alpha[m] * (g_alpha[m] - weighted);
    }
    Ok(std::mem::take(&mut g_layers[0]))
}

/// Adjoint of `out_ij = s_ij / sqrt(d_i d_j)` with `d` the row sums of `s`.
fn normalize_sym_backward(raw: &SparseGraph, normalized: &SparseGraph, g_out: &[f64]) -> Vec<f64> {
    let deg = raw.row_sums();
    let mut g_raw = vec![0.0; raw.nnz()];
    let mut g_deg = vec![0.0; deg.len()];
    for (p, (i, j, _)) in raw.iter().enumerate() {
        if deg[i] > 0.0 && deg[j] > 0.0 {
            g_raw[p] += g_out[p] / (deg[i].sqrt() * deg[j].sqrt());
            let t = 0.5 * g_out[p] * normalized.values()[p];
            g_deg[i] -= t / deg[i];
            g_deg[j] -= t / deg[j];
        }
    }
    for (p, (i, _, _)) in raw.iter().enumerate() {
        g_raw[p] += g_deg[i];
    }
    g_raw
}

/// Adjoint of the retained clamped cosines with respect to the feature rows.
/// Self-similarities and values clamped at 1 are constants.
fn cosine_backward(features: &Array2<f64>, raw: &SparseGraph, g_raw: &[f64]) -> Array2<f64> {
    let norms: Vec<f64> = features
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt())
        .collect();
    let mut g = Array2::<f64>::zeros(features.raw_dim());
    for (p, (i, j, c)) in raw.iter().enumerate() {
        if i == j || g_raw[p] == 0.0 || !(c > 0.0 && c < 1.0) {
            continue;
        }
        let (na, nb) = (norms[i], norms[j]);
        let a = features.row(i);
        let b = features.row(j);
        let w = g_raw[p];
        let inv = 1.0 / (na * nb);
        {
            let mut gi = g.row_mut(i);
            gi.scaled_add(w * inv, &b);
            gi.scaled_add(-w * c / (na * na), &a);
        }
        let mut gj = g.row_mut(j);
        gj.scaled_add(w * inv, &a);
        gj.scaled_add(-w * c / (nb * nb), &b);
    }
    g
}
