#![allow(dead_code)]

use lattice_core::data::{InteractionDataset, ModalityFeatures};
use lattice_core::graph::{cosine_similarity_row, transform_features};
use lattice_core::model::{Backend, ModelConfig, ModelContext, ParameterSet, Variant};
use lattice_core::train::{batch_objective, Triple};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const ALL_VARIANTS: [Variant; 4] = [
    Variant::Full,
    Variant::ConvOnFeats,
    Variant::FeatsSideInfo,
    Variant::Base,
];
pub const ALL_BACKENDS: [Backend; 2] = [Backend::Mf, Backend::LightGcn];

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

// ---------------------------------------------------------------------------
// dense reference pipeline

pub fn dense_cosine(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let norms: Vec<f64> = (0..n).map(|i| x.row(i).dot(&x.row(i)).sqrt()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if norms[i] < 1e-12 || norms[j] < 1e-12 {
            0.0
        } else if i == j {
            1.0
        } else {
            (x.row(i).dot(&x.row(j)) / (norms[i] * norms[j])).clamp(0.0, 1.0)
        }
    })
}

/// Keeps, per row, the `k` largest positive values. The diagonal beats
/// everything; otherwise a column loses to every larger value and to equal
/// values at smaller columns.
pub fn dense_topk(s: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = s.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let v = s[[i, j]];
            if v <= 0.0 {
                continue;
            }
            let beats = |c: usize| {
                if c == j {
                    false
                } else if c == i {
                    s[[i, i]] > 0.0
                } else if j == i {
                    false
                } else {
                    s[[i, c]] > v || (s[[i, c]] == v && c < j)
                }
            };
            let beaten = (0..n).filter(|&c| beats(c)).count();
            if beaten < k {
                out[[i, j]] = v;
            }
        }
    }
    out
}

pub fn dense_normalize(s: &Array2<f64>) -> Array2<f64> {
    let n = s.nrows();
    let deg: Vec<f64> = (0..n).map(|i| s.row(i).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if deg[i] > 0.0 && deg[j] > 0.0 {
            s[[i, j]] / (deg[i] * deg[j]).sqrt()
        } else {
            0.0
        }
    })
}

pub fn dense_softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let t: f64 = e.iter().sum();
    e.iter().map(|v| v / t).collect()
}

pub struct DenseGraphs {
    pub initial: Vec<Array2<f64>>,
    pub learned: Vec<Array2<f64>>,
    pub latent: Array2<f64>,
    pub alpha: Vec<f64>,
}

pub fn dense_pipeline(
    features: &[Array2<f64>],
    transformed: &[Array2<f64>],
    k: usize,
    lambda: f64,
    logits: &[f64],
) -> DenseGraphs {
    let initial: Vec<_> = features
        .iter()
        .map(|x| dense_normalize(&dense_topk(&dense_cosine(x), k)))
        .collect();
    let learned: Vec<_> = transformed
        .iter()
        .map(|x| dense_normalize(&dense_topk(&dense_cosine(x), k)))
        .collect();
    let alpha = dense_softmax(logits);
    let n = features[0].nrows();
    let mut latent = Array2::zeros((n, n));
    for m in 0..features.len() {
        latent = latent + (&initial[m] * lambda + &learned[m] * (1.0 - lambda)) * alpha[m];
    }
    DenseGraphs {
        initial,
        learned,
        latent,
        alpha,
    }
}

// ---------------------------------------------------------------------------
// quadratic-time metric reference

/// 1-based rank of every candidate: one plus the number of candidates that
/// beat it.
pub fn oracle_ranks(scores: &[f64], excluded: &[usize]) -> Vec<Option<usize>> {
    let cand = |i: usize| !excluded.contains(&i);
    (0..scores.len())
        .map(|i| {
            if !cand(i) {
                return None;
            }
            let better = (0..scores.len())
                .filter(|&j| cand(j) && (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)))
                .count();
            Some(better + 1)
        })
        .collect()
}

pub fn oracle_metrics(scores: &[f64], excluded: &[usize], relevant: &[usize], k: usize) -> [f64; 3] {
    let ranks = oracle_ranks(scores, excluded);
    let hit_ranks: Vec<usize> = relevant
        .iter()
        .filter_map(|&i| ranks[i])
        .filter(|&r| r <= k)
        .collect();
    let recall = hit_ranks.len() as f64 / relevant.len() as f64;
    let precision = hit_ranks.len() as f64 / k as f64;
    let dcg: f64 = hit_ranks.iter().map(|&r| 1.0 / ((r + 1) as f64).log2()).sum();
    let ideal: f64 = (1..=relevant.len().min(k)).map(|r| 1.0 / ((r + 1) as f64).log2()).sum();
    [recall, precision, dcg / ideal]
}

// ---------------------------------------------------------------------------
// the tiny finite-difference instance

pub const TINY_PAIRS: [(usize, usize); 9] = [
    (0, 0),
    (0, 1),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 4),
    (3, 0),
    (3, 5),
    (2, 2),
];

pub const TINY_BATCH: [(usize, usize, usize); 8] = [
    (0, 0, 2),
    (0, 1, 4),
    (1, 2, 0),
    (1, 3, 5),
    (2, 4, 1),
    (3, 5, 3),
    (3, 0, 4),
    (2, 2, 5),
];

pub struct Tiny {
    pub ctx: ModelContext,
    pub params: ParameterSet,
    pub batch: Vec<Triple>,
}

pub fn tiny_config(variant: Variant, backend: Backend) -> ModelConfig {
    ModelConfig {
        backend,
        variant,
        item_layers: 1,
        cf_layers: 2,
        k: 2,
        lambda: 0.5,
        embed_dim: 8,
        feat_dim: 4,
    }
}

/// Tiny instance for `seed`: random features, Xavier parameters with biases and
/// mixer logits also randomized.
pub fn tiny_instance(variant: Variant, backend: Backend, seed: u64) -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = InteractionDataset::from_pairs(4, 6, TINY_PAIRS.to_vec()).unwrap();
    let features = vec![
        ModalityFeatures::new("visual", gaussian(6, 5, &mut rng)).unwrap(),
        ModalityFeatures::new("text", gaussian(6, 3, &mut rng)).unwrap(),
    ];
    let ctx = ModelContext::new(tiny_config(variant, backend), &train, features).unwrap();
    let mut params = ctx.init_params(&mut rng).unwrap();
    for t in &mut params.transforms {
        t.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    for z in &mut params.mixer.logits {
        *z = rng.random_range(-1.0..1.0);
    }
    let batch = TINY_BATCH
        .iter()
        .map(|&(user, pos, neg)| Triple { user, pos, neg })
        .collect();
    Tiny { ctx, params, batch }
}

/// Smallest distance of the learned-graph selection from a discontinuity:
/// for every row, the gap between the k-th and (k+1)-th similarity, and the
/// distance of every retained off-diagonal similarity from 0 and 1.
pub fn support_margin(ctx: &ModelContext, params: &ParameterSet) -> f64 {
    let k = ctx.config.k;
    let mut margin = f64::INFINITY;
    for (f, t) in ctx.features.iter().zip(&params.transforms) {
        let x = transform_features(&f.matrix, t).unwrap();
        for i in 0..x.nrows() {
            let row = cosine_similarity_row(&x, i);
            let mut off: Vec<f64> = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .collect();
            off.sort_by(|a, b| b.total_cmp(a));
            let kept = k - 1;
            for &v in &off[..kept] {
                margin = margin.min(v).min(1.0 - v);
            }
            if kept < off.len() {
                let last = if kept == 0 { 1.0 } else { off[kept - 1] };
                margin = margin.min(last - off[kept]);
            }
        }
    }
    margin
}

/// First seed from `start` whose tiny instance keeps every selection at least
/// `min_margin` away from a discontinuity.
pub fn tiny_with_margin(variant: Variant, backend: Backend, start: u64, min_margin: f64) -> (u64, Tiny) {
    for seed in start..start + 10_000 {
        let t = tiny_instance(variant, backend, seed);
        if support_margin(&t.ctx, &t.params) >= min_margin {
            return (seed, t);
        }
    }
    panic!("no tiny instance with margin {}", min_margin);
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between `analytic` and central differences of the
/// batch objective, with the name and index where it occurs.
pub fn finite_difference_check(
    tiny: &Tiny,
    analytic: &ParameterSet,
    l2_coeff: f64,
    h: f64,
) -> (f64, String) {
    let names = tiny.params.block_names();
    let grads = analytic.blocks();
    let mut worst = (0.0, String::new());
    for (b, name) in names.iter().enumerate() {
        for e in 0..grads[b].len() {
            let mut plus = tiny.params.clone();
            plus.blocks_mut()[b][e] += h;
            let mut minus = tiny.params.clone();
            minus.blocks_mut()[b][e] -= h;
            let fp = batch_objective(&tiny.ctx, &plus, &tiny.batch, l2_coeff, None).unwrap();
            let fm = batch_objective(&tiny.ctx, &minus, &tiny.batch, l2_coeff, None).unwrap();
            let numeric = (fp - fm) / (2.0 * h);
            let err = rel_error(grads[b][e], numeric);
            if err > worst.0 {
                worst = (
                    err,
                    format!("{}[{}]: analytic {:e} numeric {:e}", name, e, grads[b][e], numeric),
                );
            }
        }
    }
    worst
}
