//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for each
//! and exits non-zero if any failed.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use common::*;
use lattice_core::cli::{cmd_train, run_sweep, RunData, SweepAxis, CHECKPOINT_FILE, TRAIN_LOG_FILE};
use lattice_core::data::synthetic::{ClusterConfig, ClusterData};
use lattice_core::data::{split_cold, ModalityFeatures};
use lattice_core::eval::{
    evaluate, excluded_items, ndcg_at_k, precision_at_k, rank_items, recall_at_k, top_k_items,
};
use lattice_core::graph::{
    aggregate_modalities, build_initial_graph, build_learned_graph, fuse_skip, transform_features,
    ModalityMixer, ModalityTransform,
};
use lattice_core::model::{forward, Backend, ModelConfig, ModelContext, ParameterSet, Variant};
use lattice_core::train::{compute_gradients, fit, TrainConfig, Trainer};
use lattice_core::{Partition, RunConfig, SparseGraph, Split};
use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn params_diff(a: &ParameterSet, b: &ParameterSet) -> f64 {
    a.blocks()
        .iter()
        .zip(b.blocks())
        .map(|(x, y)| max_abs_diff(x, y))
        .fold(0.0, f64::max)
}

fn graph_vs_dense(g: &SparseGraph, d: &Array2<f64>) -> f64 {
    max_abs_diff(g.to_dense().as_slice().unwrap(), d.as_slice().unwrap())
}

// 1 ---------------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let mut worst = (0.0, String::new());
    let mut seeds = Vec::new();
    for variant in ALL_VARIANTS {
        for backend in ALL_BACKENDS {
            let (seed, tiny) = tiny_with_margin(variant, backend, 0, 0.05);
            seeds.push(seed);
            let g = compute_gradients(&tiny.ctx, &tiny.params, &tiny.batch, 0.01, None)
                .map_err(|e| e.to_string())?;
            let (err, at) = finite_difference_check(&tiny, &g.grads, 0.01, 1e-4);
            if err > worst.0 {
                worst = (err, format!("{:?}/{:?} {}", variant, backend, at));
            }
        }
    }
    check(
        worst.0 <= 1e-4,
        format!(
            "8 configurations, max relative error {:.2e} (worst {}; seeds {:?})",
            worst.0, worst.1, seeds
        ),
    )
}

// 2 ---------------------------------------------------------------------------

fn small_cold(seed: u64) -> (ClusterData, Split) {
    let data = ClusterConfig::default().generate(seed).unwrap();
    let split = split_cold(&data.dataset, 0.2, seed).unwrap();
    (data, split)
}

/// Runs two trainers side by side for `epochs` epochs and returns the largest
/// difference in per-step losses and parameters, and in the final scores.
fn trajectory_gap(a: &ModelContext, b: &ModelContext, split: &Split, epochs: usize) -> (f64, f64, f64) {
    let cfg = TrainConfig {
        batch_size: 512,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut ta = Trainer::new(a, cfg.clone()).unwrap();
    let mut tb = Trainer::new(b, cfg).unwrap();
    let (mut loss_gap, mut param_gap) = (0.0f64, params_diff(&ta.params, &tb.params));
    for _ in 0..epochs {
        let xa = ta.epoch_triples(&split.train).unwrap();
        let xb = tb.epoch_triples(&split.train).unwrap();
        assert_eq!(xa, xb);
        for batch in xa.chunks(512) {
            let la = ta.step(a, batch).unwrap();
            let lb = tb.step(b, batch).unwrap();
            loss_gap = loss_gap.max((la - lb).abs());
            param_gap = param_gap.max(params_diff(&ta.params, &tb.params));
        }
    }
    let oa = forward(a, &ta.params).unwrap();
    let ob = forward(b, &tb.params).unwrap();
    let mut score_gap = 0.0f64;
    for u in 0..a.num_users {
        score_gap = score_gap.max(max_abs_diff(
            oa.score_all(u).as_slice().unwrap(),
            ob.score_all(u).as_slice().unwrap(),
        ));
    }
    (loss_gap, param_gap, score_gap)
}

fn degeneracy() -> Outcome {
    let (data, split) = small_cold(5);
    let feats = vec![data.features.clone()];
    let mut lines = Vec::new();
    let mut ok = true;
    for backend in ALL_BACKENDS {
        let model = |variant, k| ModelConfig {
            backend,
            variant,
            k,
            embed_dim: 16,
            feat_dim: 8,
            ..ModelConfig::default()
        };
        let full = ModelContext::new(model(Variant::Full, 0), &split.train, feats.clone()).unwrap();
        let base = ModelContext::new(model(Variant::Base, 10), &split.train, feats.clone()).unwrap();
        let (l, p, s) = trajectory_gap(&full, &base, &split, 3);
        ok &= l <= 1e-12 && p <= 1e-12 && s <= 1e-12;
        lines.push(format!("{:?} full(k=0) vs base: loss {:.1e} params {:.1e} scores {:.1e}", backend, l, p, s));
    }
    let mf_cfg = ModelConfig {
        backend: Backend::Mf,
        embed_dim: 16,
        feat_dim: 8,
        ..ModelConfig::default()
    };
    let lg_cfg = ModelConfig {
        backend: Backend::LightGcn,
        cf_layers: 0,
        ..mf_cfg.clone()
    };
    let mf = ModelContext::new(mf_cfg, &split.train, feats.clone()).unwrap();
    let lg = ModelContext::new(lg_cfg, &split.train, feats).unwrap();
    let (l, p, s) = trajectory_gap(&lg, &mf, &split, 3);
    ok &= l == 0.0 && p == 0.0 && s == 0.0;
    lines.push(format!("LightGCN(0 layers) vs MF: loss {:.1e} params {:.1e} scores {:.1e}", l, p, s));
    check(ok, lines.join("; "))
}

// 3 ---------------------------------------------------------------------------

fn graph_pipeline_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for instance in 0..30 {
        let n = rng.random_range(2..=25);
        let k = rng.random_range(1..=6);
        let lambda: f64 = rng.random_range(0.0..=1.0);
        let feat_dim = rng.random_range(1..=6);
        let mut raw = Vec::new();
        let mut transformed = Vec::new();
        let mut sparse = Vec::new();
        for _ in 0..2 {
            let dm = rng.random_range(1..=8);
            let mut x = gaussian(n, dm, &mut rng);
            if rng.random_bool(0.3) {
                let z = rng.random_range(0..n);
                x.row_mut(z).fill(0.0);
            }
            let t = ModalityTransform {
                weight: gaussian(feat_dim, dm, &mut rng),
                bias: Array1::from_shape_fn(feat_dim, |_| rng.random_range(-0.5..0.5)),
            };
            let tx = transform_features(&x, &t).unwrap();
            let initial = build_initial_graph(&x, k).unwrap();
            let learned = build_learned_graph(&tx, k).unwrap();
            for g in [&initial, &learned] {
                for i in 0..n {
                    let (cols, vals) = g.row(i);
                    if cols.len() > k {
                        return Err(format!("instance {}: row {} has {} > k={} entries", instance, i, cols.len(), k));
                    }
                    if !cols.is_empty() && !cols.contains(&i) {
                        return Err(format!("instance {}: row {} lacks its self-loop", instance, i));
                    }
                    if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        return Err(format!("instance {}: bad weight in row {}", instance, i));
                    }
                }
            }
            sparse.push((initial, learned));
            raw.push(x);
            transformed.push(tx);
        }
        let mixer = ModalityMixer {
            logits: (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let fused: Vec<SparseGraph> = sparse
            .iter()
            .map(|(s, a)| fuse_skip(s, a, lambda).unwrap())
            .collect();
        let latent = aggregate_modalities(&fused, &mixer).unwrap();
        let dense = dense_pipeline(&raw, &transformed, k, lambda, &mixer.logits);
        for m in 0..2 {
            worst = worst
                .max(graph_vs_dense(&sparse[m].0, &dense.initial[m]))
                .max(graph_vs_dense(&sparse[m].1, &dense.learned[m]));
        }
        worst = worst.max(graph_vs_dense(&latent, &dense.latent));
        let alpha_sum: f64 = mixer.weights().iter().sum();
        if (alpha_sum - 1.0).abs() > 1e-12 || mixer.weights().iter().any(|&a| a <= 0.0) {
            return Err(format!("instance {}: alpha sums to {}", instance, alpha_sum));
        }
    }
    check(
        worst <= 1e-10,
        format!("30 instances, max entrywise deviation from dense reference {:.2e}", worst),
    )
}

// 4 ---------------------------------------------------------------------------

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(5..=60);
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..6) as f64 / 5.0
                } else {
                    rng.random_range(-3.0..3.0)
                }
            })
            .collect();
        let amount = rng.random_range(1..n);
        let chosen = sample(&mut rng, n, amount).into_vec();
        let n_excluded = rng.random_range(0..chosen.len());
        let mut excluded = chosen[..n_excluded].to_vec();
        excluded.sort_unstable();
        let relevant = chosen[n_excluded..].to_vec();
        let ranked = rank_items(&scores, &excluded);
        for k in [5, 20] {
            if top_k_items(&scores, &excluded, k)[..] != ranked[..k.min(ranked.len())] {
                return Err("partial top-k selection disagrees with the full ranking".into());
            }
            let got = [
                recall_at_k(&ranked, &relevant, k),
                precision_at_k(&ranked, &relevant, k),
                ndcg_at_k(&ranked, &relevant, k),
            ];
            let want = oracle_metrics(&scores, &excluded, &relevant, k);
            worst = worst.max(max_abs_diff(&got, &want));
        }
    }
    let hand = ndcg_at_k(&[3, 8, 5], &[3, 5], 20);
    check(
        worst <= 1e-12 && (hand - 0.91972).abs() <= 1e-5,
        format!("50 instances, max deviation {:.1e}; NDCG hand case {:.5}", worst, hand),
    )
}

// 5 and 6 -----------------------------------------------------------------------

/// Mean Recall@k of a uniformly random ranking over each user's candidates, and
/// its standard error, from the hypergeometric distribution of hits.
fn random_recall(split: &Split, k: usize) -> (f64, f64) {
    let (mut mean, mut var, mut users) = (0.0, 0.0, 0.0);
    for u in 0..split.test.num_users() {
        let r = split.test.positives(u).len() as f64;
        if r == 0.0 {
            continue;
        }
        let c = (split.test.num_items() - excluded_items(split, Partition::Test, u).len()) as f64;
        let draws = (k as f64).min(c);
        mean += draws / c;
        var += draws * (r / c) * (1.0 - r / c) * (c - draws) / (c - 1.0) / (r * r);
        users += 1.0;
    }
    (mean / users, var.sqrt() / users)
}

fn cold_model(variant: Variant, k: usize) -> ModelConfig {
    ModelConfig {
        backend: Backend::Mf,
        variant,
        k,
        ..ModelConfig::default()
    }
}

fn cold_train(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

fn cold_start_recovery() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [1u64, 2, 3] {
        let (data, split) = small_cold(seed);
        let (expected, se) = random_recall(&split, 10);
        let mut recall = Vec::new();
        for variant in [Variant::Base, Variant::Full] {
            let ctx = ModelContext::new(cold_model(variant, 10), &split.train, vec![data.features.clone()])
                .map_err(|e| e.to_string())?;
            let fitted = fit(&ctx, &split, &cold_train(seed)).map_err(|e| e.to_string())?;
            let rep = evaluate(&ctx, &fitted.params, &split, Partition::Test, &[10]).map_err(|e| e.to_string())?;
            recall.push(rep.metrics[0].recall);
        }
        let (mf, lattice) = (recall[0], recall[1]);
        let gain = lattice >= 1.5 * mf;
        let random_like = (mf - expected).abs() <= 3.0 * se;
        ok &= gain && random_like;
        lines.push(format!(
            "seed {}: LATTICE-MF {:.4} MF {:.4} (x{:.2}) random {:.4}±{:.4}",
            seed,
            lattice,
            mf,
            lattice / mf,
            expected,
            se
        ));
    }
    check(ok, lines.join("; "))
}

fn k_sweep() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [1u64, 2, 3] {
        let (data, split) = small_cold(seed);
        let mut cfg = RunConfig::new("unused.tsv", "unused");
        cfg.feature_files = vec!["unused.latf".into()];
        cfg.model = cold_model(Variant::Full, 10);
        cfg.train = cold_train(seed);
        cfg.cutoffs = vec![10];
        let run = RunData {
            dataset: data.dataset.clone(),
            features: vec![data.features.clone()],
            split,
        };
        let rows = run_sweep(&cfg, &run, SweepAxis::K, &[0.0, 5.0, 10.0]).map_err(|e| e.to_string())?;
        let r: Vec<f64> = rows.iter().map(|r| r.report.at(10).unwrap().recall).collect();
        ok &= r[2] > r[0];
        lines.push(format!("seed {}: k=0 {:.4} k=5 {:.4} k=10 {:.4}", seed, r[0], r[1], r[2]));
    }
    check(ok, lines.join("; "))
}

// 7 ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = ClusterConfig::default().generate(9).unwrap();
    data.write_files(dir.path()).map_err(|e| e.to_string())?;
    let text = "interactions = interactions.tsv\n\
                feature_files = [\"content.latf\"]\n\
                split_mode = warm\n\
                backend = lightgcn\n\
                variant = full\n\
                embed_dim = 32\n\
                feat_dim = 16\n\
                max_epochs = 8\n";
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let path = dir.path().join(format!("{}.cfg", name));
        std::fs::write(&path, format!("{}out_dir = out_{}\n", text, name)).unwrap();
        let cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
        let out = cmd_train(&cfg, false).map_err(|e| e.to_string())?;
        let ckpt = std::fs::read(out.checkpoint.parent().unwrap().join(CHECKPOINT_FILE)).unwrap();
        let log = std::fs::read_to_string(out.log.parent().unwrap().join(TRAIN_LOG_FILE)).unwrap();
        runs.push((ckpt, log));
    }
    let same_ckpt = runs[0].0 == runs[1].0;
    let la: Vec<serde_json::Value> = runs[0].1.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let lb: Vec<serde_json::Value> = runs[1].1.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let mut gap = 0.0f64;
    let mut same_shape = la.len() == lb.len() && !la.is_empty();
    for (a, b) in la.iter().zip(&lb) {
        for (key, va) in a.as_object().unwrap() {
            if key == "seconds" {
                continue;
            }
            let vb = &b[key];
            match (va.as_f64(), vb.as_f64()) {
                (Some(x), Some(y)) => gap = gap.max((x - y).abs()),
                _ => same_shape &= va == vb,
            }
            if let (Some(xa), Some(xb)) = (va.as_array(), vb.as_array()) {
                for (x, y) in xa.iter().zip(xb) {
                    gap = gap.max((x.as_f64().unwrap() - y.as_f64().unwrap()).abs());
                }
            }
        }
    }
    check(
        same_ckpt && same_shape && gap <= 1e-12,
        format!(
            "checkpoints identical: {} ({} bytes); {} epoch lines, max numeric gap {:.1e}",
            same_ckpt,
            runs[0].0.len(),
            la.len(),
            gap
        ),
    )
}

// 8 ---------------------------------------------------------------------------

fn scale_smoke() -> Outcome {
    let (n, d, k) = (20_000, 128, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = gaussian(n, d, &mut rng);
    let features = ModalityFeatures::new("visual", x).unwrap();
    let before = CURRENT.load(Ordering::Relaxed);
    PEAK.store(before, Ordering::Relaxed);
    let start = Instant::now();
    let g = build_initial_graph(&features.matrix, k).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let peak = PEAK.load(Ordering::Relaxed) - before;
    let dense_bytes = n * n * std::mem::size_of::<f64>();
    let budget = 256 << 20;
    check(
        secs < 300.0 && peak < budget && g.nnz() <= n * k,
        format!(
            "N={} d={} k={}: {:.1}s, nnz {}, peak extra memory {:.1} MiB (dense matrix would be {:.0} MiB)",
            n,
            d,
            k,
            secs,
            g.nnz(),
            peak as f64 / (1 << 20) as f64,
            dense_bytes as f64 / (1 << 20) as f64
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient oracle", gradient_oracle),
        ("degeneracy equivalence", degeneracy),
        ("graph pipeline oracle", graph_pipeline_oracle),
        ("metric oracle", metric_oracle),
        ("synthetic cold-start recovery", cold_start_recovery),
        ("k sweep sanity", k_sweep),
        ("determinism", determinism),
        ("scale smoke test", scale_smoke),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {}. {} ({:.1}s): {}", i + 1, name, secs, detail),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {}. {} ({:.1}s): {}", i + 1, name, secs, detail);
            }
        }
    }
    if failed > 0 {
        println!("{} acceptance criteria failed", failed);
        std::process::exit(1);
    }
}
