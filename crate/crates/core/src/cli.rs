//! The operations behind the `lattice` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
use crate::config::RunConfig;
use crate::data::{
    load_features, load_interactions, split_cold, split_warm, InteractionDataset, ModalityFeatures,
    Partition, Split, SplitMode,
};
use crate::error::{LatticeError, Result};
use crate::eval::{evaluate, EvalReport};
use crate::graph::{build_initial_graph, write_graph_dump, GraphDumpHeader};
use crate::model::ModelContext;
use crate::train::{fit_with, EpochLog, FitResult};

pub const MANIFEST_FILE: &str = "split_manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.latc";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// Everything loaded from the files a config points at.
#[derive(Debug, Clone)]
pub struct RunData {
    pub dataset: InteractionDataset,
    pub features: Vec<ModalityFeatures>,
    pub split: Split,
}

pub fn load_run_data(cfg: &RunConfig) -> Result<RunData> {
    cfg.check_files()?;
    let dataset = load_interactions(cfg.interactions_path())?;
    let mut features = cfg
        .feature_paths()
        .iter()
        .map(|p| load_features(p, &dataset))
        .collect::<Result<Vec<_>>>()?;
    if let Some(names) = &cfg.modality_names {
        for (f, n) in features.iter_mut().zip(names) {
            f.name = n.clone();
        }
    }
    let split = match cfg.split_mode {
        SplitMode::Warm => split_warm(&dataset, cfg.split_seed)?,
        SplitMode::Cold => split_cold(&dataset, cfg.item_fraction, cfg.split_seed)?,
    };
    Ok(RunData {
        dataset,
        features,
        split,
    })
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_path();
    fs::create_dir_all(&dir).map_err(|e| LatticeError::io(&dir, e))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, body).map_err(|e| LatticeError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config_digest: String,
    pub mode: SplitMode,
    pub seed: u64,
    pub num_users: usize,
    pub num_items: usize,
    pub total_pairs: usize,
    pub pairs: PartitionCounts,
    /// Original IDs of the held-out items; empty for warm splits.
    pub cold_items: Vec<String>,
}

pub fn split_manifest(cfg: &RunConfig, data: &RunData) -> SplitManifest {
    let s = &data.split;
    SplitManifest {
        config_digest: cfg.digest(),
        mode: s.mode,
        seed: s.seed,
        num_users: data.dataset.num_users(),
        num_items: data.dataset.num_items(),
        total_pairs: data.dataset.num_pairs(),
        pairs: PartitionCounts {
            train: s.train.num_pairs(),
            valid: s.valid.num_pairs(),
            test: s.test.num_pairs(),
        },
        cold_items: s
            .cold_items
            .iter()
            .map(|&i| data.dataset.item_ids().name(i).to_string())
            .collect(),
    }
}

/// Writes the split manifest and, if `dump_graphs` is set, the initial graph
/// of every modality.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<SplitManifest> {
    let data = load_run_data(cfg)?;
    let dir = ensure_out_dir(cfg)?;
    let manifest = split_manifest(cfg, &data);
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    if cfg.dump_graphs {
        let m = data.features.len();
        for f in &data.features {
            let g = build_initial_graph(&f.matrix, cfg.model.k)?;
            let header = GraphDumpHeader {
                modality: f.name.clone(),
                k: cfg.model.k,
                lambda: cfg.model.lambda,
                alpha: vec![1.0 / m as f64; m],
                num_nodes: g.num_nodes(),
                nnz: g.nnz(),
            };
            write_graph_dump(&dir, &format!("initial_graph_{}", f.name), &g, &header)?;
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
struct LogLine<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    epoch: &'a EpochLog,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub fit: FitResult,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains from scratch and writes the best checkpoint plus one JSON line per
/// epoch. Resuming is not supported.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<TrainOutcome> {
    if resume {
        return Err(LatticeError::InvalidArgument(
            "resuming from a checkpoint is not supported; every run trains from scratch".into(),
        ));
    }
    let data = load_run_data(cfg)?;
    let dir = ensure_out_dir(cfg)?;
    let digest = cfg.digest();
    let ctx = ModelContext::new(cfg.model.clone(), &data.split.train, data.features)?;
    let log_path = dir.join(TRAIN_LOG_FILE);
    let mut log_file = fs::File::create(&log_path).map_err(|e| LatticeError::io(&log_path, e))?;
    let fit = fit_with(&ctx, &data.split, &cfg.train, |entry| {
        let line = serde_json::to_string(&LogLine {
            config_digest: &digest,
            epoch: entry,
        })?;
        writeln!(log_file, "{}", line).map_err(|e| LatticeError::io(&log_path, e))
    })?;
    let checkpoint = dir.join(CHECKPOINT_FILE);
    let header = CheckpointHeader::describe(&ctx, &fit.params, &digest);
    save_checkpoint(&checkpoint, &header, &fit.params)?;
    Ok(TrainOutcome {
        fit,
        checkpoint,
        log: log_path,
    })
}

/// Scores a saved checkpoint on one partition and writes
/// `eval_<partition>.json`.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, partition: Partition) -> Result<EvalReport> {
    let data = load_run_data(cfg)?;
    let dir = ensure_out_dir(cfg)?;
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    let (header, params) = load_checkpoint(&ckpt_path)?;
    let ctx = ModelContext::new(cfg.model.clone(), &data.split.train, data.features)?;
    header.check_compatible(&ctx)?;
    let digest = cfg.digest();
    if header.config_digest != digest {
        log::warn!(
            "checkpoint was trained under config {} but this config is {}",
            header.config_digest,
            digest
        );
    }
    let mut report = evaluate(&ctx, &params, &data.split, partition, &cfg.cutoffs)?;
    report.config_digest = Some(digest);
    write_json(&dir.join(format!("eval_{}.json", partition)), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    Lambda,
}

impl std::str::FromStr for SweepAxis {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepAxis::K),
            "lambda" => Ok(SweepAxis::Lambda),
            _ => Err(LatticeError::InvalidArgument(format!(
                "sweep axis must be `k` or `lambda`, got `{}`",
                s
            ))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::K => "k",
            SweepAxis::Lambda => "lambda",
        })
    }
}

/// Parses a comma-separated value list.
pub fn parse_values(csv: &str) -> Result<Vec<f64>> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| LatticeError::InvalidArgument(format!("`{}` is not a number", s)))
        })
        .collect()
}

/// Returns `cfg` with `axis` set to `value`.
pub fn with_axis(cfg: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::K => {
            if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
                return Err(LatticeError::InvalidArgument(format!(
                    "k must be a non-negative integer, got {}",
                    value
                )));
            }
            c.model.k = value as usize;
        }
        SweepAxis::Lambda => c.model.lambda = value,
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub report: EvalReport,
}

/// Drops repeated values, keeping first occurrences.
pub fn dedup_values(values: &[f64]) -> Vec<f64> {
    let mut seen = Vec::new();
    for &v in values {
        if seen.contains(&v) {
            log::warn!("dropping duplicate sweep value {}", v);
        } else {
            seen.push(v);
        }
    }
    seen
}

/// Retrains from scratch for every value and reports test metrics at the
/// configured cutoffs plus 20.
pub fn run_sweep(cfg: &RunConfig, data: &RunData, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(LatticeError::InvalidArgument("sweep needs at least one value".into()));
    }
    let mut cutoffs = cfg.cutoffs.clone();
    if !cutoffs.contains(&20) {
        cutoffs.push(20);
    }
    let mut rows = Vec::new();
    for value in dedup_values(values) {
        let c = with_axis(cfg, axis, value)?;
        let ctx = ModelContext::new(c.model.clone(), &data.split.train, data.features.clone())?;
        let fit = fit_with(&ctx, &data.split, &c.train, |_| Ok(()))?;
        let mut report = evaluate(&ctx, &fit.params, &data.split, Partition::Test, &cutoffs)?;
        report.config_digest = Some(c.digest());
        log::info!("{} = {}: recall@20 {:.5}", axis, value, report.at(20).unwrap().recall);
        rows.push(SweepRow { value, report });
    }
    Ok(rows)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("value\trecall@20\tprecision@20\tndcg@20\n");
    for r in rows {
        let m = r.report.at(20).expect("sweeps always evaluate at 20");
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.value, m.recall, m.precision, m.ndcg));
    }
    out
}

/// Runs the sweep and writes `sweep_<axis>.tsv` into `out` (default: the
/// config's output directory).
pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64], out: Option<&Path>) -> Result<(PathBuf, Vec<SweepRow>)> {
    if values.is_empty() {
        return Err(LatticeError::InvalidArgument("sweep needs at least one value".into()));
    }
    let data = load_run_data(cfg)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => cfg.out_path(),
    };
    fs::create_dir_all(&dir).map_err(|e| LatticeError::io(&dir, e))?;
    let rows = run_sweep(cfg, &data, axis, values)?;
    let path = dir.join(format!("sweep_{}.tsv", axis));
    fs::write(&path, sweep_table(&rows)).map_err(|e| LatticeError::io(&path, e))?;
    let reports: BTreeMap<String, &EvalReport> = rows.iter().map(|r| (r.value.to_string(), &r.report)).collect();
    write_json(&dir.join(format!("sweep_{}.json", axis)), &reports)?;
    Ok((path, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_parse_and_dedup() {
        assert_eq!(parse_values("0, 5,10,,20").unwrap(), vec![0.0, 5.0, 10.0, 20.0]);
        assert!(parse_values("1,x").is_err());
        assert_eq!(dedup_values(&[0.5, 0.25, 0.5, 1.0, 0.25]), vec![0.5, 0.25, 1.0]);
    }

    #[test]
    fn k_axis_requires_integers() {
        let cfg = RunConfig::new("a.tsv", "out");
        let cfg = RunConfig {
            model: crate::model::ModelConfig {
                variant: crate::model::Variant::Base,
                ..Default::default()
            },
            ..cfg
        };
        assert_eq!(with_axis(&cfg, SweepAxis::K, 40.0).unwrap().model.k, 40);
        assert!(with_axis(&cfg, SweepAxis::K, 2.5).is_err());
        assert!(with_axis(&cfg, SweepAxis::Lambda, 1.5).is_err());
    }
}
