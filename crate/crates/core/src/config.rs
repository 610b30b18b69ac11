//! Flat `key = value` run configuration.
//!
//! Values are JSON; anything that does not parse as JSON is taken as a bare
//! string, so `backend = lightgcn` and `backend = "lightgcn"` are equivalent.
//! Lines starting with `#` are comments. Relative paths are resolved against
//! the directory holding the config file.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::SplitMode;
use crate::error::{LatticeError, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const KEYS: &[&str] = &[
    "interactions",
    "feature_files",
    "modality_names",
    "out_dir",
    "split_mode",
    "split_seed",
    "item_fraction",
    "backend",
    "variant",
    "item_layers",
    "cf_layers",
    "k",
    "lambda",
    "embed_dim",
    "feat_dim",
    "learning_rate",
    "l2_coeff",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "graph_refresh",
    "cutoffs",
    "dump_graphs",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    /// Paths as written in the file.
    pub interactions: String,
    pub feature_files: Vec<String>,
    /// Defaults to the feature file stems.
    pub modality_names: Option<Vec<String>>,
    pub out_dir: String,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub item_fraction: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cutoffs: Vec<usize>,
    pub dump_graphs: bool,
}

fn typed<T: DeserializeOwned>(key: &str, value: Value) -> Result<T> {
    serde_json::from_value(value.clone())
        .map_err(|e| LatticeError::Config(format!("key `{}` has invalid value {}: {}", key, value, e)))
}

impl RunConfig {
    pub fn new(interactions: impl Into<String>, out_dir: impl Into<String>) -> Self {
        RunConfig {
            base_dir: PathBuf::from("."),
            interactions: interactions.into(),
            feature_files: Vec::new(),
            modality_names: None,
            out_dir: out_dir.into(),
            split_mode: SplitMode::Warm,
            split_seed: 42,
            item_fraction: 0.2,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            cutoffs: vec![20],
            dump_graphs: false,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LatticeError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::parse(&text, base)?;
        cfg.check_files()?;
        Ok(cfg)
    }

    /// Parses and validates the text without touching the filesystem.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                LatticeError::Config(format!("line {}: expected `key = value`, got `{}`", n + 1, line))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(LatticeError::Config(format!(
                    "line {}: unknown key `{}`",
                    n + 1,
                    key
                )));
            }
            let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
            if entries.insert(key.to_string(), value).is_some() {
                return Err(LatticeError::Config(format!(
                    "line {}: key `{}` given twice",
                    n + 1,
                    key
                )));
            }
        }
        for required in ["interactions", "out_dir"] {
            if !entries.contains_key(required) {
                return Err(LatticeError::Config(format!("missing required key `{}`", required)));
            }
        }
        let mut cfg = RunConfig::new(String::new(), String::new());
        cfg.base_dir = base_dir.into();
        for (key, value) in entries {
            cfg.set(&key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assigns one key from a JSON value.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let k = key;
        match key {
            "interactions" => self.interactions = typed(k, value)?,
            "feature_files" => self.feature_files = typed(k, value)?,
            "modality_names" => self.modality_names = Some(typed(k, value)?),
            "out_dir" => self.out_dir = typed(k, value)?,
            "split_mode" => self.split_mode = typed(k, value)?,
            "split_seed" => self.split_seed = typed(k, value)?,
            "item_fraction" => self.item_fraction = typed(k, value)?,
            "backend" => self.model.backend = typed(k, value)?,
            "variant" => self.model.variant = typed(k, value)?,
            "item_layers" => self.model.item_layers = typed(k, value)?,
            "cf_layers" => self.model.cf_layers = typed(k, value)?,
            "k" => self.model.k = typed(k, value)?,
            "lambda" => self.model.lambda = typed(k, value)?,
            "embed_dim" => self.model.embed_dim = typed(k, value)?,
            "feat_dim" => self.model.feat_dim = typed(k, value)?,
            "learning_rate" => self.train.learning_rate = typed(k, value)?,
            "l2_coeff" => self.train.l2_coeff = typed(k, value)?,
            "batch_size" => self.train.batch_size = typed(k, value)?,
            "max_epochs" => self.train.max_epochs = typed(k, value)?,
            "patience" => self.train.patience = typed(k, value)?,
            "seed" => self.train.seed = typed(k, value)?,
            "graph_refresh" => self.train.graph_refresh = typed(k, value)?,
            "cutoffs" => self.cutoffs = typed(k, value)?,
            "dump_graphs" => self.dump_graphs = typed(k, value)?,
            _ => return Err(LatticeError::Config(format!("unknown key `{}`", key))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: LatticeError| LatticeError::Config(e.to_string());
        self.model.validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        if self.interactions.is_empty() || self.out_dir.is_empty() {
            return Err(LatticeError::Config("interactions and out_dir must be non-empty".into()));
        }
        if self.model.item_layers > 4 {
            return Err(LatticeError::Config(format!(
                "item_layers must be between 0 and 4, got {}",
                self.model.item_layers
            )));
        }
        if self.split_mode == SplitMode::Cold && !(self.item_fraction > 0.0 && self.item_fraction < 1.0) {
            return Err(LatticeError::Config(format!(
                "item_fraction must lie in (0, 1), got {}",
                self.item_fraction
            )));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(LatticeError::Config("cutoffs must be a non-empty list of positive integers".into()));
        }
        if let Some(names) = &self.modality_names {
            if names.len() != self.feature_files.len() {
                return Err(LatticeError::Config(format!(
                    "{} modality names for {} feature files",
                    names.len(),
                    self.feature_files.len()
                )));
            }
            let unique: HashSet<&String> = names.iter().collect();
            if unique.len() != names.len() {
                return Err(LatticeError::Config("modality names must be distinct".into()));
            }
        }
        if self.model.variant != crate::model::Variant::Base && self.feature_files.is_empty() {
            return Err(LatticeError::Config(format!(
                "variant {:?} needs at least one entry in feature_files",
                self.model.variant
            )));
        }
        Ok(())
    }

    /// Errors unless every input file exists.
    pub fn check_files(&self) -> Result<()> {
        let inputs = std::iter::once(&self.interactions).chain(&self.feature_files);
        for p in inputs {
            let resolved = self.resolve(p);
            if !resolved.is_file() {
                return Err(LatticeError::Config(format!(
                    "referenced file {} does not exist",
                    resolved.display()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn interactions_path(&self) -> PathBuf {
        self.resolve(&self.interactions)
    }

    pub fn feature_paths(&self) -> Vec<PathBuf> {
        self.feature_files.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn out_path(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    /// Every key with its effective value, paths as written.
    pub fn canonical(&self) -> BTreeMap<String, Value> {
        let m = &self.model;
        let t = &self.train;
        let pairs = [
            ("interactions", json!(self.interactions)),
            ("feature_files", json!(self.feature_files)),
            ("modality_names", json!(self.modality_names)),
            ("out_dir", json!(self.out_dir)),
            ("split_mode", json!(self.split_mode)),
            ("split_seed", json!(self.split_seed)),
            ("item_fraction", json!(self.item_fraction)),
            ("backend", json!(m.backend)),
            ("variant", json!(m.variant)),
            ("item_layers", json!(m.item_layers)),
            ("cf_layers", json!(m.cf_layers)),
            ("k", json!(m.k)),
            ("lambda", json!(m.lambda)),
            ("embed_dim", json!(m.embed_dim)),
            ("feat_dim", json!(m.feat_dim)),
            ("learning_rate", json!(t.learning_rate)),
            ("l2_coeff", json!(t.l2_coeff)),
            ("batch_size", json!(t.batch_size)),
            ("max_epochs", json!(t.max_epochs)),
            ("patience", json!(t.patience)),
            ("seed", json!(t.seed)),
            ("graph_refresh", json!(t.graph_refresh)),
            ("cutoffs", json!(self.cutoffs)),
            ("dump_graphs", json!(self.dump_graphs)),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON, excluding
    /// `out_dir` and `cutoffs` so that outputs of the same model agree.
    pub fn digest(&self) -> String {
        let mut c = self.canonical();
        c.remove("out_dir");
        c.remove("cutoffs");
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
    }

    /// Renders the config back to the flat file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.canonical() {
            if v.is_null() {
                continue;
            }
            out.push_str(&format!("{} = {}\n", k, v));
        }
        out
    }
}
