//! Experiment configuration: JSON file plus `key=value` overrides.
//!
//! Parsing is done key by key so every error names the key at fault.
//! Unknown keys are rejected. `{}` resolves to the default recipe.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::data::{generate_synthetic, load_feature_file, Dataset, ShiftLevel, SyntheticSpec};
use crate::error::{Error, Result};
use crate::graph_head::{GraphHeadConfig, NegativeRows};
use crate::model::{ModelConfig, ModelVariant};
use crate::objectives::LossWeights;

/// Synthetic benchmark settings; domain and class counts come from the
/// top-level config.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub shift_level: ShiftLevel,
    pub shift_scale: f64,
    pub class_sep: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            samples_per_class: s.samples_per_class_per_domain,
            input_dim: s.input_dim,
            shift_level: s.shift_level,
            shift_scale: s.shift_scale,
            class_sep: s.class_sep,
            noise: s.noise,
            seed: s.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticData),
    /// A feature file; the target defaults to the last domain.
    File { path: PathBuf, target_domain: Option<usize> },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticData::default())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub variant: ModelVariant,
    pub n_domains: usize,
    pub n_classes: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub gcn_layers: usize,
    pub sigma: f64,
    pub add_self_loops: bool,
    pub init_scale: f64,
    pub s_val: f64,
    pub negative_rows: NegativeRows,
    pub weights: LossWeights,
    pub mask_ratio: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub source_share: Option<f64>,
    pub seed: u64,
    pub extractor_hidden: Vec<usize>,
    pub freeze_prototypes: bool,
    pub drop_tgt_loss: bool,
    pub drop_ss_loss: bool,
    /// Epochs at the start during which the target-entropy term is dropped.
    pub tgt_warmup_epochs: usize,
    pub data: DataSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let g = GraphHeadConfig::default();
        Self {
            variant: ModelVariant::Ssg,
            n_domains: g.n_domains,
            n_classes: g.n_classes,
            embed_dim: g.embed_dim,
            feature_dim: g.feature_dim,
            gcn_layers: g.layers,
            sigma: g.sigma,
            add_self_loops: g.add_self_loops,
            init_scale: g.init_scale,
            s_val: g.s_val,
            negative_rows: g.negatives,
            weights: LossWeights::default(),
            mask_ratio: 0.95,
            lr: 1e-4,
            epochs: 50,
            batch_size: 32,
            source_share: None,
            seed: 0,
            extractor_hidden: vec![64],
            freeze_prototypes: true,
            drop_tgt_loss: false,
            drop_ss_loss: false,
            tgt_warmup_epochs: 0,
            data: DataSource::default(),
        }
    }
}

const SYNTHETIC_KEYS: &[&str] = &[
    "samples_per_class",
    "input_dim",
    "shift_level",
    "shift_scale",
    "class_sep",
    "noise",
    "seed",
];
const FILE_KEYS: &[&str] = &["path", "target_domain"];

fn type_err(key: &str, expected: &str, v: &Value) -> Error {
    Error::config(key, format!("expected {expected}, got {v}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| type_err(key, "a number", v))
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    v.as_u64().ok_or_else(|| type_err(key, "a non-negative integer", v))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    let n = as_u64(key, v)?;
    usize::try_from(n).map_err(|_| type_err(key, "an integer in range", v))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| type_err(key, "true or false", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| type_err(key, "a string", v))
}

impl ExperimentConfig {
    /// Parses a whole config object on top of the defaults.
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::config("<root>", "config must be a JSON object"))?;
        let mut cfg = Self::default();
        for (key, v) in obj {
            cfg.set(key, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key. Dotted `data.<field>` keys reach into the data block.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        if let Some(field) = key.strip_prefix("data.") {
            return self.set_data_field(key, field, v);
        }
        match key {
            "variant" => {
                self.variant = as_str(key, v)?.parse().map_err(|e: String| Error::config(key, e))?;
            }
            "n_domains" => self.n_domains = as_usize(key, v)?,
            "n_classes" => self.n_classes = as_usize(key, v)?,
            "embed_dim" => self.embed_dim = as_usize(key, v)?,
            "feature_dim" => self.feature_dim = as_usize(key, v)?,
            "gcn_layers" => self.gcn_layers = as_usize(key, v)?,
            "sigma" => self.sigma = as_f64(key, v)?,
            "add_self_loops" => self.add_self_loops = as_bool(key, v)?,
            "init_scale" => self.init_scale = as_f64(key, v)?,
            "s_val" => self.s_val = as_f64(key, v)?,
            "negative_rows" => {
                self.negative_rows = match as_str(key, v)? {
                    "all" => NegativeRows::All,
                    "sampled" => NegativeRows::Sampled,
                    other => return Err(Error::config(key, format!("unknown value `{other}` (all, sampled)"))),
                }
            }
            "alpha1" => self.weights.alpha1 = as_f64(key, v)?,
            "alpha2" => self.weights.alpha2 = as_f64(key, v)?,
            "lambda" => self.weights.lambda = as_f64(key, v)?,
            "mask_ratio" => self.mask_ratio = as_f64(key, v)?,
            "lr" => self.lr = as_f64(key, v)?,
            "epochs" => self.epochs = as_usize(key, v)?,
            "batch_size" => self.batch_size = as_usize(key, v)?,
            "source_share" => {
                self.source_share = if v.is_null() { None } else { Some(as_f64(key, v)?) };
            }
            "seed" => self.seed = as_u64(key, v)?,
            "extractor_hidden" => {
                let arr = v.as_array().ok_or_else(|| type_err(key, "an array of widths", v))?;
                self.extractor_hidden = arr.iter().map(|w| as_usize(key, w)).collect::<Result<_>>()?;
            }
            "freeze_prototypes" => self.freeze_prototypes = as_bool(key, v)?,
            "drop_tgt_loss" => self.drop_tgt_loss = as_bool(key, v)?,
            "drop_ss_loss" => self.drop_ss_loss = as_bool(key, v)?,
            "tgt_warmup_epochs" => self.tgt_warmup_epochs = as_usize(key, v)?,
            "data" => self.data = parse_data(v)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    fn set_data_field(&mut self, key: &str, field: &str, v: &Value) -> Result<()> {
        match &mut self.data {
            DataSource::Synthetic(s) => set_synthetic_field(s, key, field, v),
            DataSource::File { path, target_domain } => match field {
                "path" => {
                    *path = PathBuf::from(as_str(key, v)?);
                    Ok(())
                }
                "target_domain" => {
                    *target_domain = if v.is_null() { None } else { Some(as_usize(key, v)?) };
                    Ok(())
                }
                _ => Err(Error::config(key, "unknown key for feature-file data")),
            },
        }
    }

    /// Applies `key=value` overrides in order; later ones win. Values are
    /// read as JSON, falling back to a bare string.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o, "override must look like key=value"))?;
            let key = key.trim();
            let v = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            self.set(key, &v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.graph_config().validate()?;
        self.weights.validate()?;
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::config("mask_ratio", format!("must be in [0, 1], got {}", self.mask_ratio)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be finite and >= 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if let Some(s) = self.source_share {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::config("source_share", format!("must be in (0, 1], got {s}")));
            }
        }
        if self.extractor_hidden.contains(&0) {
            return Err(Error::config("extractor_hidden", "layer widths must be positive"));
        }
        if self.variant == ModelVariant::SsgPrototype && self.embed_dim != self.feature_dim {
            return Err(Error::config(
                "embed_dim",
                format!(
                    "the prototype variant needs embed_dim == feature_dim ({} != {})",
                    self.embed_dim, self.feature_dim
                ),
            ));
        }
        match &self.data {
            DataSource::Synthetic(_) => self.synthetic_spec().expect("synthetic data").validate(),
            DataSource::File { target_domain, .. } => match target_domain {
                Some(t) if *t >= self.n_domains => Err(Error::config(
                    "data.target_domain",
                    format!("must be below n_domains ({})", self.n_domains),
                )),
                _ => Ok(()),
            },
        }
    }

    /// Mask ratio actually used in training; the no-mask variant never reveals.
    pub fn effective_mask_ratio(&self) -> f64 {
        if self.variant == ModelVariant::SsgNoMask {
            1.0
        } else {
            self.mask_ratio
        }
    }

    pub fn graph_config(&self) -> GraphHeadConfig {
        GraphHeadConfig {
            n_domains: self.n_domains,
            n_classes: self.n_classes,
            embed_dim: self.embed_dim,
            feature_dim: self.feature_dim,
            layers: self.gcn_layers,
            sigma: self.sigma,
            add_self_loops: self.add_self_loops,
            init_scale: self.init_scale,
            s_val: self.s_val,
            negatives: self.negative_rows,
        }
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            input_dim,
            extractor_hidden: self.extractor_hidden.clone(),
            graph: self.graph_config(),
            freeze_prototypes: self.freeze_prototypes,
        }
    }

    /// `None` when the data comes from a file.
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match &self.data {
            DataSource::Synthetic(s) => Some(SyntheticSpec {
                n_domains: self.n_domains,
                n_classes: self.n_classes,
                samples_per_class_per_domain: s.samples_per_class,
                input_dim: s.input_dim,
                shift_level: s.shift_level,
                shift_scale: s.shift_scale,
                class_sep: s.class_sep,
                noise: s.noise,
                seed: s.seed,
            }),
            DataSource::File { .. } => None,
        }
    }

    /// Generates or loads the dataset and checks it against the config.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let ds = match &self.data {
            DataSource::Synthetic(_) => {
                let spec = self.synthetic_spec().expect("synthetic data");
                generate_synthetic(&spec)?
            }
            DataSource::File { path, target_domain } => {
                let file = load_feature_file(path)?;
                let target = target_domain.unwrap_or(file.n_domains.saturating_sub(1));
                file.into_dataset(target)?
            }
        };
        if ds.n_domains() != self.n_domains {
            return Err(Error::config(
                "n_domains",
                format!("config says {}, data has {}", self.n_domains, ds.n_domains()),
            ));
        }
        if ds.n_classes() != self.n_classes {
            return Err(Error::config(
                "n_classes",
                format!("config says {}, data has {}", self.n_classes, ds.n_classes()),
            ));
        }
        Ok(ds)
    }

    /// The fully resolved config; parsing it back gives an equal config.
    pub fn to_json(&self) -> Value {
        let data = match &self.data {
            DataSource::Synthetic(s) => json!({
                "samples_per_class": s.samples_per_class,
                "input_dim": s.input_dim,
                "shift_level": shift_name(s.shift_level),
                "shift_scale": s.shift_scale,
                "class_sep": s.class_sep,
                "noise": s.noise,
                "seed": s.seed,
            }),
            DataSource::File { path, target_domain } => json!({
                "path": path.to_string_lossy(),
                "target_domain": target_domain,
            }),
        };
        json!({
            "variant": self.variant.name(),
            "n_domains": self.n_domains,
            "n_classes": self.n_classes,
            "embed_dim": self.embed_dim,
            "feature_dim": self.feature_dim,
            "gcn_layers": self.gcn_layers,
            "sigma": self.sigma,
            "add_self_loops": self.add_self_loops,
            "init_scale": self.init_scale,
            "s_val": self.s_val,
            "negative_rows": match self.negative_rows {
                NegativeRows::All => "all",
                NegativeRows::Sampled => "sampled",
            },
            "alpha1": self.weights.alpha1,
            "alpha2": self.weights.alpha2,
            "lambda": self.weights.lambda,
            "mask_ratio": self.mask_ratio,
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "source_share": self.source_share,
            "seed": self.seed,
            "extractor_hidden": self.extractor_hidden,
            "freeze_prototypes": self.freeze_prototypes,
            "drop_tgt_loss": self.drop_tgt_loss,
            "drop_ss_loss": self.drop_ss_loss,
            "tgt_warmup_epochs": self.tgt_warmup_epochs,
            "data": data,
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("config serializes");
        s.push('\n');
        s
    }
}

fn shift_name(level: ShiftLevel) -> &'static str {
    match level {
        ShiftLevel::Low => "low",
        ShiftLevel::Medium => "medium",
        ShiftLevel::High => "high",
    }
}

fn set_synthetic_field(s: &mut SyntheticData, key: &str, field: &str, v: &Value) -> Result<()> {
    match field {
        "samples_per_class" => s.samples_per_class = as_usize(key, v)?,
        "input_dim" => s.input_dim = as_usize(key, v)?,
        "shift_level" => s.shift_level = as_str(key, v)?.parse().map_err(|e: String| Error::config(key, e))?,
        "shift_scale" => s.shift_scale = as_f64(key, v)?,
        "class_sep" => s.class_sep = as_f64(key, v)?,
        "noise" => s.noise = as_f64(key, v)?,
        "seed" => s.seed = as_u64(key, v)?,
        _ => return Err(Error::config(key, "unknown key for synthetic data")),
    }
    Ok(())
}

/// `"path"`, `{"path": .., "target_domain": ..}`, or a synthetic block.
fn parse_data(v: &Value) -> Result<DataSource> {
    if let Some(path) = v.as_str() {
        return Ok(DataSource::File {
            path: PathBuf::from(path),
            target_domain: None,
        });
    }
    let obj: &Map<String, Value> = v
        .as_object()
        .ok_or_else(|| type_err("data", "a path string or an object", v))?;
    if obj.contains_key("path") {
        let mut source = DataSource::File {
            path: PathBuf::new(),
            target_domain: None,
        };
        for (field, fv) in obj {
            let key = format!("data.{field}");
            if !FILE_KEYS.contains(&field.as_str()) {
                return Err(Error::config(&key, "unknown key for feature-file data"));
            }
            if let DataSource::File { path, target_domain } = &mut source {
                match field.as_str() {
                    "path" => *path = PathBuf::from(as_str(&key, fv)?),
                    _ => *target_domain = if fv.is_null() { None } else { Some(as_usize(&key, fv)?) },
                }
            }
        }
        return Ok(source);
    }
    let mut s = SyntheticData::default();
    for (field, fv) in obj {
        let key = format!("data.{field}");
        if !SYNTHETIC_KEYS.contains(&field.as_str()) {
            return Err(Error::config(&key, "unknown key for synthetic data"));
        }
        set_synthetic_field(&mut s, &key, field, fv)?;
    }
    Ok(DataSource::Synthetic(s))
}

/// Reads `path` (if given) and applies `overrides` last.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config {
                key: "<file>".into(),
                detail: format!("{}: invalid JSON: {e}", p.display()),
            })?;
            ExperimentConfig::from_json(&value)?
        }
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}
