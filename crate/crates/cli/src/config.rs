//! Run configuration: defaults, then a TOML file, then command-line
//! overrides, each layer replacing keys of the one before.

use std::fmt;
use std::path::{Path, PathBuf};

use acdl::data::{ClassNames, EnhanceParams};
use acdl::gan::{GanTrainConfig, LatentSpec};
use acdl::optim::{AdamConfig, GanLoss};
use acdl::train::TrainConfig;
use acdl::{Architecture, ImageSpec, VitConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Cnn,
    Ftcnn,
    Vit,
}

impl ModelKind {
    pub fn default_lr(self) -> f64 {
        match self {
            ModelKind::Vit => 3e-4,
            _ => 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Unset means the model's default rate.
    pub lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 50,
            batch_size: 32,
            lr: None,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitSection {
    pub patch: usize,
    pub projection_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
}

impl Default for VitSection {
    fn default() -> Self {
        let v = VitConfig::default();
        Self {
            patch: v.patch_size,
            projection_dim: v.projection_dim,
            heads: v.heads,
            layers: v.transformer_layers,
            mlp_hidden: v.mlp_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub loss: GanLoss,
    pub latent_dim: usize,
    pub report_interval: usize,
    pub save_interval: usize,
    /// Generated images merged into each class by `augment`.
    pub per_class: usize,
}

impl Default for GanSection {
    fn default() -> Self {
        let g = GanTrainConfig::default();
        Self {
            epochs: g.epochs,
            batch_size: g.batch_size,
            lr: g.adam.lr,
            beta1: g.adam.beta1,
            loss: g.loss,
            latent_dim: g.latent.dim,
            report_interval: g.report_interval,
            save_interval: g.save_interval,
            per_class: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub n_per_class: usize,
    pub size: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { n_per_class: 64, size: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset root.
    pub data: PathBuf,
    /// Run output directory; empty means `runs/<timestamp>-seed<seed>`.
    pub out: String,
    pub model: ModelKind,
    /// Square input side fed to the classifier.
    pub input: usize,
    pub classes: [String; 2],
    pub train: TrainSection,
    pub vit: VitSection,
    pub gan: GanSection,
    pub enhance: EnhanceParams,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: PathBuf::from("data"),
            out: String::new(),
            model: ModelKind::Cnn,
            input: 64,
            classes: ClassNames::default().0,
            train: TrainSection::default(),
            vit: VitSection::default(),
            gan: GanSection::default(),
            enhance: EnhanceParams::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Accepted keys, as dotted paths.
const TOP_KEYS: &[&str] = &["seed", "data", "out", "model", "input", "classes"];
const SECTIONS: &[(&str, &[&str])] = &[
    ("train", &["epochs", "batch_size", "lr", "beta1", "beta2", "eps"]),
    ("vit", &["patch", "projection_dim", "heads", "layers", "mlp_hidden"]),
    (
        "gan",
        &[
            "epochs",
            "batch_size",
            "lr",
            "beta1",
            "loss",
            "latent_dim",
            "report_interval",
            "save_interval",
            "per_class",
        ],
    ),
    ("enhance", &["saturation_gain", "contrast_gain", "brightness_offset"]),
    ("synth", &["n_per_class", "size"]),
];

pub fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = TOP_KEYS.iter().map(|k| k.to_string()).collect();
    for (section, fields) in SECTIONS {
        keys.extend(fields.iter().map(|f| format!("{section}.{f}")));
    }
    keys
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Read { path: PathBuf, message: String },
    Parse { source: String, line: Option<usize>, message: String },
    UnknownKey { key: String, suggestion: Option<String> },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Read { path, message } => write!(f, "cannot read config {}: {message}", path.display()),
            ConfigError::Parse { source, line: Some(line), message } => {
                write!(f, "{source}: parse error at line {line}: {message}")
            }
            ConfigError::Parse { source, line: None, message } => write!(f, "{source}: {message}"),
            ConfigError::UnknownKey { key, suggestion: Some(s) } => {
                write!(f, "unknown config key \"{key}\" (did you mean \"{s}\"?)")
            }
            ConfigError::UnknownKey { key, suggestion: None } => write!(f, "unknown config key \"{key}\""),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Closest known key to `key`, compared both as a dotted path and by its
/// last segment. Ties go to the earlier key.
fn suggest(key: &str) -> Option<String> {
    let leaf = key.rsplit('.').next().unwrap_or(key);
    known_keys()
        .into_iter()
        .map(|k| {
            let k_leaf = k.rsplit('.').next().unwrap_or(&k).to_string();
            let score = strsim::jaro_winkler(key, &k).max(strsim::jaro_winkler(leaf, &k_leaf));
            (score, k)
        })
        .filter(|(score, _)| *score >= 0.7)
        .fold(None, |best: Option<(f64, String)>, (score, k)| match best {
            Some((b, _)) if b >= score => best,
            _ => Some((score, k)),
        })
        .map(|(_, k)| k)
}

fn check_keys(table: &Table) -> Result<(), ConfigError> {
    let unknown = |key: String| ConfigError::UnknownKey {
        suggestion: suggest(&key),
        key,
    };
    for (key, value) in table {
        if TOP_KEYS.contains(&key.as_str()) {
            continue;
        }
        let Some((_, fields)) = SECTIONS.iter().find(|(s, _)| s == key) else {
            return Err(unknown(key.clone()));
        };
        let Value::Table(inner) = value else {
            return Err(ConfigError::Invalid(format!("\"{key}\" must be a table")));
        };
        for field in inner.keys() {
            if !fields.contains(&field.as_str()) {
                return Err(unknown(format!("{key}.{field}")));
            }
        }
    }
    Ok(())
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_table(text: &str, source: &str) -> Result<Table, ConfigError> {
    text.parse::<Table>().map_err(|e| ConfigError::Parse {
        source: source.to_string(),
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })
}

/// Parses one `key=value` override. The value is read as TOML, falling back
/// to a bare string.
pub fn parse_override(item: &str) -> Result<(String, Value), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("override \"{item}\" is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), ConfigError> {
    match key.split_once('.') {
        None => {
            table.insert(key.to_string(), value);
            Ok(())
        }
        Some((head, rest)) => {
            let entry = table
                .entry(head.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(inner) => set_path(inner, rest, value),
                _ => Err(ConfigError::Invalid(format!("\"{head}\" is not a table"))),
            }
        }
    }
}

/// Defaults, overlaid by the file at `path` (if any), overlaid by
/// `overrides` in order.
pub fn load_config(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig, ConfigError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?;
            parse_table(&text, &p.display().to_string())?
        }
        None => Table::new(),
    };
    check_keys(&table)?;
    for (key, value) in overrides {
        set_path(&mut table, key, value.clone())?;
    }
    check_keys(&table)?;
    let config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.input == 0 {
            return bad("input must be positive".into());
        }
        if self.classes[0] == self.classes[1] || self.classes.iter().any(String::is_empty) {
            return bad(format!("class names must be distinct and non-empty: {:?}", self.classes));
        }
        if let Some(lr) = self.train.lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("train.lr must be non-negative, got {lr}"));
            }
        }
        self.train_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gan_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.enhance.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.model == ModelKind::Vit {
            self.vit_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Copy with every optional field filled in, as echoed into run
    /// directories.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.lr = Some(self.lr());
        c
    }

    pub fn lr(&self) -> f64 {
        self.train.lr.unwrap_or(self.model.default_lr())
    }

    pub fn class_names(&self) -> ClassNames {
        ClassNames(self.classes.clone())
    }

    pub fn image_spec(&self) -> ImageSpec {
        ImageSpec::square(self.input)
    }

    pub fn vit_config(&self) -> VitConfig {
        VitConfig {
            input: self.image_spec(),
            patch_size: self.vit.patch,
            projection_dim: self.vit.projection_dim,
            heads: self.vit.heads,
            transformer_layers: self.vit.layers,
            mlp_hidden: self.vit.mlp_hidden,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self.model {
            ModelKind::Cnn => Architecture::Cnn { input: self.image_spec() },
            ModelKind::Ftcnn => Architecture::Ftcnn { input: self.image_spec() },
            ModelKind::Vit => Architecture::Vit(self.vit_config()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            adam: AdamConfig {
                lr: self.lr(),
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                eps: self.train.eps,
            },
            seed: self.seed,
        }
    }

    pub fn gan_config(&self) -> GanTrainConfig {
        let g = &self.gan;
        GanTrainConfig {
            batch_size: g.batch_size,
            epochs: g.epochs,
            loss: g.loss,
            adam: AdamConfig {
                lr: g.lr,
                beta1: g.beta1,
                ..AdamConfig::gan()
            },
            report_interval: g.report_interval,
            save_interval: g.save_interval,
            seed: self.seed,
            latent: LatentSpec {
                dim: g.latent_dim,
                ..LatentSpec::default()
            },
            verify_freeze: false,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.resolved()).expect("config serializes")
    }
}
