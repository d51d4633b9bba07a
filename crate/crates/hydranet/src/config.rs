//! Run configuration: a TOML document with sections `data`, `model`, `loss`,
//! `train`, `forecast` and `eval`, checked against [`SCHEMA`] before use.

use std::path::{Path, PathBuf};

use hydranet_core::losses::LossConfig;
use hydranet_core::model::ModelConfig;
use hydranet_core::sampler::{CurriculumSchedule, SamplerConfig};
use hydranet_core::trainer::TrainConfig;
use hydranet_core::volume::{PartitionName, PartitionScheme, ZStackVolume};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};

/// Prefix of environment overrides: `HYDRANET__TRAIN__SEED=7` sets `train.seed`.
pub const ENV_PREFIX: &str = "HYDRANET__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub patch_size: usize,
    pub temporal_crop: Option<usize>,
    pub curriculum: CurriculumSchedule,
    pub partition: PartitionName,
    /// Custom partition bounds; unset means the first or last month of the volume.
    pub first_month_id: Option<u32>,
    pub last_month_id: Option<u32>,
    pub test_months: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        DataConfig {
            patch_size: s.patch_size,
            temporal_crop: s.temporal_crop,
            curriculum: s.curriculum,
            partition: PartitionName::Custom,
            first_month_id: None,
            last_month_id: None,
            test_months: 36,
        }
    }
}

impl DataConfig {
    pub fn sampler(&self, epochs: usize) -> SamplerConfig {
        SamplerConfig {
            patch_size: self.patch_size,
            temporal_crop: self.temporal_crop,
            curriculum: self.curriculum.with_total_epochs(epochs),
        }
    }

    pub fn scheme(&self, volume: &ZStackVolume) -> Result<PartitionScheme> {
        let ids = volume.month_ids();
        let scheme = match self.partition {
            PartitionName::Calibration => PartitionScheme { test_months: self.test_months, ..PartitionScheme::calibration() },
            PartitionName::Validation => PartitionScheme { test_months: self.test_months, ..PartitionScheme::validation() },
            PartitionName::Custom => PartitionScheme::custom(
                self.first_month_id.or(ids.first().copied()).unwrap_or(0),
                self.last_month_id.or(ids.last().copied()).unwrap_or(0),
                self.test_months,
            )?,
        };
        Ok(scheme)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    pub quantiles: Vec<f64>,
    /// Dropout used while sampling; unset keeps the trained rate.
    pub dropout_rate: Option<f64>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig { horizon: 36, samples: 128, seed: 0, quantiles: vec![0.05, 0.5, 0.95], dropout_rate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mask: Option<PathBuf>,
    pub plots: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { mask: None, plots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub forecast: ForecastConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Int,
    Float,
    Bool,
    Str,
    Choice(&'static [&'static str]),
    FloatList,
}

impl ValueKind {
    fn describe(self) -> String {
        match self {
            ValueKind::Int => "non-negative integer".into(),
            ValueKind::Float => "number".into(),
            ValueKind::Bool => "boolean".into(),
            ValueKind::Str => "string".into(),
            ValueKind::Choice(c) => format!("one of {}", c.join("|")),
            ValueKind::FloatList => "list of numbers".into(),
        }
    }

    fn accepts(self, v: &Value) -> bool {
        match (self, v) {
            (ValueKind::Int, Value::Integer(i)) => *i >= 0,
            (ValueKind::Float, Value::Float(_) | Value::Integer(_)) => true,
            (ValueKind::Bool, Value::Boolean(_)) => true,
            (ValueKind::Str, Value::String(_)) => true,
            (ValueKind::Choice(c), Value::String(s)) => c.contains(&s.as_str()),
            (ValueKind::FloatList, Value::Array(a)) => a.iter().all(|x| matches!(x, Value::Float(_) | Value::Integer(_))),
            _ => false,
        }
    }
}

pub struct KeySpec {
    pub path: &'static str,
    pub kind: ValueKind,
    /// Whether the key may be left unset.
    pub optional: bool,
    pub doc: &'static str,
}

const fn key(path: &'static str, kind: ValueKind, doc: &'static str) -> KeySpec {
    KeySpec { path, kind, optional: false, doc }
}

const fn opt(path: &'static str, kind: ValueKind, doc: &'static str) -> KeySpec {
    KeySpec { path, kind, optional: true, doc }
}

use ValueKind::*;

pub const SCHEMA: &[KeySpec] = &[
    key("data.patch_size", Int, "spatial patch side in cells"),
    opt("data.temporal_crop", Int, "random training window in months; unset trains on the full span"),
    key("data.curriculum.p_start", Float, "probability of an active-region patch at epoch 0"),
    key("data.curriculum.p_end", Float, "probability of an active-region patch after the ramp"),
    opt("data.curriculum.ramp_epochs", Int, "epochs of the linear ramp; unset means train.epochs"),
    key("data.partition", Choice(&["calibration", "validation", "custom"]), "month range to split"),
    opt("data.first_month_id", Int, "first month of a custom partition; unset means the volume start"),
    opt("data.last_month_id", Int, "last month of a custom partition; unset means the volume end"),
    key("data.test_months", Int, "trailing months held out from training"),
    key("model.levels", Int, "encoder/decoder depth"),
    key("model.base_filters", Int, "filters at the top level, doubled per level"),
    key("model.kernel_size", Int, "odd convolution kernel side"),
    key("model.dropout_rate", Float, "dropout probability in training and sampling"),
    key("model.lstm_levels", Choice(&["bottleneck_only", "all_levels"]), "levels carrying a ConvLSTM"),
    key("model.input_channels", Int, "input magnitude channels"),
    key("model.heads", Int, "output heads"),
    key("loss.focal_alpha", Float, "focal loss positive-class weight"),
    key("loss.focal_gamma", Float, "focal loss focusing exponent"),
    key("loss.shrink_a", Float, "shrinkage loss sharpness"),
    key("loss.shrink_c", Float, "shrinkage loss threshold"),
    key("loss.shrink_weighted", Bool, "weight shrinkage loss by exp(target)"),
    key("loss.eps", Float, "probability clamp in the focal loss"),
    key("train.epochs", Int, "training epochs"),
    key("train.batches_per_epoch", Int, "optimizer steps per epoch"),
    key("train.batch_size", Int, "patch sequences per step"),
    key("train.learning_rate", Float, "optimizer step size"),
    key("train.optimizer", Choice(&["adam_like", "sgd"]), "update rule"),
    key("train.seed", Int, "RNG seed for initialization and sampling (required)"),
    key("train.checkpoint_every", Int, "epochs between checkpoints"),
    key("train.grad_clip", Float, "global gradient-norm ceiling; 0 disables"),
    key("forecast.horizon", Int, "months to forecast"),
    key("forecast.samples", Int, "posterior samples per cell"),
    key("forecast.seed", Int, "RNG seed for dropout sampling"),
    key("forecast.quantiles", FloatList, "quantiles stored in the forecast summary"),
    opt("forecast.dropout_rate", Float, "dropout while sampling; unset keeps model.dropout_rate"),
    opt("eval.mask", Str, "row,col include-list restricting scored cells"),
    key("eval.plots", Bool, "write one metric plot per task"),
];

pub const REQUIRED: &[&str] = &["train.seed"];

fn lookup<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Sets a dotted key, creating intermediate tables.
pub fn set_path(table: &mut Table, path: &str, value: Value) {
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().expect("non-empty path");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        if !entry.is_table() {
            *entry = Value::Table(Table::new());
        }
        cur = entry.as_table_mut().unwrap();
    }
    cur.insert(leaf.to_string(), value);
}

fn is_section(prefix: &str) -> bool {
    SCHEMA.iter().any(|k| k.path.starts_with(prefix) && k.path.as_bytes().get(prefix.len()) == Some(&b'.'))
}

fn check_table(table: &Table, prefix: &str, errors: &mut Vec<String>) {
    for (name, value) in table {
        let path = if prefix.is_empty() { name.clone() } else { format!("{prefix}.{name}") };
        if let Some(spec) = SCHEMA.iter().find(|k| k.path == path) {
            if !spec.kind.accepts(value) {
                errors.push(format!("`{path}`: expected {}, found {}", spec.kind.describe(), value));
            }
        } else if is_section(&path) {
            match value {
                Value::Table(t) => check_table(t, &path, errors),
                other => errors.push(format!("`{path}`: expected a table, found {other}")),
            }
        } else {
            errors.push(format!("unknown key `{path}`"));
        }
    }
}

/// Reports every unknown key, mistyped value and missing required key.
pub fn check_schema(table: &Table) -> Vec<String> {
    let mut errors = Vec::new();
    check_table(table, "", &mut errors);
    for r in REQUIRED {
        if lookup(table, r).is_none() {
            errors.push(format!("`{r}` is required"));
        }
    }
    errors
}

/// Parses an override value as a TOML literal, falling back to a bare string.
pub fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `HYDRANET__SECTION__KEY` variables; returns the keys set.
pub fn apply_env<I: IntoIterator<Item = (String, String)>>(table: &mut Table, vars: I) -> Vec<String> {
    let mut applied = Vec::new();
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        let path = rest.split("__").map(str::to_ascii_lowercase).collect::<Vec<_>>().join(".");
        set_path(table, &path, parse_literal(&raw));
        applied.push(path);
    }
    applied
}

impl RunConfig {
    /// Schema-checks and validates a raw document, collecting every problem.
    pub fn from_table(table: Table) -> Result<RunConfig> {
        let errors = check_schema(&table);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let errors = cfg.problems();
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Table> {
        text.parse::<Table>().map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1) as u64);
            Error::Parse { path: path.to_path_buf(), line, message: e.message().to_string() }
        })
    }

    pub fn read_table(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_table(&self) -> Table {
        match Value::try_from(self).expect("config serializes") {
            Value::Table(t) => t,
            _ => unreachable!("config serializes to a table"),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Semantic checks beyond types, all collected.
    pub fn problems(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let mut check = |section: &str, r: hydranet_core::Result<()>| {
            if let Err(e) = r {
                errors.push(format!("{section}: {e}"));
            }
        };
        check("model", self.model.validate());
        check("loss", self.loss.validate());
        check("train", self.train.validate());
        check("data", self.data.curriculum.validate());
        let d = self.model.spatial_divisor();
        if self.data.patch_size == 0 || self.data.patch_size % d != 0 {
            errors.push(format!("data.patch_size must be a positive multiple of {d}, got {}", self.data.patch_size));
        }
        if self.data.temporal_crop.is_some_and(|c| c < 2) {
            errors.push("data.temporal_crop must be at least 2".into());
        }
        let f = &self.forecast;
        if f.horizon == 0 || f.samples == 0 {
            errors.push("forecast.horizon and forecast.samples must be positive".into());
        }
        if f.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            errors.push(format!("forecast.quantiles must lie in [0, 1], got {:?}", f.quantiles));
        }
        if f.dropout_rate.is_some_and(|p| !(0.0..1.0).contains(&p)) {
            errors.push("forecast.dropout_rate must be in [0, 1)".into());
        }
        errors
    }
}

/// Every key with its type, default and description, for `--help`.
pub fn schema_help() -> String {
    let defaults = RunConfig::default().to_table();
    let mut out = String::from("Configuration keys (TOML sections; override with HYDRANET__SECTION__KEY=value):\n");
    for k in SCHEMA {
        let default = if REQUIRED.contains(&k.path) {
            "<required>".to_string()
        } else {
            lookup(&defaults, k.path).map_or_else(|| "<unset>".to_string(), Value::to_string)
        };
        out.push_str(&format!("  {:<30} = {:<20} {} ({})\n", k.path, default, k.doc, k.kind.describe()));
    }
    out
}
