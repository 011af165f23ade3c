//! Flat TOML experiment configuration.
//!
//! Every key is optional except `schema_version`; missing keys take the
//! defaults below. Parsing never stops at the first problem: unknown keys,
//! type mismatches and out-of-range values are all collected and reported
//! together.

use std::fmt;
use std::path::{Path, PathBuf};

use comet_core::backbones::{FlowConfig, InputTransform, SimpleNetConfig};
use comet_core::data::{AnomalyKind, GeneratorConfig, NominalKind};
use comet_core::meta::{Ablation, BackboneKind, OuterGranularity, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "COMET_SEED";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn issue(key: &str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        key: key.to_string(),
        message: message.into(),
    }
}

/// One of the five training configurations compared by the ablation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    NoMl,
    NoSclDataModel,
    NoSclData,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::NoMl,
        Variant::NoSclDataModel,
        Variant::NoSclData,
        Variant::Full,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::NoMl => "no-ml",
            Variant::NoSclDataModel => "no-scl-data-model",
            Variant::NoSclData => "no-scl-data",
            Variant::Full => "full",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Baseline => "CoMet w/o SCL and ML (baseline)",
            Variant::NoMl => "CoMet w/o ML",
            Variant::NoSclDataModel => "CoMet w/o SCL on Data & Model",
            Variant::NoSclData => "CoMet w/o SCL on Data",
            Variant::Full => "CoMet (full)",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.key() == s)
    }

    pub fn ablation(&self) -> Ablation {
        let (disable_ml, disable_scl_data, disable_scl_model) = match self {
            Variant::Baseline => (true, true, true),
            Variant::NoMl => (true, false, false),
            Variant::NoSclDataModel => (false, true, true),
            Variant::NoSclData => (false, true, false),
            Variant::Full => (false, false, false),
        };
        Ablation {
            disable_ml,
            disable_scl_data,
            disable_scl_model,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Test-time input transforms averaged by the flow score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformName {
    Identity,
    Negate,
    Reverse,
}

impl TransformName {
    const ALLOWED: &'static [&'static str] = &["identity", "negate", "reverse"];

    fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Self::Identity),
            "negate" => Some(Self::Negate),
            "reverse" => Some(Self::Reverse),
            _ => None,
        }
    }

    pub fn build(&self, dim: usize) -> InputTransform {
        match self {
            Self::Identity => InputTransform::Identity,
            Self::Negate => InputTransform::SignFlip { flips: vec![true; dim] },
            Self::Reverse => InputTransform::Permutation {
                order: (0..dim).rev().collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub backbone: BackboneKind,

    pub data_kind: NominalKind,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_clusters: usize,
    pub anomaly: AnomalyKind,
    pub contamination_rate: f64,
    pub shift_sigmas: f64,
    /// External `.cmft` files replace the generator when set.
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,

    /// 0 keeps raw features; otherwise a fixed random projection to this width.
    pub projection_dim: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub scale_clamp: f64,
    /// 0 means the full feature width.
    pub sn_adapter_dim: usize,
    pub sn_hidden: usize,
    pub noise_std: f64,
    pub th: f64,
    pub transforms: Vec<TransformName>,

    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    /// 0 uses the whole task per inner step.
    pub batch_size: usize,
    pub n_tasks: usize,
    pub inner_steps: usize,
    pub kappa: f64,
    pub lambda0: f64,
    pub gamma: f64,
    /// 0 disables clipping.
    pub max_grad_norm: f64,
    pub repartition_each_epoch: bool,
    pub granularity: OuterGranularity,
    pub disable_ml: bool,
    pub disable_scl_data: bool,
    pub disable_scl_model: bool,

    pub seeds: Vec<u64>,
    pub noise_levels: Vec<f64>,
    pub sweep_variants: Vec<Variant>,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let t = TrainConfig::default();
        let flow = FlowConfig::default();
        let sn = SimpleNetConfig::default();
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            backbone: BackboneKind::Nf,
            data_kind: g.kind,
            dim: g.dim,
            n_train: g.n_train,
            n_test: g.n_test,
            n_clusters: g.n_clusters,
            anomaly: g.anomaly,
            contamination_rate: g.contamination_rate,
            shift_sigmas: g.shift_sigmas,
            train_file: None,
            test_file: None,
            projection_dim: 0,
            flow_layers: flow.layers,
            flow_hidden: flow.hidden,
            scale_clamp: flow.scale_clamp,
            sn_adapter_dim: 0,
            sn_hidden: sn.hidden,
            noise_std: sn.noise_std,
            th: sn.th,
            transforms: vec![TransformName::Identity],
            alpha: t.alpha,
            beta: t.beta,
            epochs: t.epochs,
            batch_size: 0,
            n_tasks: t.n_tasks,
            inner_steps: t.inner_steps,
            kappa: t.kappa,
            lambda0: t.lambda0,
            gamma: t.gamma,
            max_grad_norm: t.max_grad_norm.unwrap_or(0.0),
            repartition_each_epoch: t.repartition_each_epoch,
            granularity: t.granularity,
            disable_ml: false,
            disable_scl_data: false,
            disable_scl_model: false,
            seeds: vec![1, 2, 3, 4, 5],
            noise_levels: vec![0.0, 0.02, 0.05, 0.10],
            sweep_variants: vec![Variant::Baseline, Variant::Full],
            workers: 1,
        }
    }
}

/// Command-line values that take precedence over the file and environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backbone: Option<BackboneKind>,
    pub noise: Option<f64>,
    pub workers: Option<usize>,
}

/// Everything that determines a single run's outcome. Its hash is the run
/// fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub generator: GeneratorConfig,
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub backbone: BackboneKind,
    pub projection_dim: usize,
    pub flow: FlowConfig,
    pub simplenet: SimpleNetConfig,
    pub transforms: Vec<TransformName>,
    pub train: TrainConfig,
}

impl RunSpec {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("run spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Width of the features seen by the model.
    pub fn feature_dim(&self) -> usize {
        if self.projection_dim > 0 {
            self.projection_dim
        } else {
            self.generator.dim
        }
    }
}

impl ExperimentConfig {
    pub fn ablation(&self) -> Ablation {
        Ablation {
            disable_ml: self.disable_ml,
            disable_scl_data: self.disable_scl_data,
            disable_scl_model: self.disable_scl_model,
        }
    }

    pub fn with_variant(&self, v: Variant) -> Self {
        let a = v.ablation();
        Self {
            disable_ml: a.disable_ml,
            disable_scl_data: a.disable_scl_data,
            disable_scl_model: a.disable_scl_model,
            ..self.clone()
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            kind: self.data_kind,
            dim: self.dim,
            n_train: self.n_train,
            n_test: self.n_test,
            n_clusters: self.n_clusters,
            anomaly: self.anomaly,
            contamination_rate: self.contamination_rate,
            shift_sigmas: self.shift_sigmas,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            beta: self.beta,
            epochs: self.epochs,
            batch_size: (self.batch_size > 0).then_some(self.batch_size),
            n_tasks: self.n_tasks,
            inner_steps: self.inner_steps,
            kappa: self.kappa,
            lambda0: self.lambda0,
            gamma: self.gamma,
            seed: self.seed,
            backbone: self.backbone,
            ablation: self.ablation(),
            repartition_each_epoch: self.repartition_each_epoch,
            granularity: self.granularity,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
        }
    }

    pub fn run_spec(&self) -> RunSpec {
        let feature_dim = if self.projection_dim > 0 {
            self.projection_dim
        } else {
            self.dim
        };
        RunSpec {
            generator: self.generator(),
            train_file: self.train_file.clone(),
            test_file: self.test_file.clone(),
            backbone: self.backbone,
            projection_dim: self.projection_dim,
            flow: FlowConfig {
                dim: feature_dim,
                layers: self.flow_layers,
                hidden: self.flow_hidden,
                scale_clamp: self.scale_clamp,
            },
            simplenet: SimpleNetConfig {
                in_dim: feature_dim,
                adapter_dim: if self.sn_adapter_dim > 0 {
                    self.sn_adapter_dim
                } else {
                    feature_dim
                },
                hidden: self.sn_hidden,
                noise_std: self.noise_std,
                th: self.th,
            },
            transforms: self.transforms.clone(),
            train: self.train_config(),
        }
    }

    /// Reads `path`, applies `COMET_SEED` and then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> crate::error::Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(HarnessError::io(p))?),
            None => None,
        };
        Self::from_text(text.as_deref(), std::env::var(SEED_ENV).ok().as_deref(), overrides)
            .map_err(HarnessError::Config)
    }

    /// File text (defaults when absent), then the seed variable, then flags.
    pub fn from_text(
        text: Option<&str>,
        env_seed: Option<&str>,
        overrides: &Overrides,
    ) -> Result<Self, Vec<ConfigIssue>> {
        let mut cfg = match text {
            Some(t) => Self::parse(t)?,
            None => Self::default(),
        };
        cfg.apply_env(env_seed)?;
        cfg.apply(overrides);
        let problems = cfg.problems();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(problems)
        }
    }

    pub fn apply_env(&mut self, seed: Option<&str>) -> Result<(), Vec<ConfigIssue>> {
        if let Some(s) = seed {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| vec![issue(SEED_ENV, format!("expected an unsigned integer, got {s:?}"))])?;
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(b) = o.backbone {
            self.backbone = b;
        }
        if let Some(n) = o.noise {
            self.contamination_rate = n;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
    }

    /// Parses TOML text. Every problem is reported, including range checks.
    pub fn parse(text: &str) -> Result<Self, Vec<ConfigIssue>> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| vec![issue("config", e.to_string())])?;
        let mut cfg = Self::default();
        let mut issues = Vec::new();
        if !table.contains_key("schema_version") {
            issues.push(issue("schema_version", format!("missing; expected {SCHEMA_VERSION}")));
        }
        for (key, value) in &table {
            if let Err(i) = cfg.set(key, value) {
                issues.push(i);
            }
        }
        issues.extend(cfg.problems());
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(issues)
        }
    }

    fn set(&mut self, key: &str, v: &Value) -> Result<(), ConfigIssue> {
        match key {
            "schema_version" => {
                let n = as_uint(key, v)?;
                if n != u64::from(SCHEMA_VERSION) {
                    return Err(issue(
                        key,
                        format!("unsupported version {n}; expected {SCHEMA_VERSION}"),
                    ));
                }
            }
            "seed" => self.seed = as_uint(key, v)?,
            "backbone" => self.backbone = choice(key, v, BackboneKind::ALLOWED, BackboneKind::parse)?,
            "data_kind" => {
                self.data_kind = choice(key, v, &["gaussian-blobs", "ring", "grid-texture"], |s| match s {
                    "gaussian-blobs" => Some(NominalKind::GaussianBlobs),
                    "ring" => Some(NominalKind::Ring),
                    "grid-texture" => Some(NominalKind::GridTexture),
                    _ => None,
                })?
            }
            "anomaly" => {
                self.anomaly = choice(
                    key,
                    v,
                    &["uniform-outlier", "shifted-cluster", "local-deformation"],
                    |s| match s {
                        "uniform-outlier" => Some(AnomalyKind::UniformOutlier),
                        "shifted-cluster" => Some(AnomalyKind::ShiftedCluster),
                        "local-deformation" => Some(AnomalyKind::LocalDeformation),
                        _ => None,
                    },
                )?
            }
            "granularity" => {
                self.granularity = choice(key, v, &["per-task", "per-epoch"], |s| match s {
                    "per-task" => Some(OuterGranularity::PerTask),
                    "per-epoch" => Some(OuterGranularity::PerEpoch),
                    _ => None,
                })?
            }
            "dim" => self.dim = as_usize(key, v)?,
            "n_train" => self.n_train = as_usize(key, v)?,
            "n_test" => self.n_test = as_usize(key, v)?,
            "n_clusters" => self.n_clusters = as_usize(key, v)?,
            "contamination_rate" => self.contamination_rate = as_float(key, v)?,
            "shift_sigmas" => self.shift_sigmas = as_float(key, v)?,
            "train_file" => self.train_file = Some(PathBuf::from(as_str(key, v)?)),
            "test_file" => self.test_file = Some(PathBuf::from(as_str(key, v)?)),
            "projection_dim" => self.projection_dim = as_usize(key, v)?,
            "flow_layers" => self.flow_layers = as_usize(key, v)?,
            "flow_hidden" => self.flow_hidden = as_usize(key, v)?,
            "scale_clamp" => self.scale_clamp = as_float(key, v)?,
            "sn_adapter_dim" => self.sn_adapter_dim = as_usize(key, v)?,
            "sn_hidden" => self.sn_hidden = as_usize(key, v)?,
            "noise_std" => self.noise_std = as_float(key, v)?,
            "th" => self.th = as_float(key, v)?,
            "transforms" => {
                self.transforms = as_array(key, v)?
                    .iter()
                    .map(|item| choice(key, item, TransformName::ALLOWED, TransformName::parse))
                    .collect::<Result<_, _>>()?
            }
            "alpha" => self.alpha = as_float(key, v)?,
            "beta" => self.beta = as_float(key, v)?,
            "epochs" => self.epochs = as_usize(key, v)?,
            "batch_size" => self.batch_size = as_usize(key, v)?,
            "n_tasks" => self.n_tasks = as_usize(key, v)?,
            "inner_steps" => self.inner_steps = as_usize(key, v)?,
            "kappa" => self.kappa = as_float(key, v)?,
            "lambda0" => self.lambda0 = as_float(key, v)?,
            "gamma" => self.gamma = as_float(key, v)?,
            "max_grad_norm" => self.max_grad_norm = as_float(key, v)?,
            "repartition_each_epoch" => self.repartition_each_epoch = as_bool(key, v)?,
            "disable_ml" => self.disable_ml = as_bool(key, v)?,
            "disable_scl_data" => self.disable_scl_data = as_bool(key, v)?,
            "disable_scl_model" => self.disable_scl_model = as_bool(key, v)?,
            "seeds" => {
                self.seeds = as_array(key, v)?
                    .iter()
                    .map(|item| as_uint(key, item))
                    .collect::<Result<_, _>>()?
            }
            "noise_levels" => {
                self.noise_levels = as_array(key, v)?
                    .iter()
                    .map(|item| as_float(key, item))
                    .collect::<Result<_, _>>()?
            }
            "sweep_variants" => {
                let allowed: Vec<&str> = Variant::ALL.iter().map(Variant::key).collect();
                self.sweep_variants = as_array(key, v)?
                    .iter()
                    .map(|item| choice(key, item, &allowed, Variant::parse))
                    .collect::<Result<_, _>>()?
            }
            "workers" => self.workers = as_usize(key, v)?,
            other => return Err(issue(other, "unknown key")),
        }
        Ok(())
    }

    /// Range and consistency checks over the resolved values.
    pub fn problems(&self) -> Vec<ConfigIssue> {
        let mut out: Vec<ConfigIssue> = Vec::new();
        let mut check = |ok: bool, key: &str, msg: String| {
            if !ok {
                out.push(issue(key, msg));
            }
        };
        check(self.dim > 0, "dim", "must be positive".into());
        check(self.n_train > 0, "n_train", "must be positive".into());
        check(
            self.n_test >= 2,
            "n_test",
            format!("must be at least 2, got {}", self.n_test),
        );
        check(self.n_clusters > 0, "n_clusters", "must be positive".into());
        check(
            (0.0..=0.5).contains(&self.contamination_rate),
            "contamination_rate",
            format!("must lie in [0, 0.5], got {}", self.contamination_rate),
        );
        check(
            self.shift_sigmas > 0.0,
            "shift_sigmas",
            format!("must be positive, got {}", self.shift_sigmas),
        );
        check(
            self.data_kind != NominalKind::Ring || self.dim >= 2,
            "dim",
            "ring data needs dim >= 2".into(),
        );
        let feature_dim = if self.projection_dim > 0 {
            self.projection_dim
        } else {
            self.dim
        };
        if self.backbone == BackboneKind::Nf {
            check(
                feature_dim % 2 == 0,
                if self.projection_dim > 0 {
                    "projection_dim"
                } else {
                    "dim"
                },
                format!("the flow needs an even feature width, got {feature_dim}"),
            );
            check(self.flow_layers > 0, "flow_layers", "must be positive".into());
            check(self.flow_hidden > 0, "flow_hidden", "must be positive".into());
            check(
                self.scale_clamp > 0.0,
                "scale_clamp",
                format!("must be positive, got {}", self.scale_clamp),
            );
        } else {
            check(
                self.sn_adapter_dim <= feature_dim,
                "sn_adapter_dim",
                format!("must not exceed the feature width {feature_dim}"),
            );
            check(self.sn_hidden > 0, "sn_hidden", "must be positive".into());
            check(
                self.noise_std >= 0.0,
                "noise_std",
                format!("must be non-negative, got {}", self.noise_std),
            );
            check(self.th > 0.0, "th", format!("must be positive, got {}", self.th));
        }
        check(
            !self.transforms.is_empty(),
            "transforms",
            "needs at least one entry".into(),
        );
        check(
            self.max_grad_norm >= 0.0,
            "max_grad_norm",
            "must be non-negative (0 disables)".into(),
        );
        check(
            self.n_tasks <= self.n_train,
            "n_tasks",
            format!("cannot exceed n_train ({})", self.n_train),
        );
        check(!self.seeds.is_empty(), "seeds", "needs at least one seed".into());
        check(
            self.noise_levels.iter().all(|r| (0.0..=0.5).contains(r)),
            "noise_levels",
            "every level must lie in [0, 0.5]".into(),
        );
        check(
            self.noise_levels.windows(2).all(|w| w[0] < w[1]),
            "noise_levels",
            "must be strictly ascending".into(),
        );
        check(
            !self.sweep_variants.is_empty(),
            "sweep_variants",
            "needs at least one entry".into(),
        );
        check(self.workers > 0, "workers", "must be positive".into());
        let mut train = self.train_config();
        train.max_grad_norm = None;
        for (key, msg) in train.problems() {
            out.push(issue(key, msg));
        }
        out
    }
}

fn type_error(key: &str, expected: &str, v: &Value) -> ConfigIssue {
    issue(key, format!("expected {expected}, got {}", v.type_str()))
}

fn as_uint(key: &str, v: &Value) -> Result<u64, ConfigIssue> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::Integer(i) => Err(issue(key, format!("must be non-negative, got {i}"))),
        other => Err(type_error(key, "an integer", other)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, ConfigIssue> {
    as_uint(key, v).map(|u| u as usize)
}

fn as_float(key: &str, v: &Value) -> Result<f64, ConfigIssue> {
    match v {
        Value::Float(f) if f.is_finite() => Ok(*f),
        Value::Float(f) => Err(issue(key, format!("must be finite, got {f}"))),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(type_error(key, "a number", other)),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool, ConfigIssue> {
    v.as_bool().ok_or_else(|| type_error(key, "a boolean", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigIssue> {
    v.as_str().ok_or_else(|| type_error(key, "a string", v))
}

fn as_array<'a>(key: &str, v: &'a Value) -> Result<&'a Vec<Value>, ConfigIssue> {
    v.as_array().ok_or_else(|| type_error(key, "an array", v))
}

fn choice<T>(key: &str, v: &Value, allowed: &[&str], parse: impl Fn(&str) -> Option<T>) -> Result<T, ConfigIssue> {
    let s = as_str(key, v)?;
    parse(s).ok_or_else(|| {
        issue(
            key,
            format!("unknown value {s:?}; allowed values: {}", allowed.join(", ")),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::parse("schema_version = 1\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_backbone_names_key_and_allowed_values() {
        let err = ExperimentConfig::parse("schema_version = 1\nbackbone = \"foo\"\n").unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].key, "backbone");
        assert!(err[0].message.contains("nf, sn"), "{}", err[0]);
    }

    #[test]
    fn every_offending_key_is_listed() {
        let text = "schema_version = 1\nalpha = \"fast\"\nfoo = 3\ncontamination_rate = 0.9\nepochs = -1\n";
        let keys: Vec<String> = ExperimentConfig::parse(text)
            .unwrap_err()
            .into_iter()
            .map(|i| i.key)
            .collect();
        for k in ["alpha", "foo", "contamination_rate", "epochs"] {
            assert!(keys.iter().any(|x| x == k), "{k} missing from {keys:?}");
        }
    }

    #[test]
    fn schema_version_is_required() {
        let err = ExperimentConfig::parse("seed = 3\n").unwrap_err();
        assert_eq!(err[0].key, "schema_version");
        let err = ExperimentConfig::parse("schema_version = 7\n").unwrap_err();
        assert_eq!(err[0].key, "schema_version");
    }

    #[test]
    fn precedence_is_file_then_env_then_flags() {
        let mut cfg = ExperimentConfig::parse("schema_version = 1\nseed = 3\n").unwrap();
        cfg.apply_env(Some("9")).unwrap();
        assert_eq!(cfg.seed, 9);
        cfg.apply(&Overrides {
            seed: Some(11),
            noise: Some(0.05),
            ..Overrides::default()
        });
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.contamination_rate, 0.05);
        assert!(cfg.apply_env(Some("x")).is_err());
    }

    #[test]
    fn fingerprint_tracks_run_relevant_fields_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            workers: 4,
            seeds: vec![9],
            ..a.clone()
        };
        assert_eq!(a.run_spec().fingerprint(), b.run_spec().fingerprint());
        let c = ExperimentConfig { seed: 2, ..a.clone() };
        assert_ne!(a.run_spec().fingerprint(), c.run_spec().fingerprint());
        assert_eq!(a.run_spec().fingerprint().len(), 64);
    }

    #[test]
    fn variants_map_to_flags() {
        assert_eq!(
            Variant::Baseline.ablation(),
            Ablation {
                disable_ml: true,
                disable_scl_data: true,
                disable_scl_model: true
            }
        );
        assert_eq!(Variant::Full.ablation(), Ablation::default());
        assert_eq!(Variant::parse("no-scl-data"), Some(Variant::NoSclData));
        assert_eq!(Variant::NoSclDataModel.label(), "CoMet w/o SCL on Data & Model");
    }
}
