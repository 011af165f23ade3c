//! Single runs: data, backbone, training, evaluation and their persisted
//! artifacts.

use std::path::Path;
use std::time::Instant;

use comet_core::backbones::{Backbone, ExtractorMode, FeatureExtractorStub, NfBackbone, SimpleNetModel, TransformSet};
use comet_core::data::{self, FeatureDataset};
use comet_core::diffcore::ParamSet;
use comet_core::meta::{self, BackboneKind, EpochRecord, TrainError};
use comet_core::metrics::{self, EvalResult, MetricError};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigIssue, ExperimentConfig, RunSpec, SCHEMA_VERSION};
use crate::error::{HarnessError, Result};

pub fn build_backbone(spec: &RunSpec, input_dim: usize) -> Result<Box<dyn Backbone>> {
    let extractor = if spec.projection_dim > 0 {
        FeatureExtractorStub::new(
            ExtractorMode::FixedRandomProjection {
                seed: spec.generator.seed,
                out_dim: spec.projection_dim,
            },
            input_dim,
        )?
    } else {
        FeatureExtractorStub::identity(input_dim)
    };
    let feature_dim = extractor.out_dim();
    let transforms = TransformSet::new(spec.transforms.iter().map(|t| t.build(input_dim)).collect())?;
    Ok(match spec.backbone {
        BackboneKind::Nf => Box::new(NfBackbone::new(spec.flow, extractor, transforms)?),
        BackboneKind::Sn => {
            let mut sn = spec.simplenet;
            sn.in_dim = feature_dim;
            Box::new(SimpleNetModel::new(sn, extractor)?)
        }
    })
}

/// Train and test splits: the two files when configured, generated otherwise.
pub fn load_data(spec: &RunSpec) -> Result<(FeatureDataset, FeatureDataset)> {
    match (&spec.train_file, &spec.test_file) {
        (Some(train), Some(test)) => {
            let train = data::load_features(train)?;
            let test = data::load_features(test)?;
            let mut issues = Vec::new();
            for (name, ds) in [("train_file", &train), ("test_file", &test)] {
                if ds.dim() != spec.generator.dim {
                    issues.push(ConfigIssue {
                        key: name.into(),
                        message: format!("file has {} features but dim = {}", ds.dim(), spec.generator.dim),
                    });
                }
            }
            if !issues.is_empty() {
                return Err(HarnessError::Config(issues));
            }
            Ok((train, test))
        }
        (None, None) => Ok(data::generate(&spec.generator)?),
        _ => Err(HarnessError::Config(vec![ConfigIssue {
            key: "train_file".into(),
            message: "train_file and test_file must be given together".into(),
        }])),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

/// Persisted outcome of one run. `wall_clock_seconds` is the only field
/// that varies between identical runs and is kept last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub fingerprint: String,
    pub seed: u64,
    pub backbone: BackboneKind,
    pub status: RunStatus,
    pub error: Option<String>,
    pub spec: RunSpec,
    pub train_samples: usize,
    pub train_contamination: f64,
    pub epochs: Vec<EpochRecord>,
    pub eval: Option<EvalResult>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub fingerprint: String,
    pub spec: RunSpec,
    pub params: ParamSet,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub model: Option<ModelFile>,
}

/// Scores the test split; `None` when its labels are not all 0/1.
pub fn evaluate_split(backbone: &dyn Backbone, params: &ParamSet, test: &FeatureDataset) -> Result<Option<EvalResult>> {
    let Some(labels) = test.binary_labels() else {
        return Ok(None);
    };
    let scores = backbone.scores(params, test.features())?;
    Ok(Some(metrics::evaluate(&scores, &labels)?))
}

/// Generates or loads data, trains and evaluates. Divergence is not an
/// error here: the report carries the partial epoch log and the status.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    let spec = cfg.run_spec();
    let (train, test) = load_data(&spec)?;
    let backbone = build_backbone(&spec, train.dim())?;
    let train_cfg = spec.train.clone();

    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        fingerprint: spec.fingerprint(),
        seed: cfg.seed,
        backbone: cfg.backbone,
        status: RunStatus::Ok,
        error: None,
        spec: spec.clone(),
        train_samples: train.len(),
        train_contamination: train.contamination_rate,
        epochs: Vec::new(),
        eval: None,
        wall_clock_seconds: 0.0,
    };

    let model = match meta::train(backbone.as_ref(), train.features(), &train_cfg) {
        Ok(outcome) => {
            report.epochs = outcome.records;
            match evaluate_split(backbone.as_ref(), &outcome.params, &test) {
                Ok(eval) => report.eval = eval,
                Err(HarnessError::Metric(MetricError::NonFinite(i))) => {
                    report.status = RunStatus::Diverged;
                    report.error = Some(format!("non-finite anomaly score for test sample {i}"));
                }
                Err(e) => return Err(e),
            }
            Some(ModelFile {
                schema_version: SCHEMA_VERSION,
                fingerprint: report.fingerprint.clone(),
                spec,
                params: outcome.params,
            })
        }
        Err(e) if e.is_divergence() => {
            report.status = RunStatus::Diverged;
            report.epochs = e.partial_records().to_vec();
            report.error = Some(e.to_string());
            None
        }
        Err(TrainError::Config(problems)) => {
            return Err(HarnessError::Config(
                problems
                    .into_iter()
                    .map(|(key, message)| ConfigIssue {
                        key: key.into(),
                        message,
                    })
                    .collect(),
            ))
        }
        Err(TrainError::Partition { samples, tasks }) => {
            return Err(HarnessError::Config(vec![ConfigIssue {
                key: "n_tasks".into(),
                message: format!("cannot split {samples} samples into {tasks} tasks"),
            }]))
        }
        Err(TrainError::Model(e)) => return Err(e.into()),
        Err(other) => {
            report.status = RunStatus::Diverged;
            report.error = Some(other.to_string());
            None
        }
    };
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(RunOutcome { report, model })
}

/// Scores a stored model on `data`, or on the test split its spec describes.
pub fn evaluate_model(model: &ModelFile, data: Option<&Path>) -> Result<Option<EvalResult>> {
    let test = match data {
        Some(p) => data::load_features(p)?,
        None => load_data(&model.spec)?.1,
    };
    let backbone = build_backbone(&model.spec, test.dim())?;
    evaluate_split(backbone.as_ref(), &model.params, &test)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(HarnessError::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            dim: 4,
            n_train: 40,
            n_test: 20,
            flow_layers: 2,
            flow_hidden: 4,
            epochs: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_epochs_evaluates_the_untrained_model() {
        let cfg = ExperimentConfig { epochs: 0, ..tiny() };
        let out = run(&cfg).unwrap();
        assert!(out.report.epochs.is_empty());
        let eval = out.report.eval.unwrap();
        assert_eq!(eval.n_pos + eval.n_neg, 20);
        assert_eq!(
            out.model.unwrap().params,
            build_backbone(&cfg.run_spec(), 4).unwrap().init_params(cfg.seed)
        );
    }

    #[test]
    fn stored_model_reproduces_metrics() {
        for backbone in [BackboneKind::Nf, BackboneKind::Sn] {
            let cfg = ExperimentConfig { backbone, ..tiny() };
            let out = run(&cfg).unwrap();
            let model = out.model.unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.json");
            write_json(&path, &model).unwrap();
            let back: ModelFile = read_json(&path).unwrap();
            assert_eq!(back, model);
            assert_eq!(evaluate_model(&back, None).unwrap(), out.report.eval);
        }
    }

    #[test]
    fn divergence_yields_partial_report() {
        let cfg = ExperimentConfig {
            alpha: 50.0,
            beta: 50.0,
            max_grad_norm: 0.0,
            epochs: 30,
            ..tiny()
        };
        let out = run(&cfg).unwrap();
        assert_eq!(out.report.status, RunStatus::Diverged);
        assert!(out.model.is_none());
        assert!(out.report.error.is_some());
    }
}
