//! Confidence-weighted, covariance-regularized first-order meta-learning.
//!
//! Each epoch the training set is split into disjoint tasks. For every task
//! the shared parameters are adapted for `inner_steps` gradient steps on the
//! task's weighted loss, while the loss on the remaining tasks is tracked
//! alongside. The adapted parameters then define the meta-objective (weights
//! and adaptive regularizer recomputed at the adapted point) whose gradient,
//! taken at the adapted parameters, updates the shared ones.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::{Backbone, ModelError};
use crate::diffcore::{DiffError, Gradient, Mat, ParamSet, Tape};
use crate::scl::{self, ConfidenceState, Cov2, LossPairSeries, RegularizerState, SclError};

/// Losses beyond this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Nf,
    Sn,
}

impl BackboneKind {
    pub const ALLOWED: &'static [&'static str] = &["nf", "sn"];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nf" => Some(BackboneKind::Nf),
            "sn" => Some(BackboneKind::Sn),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BackboneKind::Nf => "nf",
            BackboneKind::Sn => "sn",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterGranularity {
    /// One outer step after every task.
    PerTask,
    /// Meta-gradients averaged over the epoch's tasks, one outer step.
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    pub disable_ml: bool,
    pub disable_scl_data: bool,
    pub disable_scl_model: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    /// Samples per inner step; `None` uses the whole task.
    pub batch_size: Option<usize>,
    pub n_tasks: usize,
    pub inner_steps: usize,
    pub kappa: f64,
    pub lambda0: f64,
    pub gamma: f64,
    pub seed: u64,
    pub backbone: BackboneKind,
    pub ablation: Ablation,
    pub repartition_each_epoch: bool,
    pub granularity: OuterGranularity,
    /// Gradients with a larger Euclidean norm are rescaled before every
    /// inner and outer step. `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta: 2e-4,
            epochs: 120,
            batch_size: None,
            n_tasks: 4,
            inner_steps: 4,
            kappa: 1.5,
            lambda0: 1e-4,
            gamma: 1.0,
            seed: 1,
            backbone: BackboneKind::Nf,
            ablation: Ablation::default(),
            repartition_each_epoch: true,
            granularity: OuterGranularity::PerTask,
            max_grad_norm: Some(100.0),
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, as `(key, message)` pairs.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            out.push(("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            out.push(("beta", format!("must be positive, got {}", self.beta)));
        }
        if self.n_tasks < 2 {
            out.push(("n_tasks", format!("must be at least 2, got {}", self.n_tasks)));
        }
        if self.inner_steps < 2 {
            out.push(("inner_steps", format!("must be at least 2, got {}", self.inner_steps)));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            out.push(("kappa", format!("must be non-negative, got {}", self.kappa)));
        }
        if !(self.lambda0 >= 0.0) || !self.lambda0.is_finite() {
            out.push(("lambda0", format!("must be non-negative, got {}", self.lambda0)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            out.push(("gamma", format!("must be non-negative, got {}", self.gamma)));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) || !c.is_finite() {
                out.push(("max_grad_norm", format!("must be positive, got {c}")));
            }
        }
        if self.batch_size == Some(0) {
            out.push(("batch_size", "must be positive".to_string()));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {}", format_problems(.0))]
    Config(Vec<(&'static str, String)>),
    #[error("cannot split {samples} samples into {tasks} tasks")]
    Partition { samples: usize, tasks: usize },
    #[error("training diverged at epoch {epoch}, task {task:?}, step {step}: loss {loss}")]
    Divergence {
        epoch: usize,
        task: Option<usize>,
        step: usize,
        loss: f64,
        records: Vec<EpochRecord>,
    },
    #[error("non-finite value at epoch {epoch}, task {task:?}, step {step}: {source}")]
    NonFinite {
        epoch: usize,
        task: Option<usize>,
        step: usize,
        records: Vec<EpochRecord>,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scl(#[from] SclError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

fn format_problems(p: &[(&'static str, String)]) -> String {
    p.iter()
        .map(|(k, m)| format!("{k}: {m}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl TrainError {
    /// Epoch records completed before the failure, if any.
    pub fn partial_records(&self) -> &[EpochRecord] {
        match self {
            TrainError::Divergence { records, .. } | TrainError::NonFinite { records, .. } => records,
            _ => &[],
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, TrainError::Divergence { .. } | TrainError::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Disjoint tasks covering `0..num_samples`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub tasks: Vec<Vec<usize>>,
    pub seed: u64,
}

impl TaskSplit {
    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    /// Indices of every task except `i`, ascending.
    pub fn complement(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .tasks
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, t)| t.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Random permutation cut into `n` near-equal chunks; the first
/// `num_samples % n` tasks get one extra index. Indices within a task are
/// sorted.
pub fn partition_tasks(num_samples: usize, n: usize, seed: u64) -> Result<TaskSplit> {
    if n < 2 || n > num_samples {
        return Err(TrainError::Partition {
            samples: num_samples,
            tasks: n,
        });
    }
    let mut perm: Vec<usize> = (0..num_samples).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = num_samples / n;
    let extra = num_samples % n;
    let mut tasks = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        let mut t = perm[start..start + len].to_vec();
        t.sort_unstable();
        tasks.push(t);
        start += len;
    }
    Ok(TaskSplit { tasks, seed })
}

fn rows(x: &Mat, idx: &[usize]) -> Mat {
    x.select(ndarray::Axis(0), idx)
}

/// Weighted loss `sum_i w_i L_i + lambda ||theta||^2` and its gradient.
pub fn weighted_value_and_grad<B: Backbone + ?Sized>(
    backbone: &B,
    params: &ParamSet,
    x: &Mat,
    weights: &[f64],
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<(f64, Gradient), ModelError> {
    let batch = backbone.make_batch(x, rng)?;
    let mut tape = Tape::new();
    let vars = tape.bind(params)?;
    let losses = backbone.loss_column(&mut tape, &vars, &batch)?;
    let w = tape.constant(Mat::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("column"))?;
    let weighted = tape.mul(losses, w)?;
    let data = tape.sum(weighted)?;
    let loss = if lambda != 0.0 {
        let mut penalty = None;
        for name in params.names() {
            let sq = tape.square(vars.get(name)?)?;
            let s = tape.sum(sq)?;
            penalty = Some(match penalty {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        match penalty {
            Some(p) => {
                let p = tape.scale(p, lambda)?;
                tape.add(data, p)?
            }
            None => data,
        }
    } else {
        data
    };
    let grad = tape.gradient(loss, &vars)?;
    Ok((tape.scalar(loss)?, grad))
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    if wsum > 0.0 {
        values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Weighted mean of the per-sample loss over `idx`, no gradient.
fn mean_loss<B: Backbone + ?Sized>(
    backbone: &B,
    params: &ParamSet,
    x: &Mat,
    idx: &[usize],
    confidence: &ConfidenceState,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<f64, ModelError> {
    let batch = backbone.make_batch(&rows(x, idx), rng)?;
    let losses = backbone.per_sample_losses(params, &batch)?;
    Ok(weighted_mean(&losses, &confidence.select(idx)))
}

/// Result of adapting to one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    pub params: ParamSet,
    pub series: LossPairSeries,
    /// Steps whose gradient was clipped.
    pub clipped: usize,
}

/// Where a failure happened inside an adaptation.
#[derive(Debug)]
pub struct StepFailure {
    pub step: usize,
    pub loss: Option<f64>,
    pub source: Option<ModelError>,
}

fn guard(step: usize, loss: f64) -> std::result::Result<(), StepFailure> {
    if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
        return Err(StepFailure {
            step,
            loss: Some(loss),
            source: None,
        });
    }
    Ok(())
}

fn fail(step: usize) -> impl FnOnce(ModelError) -> StepFailure {
    move |source| StepFailure {
        step,
        loss: None,
        source: Some(source),
    }
}

/// `inner_steps` gradient steps on the task's weighted loss. After every
/// step the weighted mean loss on the task and on `val_idx` is recorded at
/// the new parameters, giving one aligned (train, val) pair per step.
#[allow(clippy::too_many_arguments)]
pub fn inner_adapt<B: Backbone + ?Sized>(
    backbone: &B,
    params: &ParamSet,
    x: &Mat,
    task_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    confidence: &ConfidenceState,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<Adapted, StepFailure> {
    let mut theta = params.clone();
    let mut series = LossPairSeries::new();
    let mut clipped = 0;
    for step in 0..cfg.inner_steps {
        let batch_idx: Vec<usize> = match cfg.batch_size {
            Some(b) if b < task_idx.len() => (0..b).map(|k| task_idx[(step * b + k) % task_idx.len()]).collect(),
            _ => task_idx.to_vec(),
        };
        let weights = confidence.select(&batch_idx);
        let (loss, mut grad) = weighted_value_and_grad(backbone, &theta, &rows(x, &batch_idx), &weights, lambda, rng)
            .map_err(fail(step))?;
        guard(step, loss)?;
        clipped += usize::from(clip(&mut grad, cfg.max_grad_norm));
        theta = theta.descend(&grad, cfg.alpha).map_err(|e| fail(step)(e.into()))?;
        let train = mean_loss(backbone, &theta, x, task_idx, confidence, rng).map_err(fail(step))?;
        let val = if val_idx.is_empty() {
            train
        } else {
            mean_loss(backbone, &theta, x, val_idx, confidence, rng).map_err(fail(step))?
        };
        guard(step, train)?;
        guard(step, val)?;
        series.push(train, val).expect("finite after guard");
    }
    Ok(Adapted {
        params: theta,
        series,
        clipped,
    })
}

fn clip(grad: &mut Gradient, max_norm: Option<f64>) -> bool {
    max_norm.is_some_and(|c| grad.clip_norm(c))
}

/// Meta-objective at the adapted parameters, with its gradient there.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaObjective {
    pub value: f64,
    pub gradient: Gradient,
    pub confidence: ConfidenceState,
    pub regularizer: RegularizerState,
}

/// Recomputes confidence weights from scores under `adapted`, derives the
/// adaptive regularizer from the task's loss series and evaluates
/// `sum_i w_i L_i(adapted) + lambda * ||adapted||^2` over all samples.
pub fn meta_objective<B: Backbone + ?Sized>(
    backbone: &B,
    adapted: &ParamSet,
    x: &Mat,
    cfg: &TrainConfig,
    series: &LossPairSeries,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MetaObjective> {
    let confidence = epoch_confidence(backbone, adapted, x, cfg, epoch)?;
    let sigma = scl::loss_covariance(series)?;
    let gamma = if cfg.ablation.disable_scl_model { 0.0 } else { cfg.gamma };
    let regularizer = scl::adaptive_lambda(cfg.lambda0, gamma, &sigma)?;
    let (value, gradient) =
        weighted_value_and_grad(backbone, adapted, x, &confidence.weights, regularizer.lambda, rng)?;
    Ok(MetaObjective {
        value,
        gradient,
        confidence,
        regularizer,
    })
}

fn epoch_confidence<B: Backbone + ?Sized>(
    backbone: &B,
    params: &ParamSet,
    x: &Mat,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<ConfidenceState> {
    if cfg.ablation.disable_scl_data {
        return Ok(ConfidenceState::uniform(x.nrows(), cfg.kappa, epoch));
    }
    let scores = backbone.scores(params, x)?;
    Ok(scl::confidence_weights_at_epoch(&scores, cfg.kappa, epoch)?)
}

/// `params - beta * grad`.
pub fn outer_step(params: &ParamSet, grad: &Gradient, beta: f64) -> std::result::Result<ParamSet, DiffError> {
    params.descend(grad, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over all training samples at the start of the epoch.
    pub mean_loss: f64,
    /// Mean of the final train entries of the epoch's loss series.
    pub mean_train_loss: f64,
    /// Mean of the final validation entries of the epoch's loss series.
    pub mean_val_loss: f64,
    /// det(Sigma) per task, in task order.
    pub det_sigma: Vec<f64>,
    /// Regularization strength after the last task.
    pub lambda: f64,
    pub weight_min: f64,
    pub weight_median: f64,
    pub weight_fraction_below_one: f64,
    pub threshold: Option<f64>,
    /// Inner and outer steps whose gradient was clipped.
    pub clipped_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub records: Vec<EpochRecord>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
}

/// Runs the full training schedule from `backbone.init_params(cfg.seed)`.
/// Only the feature matrix is visible here; labels never reach training.
pub fn train<B: Backbone + ?Sized>(backbone: &B, x: &Mat, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(backbone, backbone.init_params(cfg.seed), x, cfg)
}

pub fn train_from<B: Backbone + ?Sized>(
    backbone: &B,
    init: ParamSet,
    x: &Mat,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(TrainError::Config(problems));
    }
    if cfg.n_tasks > x.nrows() {
        return Err(TrainError::Partition {
            samples: x.nrows(),
            tasks: cfg.n_tasks,
        });
    }
    let mut trainer = Trainer {
        backbone,
        x,
        cfg,
        params: init,
        lambda: cfg.lambda0,
        rng: {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(11);
            r
        },
        records: Vec::with_capacity(cfg.epochs),
        split: None,
    };
    for epoch in 0..cfg.epochs {
        let record = if cfg.ablation.disable_ml {
            trainer.plain_epoch(epoch)?
        } else {
            trainer.meta_epoch(epoch)?
        };
        trainer.records.push(record);
    }
    Ok(TrainOutcome {
        params: trainer.params,
        records: trainer.records,
    })
}

struct Trainer<'a, B: Backbone + ?Sized> {
    backbone: &'a B,
    x: &'a Mat,
    cfg: &'a TrainConfig,
    params: ParamSet,
    lambda: f64,
    rng: ChaCha8Rng,
    records: Vec<EpochRecord>,
    split: Option<TaskSplit>,
}

impl<B: Backbone + ?Sized> Trainer<'_, B> {
    fn diverged(&self, epoch: usize, task: Option<usize>, f: StepFailure) -> TrainError {
        match f.source {
            Some(source) => TrainError::NonFinite {
                epoch,
                task,
                step: f.step,
                records: self.records.clone(),
                source,
            },
            None => TrainError::Divergence {
                epoch,
                task,
                step: f.step,
                loss: f.loss.unwrap_or(f64::NAN),
                records: self.records.clone(),
            },
        }
    }

    fn model_failure(&self, epoch: usize, task: Option<usize>, step: usize, e: TrainError) -> TrainError {
        match e {
            TrainError::Model(source) => self.diverged(
                epoch,
                task,
                StepFailure {
                    step,
                    loss: None,
                    source: Some(source),
                },
            ),
            TrainError::Diff(d) => self.model_failure(epoch, task, step, TrainError::Model(d.into())),
            other => other,
        }
    }

    fn epoch_start(&mut self, epoch: usize) -> Result<(ConfidenceState, f64)> {
        let confidence = epoch_confidence(self.backbone, &self.params, self.x, self.cfg, epoch)
            .map_err(|e| self.model_failure(epoch, None, 0, e))?;
        let batch = self
            .backbone
            .make_batch(self.x, &mut self.rng)
            .map_err(|e| self.model_failure(epoch, None, 0, e.into()))?;
        let losses = self
            .backbone
            .per_sample_losses(&self.params, &batch)
            .map_err(|e| self.model_failure(epoch, None, 0, e.into()))?;
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        guard(0, mean).map_err(|f| self.diverged(epoch, None, f))?;
        Ok((confidence, mean))
    }

    fn record(
        &self,
        epoch: usize,
        mean_loss: f64,
        conf: &ConfidenceState,
        pairs: &[(f64, f64)],
        dets: Vec<f64>,
        clipped_steps: usize,
    ) -> EpochRecord {
        let k = pairs.len().max(1) as f64;
        EpochRecord {
            epoch,
            mean_loss,
            mean_train_loss: pairs.iter().map(|p| p.0).sum::<f64>() / k,
            mean_val_loss: pairs.iter().map(|p| p.1).sum::<f64>() / k,
            det_sigma: dets,
            lambda: self.lambda,
            weight_min: conf.min_weight(),
            weight_median: conf.median_weight(),
            weight_fraction_below_one: conf.fraction_below_one(),
            threshold: conf.threshold.is_finite().then_some(conf.threshold),
            clipped_steps,
        }
    }

    fn meta_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let (confidence, mean_loss) = self.epoch_start(epoch)?;
        if self.cfg.repartition_each_epoch || self.split.is_none() {
            self.split = Some(partition_tasks(
                self.x.nrows(),
                self.cfg.n_tasks,
                epoch_seed(self.cfg.seed, epoch),
            )?);
        }
        let split = self.split.clone().expect("set above");
        let mut pairs = Vec::with_capacity(split.n());
        let mut dets = Vec::with_capacity(split.n());
        let mut accumulated: Option<Gradient> = None;
        let mut clipped = 0;
        for (i, task) in split.tasks.iter().enumerate() {
            let val_idx = split.complement(i);
            let adapted = inner_adapt(
                self.backbone,
                &self.params,
                self.x,
                task,
                &val_idx,
                self.cfg,
                &confidence,
                self.lambda,
                &mut self.rng,
            )
            .map_err(|f| self.diverged(epoch, Some(i), f))?;
            clipped += adapted.clipped;
            let last = adapted.series.len() - 1;
            pairs.push((adapted.series.train[last], adapted.series.val[last]));

            let mut meta = meta_objective(
                self.backbone,
                &adapted.params,
                self.x,
                self.cfg,
                &adapted.series,
                epoch,
                &mut self.rng,
            )
            .map_err(|e| self.model_failure(epoch, Some(i), self.cfg.inner_steps, e))?;
            guard(self.cfg.inner_steps, meta.value).map_err(|f| self.diverged(epoch, Some(i), f))?;
            dets.push(meta.regularizer.det_sigma);
            self.lambda = meta.regularizer.lambda;
            if self.cfg.granularity == OuterGranularity::PerTask {
                clipped += usize::from(clip(&mut meta.gradient, self.cfg.max_grad_norm));
            }

            match self.cfg.granularity {
                OuterGranularity::PerTask => {
                    self.params = outer_step(&self.params, &meta.gradient, self.cfg.beta)?;
                }
                OuterGranularity::PerEpoch => match accumulated.as_mut() {
                    None => accumulated = Some(meta.gradient),
                    Some(acc) => acc.add_assign(&meta.gradient)?,
                },
            }
        }
        if let Some(mut g) = accumulated {
            g.scale(1.0 / split.n() as f64);
            clipped += usize::from(clip(&mut g, self.cfg.max_grad_norm));
            self.params = outer_step(&self.params, &g, self.cfg.beta)?;
        }
        Ok(self.record(epoch, mean_loss, &confidence, &pairs, dets, clipped))
    }

    /// Without the task split: `n_tasks` full-batch steps on the weighted
    /// loss. Training and validation losses coincide, so the covariance is
    /// singular and the regularizer stays at `lambda0`.
    fn plain_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let (confidence, mean_loss) = self.epoch_start(epoch)?;
        self.lambda = self.cfg.lambda0;
        let mut pairs = Vec::with_capacity(self.cfg.n_tasks);
        let mut clipped = 0;
        for step in 0..self.cfg.n_tasks {
            let (loss, mut grad) = weighted_value_and_grad(
                self.backbone,
                &self.params,
                self.x,
                &confidence.weights,
                self.lambda,
                &mut self.rng,
            )
            .map_err(|e| self.model_failure(epoch, None, step, e.into()))?;
            guard(step, loss).map_err(|f| self.diverged(epoch, None, f))?;
            clipped += usize::from(clip(&mut grad, self.cfg.max_grad_norm));
            self.params = outer_step(&self.params, &grad, self.cfg.beta)?;
            let mean = loss / self.x.nrows() as f64;
            pairs.push((mean, mean));
        }
        Ok(self.record(epoch, mean_loss, &confidence, &pairs, vec![0.0], clipped))
    }
}

/// Covariance of a series, for callers that only need Sigma.
pub fn series_covariance(series: &LossPairSeries) -> std::result::Result<Cov2, SclError> {
    scl::loss_covariance(series)
}
