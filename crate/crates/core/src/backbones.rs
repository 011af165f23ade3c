//! Anomaly-detection backbones.
//!
//! Both models implement [`Backbone`]: a per-sample training loss recorded on
//! a [`Tape`] and an anomaly score where larger means more anomalous. The
//! confidence weighting and meta-learning code only ever talks to this trait.

use std::f64::consts::PI;

use ndarray::{s, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Mat, ParamSet, ParamVars, Tape, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("noise standard deviation must be non-negative, got {0}")]
    NegativeNoiseStd(f64),
    #[error("input has {got} features, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("non-finite input to `{0}`")]
    NonFiniteInput(&'static str),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Frozen stand-in for a pretrained feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ExtractorMode {
    Identity,
    FixedRandomProjection { seed: u64, out_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractorStub {
    mode: ExtractorMode,
    in_dim: usize,
    projection: Option<Mat>,
}

impl FeatureExtractorStub {
    pub fn new(mode: ExtractorMode, in_dim: usize) -> Result<Self> {
        let projection = match mode {
            ExtractorMode::Identity => None,
            ExtractorMode::FixedRandomProjection { seed, out_dim } => {
                if out_dim == 0 {
                    return Err(ModelError::Config("projection out_dim must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scale = 1.0 / (out_dim as f64).sqrt();
                Some(Mat::from_shape_fn((in_dim, out_dim), |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                }))
            }
        };
        Ok(Self {
            mode,
            in_dim,
            projection,
        })
    }

    pub fn identity(in_dim: usize) -> Self {
        Self {
            mode: ExtractorMode::Identity,
            in_dim,
            projection: None,
        }
    }

    pub fn mode(&self) -> ExtractorMode {
        self.mode
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        match self.mode {
            ExtractorMode::Identity => self.in_dim,
            ExtractorMode::FixedRandomProjection { out_dim, .. } => out_dim,
        }
    }

    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.in_dim {
            return Err(ModelError::InputDim {
                expected: self.in_dim,
                got: x.ncols(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteInput("feature extractor"));
        }
        Ok(match &self.projection {
            None => x.clone(),
            Some(p) => x.dot(p),
        })
    }
}

/// Invertible transformation applied to a raw sample before feature
/// extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputTransform {
    Identity,
    /// Negates the coordinates whose flag is set.
    SignFlip {
        flips: Vec<bool>,
    },
    /// Output coordinate `j` takes input coordinate `order[j]`.
    Permutation {
        order: Vec<usize>,
    },
}

impl InputTransform {
    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        match self {
            InputTransform::Identity => Ok(x.clone()),
            InputTransform::SignFlip { flips } => {
                if flips.len() != x.ncols() {
                    return Err(ModelError::InputDim {
                        expected: flips.len(),
                        got: x.ncols(),
                    });
                }
                let mut out = x.clone();
                for (j, &f) in flips.iter().enumerate() {
                    if f {
                        out.column_mut(j).mapv_inplace(|v| -v);
                    }
                }
                Ok(out)
            }
            InputTransform::Permutation { order } => {
                if order.len() != x.ncols() {
                    return Err(ModelError::InputDim {
                        expected: order.len(),
                        got: x.ncols(),
                    });
                }
                let mut seen = vec![false; order.len()];
                for &o in order {
                    if o >= order.len() || std::mem::replace(&mut seen[o], true) {
                        return Err(ModelError::Config(format!("{order:?} is not a permutation")));
                    }
                }
                Ok(x.select(Axis(1), order))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformSet {
    transforms: Vec<InputTransform>,
}

impl TransformSet {
    pub fn new(transforms: Vec<InputTransform>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(ModelError::Config("transform set must not be empty".into()));
        }
        Ok(Self { transforms })
    }

    pub fn identity() -> Self {
        Self {
            transforms: vec![InputTransform::Identity],
        }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &InputTransform> {
        self.transforms.iter()
    }
}

impl Default for TransformSet {
    fn default() -> Self {
        Self::identity()
    }
}

/// A training batch: extracted features plus whatever randomness the
/// backbone's loss consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Mat,
    pub noise: Option<Mat>,
}

/// Common contract of the anomaly-detection models.
pub trait Backbone: Send + Sync {
    fn name(&self) -> &'static str;

    /// Raw sample dimension accepted by [`Backbone::make_batch`] and
    /// [`Backbone::scores`].
    fn input_dim(&self) -> usize;

    fn init_params(&self, seed: u64) -> ParamSet;

    /// Extracts features from raw samples and draws the per-step randomness.
    fn make_batch(&self, x: &Mat, rng: &mut ChaCha8Rng) -> Result<Batch>;

    /// Records the per-sample loss `L_AD(x_i | theta)` as an `n x 1` column.
    fn loss_column(&self, tape: &mut Tape, params: &ParamVars, batch: &Batch) -> Result<Var>;

    /// Anomaly scores for raw samples; larger is more anomalous.
    fn scores(&self, params: &ParamSet, x: &Mat) -> Result<Vec<f64>>;

    fn per_sample_losses(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = tape.bind(params)?;
        let col = self.loss_column(&mut tape, &vars, batch)?;
        Ok(tape.value(col).iter().copied().collect())
    }
}

fn check_features(batch_cols: usize, expected: usize) -> Result<()> {
    if batch_cols != expected {
        return Err(ModelError::InputDim {
            expected,
            got: batch_cols,
        });
    }
    Ok(())
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

// ---------------------------------------------------------------------------
// Normalizing flow
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dim: usize,
    pub layers: usize,
    pub hidden: usize,
    /// Bound on the per-coordinate log-scale: `s = clamp * tanh(raw / clamp)`.
    pub scale_clamp: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            layers: 4,
            hidden: 16,
            scale_clamp: 2.0,
        }
    }
}

/// Stack of affine coupling layers. Even layers condition on the first half
/// of the coordinates and transform the second; odd layers swap roles.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFlow {
    cfg: FlowConfig,
}

struct Mlp<'a> {
    w1: &'a Mat,
    b1: &'a Mat,
    w2: &'a Mat,
    b2: &'a Mat,
}

impl Mlp<'_> {
    fn eval(&self, x: &Mat) -> Mat {
        let h = (x.dot(self.w1) + self.b1).mapv(f64::tanh);
        h.dot(self.w2) + self.b2
    }
}

fn param_name(layer: usize, net: &str, part: &str) -> String {
    format!("flow.{layer}.{net}.{part}")
}

impl CouplingFlow {
    pub fn new(cfg: FlowConfig) -> Result<Self> {
        if cfg.dim < 2 || !cfg.dim.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "coupling flow needs an even dimension >= 2, got {}",
                cfg.dim
            )));
        }
        if cfg.layers == 0 || cfg.hidden == 0 {
            return Err(ModelError::Config(
                "flow needs at least one layer and one hidden unit".into(),
            ));
        }
        if !(cfg.scale_clamp > 0.0) {
            return Err(ModelError::Config("scale_clamp must be positive".into()));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn half(&self) -> usize {
        self.cfg.dim / 2
    }

    /// Parameter names for layer `layer`, net `"s"` or `"t"`.
    pub fn layer_param(layer: usize, net: &str, part: &str) -> String {
        param_name(layer, net, part)
    }

    /// Hidden weights random, output layers zero: the flow starts as the
    /// identity map.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (half, hidden) = (self.half(), self.cfg.hidden);
        let std = 1.0 / (half as f64).sqrt();
        let mut p = ParamSet::new();
        for layer in 0..self.cfg.layers {
            for net in ["s", "t"] {
                let entries = [
                    ("w1", gaussian_matrix(&mut rng, half, hidden, std)),
                    ("b1", Mat::zeros((1, hidden))),
                    ("w2", Mat::zeros((hidden, half))),
                    ("b2", Mat::zeros((1, half))),
                ];
                for (part, value) in entries {
                    p.insert(param_name(layer, net, part), value)
                        .expect("fresh names, finite values");
                }
            }
        }
        p
    }

    fn halves(&self, layer: usize) -> ((usize, usize), (usize, usize)) {
        let (h, d) = (self.half(), self.cfg.dim);
        if layer.is_multiple_of(2) {
            ((0, h), (h, d))
        } else {
            ((h, d), (0, h))
        }
    }

    fn mlp_graph(&self, tape: &mut Tape, vars: &ParamVars, layer: usize, net: &str, x: Var) -> Result<Var> {
        let w1 = vars.get(&param_name(layer, net, "w1"))?;
        let b1 = vars.get(&param_name(layer, net, "b1"))?;
        let w2 = vars.get(&param_name(layer, net, "w2"))?;
        let b2 = vars.get(&param_name(layer, net, "b2"))?;
        let pre = tape.affine(x, w1, b1)?;
        let h = tape.tanh(pre)?;
        Ok(tape.affine(h, w2, b2)?)
    }

    fn mlp<'a>(&self, params: &'a ParamSet, layer: usize, net: &str) -> Result<Mlp<'a>> {
        Ok(Mlp {
            w1: params.get(&param_name(layer, net, "w1"))?,
            b1: params.get(&param_name(layer, net, "b1"))?,
            w2: params.get(&param_name(layer, net, "w2"))?,
            b2: params.get(&param_name(layer, net, "b2"))?,
        })
    }

    fn bounded_scale(&self, raw: &Mat) -> Mat {
        let c = self.cfg.scale_clamp;
        raw.mapv(|v| c * (v / c).tanh())
    }

    /// Records the forward map on `tape`, returning `(z, logdet)` with shapes
    /// `n x d` and `n x 1`.
    pub fn forward_graph(&self, tape: &mut Tape, vars: &ParamVars, u: Var) -> Result<(Var, Var)> {
        check_features(tape.value(u).ncols(), self.cfg.dim)?;
        let n = tape.value(u).nrows();
        let c = self.cfg.scale_clamp;
        let mut x = u;
        let mut logdet = tape.constant(Mat::zeros((n, 1)))?;
        for layer in 0..self.cfg.layers {
            let ((c0, c1), (t0, t1)) = self.halves(layer);
            let cond = tape.columns(x, c0, c1)?;
            let moved = tape.columns(x, t0, t1)?;
            let raw = self.mlp_graph(tape, vars, layer, "s", cond)?;
            let raw = tape.scale(raw, 1.0 / c)?;
            let squashed = tape.tanh(raw)?;
            let log_scale = tape.scale(squashed, c)?;
            let shift = self.mlp_graph(tape, vars, layer, "t", cond)?;
            let scale = tape.exp(log_scale)?;
            let scaled = tape.mul(moved, scale)?;
            let moved = tape.add(scaled, shift)?;
            x = if layer.is_multiple_of(2) {
                tape.concat_cols(cond, moved)?
            } else {
                tape.concat_cols(moved, cond)?
            };
            let layer_logdet = tape.sum_cols(log_scale)?;
            logdet = tape.add(logdet, layer_logdet)?;
        }
        Ok((x, logdet))
    }

    /// Forward map on a batch (rows are samples) without recording.
    pub fn forward_batch(&self, params: &ParamSet, u: &Mat) -> Result<(Mat, Vec<f64>)> {
        check_features(u.ncols(), self.cfg.dim)?;
        if !u.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteInput("flow_forward"));
        }
        let mut x = u.clone();
        let mut logdet = vec![0.0; u.nrows()];
        for layer in 0..self.cfg.layers {
            let ((c0, c1), (t0, t1)) = self.halves(layer);
            let cond = x.slice(s![.., c0..c1]).to_owned();
            let log_scale = self.bounded_scale(&self.mlp(params, layer, "s")?.eval(&cond));
            let shift = self.mlp(params, layer, "t")?.eval(&cond);
            let moved = &x.slice(s![.., t0..t1]) * &log_scale.mapv(f64::exp) + &shift;
            x.slice_mut(s![.., t0..t1]).assign(&moved);
            for (ld, row) in logdet.iter_mut().zip(log_scale.rows()) {
                *ld += row.sum();
            }
        }
        if !x.iter().all(|v| v.is_finite()) || !logdet.iter().all(|v| v.is_finite()) {
            return Err(ModelError::Diff(DiffError::NonFinite { op: "flow_forward" }));
        }
        Ok((x, logdet))
    }

    pub fn inverse_batch(&self, params: &ParamSet, z: &Mat) -> Result<Mat> {
        check_features(z.ncols(), self.cfg.dim)?;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteInput("flow_inverse"));
        }
        let mut x = z.clone();
        for layer in (0..self.cfg.layers).rev() {
            let ((c0, c1), (t0, t1)) = self.halves(layer);
            let cond = x.slice(s![.., c0..c1]).to_owned();
            let log_scale = self.bounded_scale(&self.mlp(params, layer, "s")?.eval(&cond));
            let shift = self.mlp(params, layer, "t")?.eval(&cond);
            let moved = (&x.slice(s![.., t0..t1]) - &shift) * &log_scale.mapv(|v| (-v).exp());
            x.slice_mut(s![.., t0..t1]).assign(&moved);
        }
        Ok(x)
    }

    pub fn forward(&self, params: &ParamSet, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, logdet) = self.forward_batch(params, &row(u))?;
        Ok((z.iter().copied().collect(), logdet[0]))
    }

    pub fn inverse(&self, params: &ParamSet, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inverse_batch(params, &row(z))?.iter().copied().collect())
    }

    /// `||z||^2 / 2 - log|det dz/du|` for one feature vector.
    pub fn nf_loss(&self, params: &ParamSet, u: &[f64]) -> Result<f64> {
        let (z, logdet) = self.forward(params, u)?;
        Ok(0.5 * z.iter().map(|v| v * v).sum::<f64>() - logdet)
    }

    /// Per-sample negative log-likelihood under a standard normal latent.
    pub fn nll_batch(&self, params: &ParamSet, u: &Mat) -> Result<Vec<f64>> {
        let (z, logdet) = self.forward_batch(params, u)?;
        let norm = 0.5 * self.cfg.dim as f64 * (2.0 * PI).ln();
        Ok(z.rows()
            .into_iter()
            .zip(logdet)
            .map(|(r, ld)| norm + 0.5 * r.dot(&r) - ld)
            .collect())
    }

    /// Density `N(z) |det dz/du|` at one point.
    pub fn density(&self, params: &ParamSet, u: &[f64]) -> Result<f64> {
        Ok((-self.nll_batch(params, &row(u))?[0]).exp())
    }
}

fn row(v: &[f64]) -> Mat {
    Mat::from_shape_vec((1, v.len()), v.to_vec()).expect("1 x n shape")
}

/// Flow backbone: extractor stub, coupling flow and the transform set used
/// for scoring.
#[derive(Debug, Clone)]
pub struct NfBackbone {
    pub flow: CouplingFlow,
    pub extractor: FeatureExtractorStub,
    pub transforms: TransformSet,
}

impl NfBackbone {
    pub fn new(flow_cfg: FlowConfig, extractor: FeatureExtractorStub, transforms: TransformSet) -> Result<Self> {
        if extractor.out_dim() != flow_cfg.dim {
            return Err(ModelError::Config(format!(
                "extractor emits {} features, flow expects {}",
                extractor.out_dim(),
                flow_cfg.dim
            )));
        }
        Ok(Self {
            flow: CouplingFlow::new(flow_cfg)?,
            extractor,
            transforms,
        })
    }

    /// Mean over the transform set of the per-transform negative
    /// log-likelihood of the extracted features.
    pub fn nf_score(&self, params: &ParamSet, x: &Mat) -> Result<Vec<f64>> {
        let mut total = vec![0.0; x.nrows()];
        for t in self.transforms.iter() {
            let feats = self.extractor.apply(&t.apply(x)?)?;
            for (acc, v) in total.iter_mut().zip(self.flow.nll_batch(params, &feats)?) {
                *acc += v;
            }
        }
        let k = self.transforms.len() as f64;
        Ok(total.into_iter().map(|v| v / k).collect())
    }
}

impl Backbone for NfBackbone {
    fn name(&self) -> &'static str {
        "nf"
    }

    fn input_dim(&self) -> usize {
        self.extractor.in_dim()
    }

    fn init_params(&self, seed: u64) -> ParamSet {
        self.flow.init_params(seed)
    }

    fn make_batch(&self, x: &Mat, _rng: &mut ChaCha8Rng) -> Result<Batch> {
        Ok(Batch {
            features: self.extractor.apply(x)?,
            noise: None,
        })
    }

    fn loss_column(&self, tape: &mut Tape, vars: &ParamVars, batch: &Batch) -> Result<Var> {
        let u = tape.constant(batch.features.clone())?;
        let (z, logdet) = self.flow.forward_graph(tape, vars, u)?;
        let sq = tape.square(z)?;
        let energy = tape.sum_cols(sq)?;
        let energy = tape.scale(energy, 0.5)?;
        Ok(tape.sub(energy, logdet)?)
    }

    fn scores(&self, params: &ParamSet, x: &Mat) -> Result<Vec<f64>> {
        self.nf_score(params, x)
    }
}

// ---------------------------------------------------------------------------
// Feature adapter + discriminator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleNetConfig {
    pub in_dim: usize,
    pub adapter_dim: usize,
    pub hidden: usize,
    pub noise_std: f64,
    pub th: f64,
}

impl Default for SimpleNetConfig {
    fn default() -> Self {
        Self {
            in_dim: 8,
            adapter_dim: 8,
            hidden: 16,
            noise_std: 0.1,
            th: 0.5,
        }
    }
}

/// Single affine adapter `G` followed by a two-layer ReLU discriminator `D`.
#[derive(Debug, Clone)]
pub struct SimpleNetModel {
    cfg: SimpleNetConfig,
    pub extractor: FeatureExtractorStub,
}

pub const ADAPTER_W: &str = "adapter.w";
pub const ADAPTER_B: &str = "adapter.b";
pub const DISC_W1: &str = "disc.w1";
pub const DISC_B1: &str = "disc.b1";
pub const DISC_W2: &str = "disc.w2";
pub const DISC_B2: &str = "disc.b2";

/// `q + eps`, `eps ~ N(0, noise_std^2)` per coordinate.
pub fn sn_perturb(q: &Mat, noise_std: f64, rng: &mut ChaCha8Rng) -> Result<Mat> {
    Ok(q + &perturbation(q.dim(), noise_std, rng)?)
}

fn perturbation(dim: (usize, usize), noise_std: f64, rng: &mut ChaCha8Rng) -> Result<Mat> {
    if !(noise_std >= 0.0) {
        return Err(ModelError::NegativeNoiseStd(noise_std));
    }
    if noise_std == 0.0 {
        return Ok(Mat::zeros(dim));
    }
    let normal = Normal::new(0.0, noise_std).expect("std checked positive");
    Ok(Mat::from_shape_fn(dim, |_| normal.sample(rng)))
}

/// Truncated-L1 pair: `max(0, th - D(q)) + max(0, th + D(q-))`.
pub fn sn_loss(d_nominal: f64, d_perturbed: f64, th: f64) -> f64 {
    (th - d_nominal).max(0.0) + (th + d_perturbed).max(0.0)
}

impl SimpleNetModel {
    pub fn new(cfg: SimpleNetConfig, extractor: FeatureExtractorStub) -> Result<Self> {
        if cfg.adapter_dim == 0 || cfg.adapter_dim > cfg.in_dim {
            return Err(ModelError::Config(format!(
                "adapter_dim must be in 1..={}, got {}",
                cfg.in_dim, cfg.adapter_dim
            )));
        }
        if extractor.out_dim() != cfg.in_dim {
            return Err(ModelError::Config(format!(
                "extractor emits {} features, adapter expects {}",
                extractor.out_dim(),
                cfg.in_dim
            )));
        }
        if !(cfg.th > 0.0) {
            return Err(ModelError::Config(format!("th must be positive, got {}", cfg.th)));
        }
        if !(cfg.noise_std >= 0.0) {
            return Err(ModelError::NegativeNoiseStd(cfg.noise_std));
        }
        if cfg.hidden == 0 {
            return Err(ModelError::Config("discriminator needs hidden units".into()));
        }
        Ok(Self { cfg, extractor })
    }

    pub fn config(&self) -> &SimpleNetConfig {
        &self.cfg
    }

    /// Adapted features `G(F(x))`.
    pub fn adapt(&self, params: &ParamSet, x: &Mat) -> Result<Mat> {
        let f = self.extractor.apply(x)?;
        Ok(f.dot(params.get(ADAPTER_W)?) + params.get(ADAPTER_B)?)
    }

    /// Discriminator output on adapted features, one value per row.
    pub fn discriminate(&self, params: &ParamSet, q: &Mat) -> Result<Vec<f64>> {
        let h = (q.dot(params.get(DISC_W1)?) + params.get(DISC_B1)?).mapv(|v| v.max(0.0));
        let out = h.dot(params.get(DISC_W2)?) + params.get(DISC_B2)?;
        Ok(out.iter().copied().collect())
    }

    /// `D(G(F(x)))`, positive on nominal-looking samples.
    pub fn sn_forward(&self, params: &ParamSet, x: &Mat) -> Result<Vec<f64>> {
        self.discriminate(params, &self.adapt(params, x)?)
    }

    fn disc_graph(&self, tape: &mut Tape, vars: &ParamVars, q: Var) -> Result<Var> {
        let pre = tape.affine(q, vars.get(DISC_W1)?, vars.get(DISC_B1)?)?;
        let h = tape.relu(pre)?;
        Ok(tape.affine(h, vars.get(DISC_W2)?, vars.get(DISC_B2)?)?)
    }
}

impl Backbone for SimpleNetModel {
    fn name(&self) -> &'static str {
        "sn"
    }

    fn input_dim(&self) -> usize {
        self.extractor.in_dim()
    }

    fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let SimpleNetConfig {
            in_dim,
            adapter_dim,
            hidden,
            ..
        } = self.cfg;
        // Adapter starts near the identity on the leading coordinates.
        let mut adapter = gaussian_matrix(&mut rng, in_dim, adapter_dim, 0.1 / (in_dim as f64).sqrt());
        for j in 0..adapter_dim {
            adapter[[j, j]] += 1.0;
        }
        let mut p = ParamSet::new();
        let entries = [
            (ADAPTER_W, adapter),
            (ADAPTER_B, Mat::zeros((1, adapter_dim))),
            (
                DISC_W1,
                gaussian_matrix(&mut rng, adapter_dim, hidden, (2.0 / adapter_dim as f64).sqrt()),
            ),
            (DISC_B1, Mat::from_shape_fn((1, hidden), |_| rng.random_range(0.0..0.1))),
            (
                DISC_W2,
                gaussian_matrix(&mut rng, hidden, 1, (1.0 / hidden as f64).sqrt()),
            ),
            (DISC_B2, Mat::zeros((1, 1))),
        ];
        for (name, value) in entries {
            p.insert(name, value).expect("fresh names, finite values");
        }
        p
    }

    fn make_batch(&self, x: &Mat, rng: &mut ChaCha8Rng) -> Result<Batch> {
        let features = self.extractor.apply(x)?;
        let noise = perturbation((features.nrows(), self.cfg.adapter_dim), self.cfg.noise_std, rng)?;
        Ok(Batch {
            features,
            noise: Some(noise),
        })
    }

    fn loss_column(&self, tape: &mut Tape, vars: &ParamVars, batch: &Batch) -> Result<Var> {
        check_features(batch.features.ncols(), self.cfg.in_dim)?;
        let f = tape.constant(batch.features.clone())?;
        let q = tape.affine(f, vars.get(ADAPTER_W)?, vars.get(ADAPTER_B)?)?;
        let noise = match &batch.noise {
            Some(n) => n.clone(),
            None => Mat::zeros((batch.features.nrows(), self.cfg.adapter_dim)),
        };
        let eps = tape.constant(noise)?;
        let q_minus = tape.add(q, eps)?;
        let d_pos = self.disc_graph(tape, vars, q)?;
        let d_neg = self.disc_graph(tape, vars, q_minus)?;
        let th = self.cfg.th;
        // max(0, th - D(q))
        let pos = tape.neg(d_pos)?;
        let pos = tape.add_scalar(pos, th)?;
        let pos = tape.relu(pos)?;
        // max(0, th + D(q-))
        let neg = tape.add_scalar(d_neg, th)?;
        let neg = tape.relu(neg)?;
        Ok(tape.add(pos, neg)?)
    }

    /// Published score is `-D(G(F(x)))` so that larger means more anomalous.
    fn scores(&self, params: &ParamSet, x: &Mat) -> Result<Vec<f64>> {
        Ok(self.sn_forward(params, x)?.into_iter().map(|v| -v).collect())
    }
}
