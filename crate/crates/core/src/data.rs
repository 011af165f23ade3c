//! Synthetic feature datasets with controlled contamination, and the `.cmft`
//! binary feature format.
//!
//! Features are held at `f32` precision (stored in `f64`) so that a dataset
//! survives a save/load cycle bit for bit.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::diffcore::Mat;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("contamination rate must lie in [0, 0.5], got {0}")]
    InvalidRate(f64),
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("dataset has non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label count {labels} does not match row count {rows}")]
    LabelCount { rows: usize, labels: usize },
    #[error("bad magic: expected \"CMFT\"")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("dimensions overflow: N={n}, d={d}")]
    DimOverflow { n: u32, d: u32 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("invalid label byte {0}")]
    BadLabel(u8),
    #[error("empty dataset")]
    Empty,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    /// Stable machine-readable code for file-format failures.
    pub fn code(&self) -> &'static str {
        match self {
            DataError::BadMagic => "bad-magic",
            DataError::Truncated { .. } => "truncated",
            DataError::DimOverflow { .. } => "dim-overflow",
            DataError::UnsupportedVersion(_) => "unsupported-version",
            DataError::TrailingBytes(_) => "trailing-bytes",
            DataError::BadLabel(_) => "bad-label",
            DataError::Empty => "empty",
            DataError::Io { .. } => "io",
            DataError::InvalidRate(_) | DataError::Config(_) => "config",
            DataError::NonFinite { .. } | DataError::LabelCount { .. } => "invalid-dataset",
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Nominal = 0,
    Anomalous = 1,
    Unknown = 255,
}

impl Label {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Label::Nominal),
            1 => Ok(Label::Anomalous),
            255 => Ok(Label::Unknown),
            other => Err(DataError::BadLabel(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum Provenance {
    Generated { config: GeneratorConfig, split: String },
    File { path: PathBuf },
    Derived { note: String },
}

/// N samples of d features plus evaluation-only labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Mat,
    eval_labels: Vec<Label>,
    pub provenance: Provenance,
    pub contamination_rate: f64,
}

fn to_single(v: f64) -> f64 {
    v as f32 as f64
}

impl FeatureDataset {
    pub fn new(features: Mat, eval_labels: Vec<Label>, provenance: Provenance) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(DataError::Empty);
        }
        if eval_labels.len() != features.nrows() {
            return Err(DataError::LabelCount {
                rows: features.nrows(),
                labels: eval_labels.len(),
            });
        }
        for ((row, col), v) in features.indexed_iter() {
            if !v.is_finite() || !(*v as f32).is_finite() {
                return Err(DataError::NonFinite { row, col });
            }
        }
        let n_anom = eval_labels.iter().filter(|l| **l == Label::Anomalous).count();
        Ok(Self {
            features: features.mapv(to_single),
            contamination_rate: n_anom as f64 / eval_labels.len() as f64,
            eval_labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Training code only ever receives this matrix.
    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn eval_labels(&self) -> &[Label] {
        &self.eval_labels
    }

    /// Labels as 0/1 for metric computation. `None` if any label is unknown.
    pub fn binary_labels(&self) -> Option<Vec<u8>> {
        self.eval_labels
            .iter()
            .map(|l| match l {
                Label::Nominal => Some(0),
                Label::Anomalous => Some(1),
                Label::Unknown => None,
            })
            .collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.eval_labels.iter().filter(|l| **l == label).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NominalKind {
    GaussianBlobs,
    Ring,
    GridTexture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    UniformOutlier,
    ShiftedCluster,
    LocalDeformation,
}

impl fmt::Display for NominalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NominalKind::GaussianBlobs => "gaussian-blobs",
            NominalKind::Ring => "ring",
            NominalKind::GridTexture => "grid-texture",
        })
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::UniformOutlier => "uniform-outlier",
            AnomalyKind::ShiftedCluster => "shifted-cluster",
            AnomalyKind::LocalDeformation => "local-deformation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub kind: NominalKind,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_clusters: usize,
    pub anomaly: AnomalyKind,
    pub contamination_rate: f64,
    /// Displacement of shifted-cluster anomalies, in units of the nominal
    /// per-coordinate standard deviation.
    pub shift_sigmas: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: NominalKind::GaussianBlobs,
            dim: 8,
            n_train: 400,
            n_test: 200,
            n_clusters: 2,
            anomaly: AnomalyKind::LocalDeformation,
            contamination_rate: 0.10,
            shift_sigmas: 2.5,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        check_rate(self.contamination_rate)?;
        if self.dim == 0 {
            return Err(DataError::Config("dim must be positive".into()));
        }
        if self.kind == NominalKind::Ring && self.dim < 2 {
            return Err(DataError::Config("ring needs dim >= 2".into()));
        }
        if self.n_train == 0 || self.n_test < 2 {
            return Err(DataError::Config("need n_train >= 1 and n_test >= 2".into()));
        }
        if self.n_clusters == 0 {
            return Err(DataError::Config("n_clusters must be positive".into()));
        }
        if !(self.shift_sigmas > 0.0) {
            return Err(DataError::Config("shift_sigmas must be positive".into()));
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=0.5).contains(&rate) {
        Ok(())
    } else {
        Err(DataError::InvalidRate(rate))
    }
}

/// Axis-aligned Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Component {
    fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| ((v - m) / s).powi(2))
            .sum()
    }
}

/// True generating distribution of nominal samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NominalModel {
    /// Equal-weight mixture of axis-aligned Gaussians.
    Mixture(Vec<Component>),
    /// Circle of `radius` in the first two coordinates; isotropic `std`
    /// radially and in every remaining coordinate.
    Ring { dim: usize, radius: f64, std: f64 },
}

impl NominalModel {
    pub fn build(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, 0);
        let d = cfg.dim;
        Ok(match cfg.kind {
            NominalKind::GaussianBlobs => {
                // Centers spread on a sphere of radius 3 around the origin.
                let comps = (0..cfg.n_clusters)
                    .map(|_| {
                        let dir = unit_vector(&mut rng, d);
                        let spread = if cfg.n_clusters == 1 { 0.0 } else { 3.0 };
                        Component {
                            mean: dir.iter().map(|v| v * spread).collect(),
                            std: (0..d).map(|_| rng.random_range(0.6..1.0)).collect(),
                        }
                    })
                    .collect();
                NominalModel::Mixture(comps)
            }
            NominalKind::GridTexture => {
                let side = (cfg.n_clusters as f64).sqrt().ceil() as usize;
                let comps = (0..cfg.n_clusters)
                    .map(|k| {
                        let mut mean = vec![0.0; d];
                        mean[0] = 3.0 * (k % side) as f64;
                        if d > 1 {
                            mean[1] = 3.0 * (k / side) as f64;
                        }
                        Component {
                            mean,
                            std: vec![0.5; d],
                        }
                    })
                    .collect();
                NominalModel::Mixture(comps)
            }
            NominalKind::Ring => NominalModel::Ring {
                dim: d,
                radius: 3.0,
                std: 0.3,
            },
        })
    }

    /// Single Gaussian with the sample mean and per-coordinate std of `x`.
    pub fn fit_diagonal(x: &Mat) -> Self {
        let n = x.nrows() as f64;
        let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
        let std = x
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| {
                let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                var.sqrt().max(1e-6)
            })
            .collect();
        NominalModel::Mixture(vec![Component { mean, std }])
    }

    pub fn dim(&self) -> usize {
        match self {
            NominalModel::Mixture(c) => c[0].mean.len(),
            NominalModel::Ring { dim, .. } => *dim,
        }
    }

    /// Squared Mahalanobis distance to the closest part of the nominal
    /// support (nearest component, or the ring's centre line).
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        match self {
            NominalModel::Mixture(comps) => comps.iter().map(|c| c.mahalanobis_sq(x)).fold(f64::INFINITY, f64::min),
            NominalModel::Ring { radius, std, .. } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let rest: f64 = x[2..].iter().map(|v| v * v).sum();
                ((r - radius).powi(2) + rest) / (std * std)
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        match self {
            NominalModel::Mixture(comps) => {
                let c = &comps[rng.random_range(0..comps.len())];
                let x = c.mean.iter().zip(&c.std).map(|(m, s)| m + s * normal(rng)).collect();
                (x, c.std.clone())
            }
            NominalModel::Ring { dim, radius, std } => {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let r = radius + std * normal(rng);
                let mut x = vec![r * angle.cos(), r * angle.sin()];
                x.extend((2..*dim).map(|_| std * normal(rng)));
                (x, vec![*std; *dim])
            }
        }
    }

    fn bounding_box(&self) -> Vec<(f64, f64)> {
        match self {
            NominalModel::Mixture(comps) => (0..self.dim())
                .map(|j| {
                    let lo = comps
                        .iter()
                        .map(|c| c.mean[j] - 4.0 * c.std[j])
                        .fold(f64::INFINITY, f64::min);
                    let hi = comps
                        .iter()
                        .map(|c| c.mean[j] + 4.0 * c.std[j])
                        .fold(f64::NEG_INFINITY, f64::max);
                    (lo - 2.0, hi + 2.0)
                })
                .collect(),
            NominalModel::Ring { dim, radius, std } => (0..*dim)
                .map(|j| {
                    let half = if j < 2 { radius + 4.0 * std } else { 4.0 * std };
                    (-half - 2.0, half + 2.0)
                })
                .collect(),
        }
    }
}

/// 99.9% quantile of the chi-square distribution with `dim` degrees of
/// freedom: the squared Mahalanobis radius of the nominal ellipsoid.
pub fn ellipsoid_radius_sq(dim: usize) -> f64 {
    ChiSquared::new(dim as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.999)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Produces anomalies of one kind relative to a nominal model.
#[derive(Debug, Clone)]
pub struct AnomalySource<'a> {
    model: &'a NominalModel,
    kind: AnomalyKind,
    shift_sigmas: f64,
    direction: Vec<f64>,
}

impl<'a> AnomalySource<'a> {
    /// `direction_seed` fixes the shift direction of shifted-cluster
    /// anomalies, so train and test anomalies share it.
    pub fn new(model: &'a NominalModel, kind: AnomalyKind, shift_sigmas: f64, direction_seed: u64) -> Self {
        let mut rng = stream(direction_seed, 7);
        let direction = unit_vector(&mut rng, model.dim());
        Self {
            model,
            kind,
            shift_sigmas,
            direction,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.kind {
            AnomalyKind::UniformOutlier => {
                let bounds = self.model.bounding_box();
                let limit = ellipsoid_radius_sq(self.model.dim());
                loop {
                    let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
                    // Compare at stored precision so the guarantee survives
                    // the f32 rounding of the dataset.
                    let stored: Vec<f64> = x.iter().map(|v| to_single(*v)).collect();
                    if self.model.mahalanobis_sq(&stored) > limit {
                        return stored;
                    }
                }
            }
            AnomalyKind::ShiftedCluster => {
                let (x, std) = self.model.sample(rng);
                x.iter()
                    .zip(&std)
                    .zip(&self.direction)
                    .map(|((v, s), dir)| v + self.shift_sigmas * s * dir)
                    .collect()
            }
            AnomalyKind::LocalDeformation => {
                let (mut x, std) = self.model.sample(rng);
                let touched = x.len().min(2);
                let mut idx: Vec<usize> = (0..x.len()).collect();
                idx.shuffle(rng);
                for &j in &idx[..touched] {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    x[j] += sign * 4.0 * std[j];
                }
                x
            }
        }
    }
}

fn nominal_matrix(model: &NominalModel, n: usize, rng: &mut ChaCha8Rng) -> Mat {
    let d = model.dim();
    let mut m = Mat::zeros((n, d));
    for mut row in m.rows_mut() {
        let (x, _) = model.sample(rng);
        row.iter_mut().zip(x).for_each(|(r, v)| *r = v);
    }
    m
}

/// Replaces `floor(rate * N)` randomly chosen samples with anomalies.
/// Returns a new dataset; the input is left untouched.
pub fn inject_anomalies(
    nominal: &FeatureDataset,
    source: &AnomalySource<'_>,
    rate: f64,
    seed: u64,
) -> Result<FeatureDataset> {
    check_rate(rate)?;
    if source.model.dim() != nominal.dim() {
        return Err(DataError::Config(format!(
            "anomaly source has dim {}, dataset has {}",
            source.model.dim(),
            nominal.dim()
        )));
    }
    let n = nominal.len();
    let count = (rate * n as f64).floor() as usize;
    if count == 0 {
        return Ok(nominal.clone());
    }
    let mut rng = stream(seed, 3);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut chosen = order[..count].to_vec();
    chosen.sort_unstable();

    let mut features = nominal.features.clone();
    let mut labels = nominal.eval_labels.clone();
    for &i in &chosen {
        let x = source.sample(&mut rng);
        features.row_mut(i).iter_mut().zip(x).for_each(|(r, v)| *r = v);
        labels[i] = Label::Anomalous;
    }
    FeatureDataset::new(
        features,
        labels,
        Provenance::Derived {
            note: format!("{count} {} anomalies injected (seed {seed})", source.kind),
        },
    )
}

/// Training set with exactly `floor(rate * n_train)` anomalies and a test set
/// with a 50/50 nominal/anomalous mix.
pub fn generate(cfg: &GeneratorConfig) -> Result<(FeatureDataset, FeatureDataset)> {
    let model = NominalModel::build(cfg)?;
    let source = AnomalySource::new(&model, cfg.anomaly, cfg.shift_sigmas, cfg.seed);

    let train_nominal = nominal_matrix(&model, cfg.n_train, &mut stream(cfg.seed, 1));
    let train_clean = FeatureDataset::new(
        train_nominal,
        vec![Label::Nominal; cfg.n_train],
        Provenance::Derived { note: "nominal".into() },
    )?;
    let mut train = inject_anomalies(&train_clean, &source, cfg.contamination_rate, cfg.seed)?;
    train.provenance = Provenance::Generated {
        config: cfg.clone(),
        split: "train".into(),
    };
    train.contamination_rate = cfg.contamination_rate;

    let mut rng = stream(cfg.seed, 2);
    let n_anom = cfg.n_test / 2;
    let n_nom = cfg.n_test - n_anom;
    let mut rows: Vec<(Vec<f64>, Label)> = Vec::with_capacity(cfg.n_test);
    for _ in 0..n_nom {
        rows.push((model.sample(&mut rng).0, Label::Nominal));
    }
    for _ in 0..n_anom {
        rows.push((source.sample(&mut rng), Label::Anomalous));
    }
    rows.shuffle(&mut rng);
    let mut features = Mat::zeros((cfg.n_test, cfg.dim));
    let mut labels = Vec::with_capacity(cfg.n_test);
    for (mut row, (x, l)) in features.rows_mut().into_iter().zip(rows) {
        row.iter_mut().zip(x).for_each(|(r, v)| *r = v);
        labels.push(l);
    }
    let test = FeatureDataset::new(
        features,
        labels,
        Provenance::Generated {
            config: cfg.clone(),
            split: "test".into(),
        },
    )?;
    Ok((train, test))
}

pub const MAGIC: &[u8; 4] = b"CMFT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 13;
/// Largest accepted `N * d`.
pub const MAX_ELEMENTS: u64 = 1 << 31;

/// Serializes to the `.cmft` layout: magic, version, `u32` N and d (LE),
/// row-major `f32` features, one label byte per row.
pub fn encode(dataset: &FeatureDataset) -> Vec<u8> {
    let (n, d) = dataset.features.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + n * d * 4 + n);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in dataset.features.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend(dataset.eval_labels.iter().map(|l| *l as u8));
    out
}

pub fn decode(bytes: &[u8], provenance: Provenance) -> Result<FeatureDataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(DataError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes[4] != VERSION {
        return Err(DataError::UnsupportedVersion(bytes[4]));
    }
    let n = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
    let d = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes"));
    let elements = (n as u64)
        .checked_mul(d as u64)
        .filter(|&e| e <= MAX_ELEMENTS)
        .ok_or(DataError::DimOverflow { n, d })?;
    if n == 0 || d == 0 {
        return Err(DataError::Empty);
    }
    let expected = HEADER_LEN as u64 + elements * 4 + n as u64;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(DataError::Truncated { expected, found });
    }
    if found > expected {
        return Err(DataError::TrailingBytes(found - expected));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + elements as usize * 4];
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let features = Mat::from_shape_vec((n as usize, d as usize), values).expect("length checked");
    let labels = bytes[HEADER_LEN + elements as usize * 4..]
        .iter()
        .map(|&b| Label::from_byte(b))
        .collect::<Result<Vec<_>>>()?;
    FeatureDataset::new(features, labels, provenance)
}

pub fn save_features(dataset: &FeatureDataset, path: &Path) -> Result<()> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&encode(dataset)).map_err(io)?;
    f.flush().map_err(io)
}

pub fn load_features(path: &Path) -> Result<FeatureDataset> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io)?
        .read_to_end(&mut bytes)
        .map_err(io)?;
    decode(
        &bytes,
        Provenance::File {
            path: path.to_path_buf(),
        },
    )
}
