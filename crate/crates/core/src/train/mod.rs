//! Multiclass logistic regression trained with DPSGD, in plaintext and over
//! secret shares, plus the locally initialised global training pipeline.
//!
//! The model is one-vs-all: `c` linear scorers `u_j = x . w_j + b_j` passed
//! through the piecewise sigmoid. Parameters are stored flat as
//! `[W (d x c, row-major) | b (c)]`, so a per-sample gradient is
//! `vec(x^T (y_hat - y)) || (y_hat - y)` in the same layout.

mod pea;
mod plain;
mod secure;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dp::{sigma_for, DpError, PrivacyBudget};
use crate::mpc::MpcError;
use crate::numeric::{FieldElement, FixedPoint, NumericError};

pub use pea::{init_global_model, pea_train, InitCandidate, InitReport, PeaConfig, PeaReport};
pub use plain::{
    per_sample_gradient, piecewise_sigmoid, plaintext_dpsgd, plaintext_dpsgd_with, sample_indices,
};
pub use secure::{
    aggregate_average, clip_gradients, per_sample_gradients, secure_dpsgd, secure_evaluate, secure_forward,
    secure_scores, share_dataset, share_datasets, Accuracy, MinibatchSampler, ProgressFn, SharedData,
    BATCH_LABEL, MODEL_LABEL, NOISE_LABEL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

/// Row-major features with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self, TrainError> {
        if dim == 0 || classes < 2 {
            return Err(TrainError::Config(format!("need dim >= 1 and at least 2 classes, got {dim} and {classes}")));
        }
        if features.len() != labels.len() * dim {
            return Err(TrainError::Config(format!(
                "{} feature values for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TrainError::Config(format!("label {bad} out of range for {classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Config("non-finite feature value".into()));
        }
        Ok(Dataset { features, labels, dim, classes })
    }

    pub fn empty(dim: usize, classes: usize) -> Self {
        Dataset { features: Vec::new(), labels: Vec::new(), dim, classes }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { features, labels, dim: self.dim, classes: self.classes }
    }

    /// Appends `other`'s rows.
    pub fn extend(&mut self, other: &Dataset) -> Result<(), TrainError> {
        if other.dim != self.dim || other.classes != self.classes {
            return Err(TrainError::Config("cannot concatenate datasets of different shapes".into()));
        }
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    /// Rounds every feature to the fixed-point grid.
    pub fn quantize(&self, fp: &FixedPoint) -> Result<Dataset, TrainError> {
        let features = self
            .features
            .iter()
            .map(|&v| Ok(fp.raw_to_f64(fp.to_raw(v)?)))
            .collect::<Result<Vec<_>, NumericError>>()?;
        Ok(Dataset { features, ..self.clone() })
    }

    /// Rows of `[x (fixed point) | one-hot(y) (integers)]`.
    pub fn encode_rows(&self, fp: &FixedPoint) -> Result<Vec<FieldElement>, TrainError> {
        let mut out = Vec::with_capacity(self.len() * (self.dim + self.classes));
        for i in 0..self.len() {
            for &v in self.row(i) {
                out.push(fp.encode(v)?);
            }
            for j in 0..self.classes {
                out.push(if self.labels[i] == j { FieldElement::ONE } else { FieldElement::ZERO });
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dim: usize,
    pub classes: usize,
    /// `[W (dim x classes, row-major) | b (classes)]`.
    pub params: Vec<f64>,
}

impl Model {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Model { dim, classes, params: vec![0.0; (dim + 1) * classes] }
    }

    /// Uniform weights in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(dim: usize, classes: usize, scale: f64, rng: &mut R) -> Self {
        let params = (0..(dim + 1) * classes).map(|_| rng.random_range(-scale..=scale)).collect();
        Model { dim, classes, params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.params[i * self.classes + j]
    }

    pub fn bias(&self, j: usize) -> f64 {
        self.params[self.dim * self.classes + j]
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|j| self.bias(j) + (0..self.dim).map(|i| x[i] * self.weight(i, j)).sum::<f64>())
            .collect()
    }

    /// Index of the largest score; the lowest index wins ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = (0..data.len()).filter(|&i| self.predict(data.row(i)) == data.labels[i]).count();
        hits as f64 / data.len() as f64
    }

    pub fn encode(&self, fp: &FixedPoint) -> Result<Vec<FieldElement>, TrainError> {
        Ok(fp.encode_vec(&self.params)?)
    }

    pub fn decode(fp: &FixedPoint, dim: usize, classes: usize, values: &[FieldElement]) -> Result<Self, TrainError> {
        if values.len() != (dim + 1) * classes {
            return Err(TrainError::Config(format!("{} values for a {dim}x{classes} model", values.len())));
        }
        Ok(Model { dim, classes, params: fp.decode_vec(values)? })
    }
}

/// Gaussian blobs: class `j` is centred at `separation * e_j` (two classes
/// at `+-separation / 2 * e_0`) with per-coordinate standard deviation
/// `spread`; labels cycle through the classes.
pub fn synthetic_blobs<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    spread: f64,
    rng: &mut R,
) -> Result<Dataset, TrainError> {
    if classes > 2 && classes > dim {
        return Err(TrainError::Config(format!("{classes} blob centres need at least {classes} dimensions")));
    }
    let normal = Normal::new(0.0, spread).map_err(|e| TrainError::Config(format!("spread: {e}")))?;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes.max(1);
        for a in 0..dim {
            let centre = match (classes, a) {
                (2, 0) => if y == 0 { -separation / 2.0 } else { separation / 2.0 },
                (2, _) => 0.0,
                _ if a == y => separation,
                _ => 0.0,
            };
            features.push(centre + normal.sample(rng));
        }
        labels.push(y);
    }
    Dataset::new(features, labels, dim, classes)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in v.iter().enumerate().skip(1) {
        if s > v[best] {
            best = j;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warm-up over the first 30% of steps from `max / 25` to `max`,
    /// then linear decay to `max / 25e4`.
    OneCycle { max: f64 },
}

impl LrSchedule {
    pub fn rate(&self, t: u64, total: u64) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::OneCycle { max } => {
                let start = max / 25.0;
                let end = start / 1e4;
                let warm = ((0.3 * total as f64).ceil() as u64).max(1);
                if t < warm {
                    start + (max - start) * t as f64 / warm as f64
                } else if total <= warm + 1 {
                    max
                } else {
                    let frac = (t - warm) as f64 / (total - warm - 1) as f64;
                    max - (max - end) * frac.min(1.0)
                }
            }
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        let v = match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::OneCycle { max } => max,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(TrainError::Config(format!("learning rate must be positive, got {v}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrivacyMode {
    /// Calibrate the noise to a target budget.
    Budget(PrivacyBudget),
    /// Use this noise scale directly (no accounting).
    Sigma(f64),
    /// Neither clipping nor noise.
    NonPrivate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpsgdConfig {
    pub batch: usize,
    pub iterations: u64,
    pub clip: f64,
    pub lr: LrSchedule,
    pub privacy: PrivacyMode,
}

impl DpsgdConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(TrainError::Config(format!("clipping bound must be positive, got {}", self.clip)));
        }
        self.lr.validate()?;
        self.sigma().map(|_| ())
    }

    pub fn is_private(&self) -> bool {
        self.privacy != PrivacyMode::NonPrivate
    }

    /// Noise scale; zero when non-private or when no step is taken.
    pub fn sigma(&self) -> Result<f64, TrainError> {
        match self.privacy {
            PrivacyMode::Budget(b) if self.iterations == 0 => {
                crate::dp::check_guard(b.epsilon, b.delta)?;
                Ok(0.0)
            }
            PrivacyMode::Budget(b) => Ok(sigma_for(b.epsilon, b.delta, self.iterations, self.clip)?),
            PrivacyMode::Sigma(s) if s >= 0.0 && s.is_finite() => Ok(s),
            PrivacyMode::Sigma(s) => Err(TrainError::Config(format!("sigma must be non-negative, got {s}"))),
            PrivacyMode::NonPrivate => Ok(0.0),
        }
    }

    pub fn budget(&self) -> Option<PrivacyBudget> {
        match self.privacy {
            PrivacyMode::Budget(b) => Some(b),
            _ => None,
        }
    }
}

/// How the secure clip turns `1/||g||` into `C/||g||`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipScale {
    /// Integer `C`: a public multiplication, no truncation.
    Integer(i128),
    /// Fractional `C` at fixed-point scale, followed by a floor truncation.
    Fixed(i128),
}

impl ClipScale {
    pub fn new(fp: &FixedPoint, clip: f64) -> Result<Self, TrainError> {
        if clip.fract() == 0.0 && clip >= 1.0 && clip < (1u64 << 20) as f64 {
            Ok(ClipScale::Integer(clip as i128))
        } else {
            Ok(ClipScale::Fixed(fp.to_raw(clip)?))
        }
    }
}

/// Fixed-point factor `eta_t / |batch|` applied to the noisy gradient sum.
pub fn step_factor_raw(fp: &FixedPoint, lr: f64, batch: usize) -> Result<i128, TrainError> {
    Ok(fp.to_raw(lr / batch as f64)?)
}
