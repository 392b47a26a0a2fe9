//! Optimization driver: batch composition across domains, the four
//! training schemes, per-epoch validation selection and the leave-one-out
//! experiment protocol.
//!
//! Schemes: `base` trains one independent model per domain on its own
//! data; `joint` and `dsl` train one model on every domain at once (one
//! mixed batch per step, `batch_size / K` slices per domain);
//! `dsl_contrastive` adds the supervised contrastive regularizer on the
//! pooled encoder embeddings of the step's combined batch. With
//! `lambda = 0` the contrastive scheme runs the identical code path as
//! `dsl` and reproduces its loss trace bit for bit under a shared seed.

mod batch;
mod driver;

pub use batch::{BatchComposer, TrainSlice};
pub use driver::{
    predict_exam_probabilities, run_leave_one_out, train_one, validation_mean_dice, FoldResult,
    LooOutcome, MetricRow, SummaryRow, TrainOutcome, TrainedUnit,
};

use thiserror::Error;

use crate::data::{AugmentationPolicy, DataError};
use crate::dsbn::DsbnError;
use crate::losses::LossError;
use crate::metrics::MetricError;
use crate::network::{ArchConfig, ModelError, Scheme};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became NaN at epoch {epoch} step {step} (lr {lr}, ce {ce}, contrastive {contrastive})")]
    NanLoss {
        epoch: usize,
        step: usize,
        lr: f64,
        ce: f64,
        contrastive: f64,
    },
    #[error("batch size {batch_size} is not divisible by {num_domains} domains")]
    BatchNotDivisible {
        batch_size: usize,
        num_domains: usize,
    },
    #[error("leave-one-out needs at least 3 exams per domain, got {got}")]
    TooFewExams { got: usize },
    #[error("fold {fold} out of range ({folds} folds available)")]
    FoldOutOfRange { fold: usize, folds: usize },
    #[error("invalid split: {0}")]
    BadSplit(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsbn(#[from] DsbnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Training regime. `base|joint|dsl` choose the weight-sharing scheme;
/// `dsl_contrastive` is `dsl` plus the contrastive regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScheme {
    Base,
    Joint,
    Dsl,
    DslContrastive,
}

impl TrainScheme {
    pub const ALL: [TrainScheme; 4] = [
        TrainScheme::Base,
        TrainScheme::Joint,
        TrainScheme::Dsl,
        TrainScheme::DslContrastive,
    ];

    /// The weight-sharing scheme backing this training regime.
    pub fn model_scheme(&self) -> Scheme {
        match self {
            TrainScheme::Base => Scheme::Base,
            TrainScheme::Joint => Scheme::Joint,
            TrainScheme::Dsl | TrainScheme::DslContrastive => Scheme::Dsl,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainScheme::Base => "base",
            TrainScheme::Joint => "joint",
            TrainScheme::Dsl => "dsl",
            TrainScheme::DslContrastive => "dsl_contrastive",
        }
    }
}

impl std::str::FromStr for TrainScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(TrainScheme::Base),
            "joint" => Ok(TrainScheme::Joint),
            "dsl" => Ok(TrainScheme::Dsl),
            "dsl_contrastive" => Ok(TrainScheme::DslContrastive),
            other => Err(format!(
                "unknown scheme {other:?}; valid schemes: base, joint, dsl, dsl_contrastive"
            )),
        }
    }
}

impl std::fmt::Display for TrainScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyper-parameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub scheme: TrainScheme,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub lambda: f64,
    pub seed: u64,
    pub arch: ArchConfig,
    pub augmentation: AugmentationPolicy,
    /// Epochs (1-based) at which to keep weight snapshots for later
    /// embedding analysis.
    pub snapshot_epochs: Vec<usize>,
}

impl TrainConfig {
    /// Reference hyper-parameters: 30 epochs, batch 32, learning rate 1e-4,
    /// tau 0.1, lambda 0.1.
    pub fn new(scheme: TrainScheme, arch: ArchConfig, seed: u64) -> Self {
        TrainConfig {
            scheme,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-4,
            tau: 0.1,
            lambda: 0.1,
            seed,
            arch,
            augmentation: AugmentationPolicy::default(),
            snapshot_epochs: Vec::new(),
        }
    }

    pub fn validate(&self, num_domains: usize) -> Result<(), TrainError> {
        let mixed = !matches!(self.scheme, TrainScheme::Base);
        if mixed && self.batch_size % num_domains != 0 {
            return Err(TrainError::BatchNotDivisible {
                batch_size: self.batch_size,
                num_domains,
            });
        }
        Ok(())
    }
}

/// Exam indices of one domain for one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-domain train/val/test partition of one leave-one-out fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub fold: usize,
    pub per_domain: Vec<DomainSplit>,
}

impl SplitPlan {
    /// Fold `fold` holds out exam `fold` for test and exam `fold+1 (mod n)`
    /// for validation, simultaneously in every domain; the rest train.
    pub fn leave_one_out(exam_counts: &[usize], fold: usize) -> Result<SplitPlan, TrainError> {
        let folds = Self::num_folds(exam_counts)?;
        if fold >= folds {
            return Err(TrainError::FoldOutOfRange { fold, folds });
        }
        let per_domain = exam_counts
            .iter()
            .map(|&n| {
                let test = fold % n;
                let val = (test + 1) % n;
                DomainSplit {
                    train: (0..n).filter(|&i| i != test && i != val).collect(),
                    val: vec![val],
                    test: vec![test],
                }
            })
            .collect();
        Ok(SplitPlan { fold, per_domain })
    }

    /// One fold per exam of the smallest domain, so each exam is tested at
    /// most once.
    pub fn num_folds(exam_counts: &[usize]) -> Result<usize, TrainError> {
        let min = exam_counts.iter().copied().min().unwrap_or(0);
        if min < 3 {
            return Err(TrainError::TooFewExams { got: min });
        }
        Ok(min)
    }

    pub fn to_split_info(&self) -> crate::network::checkpoint::SplitInfo {
        crate::network::checkpoint::SplitInfo {
            fold: self.fold,
            train: self.per_domain.iter().map(|d| d.train.clone()).collect(),
            val: self.per_domain.iter().map(|d| d.val.clone()).collect(),
            test: self.per_domain.iter().map(|d| d.test.clone()).collect(),
        }
    }
}

/// One epoch's averaged loss terms and validation score.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub ce: f64,
    pub contrastive: f64,
    pub total: f64,
    pub val_dice: f64,
}
