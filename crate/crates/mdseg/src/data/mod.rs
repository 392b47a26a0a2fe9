//! Synthetic two-domain volumetric data.
//!
//! Stands in for two unpaired anatomical MR datasets: domain 0 carries
//! three smooth blob structures on a bright-structure intensity model with
//! mild noise, domain 1 carries a thin curved plate plus a sphere-like blob
//! with a different contrast and a noticeably higher noise level. Exams are
//! generated deterministically per `(seed, domain, exam index)`.
//!
//! Slices are normalized to zero mean / unit variance before entering the
//! network; training applies on-the-fly 2D augmentation (flips, translation
//! up to ±25%, rotation up to ±45°) with the same geometric transform on
//! image and mask.

mod augment;
mod generate;
mod io;

pub use augment::augment;
pub use generate::{generate_dataset, synth_domain_specs, NUM_DOMAINS};
pub use io::{load_dataset_dir, load_exam, save_exam, DomainData, EXAM_MAGIC};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("volume {size:?} too small to place {structures} structures for domain {domain}")]
    VolumeTooSmall {
        domain: usize,
        structures: usize,
        size: (usize, usize, usize),
    },
    #[error("constant slice has zero variance, cannot normalize")]
    ConstantSlice,
    #[error("need at least 3 exams for leave-one-out, got {got}")]
    TooFewExams { got: usize },
    #[error("unknown domain {0} (generator provides {NUM_DOMAINS})")]
    UnknownDomain(usize),
    #[error("voxel/label buffer length {got} does not match shape {shape:?}")]
    ShapeMismatch {
        shape: (usize, usize, usize),
        got: usize,
    },
    #[error("volume needs Z >= 4 and positive spacing")]
    InvalidVolume,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: wanted {expected} more bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("checksum mismatch: header {header}, payload {computed}")]
    ChecksumMismatch { header: String, computed: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A 3D image stack with voxel spacing in millimetres, `(sz, sy, sx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub exam_id: String,
    pub domain: usize,
    pub shape: (usize, usize, usize),
    pub voxels: Vec<f64>,
    pub spacing: (f64, f64, f64),
}

impl Volume {
    pub fn new(
        exam_id: String,
        domain: usize,
        shape: (usize, usize, usize),
        voxels: Vec<f64>,
        spacing: (f64, f64, f64),
    ) -> Result<Self, DataError> {
        let (z, h, w) = shape;
        if voxels.len() != z * h * w {
            return Err(DataError::ShapeMismatch {
                shape,
                got: voxels.len(),
            });
        }
        if z < 4 || spacing.0 <= 0.0 || spacing.1 <= 0.0 || spacing.2 <= 0.0 {
            return Err(DataError::InvalidVolume);
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidVolume);
        }
        Ok(Volume {
            exam_id,
            domain,
            shape,
            voxels,
            spacing,
        })
    }

    pub fn num_slices(&self) -> usize {
        self.shape.0
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let plane = self.shape.1 * self.shape.2;
        &self.voxels[z * plane..(z + 1) * plane]
    }
}

/// Integer class labels aligned with a [`Volume`]; background is 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    pub exam_id: String,
    pub domain: usize,
    pub shape: (usize, usize, usize),
    pub labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(
        exam_id: String,
        domain: usize,
        shape: (usize, usize, usize),
        labels: Vec<u8>,
    ) -> Result<Self, DataError> {
        let (z, h, w) = shape;
        if labels.len() != z * h * w {
            return Err(DataError::ShapeMismatch {
                shape,
                got: labels.len(),
            });
        }
        Ok(LabelVolume {
            exam_id,
            domain,
            shape,
            labels,
        })
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let plane = self.shape.1 * self.shape.2;
        &self.labels[z * plane..(z + 1) * plane]
    }
}

/// Augmentation ranges; flips are per-axis switches, translation is a
/// fraction of the extent, rotation is in degrees (both directions).
#[derive(Debug, Clone, Copy)]
pub struct AugmentationPolicy {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub max_translation_frac: f64,
    pub max_rotation_deg: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            flip_horizontal: true,
            flip_vertical: true,
            max_translation_frac: 0.25,
            max_rotation_deg: 45.0,
        }
    }
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        AugmentationPolicy {
            flip_horizontal: false,
            flip_vertical: false,
            max_translation_frac: 0.0,
            max_rotation_deg: 0.0,
        }
    }

    pub fn validate(&self) -> bool {
        (0.0..=1.0).contains(&self.max_translation_frac)
            && (0.0..=180.0).contains(&self.max_rotation_deg)
    }
}

/// Normalizes one slice to zero mean and unit variance.
pub fn normalize_slice(slice: &[f64]) -> Result<Vec<f64>, DataError> {
    let n = slice.len() as f64;
    let mean = slice.iter().sum::<f64>() / n;
    let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(DataError::ConstantSlice);
    }
    let inv_std = 1.0 / var.sqrt();
    Ok(slice.iter().map(|v| (v - mean) * inv_std).collect())
}
