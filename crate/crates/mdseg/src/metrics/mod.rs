//! Post-processing and evaluation metrics for 3D segmentation masks.
//!
//! Predicted 2D class maps are stacked into a volume, binarized per class,
//! reduced to the largest 26-connected component and smoothed by a
//! morphological closing with a radius-2 Euclidean ball. The six reported
//! metrics are Dice, sensitivity, specificity, relative absolute volume
//! difference, average symmetric surface distance and maximum symmetric
//! surface distance (both in millimetres). Metrics that are undefined on a
//! pair (empty ground truth, empty surface) carry an explicit marker and
//! are excluded from averages with their count disclosed.

mod ks;
mod overlap;
mod postproc;
mod report;
mod surface;

pub use ks::ks_two_sample;
pub use overlap::{dice, ravd, sensitivity, specificity};
pub use postproc::{binarize_labels, largest_component, morphological_closing, stack_and_binarize, stack_argmax_labels};
pub use report::{per_bone_report, postprocess_class, ClassMetrics, MetricKind, MetricsReport};
pub use surface::{assd, extract_surface, mssd, SurfaceVoxelSet};

use thiserror::Error;

/// A defined metric value, or `None` when the metric is undefined for the
/// given pair (and must be excluded from averages).
pub type MetricValue = Option<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("mask shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("slice {index} has {got} values, expected {expected}")]
    InconsistentSlices {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("class {class} out of range ({classes} classes)")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("empty sample passed to the KS test")]
    EmptySample,
    #[error("prediction has {got} slices, ground truth {expected}")]
    SliceCountMismatch { expected: usize, got: usize },
}

/// Dense boolean 3D mask with `(z, y, x)` indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3 {
    pub shape: (usize, usize, usize),
    pub data: Vec<bool>,
}

impl Mask3 {
    pub fn new(shape: (usize, usize, usize), data: Vec<bool>) -> Self {
        assert_eq!(data.len(), shape.0 * shape.1 * shape.2);
        Mask3 { shape, data }
    }

    pub fn empty(shape: (usize, usize, usize)) -> Self {
        Mask3 {
            shape,
            data: vec![false; shape.0 * shape.1 * shape.2],
        }
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape.1 + y) * self.shape.2 + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.index(z, y, x)]
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_all_background(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    fn check_same_shape(&self, other: &Mask3) -> Result<(), MetricError> {
        if self.shape != other.shape {
            return Err(MetricError::ShapeMismatch {
                a: self.shape,
                b: other.shape,
            });
        }
        Ok(())
    }
}
