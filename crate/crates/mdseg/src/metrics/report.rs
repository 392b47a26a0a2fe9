//! Per-exam metric reports: the full post-processing chain followed by all
//! six metrics, per foreground class and averaged.

use serde::Serialize;

use super::{
    assd, binarize_labels, dice, largest_component, morphological_closing, mssd, ravd, sensitivity,
    specificity, stack_argmax_labels, Mask3, MetricError, MetricValue,
};
use crate::data::LabelVolume;

/// The six reported metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Dice,
    Sensitivity,
    Specificity,
    Ravd,
    AssdMm,
    MssdMm,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Dice,
        MetricKind::Sensitivity,
        MetricKind::Specificity,
        MetricKind::Ravd,
        MetricKind::AssdMm,
        MetricKind::MssdMm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Dice => "dice",
            MetricKind::Sensitivity => "sensitivity",
            MetricKind::Specificity => "specificity",
            MetricKind::Ravd => "ravd",
            MetricKind::AssdMm => "assd_mm",
            MetricKind::MssdMm => "mssd_mm",
        }
    }
}

/// All six metrics of one foreground class.
#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub dice: MetricValue,
    pub sensitivity: MetricValue,
    pub specificity: MetricValue,
    pub ravd: MetricValue,
    pub assd_mm: MetricValue,
    pub mssd_mm: MetricValue,
}

impl ClassMetrics {
    pub fn get(&self, kind: MetricKind) -> MetricValue {
        match kind {
            MetricKind::Dice => self.dice,
            MetricKind::Sensitivity => self.sensitivity,
            MetricKind::Specificity => self.specificity,
            MetricKind::Ravd => self.ravd,
            MetricKind::AssdMm => self.assd_mm,
            MetricKind::MssdMm => self.mssd_mm,
        }
    }
}

/// Per-class metrics plus per-metric averages over the defined classes,
/// with undefined counts disclosed.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub exam_id: String,
    pub domain: usize,
    pub per_class: Vec<ClassMetrics>,
    pub mean: Vec<(String, MetricValue)>,
    pub undefined_counts: Vec<(String, usize)>,
}

impl MetricsReport {
    pub fn mean_of(&self, kind: MetricKind) -> MetricValue {
        self.mean
            .iter()
            .find(|(name, _)| name == kind.as_str())
            .and_then(|(_, v)| *v)
    }
}

/// Runs the full chain on one exam: stack the predicted class maps,
/// binarize per foreground class, keep the largest component, close, then
/// score all six metrics against the ground truth.
pub fn per_bone_report(
    gt: &LabelVolume,
    predicted_slices: &[Vec<f64>],
    classes: usize,
    spacing: (f64, f64, f64),
) -> Result<MetricsReport, MetricError> {
    let (z, h, w) = gt.shape;
    if predicted_slices.len() != z {
        return Err(MetricError::SliceCountMismatch {
            expected: z,
            got: predicted_slices.len(),
        });
    }
    let pred_labels = stack_argmax_labels(predicted_slices, classes, h, w)?;

    let mut per_class = Vec::new();
    for class in 1..classes {
        let gt_mask = binarize_labels(&gt.labels, gt.shape, class as u8);
        let raw_pred = binarize_labels(&pred_labels, gt.shape, class as u8);
        let pred = morphological_closing(&largest_component(&raw_pred));
        per_class.push(ClassMetrics {
            class,
            dice: dice(&gt_mask, &pred)?,
            sensitivity: sensitivity(&gt_mask, &pred)?,
            specificity: specificity(&gt_mask, &pred)?,
            ravd: ravd(&gt_mask, &pred)?,
            assd_mm: assd(&gt_mask, &pred, spacing)?,
            mssd_mm: mssd(&gt_mask, &pred, spacing)?,
        });
    }

    let mut mean = Vec::new();
    let mut undefined_counts = Vec::new();
    for kind in MetricKind::ALL {
        let defined: Vec<f64> = per_class.iter().filter_map(|c| c.get(kind)).collect();
        let undefined = per_class.len() - defined.len();
        let avg = if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        mean.push((kind.as_str().to_string(), avg));
        undefined_counts.push((kind.as_str().to_string(), undefined));
    }

    Ok(MetricsReport {
        exam_id: gt.exam_id.clone(),
        domain: gt.domain,
        per_class,
        mean,
        undefined_counts,
    })
}

/// Post-processed prediction of one class, exposed for pipeline tests.
pub fn postprocess_class(pred_labels: &[u8], shape: (usize, usize, usize), class: u8) -> Mask3 {
    morphological_closing(&largest_component(&binarize_labels(
        pred_labels,
        shape,
        class,
    )))
}
