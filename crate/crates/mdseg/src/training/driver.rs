//! Scheme training loops, validation-based checkpoint selection, and the
//! leave-one-out protocol.

use crate::data::DomainData;
use crate::dsbn::Mode;
use crate::losses::{ce_loss, contrastive_loss, total_loss, ContrastiveBatch, LossWeights};
use crate::metrics::{
    binarize_labels, dice, per_bone_report, stack_argmax_labels, MetricKind, MetricsReport,
};
use crate::network::{build_model, Model, NetSnapshot};
use crate::seeding::derive_seed;
use crate::tensor::ops::concat_rows;
use crate::tensor::{backward, no_grad, AdamState, Tensor};

use super::batch::{assemble_batch, extract_slices, BatchComposer, TrainSlice};
use super::{EpochTrace, SplitPlan, TrainConfig, TrainError, TrainScheme};

/// One trained net's trace and selection outcome.
#[derive(Debug, Clone)]
pub struct TrainedUnit {
    pub net_index: usize,
    /// The domain this net serves under the base scheme.
    pub domain: Option<usize>,
    pub trace: Vec<EpochTrace>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
}

/// Result of one training run. `model` carries the best-validation weights
/// (the emitted checkpoint); `final_snapshot` the last epoch's weights.
pub struct TrainOutcome {
    pub model: Model,
    pub units: Vec<TrainedUnit>,
    pub final_snapshot: Vec<NetSnapshot>,
    pub epoch_snapshots: Vec<(usize, Vec<NetSnapshot>)>,
}

/// Runs one training job on the given split.
///
/// Base trains one independent net per domain on that domain's slices;
/// the mixed schemes train a single net on every domain per step. The
/// returned model holds the weights of the epoch with the best validation
/// mean Dice per net.
pub fn train_one(
    config: &TrainConfig,
    split: &SplitPlan,
    data: &[DomainData],
) -> Result<TrainOutcome, TrainError> {
    let num_domains = data.len();
    config.validate(num_domains)?;
    if split.per_domain.len() != num_domains {
        return Err(TrainError::BadSplit(format!(
            "split covers {} domains, data has {num_domains}",
            split.per_domain.len()
        )));
    }
    let specs: Vec<_> = data.iter().map(|d| d.spec.clone()).collect();
    let model = build_model(config.scheme.model_scheme(), &specs, config.arch, config.seed)?;

    let train_slices: Vec<Vec<TrainSlice>> = data
        .iter()
        .zip(&split.per_domain)
        .map(|(d, s)| extract_slices(d, &s.train))
        .collect::<Result<_, _>>()?;

    match config.scheme {
        TrainScheme::Base => train_base(config, split, data, &train_slices, model),
        _ => train_mixed(config, split, data, &train_slices, model),
    }
}

fn train_mixed(
    config: &TrainConfig,
    split: &SplitPlan,
    data: &[DomainData],
    train_slices: &[Vec<TrainSlice>],
    mut model: Model,
) -> Result<TrainOutcome, TrainError> {
    let num_domains = data.len();
    let counts: Vec<usize> = train_slices.iter().map(Vec::len).collect();
    let mut composer = BatchComposer::new(&counts, config.batch_size, derive_seed(config.seed, &[0xc0]));
    let contrastive_on = config.scheme == TrainScheme::DslContrastive && config.lambda != 0.0;

    // per-domain target space + label mapping (union under joint)
    let head_channels: Vec<usize> = match model.joint_map() {
        Some(map) => vec![map.union_channels; num_domains],
        None => data.iter().map(|d| d.spec.num_classes()).collect(),
    };
    let class_maps: Vec<Box<dyn Fn(u8) -> usize>> = (0..num_domains)
        .map(|k| match model.joint_map() {
            Some(map) => {
                let map = map.clone();
                Box::new(move |label: u8| map.union_channel(k, label as usize)) as Box<dyn Fn(u8) -> usize>
            }
            None => Box::new(|label: u8| label as usize),
        })
        .collect();

    let params = model.net_parameters(0);
    let mut adam = AdamState::new(&params, config.learning_rate);
    let per_domain = composer.per_domain();
    let steps = composer.steps_per_epoch();

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<NetSnapshot>)> = None;
    let mut epoch_snapshots = Vec::new();

    for epoch in 1..=config.epochs {
        let (mut ce_sum, mut c_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let picks = composer.next_batch();
            let mut preds = Vec::with_capacity(num_domains);
            let mut targets = Vec::with_capacity(num_domains);
            let mut embeddings = Vec::new();
            let mut embedding_domains = Vec::new();
            for k in 0..num_domains {
                let aug_seed = derive_seed(config.seed, &[0xa9, epoch as u64, step as u64, k as u64]);
                let (x, t) = assemble_batch(
                    &train_slices[k],
                    &picks[k],
                    head_channels[k],
                    &class_maps[k],
                    &config.augmentation,
                    Some(aug_seed),
                );
                let (probs, embedding) = model.forward_in_head_space(&x, k, Mode::Train)?;
                preds.push(probs);
                targets.push(t);
                if contrastive_on {
                    embeddings.push(embedding);
                    embedding_domains.extend(std::iter::repeat(k).take(per_domain));
                }
            }

            let ce = ce_loss(&preds, &targets)?;
            let (total, contrastive_value) = if contrastive_on {
                let z = concat_rows(&embeddings)?;
                let batch = ContrastiveBatch::new(z, embedding_domains, config.tau)?;
                let c = contrastive_loss(&batch)?;
                let c_value = c.item();
                (
                    total_loss(&ce, &c, LossWeights { lambda: config.lambda })?,
                    c_value,
                )
            } else {
                (ce.clone(), 0.0)
            };

            let (ce_value, total_value) = (ce.item(), total.item());
            if !total_value.is_finite() {
                return Err(TrainError::NanLoss {
                    epoch,
                    step,
                    lr: config.learning_rate,
                    ce: ce_value,
                    contrastive: contrastive_value,
                });
            }
            for p in &params {
                p.zero_grad();
            }
            backward(&total)?;
            adam.step(&params)?;

            ce_sum += ce_value;
            c_sum += contrastive_value;
            total_sum += total_value;
        }

        let val_dice = validation_mean_dice(&mut model, data, split, None)?;
        trace.push(EpochTrace {
            epoch,
            ce: ce_sum / steps as f64,
            contrastive: c_sum / steps as f64,
            total: total_sum / steps as f64,
            val_dice,
        });
        if best.as_ref().is_none_or(|(_, b, _)| val_dice > *b) {
            best = Some((epoch, val_dice, model.snapshot()));
        }
        if config.snapshot_epochs.contains(&epoch) {
            epoch_snapshots.push((epoch, model.snapshot()));
        }
    }

    let final_snapshot = model.snapshot();
    let (best_epoch, best_val_dice, best_snapshot) = best.expect("at least one epoch");
    model.restore(&best_snapshot);
    Ok(TrainOutcome {
        model,
        units: vec![TrainedUnit {
            net_index: 0,
            domain: None,
            trace,
            best_epoch,
            best_val_dice,
        }],
        final_snapshot,
        epoch_snapshots,
    })
}

fn train_base(
    config: &TrainConfig,
    split: &SplitPlan,
    data: &[DomainData],
    train_slices: &[Vec<TrainSlice>],
    mut model: Model,
) -> Result<TrainOutcome, TrainError> {
    let num_domains = data.len();
    let mut units = Vec::with_capacity(num_domains);
    let mut best_snapshots: Vec<NetSnapshot> = Vec::with_capacity(num_domains);
    let mut final_snapshot = Vec::with_capacity(num_domains);
    let mut epoch_snapshots: Vec<(usize, Vec<NetSnapshot>)> = config
        .snapshot_epochs
        .iter()
        .map(|&e| (e, Vec::new()))
        .collect();

    for k in 0..num_domains {
        let slices = &train_slices[k];
        let channels = data[k].spec.num_classes();
        let mut composer = BatchComposer::new(
            &[slices.len()],
            config.batch_size,
            derive_seed(config.seed, &[0xc0, k as u64]),
        );
        let params = model.net_parameters(k);
        let mut adam = AdamState::new(&params, config.learning_rate);
        let steps = composer.steps_per_epoch();

        let mut trace = Vec::with_capacity(config.epochs);
        let mut best: Option<(usize, f64, NetSnapshot)> = None;
        for epoch in 1..=config.epochs {
            let (mut ce_sum, mut total_sum) = (0.0, 0.0);
            for step in 0..steps {
                let picks = composer.next_batch().remove(0);
                let aug_seed =
                    derive_seed(config.seed, &[0xa9, epoch as u64, step as u64, k as u64]);
                let (x, t) = assemble_batch(
                    slices,
                    &picks,
                    channels,
                    |label| label as usize,
                    &config.augmentation,
                    Some(aug_seed),
                );
                let (probs, _) = model.forward_in_head_space(&x, k, Mode::Train)?;
                let ce = ce_loss(&[probs], &[t])?;
                let ce_value = ce.item();
                if !ce_value.is_finite() {
                    return Err(TrainError::NanLoss {
                        epoch,
                        step,
                        lr: config.learning_rate,
                        ce: ce_value,
                        contrastive: 0.0,
                    });
                }
                for p in &params {
                    p.zero_grad();
                }
                backward(&ce)?;
                adam.step(&params)?;
                ce_sum += ce_value;
                total_sum += ce_value;
            }

            let val_dice = validation_mean_dice(&mut model, data, split, Some(k))?;
            trace.push(EpochTrace {
                epoch,
                ce: ce_sum / steps as f64,
                contrastive: 0.0,
                total: total_sum / steps as f64,
                val_dice,
            });
            if best.as_ref().is_none_or(|(_, b, _)| val_dice > *b) {
                best = Some((epoch, val_dice, model.snapshot_net(k)));
            }
            if let Some(slot) = epoch_snapshots.iter_mut().find(|(e, _)| *e == epoch) {
                slot.1.push(model.snapshot_net(k));
            }
        }
        final_snapshot.push(model.snapshot_net(k));
        let (best_epoch, best_val_dice, best_net) = best.expect("at least one epoch");
        best_snapshots.push(best_net);
        units.push(TrainedUnit {
            net_index: k,
            domain: Some(k),
            trace,
            best_epoch,
            best_val_dice,
        });
    }

    model.restore(&best_snapshots);
    Ok(TrainOutcome {
        model,
        units,
        final_snapshot,
        epoch_snapshots,
    })
}

/// Mean per-class Dice over the validation exams (no post-processing;
/// this is the checkpoint-selection score, not the reported test metric).
pub fn validation_mean_dice(
    model: &mut Model,
    data: &[DomainData],
    split: &SplitPlan,
    only_domain: Option<usize>,
) -> Result<f64, TrainError> {
    let mut dices = Vec::new();
    for (k, (domain_data, domain_split)) in data.iter().zip(&split.per_domain).enumerate() {
        if only_domain.is_some_and(|d| d != k) {
            continue;
        }
        let classes = domain_data.spec.num_classes();
        for &exam in &domain_split.val {
            let (volume, gt) = &domain_data.exams[exam];
            let probs = predict_exam_probabilities(model, volume, k)?;
            let (_, h, w) = volume.shape;
            let labels = stack_argmax_labels(&probs, classes, h, w)?;
            for class in 1..classes {
                let gt_mask = binarize_labels(&gt.labels, gt.shape, class as u8);
                let p_mask = binarize_labels(&labels, gt.shape, class as u8);
                if let Some(v) = dice(&gt_mask, &p_mask)? {
                    dices.push(v);
                }
            }
        }
    }
    Ok(dices.iter().sum::<f64>() / dices.len().max(1) as f64)
}

/// Eval-mode per-slice probability maps of one exam (each `[C, H, W]`
/// row-major, slices in z order).
pub fn predict_exam_probabilities(
    model: &mut Model,
    volume: &crate::data::Volume,
    domain: usize,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let (z, h, w) = volume.shape;
    let mut input = Vec::with_capacity(z * h * w);
    for zi in 0..z {
        input.extend(crate::data::normalize_slice(volume.slice(zi))?);
    }
    let x = Tensor::from_vec(&[z, 1, h, w], input)?;
    let probs = no_grad(|| model.forward(&x, domain, Mode::Eval))?;
    let values = probs.values();
    let per_slice = values.len() / z;
    Ok((0..z)
        .map(|zi| values[zi * per_slice..(zi + 1) * per_slice].to_vec())
        .collect())
}

/// One metric value of one fold, as written to the metrics CSV.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricRow {
    pub scheme: String,
    pub domain: usize,
    pub fold: usize,
    pub metric: String,
    pub value: Option<f64>,
}

/// Aggregate over folds: mean ± std per scheme, domain and metric.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub domain: usize,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

pub struct FoldResult {
    pub fold: usize,
    pub split: SplitPlan,
    pub reports: Vec<MetricsReport>,
    pub outcome: TrainOutcome,
    /// Per-domain per-slice 2D Dice samples of the post-processed test
    /// prediction (slices with foreground ground truth only).
    pub dice_2d: Vec<Vec<f64>>,
}

pub struct LooOutcome {
    pub scheme: TrainScheme,
    pub folds: Vec<FoldResult>,
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
}

/// Runs leave-one-out: fold `f` holds out exam `f` in every domain
/// simultaneously; each exam is tested at most once. `max_folds` caps the
/// number of folds (all by default).
pub fn run_leave_one_out(
    config: &TrainConfig,
    data: &[DomainData],
    max_folds: Option<usize>,
) -> Result<LooOutcome, TrainError> {
    let counts: Vec<usize> = data.iter().map(|d| d.exams.len()).collect();
    let total_folds = SplitPlan::num_folds(&counts)?;
    let folds = max_folds.map_or(total_folds, |m| m.min(total_folds));

    let mut fold_results = Vec::with_capacity(folds);
    let mut rows = Vec::new();
    for fold in 0..folds {
        let split = SplitPlan::leave_one_out(&counts, fold)?;
        let fold_config = TrainConfig {
            seed: derive_seed(config.seed, &[0xf01d, fold as u64]),
            ..config.clone()
        };
        let mut outcome = train_one(&fold_config, &split, data)?;

        let mut reports = Vec::with_capacity(data.len());
        let mut dice_2d = Vec::with_capacity(data.len());
        for (k, domain_data) in data.iter().enumerate() {
            let classes = domain_data.spec.num_classes();
            let exam = split.per_domain[k].test[0];
            let (volume, gt) = &domain_data.exams[exam];
            let probs = predict_exam_probabilities(&mut outcome.model, volume, k)?;
            let report = per_bone_report(gt, &probs, classes, volume.spacing)?;
            for kind in MetricKind::ALL {
                rows.push(MetricRow {
                    scheme: config.scheme.as_str().to_string(),
                    domain: k,
                    fold,
                    metric: kind.as_str().to_string(),
                    value: report.mean_of(kind),
                });
            }
            dice_2d.push(per_slice_dice(gt, &probs, classes)?);
            reports.push(report);
        }
        fold_results.push(FoldResult {
            fold,
            split,
            reports,
            outcome,
            dice_2d,
        });
    }

    let summary = summarize(config.scheme, data.len(), &rows);
    Ok(LooOutcome {
        scheme: config.scheme,
        folds: fold_results,
        rows,
        summary,
    })
}

/// 2D Dice per slice of the post-processed prediction, averaged over the
/// foreground classes present in that slice's ground truth; slices with no
/// foreground ground truth are skipped.
pub(crate) fn per_slice_dice(
    gt: &crate::data::LabelVolume,
    predicted_slices: &[Vec<f64>],
    classes: usize,
) -> Result<Vec<f64>, TrainError> {
    let (z, h, w) = gt.shape;
    let pred_labels = stack_argmax_labels(predicted_slices, classes, h, w)?;
    let processed: Vec<crate::metrics::Mask3> = (1..classes)
        .map(|c| crate::metrics::postprocess_class(&pred_labels, (z, h, w), c as u8))
        .collect();
    let plane = h * w;
    let mut out = Vec::new();
    for zi in 0..z {
        let gt_slice = gt.slice(zi);
        let mut class_dices = Vec::new();
        for c in 1..classes {
            let gt_count = gt_slice.iter().filter(|&&l| l as usize == c).count();
            if gt_count == 0 {
                continue;
            }
            let p = &processed[c - 1].data[zi * plane..(zi + 1) * plane];
            let p_count = p.iter().filter(|&&v| v).count();
            let overlap = gt_slice
                .iter()
                .zip(p)
                .filter(|(&g, &pv)| g as usize == c && pv)
                .count();
            class_dices.push(2.0 * overlap as f64 / (gt_count + p_count) as f64);
        }
        if !class_dices.is_empty() {
            out.push(class_dices.iter().sum::<f64>() / class_dices.len() as f64);
        }
    }
    Ok(out)
}

fn summarize(scheme: TrainScheme, num_domains: usize, rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for domain in 0..num_domains {
        for kind in MetricKind::ALL {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.domain == domain && r.metric == kind.as_str())
                .filter_map(|r| r.value)
                .collect();
            let total = rows
                .iter()
                .filter(|r| r.domain == domain && r.metric == kind.as_str())
                .count();
            let (mean, std) = if values.is_empty() {
                (None, None)
            } else {
                let m = values.iter().sum::<f64>() / values.len() as f64;
                let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / values.len() as f64;
                (Some(m), Some(var.sqrt()))
            };
            out.push(SummaryRow {
                scheme: scheme.as_str().to_string(),
                domain,
                metric: kind.as_str().to_string(),
                mean,
                std,
                defined: values.len(),
                undefined: total - values.len(),
            });
        }
    }
    out
}
