//! Training losses for the multi-task, multi-domain setting.
//!
//! [`ce_loss`] is the cross-entropy averaged with `1/K` over domains and
//! `1/(n_k · |C_k| · H·W)` within a domain, where `n_k` is the size of that
//! domain's sub-batch in the current step. [`contrastive_loss`] is the
//! supervised contrastive term over globally pooled embeddings: positives
//! are same-domain samples, similarity is cosine, sharpness is set by the
//! temperature. [`total_loss`] combines them as `ce + lambda * contrastive`.

use thiserror::Error;

use crate::tensor::ops::{add, mul_scalar};
use crate::tensor::{Tensor, TensorError};

/// Floor applied inside `log` so saturated predictions cannot produce
/// infinities; predictions below the floor get zero gradient.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("domain {domain}: prediction shape {pred:?} does not match target shape {target:?}")]
    ShapeMismatch {
        domain: usize,
        pred: Vec<usize>,
        target: Vec<usize>,
    },
    #[error("expected one target per prediction, got {preds} predictions and {targets} targets")]
    ArityMismatch { preds: usize, targets: usize },
    #[error("cross-entropy needs at least one domain")]
    NoDomains,
    #[error("contrastive batch needs at least 2 samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("embedding {index} has zero norm")]
    ZeroNormEmbedding { index: usize },
    #[error("{embeddings} embeddings but {domains} domain indices")]
    DomainCountMismatch { embeddings: usize, domains: usize },
    #[error("temperature must be positive, got {tau}")]
    NonPositiveTemperature { tau: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Scaling of the contrastive term in the combined loss.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda: f64,
}

/// Multi-domain cross-entropy over per-domain probability maps.
///
/// `preds[k]` is `[N_k, C_k, H, W]` of per-pixel class probabilities and
/// `targets[k]` the matching one-hot map. The log is clamped at
/// [`LOG_CLAMP`]. Differentiable with respect to the predictions.
pub fn ce_loss(preds: &[Tensor], targets: &[Tensor]) -> Result<Tensor, LossError> {
    if preds.is_empty() {
        return Err(LossError::NoDomains);
    }
    if preds.len() != targets.len() {
        return Err(LossError::ArityMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    let num_domains = preds.len();
    let mut total: Option<Tensor> = None;
    for (k, (pred, target)) in preds.iter().zip(targets).enumerate() {
        let ps = pred.shape();
        let ts = target.shape();
        if ps != ts || ps.len() != 4 {
            return Err(LossError::ShapeMismatch {
                domain: k,
                pred: ps,
                target: ts,
            });
        }
        let [n, c, h, w] = [ps[0], ps[1], ps[2], ps[3]];
        let weight = 1.0 / (num_domains * n * c * h * w) as f64;
        let term = nll_of_probs(pred, target, weight);
        total = Some(match total {
            None => term,
            Some(acc) => add(&acc, &term)?,
        });
    }
    Ok(total.expect("at least one domain"))
}

/// `-weight * sum(target * ln(max(pred, LOG_CLAMP)))` as a scalar op.
fn nll_of_probs(pred: &Tensor, target: &Tensor, weight: f64) -> Tensor {
    let target_vals = target.values();
    let loss = pred.with_values(|p| {
        let mut acc = 0.0;
        for (&pv, &tv) in p.iter().zip(&target_vals) {
            if tv != 0.0 {
                acc += tv * pv.max(LOG_CLAMP).ln();
            }
        }
        -weight * acc
    });

    let pi = pred.clone();
    let saved_target = target_vals;
    let backward = move |g: &[f64]| {
        if !pi.requires_grad_flag() {
            return;
        }
        let dp: Vec<f64> = pi.with_values(|p| {
            p.iter()
                .zip(&saved_target)
                .map(|(&pv, &tv)| {
                    if tv != 0.0 && pv >= LOG_CLAMP {
                        -g[0] * weight * tv / pv
                    } else {
                        0.0
                    }
                })
                .collect()
        });
        pi.accumulate_grad_owned(dp);
    };

    Tensor::from_op(vec![1], vec![loss], vec![pred.clone()], Box::new(backward))
}

/// One optimization step's embeddings with their domain labels.
#[derive(Debug)]
pub struct ContrastiveBatch {
    embeddings: Tensor,
    domain_indices: Vec<usize>,
    temperature: f64,
}

impl ContrastiveBatch {
    /// Validates the batch invariants: at least two samples, one domain
    /// index per embedding, positive temperature, no zero-norm rows.
    pub fn new(
        embeddings: Tensor,
        domain_indices: Vec<usize>,
        temperature: f64,
    ) -> Result<Self, LossError> {
        let shape = embeddings.shape();
        if shape.len() != 2 {
            return Err(LossError::Tensor(TensorError::RankMismatch {
                op: "contrastive_batch",
                expected: 2,
                shape,
            }));
        }
        let (n, d) = (shape[0], shape[1]);
        if n < 2 {
            return Err(LossError::TooFewSamples { got: n });
        }
        if domain_indices.len() != n {
            return Err(LossError::DomainCountMismatch {
                embeddings: n,
                domains: domain_indices.len(),
            });
        }
        if !(temperature > 0.0) {
            return Err(LossError::NonPositiveTemperature { tau: temperature });
        }
        let zero_row = embeddings.with_values(|z| {
            (0..n).find(|&i| z[i * d..(i + 1) * d].iter().all(|&v| v == 0.0))
        });
        if let Some(index) = zero_row {
            return Err(LossError::ZeroNormEmbedding { index });
        }
        Ok(ContrastiveBatch {
            embeddings,
            domain_indices,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.domain_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain_indices.is_empty()
    }
}

/// Supervised contrastive loss over a batch of embeddings.
///
/// For each anchor `i` with positives `P(i)` (same-domain samples), the
/// term averages `-ln(exp(sim(z_i,z_p)/tau) / sum_{j != i} exp(sim(z_i,z_j)/tau))`
/// over `p in P(i)`. Anchors without positives contribute nothing and do not
/// count toward the outer average; a batch with no positive pair at all has
/// loss exactly zero. Differentiable with respect to the embeddings.
pub fn contrastive_loss(batch: &ContrastiveBatch) -> Result<Tensor, LossError> {
    let sim = cosine_similarity_matrix(&batch.embeddings);
    Ok(contrastive_from_similarities(
        &sim,
        &batch.domain_indices,
        batch.temperature,
    ))
}

/// `ce + lambda * contrastive`. With `lambda = 0` the result is bitwise
/// equal to `ce`.
pub fn total_loss(ce: &Tensor, contrastive: &Tensor, weights: LossWeights) -> Result<Tensor, LossError> {
    if weights.lambda == 0.0 {
        return Ok(ce.clone());
    }
    Ok(add(ce, &mul_scalar(contrastive, weights.lambda))?)
}

/// Pairwise cosine similarities of the rows of `z` (`[n,D] -> [n,n]`).
fn cosine_similarity_matrix(z: &Tensor) -> Tensor {
    let shape = z.shape();
    let (n, d) = (shape[0], shape[1]);
    let (normalized, norms) = z.with_values(|zv| {
        let mut unit = vec![0.0; n * d];
        let mut norms = vec![0.0; n];
        for i in 0..n {
            let row = &zv[i * d..(i + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[i] = norm;
            for (u, &v) in unit[i * d..(i + 1) * d].iter_mut().zip(row) {
                *u = v / norm;
            }
        }
        (unit, norms)
    });
    let mut sim = vec![0.0; n * n];
    crate::tensor::gemm_a_bt_acc(&mut sim, &normalized, &normalized, n, d, n);

    let zi = z.clone();
    let saved_unit = normalized;
    let saved_norms = norms;
    let saved_sim = sim.clone();
    let backward = move |g: &[f64]| {
        if !zi.requires_grad_flag() {
            return;
        }
        let mut dz = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let coeff = (g[i * n + j] + g[j * n + i]) / saved_norms[i];
                if coeff == 0.0 {
                    continue;
                }
                let s_ij = saved_sim[i * n + j];
                let zj = &saved_unit[j * d..(j + 1) * d];
                let zi_row = &saved_unit[i * d..(i + 1) * d];
                let dst = &mut dz[i * d..(i + 1) * d];
                for k in 0..d {
                    dst[k] += coeff * (zj[k] - s_ij * zi_row[k]);
                }
            }
        }
        zi.accumulate_grad_owned(dz);
    };

    Tensor::from_op(vec![n, n], sim, vec![z.clone()], Box::new(backward))
}

/// The per-anchor log-ratio aggregation over a similarity matrix.
fn contrastive_from_similarities(sim: &Tensor, domains: &[usize], tau: f64) -> Tensor {
    let n = domains.len();
    let positives: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&p| p != i && domains[p] == domains[i])
                .collect()
        })
        .collect();
    let active: Vec<usize> = (0..n).filter(|&i| !positives[i].is_empty()).collect();

    let (loss, softmax) = sim.with_values(|s| {
        let mut softmax = vec![0.0; n * n]; // row-stochastic over j != i, active rows only
        let mut loss = 0.0;
        for &i in &active {
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if j != i {
                    max = max.max(s[i * n + j] / tau);
                }
            }
            let mut z = 0.0;
            for j in 0..n {
                if j != i {
                    let e = (s[i * n + j] / tau - max).exp();
                    softmax[i * n + j] = e;
                    z += e;
                }
            }
            for j in 0..n {
                softmax[i * n + j] /= z;
            }
            let lse = max + z.ln();
            let mut term = 0.0;
            for &p in &positives[i] {
                term += lse - s[i * n + p] / tau;
            }
            loss += term / positives[i].len() as f64;
        }
        if active.is_empty() {
            (0.0, softmax)
        } else {
            (loss / active.len() as f64, softmax)
        }
    });

    let si = sim.clone();
    let backward = move |g: &[f64]| {
        if !si.requires_grad_flag() || active.is_empty() {
            return;
        }
        let scale = g[0] / (active.len() as f64 * tau);
        let mut ds = vec![0.0; n * n];
        for &i in &active {
            let inv_p = 1.0 / positives[i].len() as f64;
            for j in 0..n {
                if j != i {
                    ds[i * n + j] = scale * softmax[i * n + j];
                }
            }
            for &p in &positives[i] {
                ds[i * n + p] -= scale * inv_p;
            }
        }
        si.accumulate_grad_owned(ds);
    };

    Tensor::from_op(vec![1], vec![loss], vec![sim.clone()], Box::new(backward))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embeddings(rows: &[&[f64]]) -> Tensor {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(&[rows.len(), d], flat).unwrap()
    }

    #[test]
    fn perfect_prediction_hits_clamp_floor() {
        let pred = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let target = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let loss = ce_loss(&[pred], &[target]).unwrap();
        assert!(loss.item() >= 0.0);
        assert!(loss.item() <= 1e-10);
    }

    #[test]
    fn uniform_prediction_four_classes() {
        // hand evaluation on a 1x1 image: (1/4) * ln 4
        let pred = Tensor::from_vec(&[1, 4, 1, 1], vec![0.25; 4]).unwrap();
        let target = Tensor::from_vec(&[1, 4, 1, 1], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let loss = ce_loss(&[pred], &[target]).unwrap();
        assert!((loss.item() - 4.0f64.ln() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_domains_average_per_domain_losses() {
        let p1 = Tensor::from_vec(&[1, 2, 1, 1], vec![0.7, 0.3]).unwrap();
        let t1 = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let p2 = Tensor::from_vec(&[1, 3, 1, 1], vec![0.2, 0.5, 0.3]).unwrap();
        let t2 = Tensor::from_vec(&[1, 3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap();
        let a = ce_loss(&[p1.clone()], &[t1.clone()]).unwrap().item();
        let b = ce_loss(&[p2.clone()], &[t2.clone()]).unwrap().item();
        let both = ce_loss(&[p1, p2], &[t1, t2]).unwrap().item();
        assert!((both - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_shape_mismatch() {
        let pred = Tensor::zeros(&[1, 2, 2, 2]);
        let target = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(matches!(
            ce_loss(&[pred], &[target]).unwrap_err(),
            LossError::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn no_positive_pairs_gives_zero() {
        let z = embeddings(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let batch = ContrastiveBatch::new(z, vec![0, 1], 0.1).unwrap();
        assert_eq!(contrastive_loss(&batch).unwrap().item(), 0.0);
    }

    #[test]
    fn identical_embeddings_closed_form() {
        // every similarity is 1, each inner ratio 1/(n-1) -> ln(n-1)
        for half in [2usize, 4, 8] {
            let n = 2 * half;
            let rows: Vec<&[f64]> = (0..n).map(|_| &[1.0, 2.0, 3.0][..]).collect();
            let z = embeddings(&rows);
            let domains: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let batch = ContrastiveBatch::new(z, domains, 0.1).unwrap();
            let loss = contrastive_loss(&batch).unwrap().item();
            assert!(
                (loss - ((n - 1) as f64).ln()).abs() < 1e-9,
                "n={n}: {loss}"
            );
        }
    }

    #[test]
    fn opposed_bundles_closed_form() {
        // within-domain sim 1, cross-domain sim -1, tau = 1:
        // per anchor -ln(e / (e + 2/e)) = ln(1 + 2e^-2)
        let z = embeddings(&[&[1.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0], &[-1.0, 0.0]]);
        let batch = ContrastiveBatch::new(z, vec![0, 0, 1, 1], 1.0).unwrap();
        let loss = contrastive_loss(&batch).unwrap().item();
        let expected = (1.0f64 + 2.0 * (-2.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
        assert!((loss - 0.2395).abs() < 1e-4);
    }

    #[test]
    fn rescaling_invariance() {
        let base = [
            [0.3, -1.2, 0.4],
            [0.1, 0.8, -0.3],
            [-0.9, 0.2, 0.5],
            [1.1, 0.4, 0.2],
        ];
        let rows: Vec<&[f64]> = base.iter().map(|r| &r[..]).collect();
        let z = embeddings(&rows);
        let scaled: Vec<Vec<f64>> = base
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|v| v * (0.5 + i as f64)).collect())
            .collect();
        let scaled_rows: Vec<&[f64]> = scaled.iter().map(|r| &r[..]).collect();
        let zs = embeddings(&scaled_rows);
        let domains = vec![0, 1, 0, 1];
        let a = contrastive_loss(&ContrastiveBatch::new(z, domains.clone(), 0.2).unwrap())
            .unwrap()
            .item();
        let b = contrastive_loss(&ContrastiveBatch::new(zs, domains, 0.2).unwrap())
            .unwrap()
            .item();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn lower_temperature_widens_separation_gap() {
        let separated = [
            [1.0, 0.0],
            [0.99, 0.01],
            [-1.0, 0.05],
            [-0.98, 0.0],
        ];
        let mixed = [
            [1.0, 0.0],
            [-0.9, 0.1],
            [0.95, 0.05],
            [-1.0, 0.0],
        ];
        let gap = |tau: f64| {
            let sep_rows: Vec<&[f64]> = separated.iter().map(|r| &r[..]).collect();
            let mix_rows: Vec<&[f64]> = mixed.iter().map(|r| &r[..]).collect();
            let ls = contrastive_loss(
                &ContrastiveBatch::new(embeddings(&sep_rows), vec![0, 0, 1, 1], tau).unwrap(),
            )
            .unwrap()
            .item();
            let lm = contrastive_loss(
                &ContrastiveBatch::new(embeddings(&mix_rows), vec![0, 0, 1, 1], tau).unwrap(),
            )
            .unwrap()
            .item();
            lm - ls
        };
        assert!(gap(0.1) > gap(1.0));
    }

    #[test]
    fn directional_sensitivity_to_pair_similarity() {
        // Domain-0 pair sits at angles +/-theta in the xy plane, domain-1
        // pair on the z axis: sim(z0,z1) = cos(2 theta) while every cross
        // similarity stays 0. Raising the positive similarity must lower
        // the loss.
        let pos_loss = |theta: f64| {
            let rows = [
                vec![theta.cos(), theta.sin(), 0.0],
                vec![theta.cos(), -theta.sin(), 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, 0.0, 1.0],
            ];
            let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
            contrastive_loss(
                &ContrastiveBatch::new(embeddings(&refs), vec![0, 0, 1, 1], 0.5).unwrap(),
            )
            .unwrap()
            .item()
        };
        assert!(pos_loss(0.2) < pos_loss(0.3), "more-similar positives must help");

        // Tilting the domain-1 pair toward the x axis raises cross-domain
        // similarities while both within-pair similarities stay fixed.
        let neg_loss = |phi: f64| {
            let rows = [
                vec![1.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![phi.sin(), 0.0, phi.cos()],
                vec![phi.sin(), 0.0, phi.cos()],
            ];
            let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
            contrastive_loss(
                &ContrastiveBatch::new(embeddings(&refs), vec![0, 0, 1, 1], 0.5).unwrap(),
            )
            .unwrap()
            .item()
        };
        assert!(neg_loss(0.3) > neg_loss(0.0), "more-similar negatives must hurt");
    }

    #[test]
    fn zero_norm_embedding_is_rejected() {
        let z = embeddings(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert!(matches!(
            ContrastiveBatch::new(z, vec![0, 0], 0.1).unwrap_err(),
            LossError::ZeroNormEmbedding { index: 0 }
        ));
    }

    #[test]
    fn single_sample_batch_is_rejected() {
        let z = embeddings(&[&[1.0, 0.0]]);
        assert!(matches!(
            ContrastiveBatch::new(z, vec![0], 0.1).unwrap_err(),
            LossError::TooFewSamples { got: 1 }
        ));
    }

    #[test]
    fn total_loss_composition() {
        let ce = Tensor::scalar(1.0);
        let c = Tensor::scalar(2.0);
        let t = total_loss(&ce, &c, LossWeights { lambda: 0.1 }).unwrap();
        assert!((t.item() - 1.2).abs() < 1e-12);

        let t0 = total_loss(&ce, &c, LossWeights { lambda: 0.0 }).unwrap();
        assert_eq!(t0.item().to_bits(), ce.item().to_bits());
    }
}
