//! Domain-specific batch normalization.
//!
//! One layer owns `K` independent parameter rows: trainable shift/scale
//! `(gamma_k, beta_k)` and running mean/variance per domain. A forward pass
//! normalizes a `[N,M,H,W]` batch per feature over the `(N,H,W)` axes with
//! that batch's statistics in training mode, or with the selected domain's
//! running statistics in eval mode. Statistics of domain `k` are only ever
//! touched by batches forwarded under domain `k`.

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Forward-pass mode: batch statistics vs stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error, PartialEq)]
pub enum DsbnError {
    #[error("domain index {domain} out of range (layer has {num_domains} domains)")]
    DomainOutOfRange { domain: usize, num_domains: usize },
    #[error("train-mode batch has {count} element(s) per feature; variance needs at least 2")]
    DegenerateBatch { count: usize },
    #[error("input has {got} features, layer has {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Batch normalization with per-domain affine parameters and statistics.
pub struct DsbnLayer {
    num_domains: usize,
    num_features: usize,
    gamma: Vec<Tensor>,
    beta: Vec<Tensor>,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
    pub momentum: f64,
    pub eps: f64,
}

impl DsbnLayer {
    /// Fresh layer: gamma 1, beta 0, running stats (0, 1), momentum 0.1,
    /// eps 1e-5.
    pub fn new(num_domains: usize, num_features: usize) -> Self {
        assert!(num_domains > 0 && num_features > 0);
        DsbnLayer {
            num_domains,
            num_features,
            gamma: (0..num_domains)
                .map(|_| Tensor::full(&[num_features], 1.0).requires_grad())
                .collect(),
            beta: (0..num_domains)
                .map(|_| Tensor::zeros(&[num_features]).requires_grad())
                .collect(),
            running_mean: vec![vec![0.0; num_features]; num_domains],
            running_var: vec![vec![1.0; num_features]; num_domains],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn gamma(&self, domain: usize) -> &Tensor {
        &self.gamma[domain]
    }

    pub fn beta(&self, domain: usize) -> &Tensor {
        &self.beta[domain]
    }

    pub fn running_mean(&self, domain: usize) -> &[f64] {
        &self.running_mean[domain]
    }

    pub fn running_var(&self, domain: usize) -> &[f64] {
        &self.running_var[domain]
    }

    /// Overwrites one domain's running statistics (checkpoint restore).
    pub fn set_running_stats(&mut self, domain: usize, mean: &[f64], var: &[f64]) {
        self.running_mean[domain].copy_from_slice(mean);
        self.running_var[domain].copy_from_slice(var);
    }

    /// Normalizes `input` (`[N,M,H,W]`) under domain `domain`.
    ///
    /// Training mode normalizes with the batch's per-feature statistics
    /// (biased variance) and folds them into domain `domain`'s running
    /// statistics (unbiased variance, exponential moving average). Eval mode
    /// reads the stored statistics and mutates nothing. Differentiable with
    /// respect to the input and the selected domain's gamma/beta.
    pub fn forward(&mut self, input: &Tensor, domain: usize, mode: Mode) -> Result<Tensor, DsbnError> {
        if domain >= self.num_domains {
            return Err(DsbnError::DomainOutOfRange {
                domain,
                num_domains: self.num_domains,
            });
        }
        let shape = input.shape();
        if shape.len() != 4 {
            return Err(DsbnError::Tensor(TensorError::RankMismatch {
                op: "dsbn_forward",
                expected: 4,
                shape,
            }));
        }
        let [n, m, h, w] = [shape[0], shape[1], shape[2], shape[3]];
        if m != self.num_features {
            return Err(DsbnError::FeatureMismatch {
                expected: self.num_features,
                got: m,
            });
        }
        let count = n * h * w;
        let hw = h * w;
        let eps = self.eps;

        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(DsbnError::DegenerateBatch { count });
                }
                let (mean, biased) = input.with_values(|x| {
                    use rayon::prelude::*;
                    let stats: Vec<(f64, f64)> = (0..m)
                        .into_par_iter()
                        .map(|feat| {
                            let mut acc = 0.0;
                            for img in 0..n {
                                let base = (img * m + feat) * hw;
                                acc += x[base..base + hw].iter().sum::<f64>();
                            }
                            let mu = acc / count as f64;
                            let mut vacc = 0.0;
                            for img in 0..n {
                                let base = (img * m + feat) * hw;
                                for &v in &x[base..base + hw] {
                                    let d = v - mu;
                                    vacc += d * d;
                                }
                            }
                            (mu, vacc / count as f64)
                        })
                        .collect();
                    let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
                    let biased: Vec<f64> = stats.iter().map(|s| s.1).collect();
                    (mean, biased)
                });
                // Running stats keep the unbiased estimate; normalization
                // below uses the biased one.
                let mom = self.momentum;
                let unbias = count as f64 / (count - 1) as f64;
                for feat in 0..m {
                    self.running_mean[domain][feat] =
                        (1.0 - mom) * self.running_mean[domain][feat] + mom * mean[feat];
                    self.running_var[domain][feat] =
                        (1.0 - mom) * self.running_var[domain][feat] + mom * biased[feat] * unbias;
                }
                (mean, biased)
            }
            Mode::Eval => (
                self.running_mean[domain].clone(),
                self.running_var[domain].clone(),
            ),
        };

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

        // one fused pass: pre-affine activations (saved for backward) and
        // the affine output, parallel over images
        let gamma = self.gamma[domain].clone();
        let beta = self.beta[domain].clone();
        let (normalized, out_values): (Vec<f64>, Vec<f64>) = input.with_values(|x| {
            gamma.with_values(|gm| {
                beta.with_values(|bt| {
                    use rayon::prelude::*;
                    let mut norm = vec![0.0; x.len()];
                    let mut out = vec![0.0; x.len()];
                    let img_len = m * hw;
                    norm.par_chunks_exact_mut(img_len)
                        .zip(out.par_chunks_exact_mut(img_len))
                        .enumerate()
                        .for_each(|(img, (norm_img, out_img))| {
                            let x_img = &x[img * img_len..(img + 1) * img_len];
                            for feat in 0..m {
                                let (mu, is) = (mean[feat], inv_std[feat]);
                                let (g, b) = (gm[feat], bt[feat]);
                                let src = &x_img[feat * hw..(feat + 1) * hw];
                                let nrm = &mut norm_img[feat * hw..(feat + 1) * hw];
                                let dst = &mut out_img[feat * hw..(feat + 1) * hw];
                                for p in 0..hw {
                                    let v = (src[p] - mu) * is;
                                    nrm[p] = v;
                                    dst[p] = g * v + b;
                                }
                            }
                        });
                    (norm, out)
                })
            })
        });

        let xi = input.clone();
        let (gi, bi) = (gamma.clone(), beta.clone());
        let saved_norm = normalized;
        let saved_inv_std = inv_std;
        let train = mode == Mode::Train;
        let backward = move |g: &[f64]| {
            use rayon::prelude::*;
            let inv_count = 1.0 / count as f64;
            let per_feat: Vec<(f64, f64)> = (0..m)
                .into_par_iter()
                .map(|feat| {
                    let mut dg = 0.0;
                    let mut db = 0.0;
                    for img in 0..n {
                        let base = (img * m + feat) * hw;
                        for p in 0..hw {
                            dg += g[base + p] * saved_norm[base + p];
                            db += g[base + p];
                        }
                    }
                    (dg, db)
                })
                .collect();
            let d_gamma: Vec<f64> = per_feat.iter().map(|v| v.0).collect();
            let d_beta: Vec<f64> = per_feat.iter().map(|v| v.1).collect();
            if xi.requires_grad_flag() {
                let dx: Vec<f64> = gi.with_values(|gm| {
                    let mut dx = vec![0.0; saved_norm.len()];
                    let img_len = m * hw;
                    dx.par_chunks_exact_mut(img_len)
                        .enumerate()
                        .for_each(|(img, dx_img)| {
                            for feat in 0..m {
                                let scale = gm[feat] * saved_inv_std[feat];
                                let base = (img * m + feat) * hw;
                                let dst = &mut dx_img[feat * hw..(feat + 1) * hw];
                                if train {
                                    let g_mean = d_beta[feat] * inv_count;
                                    let gx_mean = d_gamma[feat] * inv_count;
                                    for p in 0..hw {
                                        dst[p] = scale
                                            * (g[base + p]
                                                - g_mean
                                                - saved_norm[base + p] * gx_mean);
                                    }
                                } else {
                                    for p in 0..hw {
                                        dst[p] = scale * g[base + p];
                                    }
                                }
                            }
                        });
                    dx
                });
                xi.accumulate_grad_owned(dx);
            }
            if gi.requires_grad_flag() {
                gi.accumulate_grad_owned(d_gamma);
            }
            if bi.requires_grad_flag() {
                bi.accumulate_grad_owned(d_beta);
            }
        };

        Ok(Tensor::from_op(
            vec![n, m, h, w],
            out_values,
            vec![input.clone(), gamma, beta],
            Box::new(backward),
        ))
    }
}
