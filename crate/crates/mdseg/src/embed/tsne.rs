//! Exact (non-approximated) t-SNE to 2D.
//!
//! Gaussian bandwidths are found per point by bisection so the conditional
//! distribution's Shannon entropy matches `ln(perplexity)` within 1e-5.
//! The optimizer follows the original published schedule: 1000 gradient
//! steps, early exaggeration ×12 for the first 250, momentum 0.5 switching
//! to 0.8 at iteration 250, and per-coordinate adaptive gains.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{check_uniform_dim, EmbedError};
use crate::seeding::rng_for;

#[derive(Debug, Clone, Copy)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_start: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            learning_rate: 200.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_start: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// KL divergence (against the unexaggerated P) after every iteration.
    pub kl_trace: Vec<f64>,
    /// Worst per-point |entropy - ln(perplexity)| after calibration.
    pub max_entropy_error: f64,
}

/// Embeds `points` into 2D. Deterministic given `seed`.
pub fn tsne_2d(points: &[Vec<f64>], config: &TsneConfig, seed: u64) -> Result<TsneResult, EmbedError> {
    let n = points.len();
    let needed = (3.0 * config.perplexity + 1.0).ceil() as usize;
    if n < needed {
        return Err(EmbedError::PerplexityTooLarge {
            perplexity: config.perplexity,
            needed,
            got: n,
        });
    }
    check_uniform_dim(points)?;

    let mut sq_dist = pairwise_sq_distances(points);
    if has_duplicates(&sq_dist, n) {
        log::warn!("duplicate points in t-SNE input; applying 1e-10 jitter");
        let mut rng = rng_for(seed, &[0x717]);
        let d = points[0].len();
        let jittered: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                (0..d)
                    .map(|i| p[i] + rng.gen_range(-1e-10..1e-10))
                    .collect()
            })
            .collect();
        sq_dist = pairwise_sq_distances(&jittered);
    }

    let (p_conditional, max_entropy_error) = calibrate_bandwidths(&sq_dist, n, config.perplexity);

    // symmetrized joint distribution
    let mut p_joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p_joint[i * n + j] =
                    ((p_conditional[i * n + j] + p_conditional[j * n + i]) / (2.0 * n as f64))
                        .max(1e-12);
            }
        }
    }

    // small seeded Gaussian init
    let mut rng = rng_for(seed, &[0x7e3]);
    let normal = Normal::new(0.0, 1e-4).expect("positive sigma");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut increments = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];

    let mut kl_trace = Vec::with_capacity(config.iterations);
    let mut q_weights = vec![0.0; n * n];
    for iteration in 0..config.iterations {
        let exaggeration = if iteration < config.exaggeration_iters {
            config.exaggeration
        } else {
            1.0
        };
        let momentum = if iteration < config.momentum_switch {
            config.momentum_start
        } else {
            config.momentum_final
        };

        // Student-t weights and their normalizer
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[i][0] - y[j][0];
                let dy1 = y[i][1] - y[j][1];
                let w = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q_weights[i * n + j] = w;
                q_weights[j * n + i] = w;
                q_sum += 2.0 * w;
            }
        }

        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = q_weights[i * n + j];
                let q = (w / q_sum).max(1e-12);
                let coeff = 4.0 * (exaggeration * p_joint[i * n + j] - q) * w;
                grad[0] += coeff * (y[i][0] - y[j][0]);
                grad[1] += coeff * (y[i][1] - y[j][1]);
            }
            for axis in 0..2 {
                let same_sign = grad[axis].signum() == increments[i][axis].signum();
                gains[i][axis] = if same_sign {
                    (gains[i][axis] * 0.8).max(0.01)
                } else {
                    gains[i][axis] + 0.2
                };
                increments[i][axis] = momentum * increments[i][axis]
                    - config.learning_rate * gains[i][axis] * grad[axis];
            }
        }
        let mut mean = [0.0f64; 2];
        for (yi, inc) in y.iter_mut().zip(&increments) {
            yi[0] += inc[0];
            yi[1] += inc[1];
            mean[0] += yi[0];
            mean[1] += yi[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }

        kl_trace.push(kl_divergence(&p_joint, &y, n));
    }

    Ok(TsneResult {
        coords: y,
        kl_trace,
        max_entropy_error,
    })
}

fn pairwise_sq_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out[i * n + j] = d2;
            out[j * n + i] = d2;
        }
    }
    out
}

fn has_duplicates(sq_dist: &[f64], n: usize) -> bool {
    (0..n).any(|i| (i + 1..n).any(|j| sq_dist[i * n + j] == 0.0))
}

/// Per-point precision search: returns row-normalized conditionals and the
/// worst entropy error.
fn calibrate_bandwidths(sq_dist: &[f64], n: usize, perplexity: f64) -> (Vec<f64>, f64) {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let mut entropy = 0.0;
        for _ in 0..200 {
            // conditional distribution at this precision
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e = (-beta * sq_dist[i * n + j]).exp();
                p[i * n + j] = e;
                sum += e;
                weighted += e * sq_dist[i * n + j];
            }
            entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    (beta + beta_max) / 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta / 2.0
                } else {
                    (beta + beta_min) / 2.0
                };
            }
        }
        worst = worst.max((entropy - target).abs());
        let row_sum: f64 = (0..n).filter(|&j| j != i).map(|j| p[i * n + j]).sum();
        for j in 0..n {
            if j != i {
                p[i * n + j] /= row_sum;
            }
        }
    }
    (p, worst)
}

fn kl_divergence(p_joint: &[f64], y: &[[f64; 2]], n: usize) -> f64 {
    let mut q_sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dy0 = y[i][0] - y[j][0];
            let dy1 = y[i][1] - y[j][1];
            q_sum += 2.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = p_joint[i * n + j];
            let dy0 = y[i][0] - y[j][0];
            let dy1 = y[i][1] - y[j][1];
            let q = ((1.0 / (1.0 + dy0 * dy0 + dy1 * dy1)) / q_sum).max(1e-12);
            kl += p * (p / q).ln();
        }
    }
    kl
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::silhouette_score;
    use rand::Rng;

    fn two_clusters(seed: u64, per_cluster: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng_for(seed, &[21]);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            let offset = c as f64 * 50.0;
            for _ in 0..per_cluster {
                points.push((0..dim).map(|_| offset + rng.gen_range(-1.0..1.0)).collect());
                labels.push(c);
            }
        }
        (points, labels)
    }

    #[test]
    fn recovers_well_separated_clusters() {
        let (points, labels) = two_clusters(3, 100, 8);
        let result = tsne_2d(&points, &TsneConfig::default(), 7).unwrap();
        assert!(result.max_entropy_error < 1e-5);
        let coords: Vec<Vec<f64>> = result.coords.iter().map(|c| c.to_vec()).collect();
        let score = silhouette_score(&coords, &labels).unwrap();
        assert!(score > 0.5, "silhouette {score}");
    }

    #[test]
    fn deterministic_given_seed() {
        let (points, _) = two_clusters(5, 50, 4);
        let mut cfg = TsneConfig::default();
        cfg.perplexity = 20.0;
        cfg.iterations = 120;
        let a = tsne_2d(&points, &cfg, 11).unwrap();
        let b = tsne_2d(&points, &cfg, 11).unwrap();
        assert_eq!(a.coords, b.coords);
    }

    #[test]
    fn kl_tail_is_monotone() {
        let (points, _) = two_clusters(9, 60, 6);
        let mut cfg = TsneConfig::default();
        cfg.perplexity = 25.0;
        let result = tsne_2d(&points, &cfg, 3).unwrap();
        let tail = &result.kl_trace[result.kl_trace.len() - 100..];
        for w in tail.windows(2) {
            assert!(w[1] <= w[0], "KL rose in the tail: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn too_few_points_error_names_remedy() {
        let points: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let err = tsne_2d(&points, &TsneConfig::default(), 1).unwrap_err();
        match err {
            EmbedError::PerplexityTooLarge { needed, got, .. } => {
                assert_eq!(needed, 91);
                assert_eq!(got, 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_points_are_jittered_not_fatal() {
        let mut points: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i / 2) as f64, (i % 7) as f64])
            .collect();
        points[1] = points[0].clone(); // exact duplicate
        let mut cfg = TsneConfig::default();
        cfg.perplexity = 10.0;
        cfg.iterations = 60;
        let result = tsne_2d(&points, &cfg, 2).unwrap();
        assert_eq!(result.coords.len(), 40);
        assert!(result.coords.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
    }
}
