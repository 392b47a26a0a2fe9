//! Principal component analysis via a cyclic Jacobi eigensolver.

use super::{check_uniform_dim, EmbedError};

/// Projects centered data onto the top `target_dim` principal components,
/// columns ordered by decreasing variance. Inputs with dimension at most
/// `target_dim` pass through centered.
pub fn pca_reduce(points: &[Vec<f64>], target_dim: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let n = points.len();
    if n < 2 {
        return Err(EmbedError::TooFewPoints { got: n });
    }
    let d = check_uniform_dim(points)?;

    // center
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    if d <= target_dim {
        return Ok(centered);
    }

    // covariance (unbiased)
    let mut cov = vec![0.0; d * d];
    for p in &centered {
        for i in 0..d {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i * d + j] += pi * p[j];
            }
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] *= scale;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen(&mut cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let top = &order[..target_dim.min(d)];

    let out = centered
        .iter()
        .map(|p| {
            top.iter()
                .map(|&col| (0..d).map(|i| p[i] * eigenvectors[i * d + col]).sum())
                .collect()
        })
        .collect();
    Ok(out)
}

/// Cyclic Jacobi diagonalization of a symmetric matrix (in place); returns
/// eigenvalues and the eigenvector matrix (columns are eigenvectors).
fn jacobi_eigen(a: &mut [f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let frobenius: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tolerance = (frobenius * 1e-14).max(1e-300);

    for _sweep in 0..100 {
        let mut off: f64 = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off.sqrt() <= tolerance {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() <= tolerance / (d as f64) {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (eigenvalues, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;
    use rand::Rng;

    fn column_variances(data: &[Vec<f64>]) -> Vec<f64> {
        let n = data.len() as f64;
        let d = data[0].len();
        (0..d)
            .map(|j| {
                let mean: f64 = data.iter().map(|p| p[j]).sum::<f64>() / n;
                data.iter().map(|p| (p[j] - mean) * (p[j] - mean)).sum::<f64>() / (n - 1.0)
            })
            .collect()
    }

    /// Random points on a 2D affine subspace of R^8.
    fn planar_data(seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, &[7]);
        let u: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let offset: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (0..n)
            .map(|_| {
                let a = rng.gen_range(-2.0..2.0);
                let b = rng.gen_range(-2.0..2.0);
                (0..8).map(|i| offset[i] + a * u[i] + b * w[i]).collect()
            })
            .collect()
    }

    #[test]
    fn planar_data_has_rank_two_spectrum() {
        let data = planar_data(3, 60);
        let reduced = pca_reduce(&data, 5).unwrap();
        let vars = column_variances(&reduced);
        assert!(vars[0] >= vars[1]);
        for v in &vars[2..] {
            assert!(*v < 1e-10, "trailing variance {v}");
        }
    }

    #[test]
    fn output_columns_are_centered() {
        let data = planar_data(4, 40);
        let reduced = pca_reduce(&data, 4).unwrap();
        let d = reduced[0].len();
        for j in 0..d {
            let mean: f64 = reduced.iter().map(|p| p[j]).sum::<f64>() / reduced.len() as f64;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_leaves_spectrum_unchanged() {
        let data = planar_data(5, 50);
        // Gram-Schmidt an 8x8 random matrix into an orthogonal Q
        let mut rng = rng_for(6, &[8]);
        let mut q: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        for i in 0..8 {
            for j in 0..i {
                let dot: f64 = (0..8).map(|k| q[i][k] * q[j][k]).sum();
                for k in 0..8 {
                    q[i][k] -= dot * q[j][k];
                }
            }
            let norm: f64 = q[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..8 {
                q[i][k] /= norm;
            }
        }
        let rotated: Vec<Vec<f64>> = data
            .iter()
            .map(|p| (0..8).map(|i| (0..8).map(|k| q[i][k] * p[k]).sum()).collect())
            .collect();
        let v1 = column_variances(&pca_reduce(&data, 6).unwrap());
        let v2 = column_variances(&pca_reduce(&rotated, 6).unwrap());
        for (a, b) in v1.iter().zip(&v2) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn low_dimension_passes_through_centered() {
        let data = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 4.0]];
        let out = pca_reduce(&data, 50).unwrap();
        assert_eq!(out[0].len(), 2);
        assert!((out[0][0] + 2.0).abs() < 1e-12); // 1 - mean(3) = -2
    }

    #[test]
    fn single_point_is_rejected() {
        assert!(matches!(
            pca_reduce(&[vec![1.0, 2.0]], 2).unwrap_err(),
            EmbedError::TooFewPoints { got: 1 }
        ));
    }

    #[test]
    fn top_k_projection_beats_random_projections() {
        let data = planar_data(9, 80);
        let k = 2;
        let reduced = pca_reduce(&data, k).unwrap();
        // captured variance of the PCA projection
        let pca_captured: f64 = column_variances(&reduced).iter().sum();
        let total: f64 = column_variances(&data).iter().sum();
        let pca_residual = total - pca_captured;

        let mut rng = rng_for(10, &[11]);
        for _ in 0..100 {
            // random orthonormal rank-k basis
            let mut basis: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            for i in 0..k {
                for j in 0..i {
                    let dot: f64 = (0..8).map(|m| basis[i][m] * basis[j][m]).sum();
                    for m in 0..8 {
                        basis[i][m] -= dot * basis[j][m];
                    }
                }
                let norm: f64 = basis[i].iter().map(|v| v * v).sum::<f64>().sqrt();
                for m in 0..8 {
                    basis[i][m] /= norm;
                }
            }
            let projected: Vec<Vec<f64>> = data
                .iter()
                .map(|p| basis.iter().map(|b| b.iter().zip(p).map(|(x, y)| x * y).sum()).collect())
                .collect();
            let captured: f64 = column_variances(&projected).iter().sum();
            let residual = total - captured;
            assert!(
                pca_residual <= residual + 1e-9,
                "random projection beat PCA: {pca_residual} vs {residual}"
            );
        }
    }
}
