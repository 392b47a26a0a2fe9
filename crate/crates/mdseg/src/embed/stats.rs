//! Quantitative cluster-separation statistics.

use serde::Serialize;

use super::{EmbedError, EmbeddingRecord};

/// Cosine-similarity separation in embedding space plus, when 2D
/// coordinates are supplied, a silhouette score by domain label.
#[derive(Debug, Clone, Serialize)]
pub struct SeparationReport {
    pub within_cosine: f64,
    pub cross_cosine: f64,
    pub gap: f64,
    pub silhouette: Option<f64>,
}

/// Mean within-domain and cross-domain cosine similarity over all pairs,
/// their gap, and optionally the silhouette of `coords` under the domain
/// labels.
pub fn separation_stats(
    records: &[EmbeddingRecord],
    coords: Option<&[[f64; 2]]>,
) -> Result<SeparationReport, EmbedError> {
    if records.len() < 2 {
        return Err(EmbedError::TooFewPoints {
            got: records.len(),
        });
    }
    let domains: std::collections::BTreeSet<usize> = records.iter().map(|r| r.domain).collect();
    if domains.len() < 2 {
        return Err(EmbedError::SingleDomain);
    }
    if let Some(c) = coords {
        if c.len() != records.len() {
            return Err(EmbedError::CoordsRecordMismatch {
                coords: c.len(),
                records: records.len(),
            });
        }
    }

    let norms: Vec<f64> = records
        .iter()
        .map(|r| r.z.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut within_sum = 0.0;
    let mut within_count = 0usize;
    let mut cross_sum = 0.0;
    let mut cross_count = 0usize;
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            let dot: f64 = records[i].z.iter().zip(&records[j].z).map(|(a, b)| a * b).sum();
            let sim = dot / (norms[i] * norms[j]);
            if records[i].domain == records[j].domain {
                within_sum += sim;
                within_count += 1;
            } else {
                cross_sum += sim;
                cross_count += 1;
            }
        }
    }
    let within_cosine = within_sum / within_count.max(1) as f64;
    let cross_cosine = cross_sum / cross_count.max(1) as f64;

    let silhouette = match coords {
        Some(c) => {
            let points: Vec<Vec<f64>> = c.iter().map(|p| p.to_vec()).collect();
            let labels: Vec<usize> = records.iter().map(|r| r.domain).collect();
            Some(silhouette_score(&points, &labels)?)
        }
        None => None,
    };

    Ok(SeparationReport {
        within_cosine,
        cross_cosine,
        gap: within_cosine - cross_cosine,
        silhouette,
    })
}

/// Mean silhouette coefficient under Euclidean distance. Points in
/// singleton clusters contribute 0.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[usize]) -> Result<f64, EmbedError> {
    let n = points.len();
    if n < 2 || labels.len() != n {
        return Err(EmbedError::TooFewPoints { got: n });
    }
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if clusters.len() < 2 {
        return Err(EmbedError::SingleDomain);
    }

    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };

    let mut total = 0.0;
    for i in 0..n {
        let mut same_sum = 0.0;
        let mut same_count = 0usize;
        let mut other: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist(&points[i], &points[j]);
            if labels[j] == labels[i] {
                same_sum += d;
                same_count += 1;
            } else {
                let e = other.entry(labels[j]).or_insert((0.0, 0));
                e.0 += d;
                e.1 += 1;
            }
        }
        if same_count == 0 {
            continue; // singleton cluster: s(i) = 0
        }
        let a = same_sum / same_count as f64;
        let b = other
            .values()
            .map(|(s, c)| s / *c as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Split;

    fn rec(z: Vec<f64>, domain: usize) -> EmbeddingRecord {
        EmbeddingRecord {
            z,
            domain,
            split: Split::Train,
            epoch: 30,
        }
    }

    #[test]
    fn identical_embeddings_have_zero_gap() {
        let records = vec![
            rec(vec![1.0, 1.0], 0),
            rec(vec![1.0, 1.0], 0),
            rec(vec![1.0, 1.0], 1),
            rec(vec![1.0, 1.0], 1),
        ];
        let report = separation_stats(&records, None).unwrap();
        assert!((report.gap - 0.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_bundles_have_unit_gap() {
        let records = vec![
            rec(vec![1.0, 0.0], 0),
            rec(vec![1.0, 0.0], 0),
            rec(vec![0.0, 1.0], 1),
            rec(vec![0.0, 1.0], 1),
        ];
        let report = separation_stats(&records, None).unwrap();
        assert!((report.within_cosine - 1.0).abs() < 1e-12);
        assert!(report.cross_cosine.abs() < 1e-12);
        assert!((report.gap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gap_is_invariant_to_positive_rescaling() {
        let base = vec![
            rec(vec![0.3, 0.8], 0),
            rec(vec![0.4, 0.7], 0),
            rec(vec![-0.5, 0.2], 1),
            rec(vec![-0.6, 0.1], 1),
        ];
        let scaled: Vec<EmbeddingRecord> = base
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let c = 0.5 + i as f64;
                rec(r.z.iter().map(|v| v * c).collect(), r.domain)
            })
            .collect();
        let a = separation_stats(&base, None).unwrap();
        let b = separation_stats(&scaled, None).unwrap();
        assert!((a.gap - b.gap).abs() < 1e-10);
    }

    #[test]
    fn single_domain_is_rejected() {
        let records = vec![rec(vec![1.0], 0), rec(vec![2.0], 0)];
        assert!(matches!(
            separation_stats(&records, None).unwrap_err(),
            EmbedError::SingleDomain
        ));
    }

    #[test]
    fn silhouette_of_tight_far_clusters_is_high() {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            points.push(vec![i as f64 * 0.01, 0.0]);
            labels.push(0);
            points.push(vec![100.0 + i as f64 * 0.01, 0.0]);
            labels.push(1);
        }
        let s = silhouette_score(&points, &labels).unwrap();
        assert!(s > 0.95, "silhouette {s}");
    }
}
