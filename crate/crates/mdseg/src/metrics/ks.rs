//! Two-sample Kolmogorov-Smirnov test.

use super::MetricError;

/// Returns `(D, p)`: the supremum ECDF difference and the asymptotic
/// p-value with the effective sample size `n_a·n_b/(n_a+n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64), MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySample);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.total_cmp(y));
    sb.sort_by(|x, y| x.total_cmp(y));

    let (na, nb) = (sa.len(), sb.len());
    let mut d: f64 = 0.0;
    let (mut ia, mut ib) = (0usize, 0usize);
    while ia < na && ib < nb {
        let step = sa[ia].min(sb[ib]);
        while ia < na && sa[ia] <= step {
            ia += 1;
        }
        while ib < nb && sb[ib] <= step {
            ib += 1;
        }
        let fa = ia as f64 / na as f64;
        let fb = ib as f64 / nb as f64;
        d = d.max((fa - fb).abs());
    }

    let effective = (na * nb) as f64 / (na + nb) as f64;
    let lambda = effective.sqrt() * d;
    Ok((d, kolmogorov_survival(lambda)))
}

/// `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`, the asymptotic survival
/// function of the Kolmogorov distribution, clamped to [0, 1].
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-9 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_zero_and_one() {
        let a = [0.3, 0.7, 0.1, 0.9];
        let (d, p) = ks_two_sample(&a, &a).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn disjoint_supports_give_d_one() {
        let (d, _) = ks_two_sample(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn interleaved_hand_case() {
        // ECDF gap peaks at 0.5 after the first element of each sample
        let (d, _) = ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
        assert_eq!(d, 0.5);
    }

    #[test]
    fn ties_are_handled() {
        let (d, _) = ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        // after value 1: F_a = 2/3, F_b = 1/3 -> D = 1/3
        assert!((d - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sample_is_rejected() {
        assert!(matches!(
            ks_two_sample(&[], &[1.0]).unwrap_err(),
            MetricError::EmptySample
        ));
    }

    #[test]
    fn p_decreases_as_separation_grows() {
        use crate::seeding::rng_for;
        use rand::Rng;
        let mut rng = rng_for(17, &[3]);
        let base: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last_p = f64::INFINITY;
        for shift_steps in 0..5 {
            let shift = shift_steps as f64 * 0.5;
            let shifted: Vec<f64> = noise.iter().map(|v| v + shift).collect();
            let (_, p) = ks_two_sample(&base, &shifted).unwrap();
            assert!(p < last_p || (p == 0.0 && last_p == 0.0), "shift {shift}: p {p} !< {last_p}");
            last_p = p;
        }
    }
}
