//! Voxel-count overlap metrics.

use super::{Mask3, MetricError, MetricValue};

fn counts(gt: &Mask3, p: &Mask3) -> Result<(usize, usize, usize, usize), MetricError> {
    gt.check_same_shape(p)?;
    let mut tp = 0;
    let mut gt_count = 0;
    let mut p_count = 0;
    let mut tn = 0;
    for (&g, &q) in gt.data.iter().zip(&p.data) {
        gt_count += g as usize;
        p_count += q as usize;
        tp += (g && q) as usize;
        tn += (!g && !q) as usize;
    }
    Ok((tp, gt_count, p_count, tn))
}

/// `2|GT∩P| / (|GT|+|P|)`; undefined when the ground truth is empty.
pub fn dice(gt: &Mask3, p: &Mask3) -> Result<MetricValue, MetricError> {
    let (tp, gt_count, p_count, _) = counts(gt, p)?;
    if gt_count == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * tp as f64 / (gt_count + p_count) as f64))
}

/// `|GT∩P| / |GT|`; undefined when the ground truth is empty.
pub fn sensitivity(gt: &Mask3, p: &Mask3) -> Result<MetricValue, MetricError> {
    let (tp, gt_count, _, _) = counts(gt, p)?;
    if gt_count == 0 {
        return Ok(None);
    }
    Ok(Some(tp as f64 / gt_count as f64))
}

/// `|GT̄∩P̄| / |GT̄|`; undefined when the ground truth fills the volume.
pub fn specificity(gt: &Mask3, p: &Mask3) -> Result<MetricValue, MetricError> {
    let (_, gt_count, _, tn) = counts(gt, p)?;
    let background = gt.data.len() - gt_count;
    if background == 0 {
        return Ok(None);
    }
    Ok(Some(tn as f64 / background as f64))
}

/// `||GT|-|P|| / |GT|`; undefined when the ground truth is empty.
pub fn ravd(gt: &Mask3, p: &Mask3) -> Result<MetricValue, MetricError> {
    let (_, gt_count, p_count, _) = counts(gt, p)?;
    if gt_count == 0 {
        return Ok(None);
    }
    Ok(Some(
        (gt_count as f64 - p_count as f64).abs() / gt_count as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(shape: (usize, usize, usize), voxels: &[(usize, usize, usize)]) -> Mask3 {
        let mut m = Mask3::empty(shape);
        for &(z, y, x) in voxels {
            let idx = m.index(z, y, x);
            m.data[idx] = true;
        }
        m
    }

    fn cube(shape: (usize, usize, usize), origin: (usize, usize, usize), side: usize) -> Mask3 {
        let mut m = Mask3::empty(shape);
        for z in origin.0..origin.0 + side {
            for y in origin.1..origin.1 + side {
                for x in origin.2..origin.2 + side {
                    let idx = m.index(z, y, x);
                    m.data[idx] = true;
                }
            }
        }
        m
    }

    #[test]
    fn perfect_prediction() {
        let gt = cube((6, 6, 6), (1, 1, 1), 3);
        assert_eq!(dice(&gt, &gt).unwrap(), Some(1.0));
        assert_eq!(sensitivity(&gt, &gt).unwrap(), Some(1.0));
        assert_eq!(specificity(&gt, &gt).unwrap(), Some(1.0));
        assert_eq!(ravd(&gt, &gt).unwrap(), Some(0.0));
    }

    #[test]
    fn disjoint_equal_size_sets() {
        let gt = mask((4, 4, 4), &[(0, 0, 0), (0, 0, 1)]);
        let p = mask((4, 4, 4), &[(2, 2, 2), (2, 2, 3)]);
        assert_eq!(dice(&gt, &p).unwrap(), Some(0.0));
        assert_eq!(sensitivity(&gt, &p).unwrap(), Some(0.0));
        assert_eq!(ravd(&gt, &p).unwrap(), Some(0.0));
    }

    #[test]
    fn shifted_cube_half_overlap() {
        // 2x2x2 cubes shifted by 1 along x: overlap 4 voxels
        let gt = cube((6, 6, 6), (1, 1, 1), 2);
        let p = cube((6, 6, 6), (1, 1, 2), 2);
        assert_eq!(dice(&gt, &p).unwrap(), Some(0.5));
        assert_eq!(sensitivity(&gt, &p).unwrap(), Some(0.5));
        assert_eq!(ravd(&gt, &p).unwrap(), Some(0.0));
    }

    #[test]
    fn undefined_markers() {
        let empty = Mask3::empty((3, 3, 3));
        let full = Mask3::new((3, 3, 3), vec![true; 27]);
        assert_eq!(dice(&empty, &full).unwrap(), None);
        assert_eq!(sensitivity(&empty, &full).unwrap(), None);
        assert_eq!(ravd(&empty, &full).unwrap(), None);
        assert_eq!(specificity(&full, &empty).unwrap(), None);
    }

    #[test]
    fn dice_is_symmetric_sensitivity_is_not() {
        let gt = cube((6, 6, 6), (1, 1, 1), 3); // 27 voxels
        let p = cube((6, 6, 6), (1, 1, 1), 2); // 8 voxels inside gt
        assert_eq!(dice(&gt, &p).unwrap(), dice(&p, &gt).unwrap());
        let s_ab = sensitivity(&gt, &p).unwrap().unwrap();
        let s_ba = sensitivity(&p, &gt).unwrap().unwrap();
        assert!((s_ab - 8.0 / 27.0).abs() < 1e-12);
        assert!((s_ba - 1.0).abs() < 1e-12);
        let r_ab = ravd(&gt, &p).unwrap().unwrap();
        let r_ba = ravd(&p, &gt).unwrap().unwrap();
        assert!(r_ab != r_ba);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Mask3::empty((2, 2, 2));
        let b = Mask3::empty((2, 2, 3));
        assert!(matches!(
            dice(&a, &b).unwrap_err(),
            MetricError::ShapeMismatch { .. }
        ));
    }
}
