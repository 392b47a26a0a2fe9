//! Surface extraction and surface-distance metrics in millimetres.

use rayon::prelude::*;

use super::{Mask3, MetricError, MetricValue};

/// Foreground voxels with at least one background face-neighbor
/// (out-of-bounds counts as background), plus the voxel spacing.
#[derive(Debug, Clone)]
pub struct SurfaceVoxelSet {
    pub coordinates: Vec<(usize, usize, usize)>,
    pub spacing: (f64, f64, f64),
}

/// Extracts the 6-neighborhood surface of a mask.
pub fn extract_surface(mask: &Mask3, spacing: (f64, f64, f64)) -> SurfaceVoxelSet {
    let (zs, ys, xs) = mask.shape;
    let mut coordinates = Vec::new();
    for z in 0..zs {
        for y in 0..ys {
            for x in 0..xs {
                if !mask.get(z, y, x) {
                    continue;
                }
                let exposed = (z == 0 || !mask.get(z - 1, y, x))
                    || (z + 1 == zs || !mask.get(z + 1, y, x))
                    || (y == 0 || !mask.get(z, y - 1, x))
                    || (y + 1 == ys || !mask.get(z, y + 1, x))
                    || (x == 0 || !mask.get(z, y, x - 1))
                    || (x + 1 == xs || !mask.get(z, y, x + 1));
                if exposed {
                    coordinates.push((z, y, x));
                }
            }
        }
    }
    SurfaceVoxelSet {
        coordinates,
        spacing,
    }
}

/// Target surface grouped by z for plane-pruned nearest lookups.
struct PlanedSurface {
    planes: Vec<(usize, Vec<(usize, usize)>)>, // (z, [(y, x)]) sorted by z
}

impl PlanedSurface {
    fn build(surface: &SurfaceVoxelSet) -> Self {
        let mut planes: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
        for &(z, y, x) in &surface.coordinates {
            match planes.iter_mut().find(|(pz, _)| *pz == z) {
                Some((_, list)) => list.push((y, x)),
                None => planes.push((z, vec![(y, x)])),
            }
        }
        planes.sort_by_key(|(z, _)| *z);
        PlanedSurface { planes }
    }

    /// Squared distance (mm²) from `(z,y,x)` to the nearest stored voxel.
    ///
    /// Planes are visited outward from the query's z; once the plane's z
    /// offset alone exceeds the best distance, no further plane can win.
    fn nearest_sq(&self, z: usize, y: usize, x: usize, spacing: (f64, f64, f64)) -> f64 {
        let (sz, sy, sx) = spacing;
        let start = self
            .planes
            .partition_point(|(pz, _)| *pz < z)
            .min(self.planes.len().saturating_sub(1));
        let mut best = f64::INFINITY;
        let mut lo = start as isize;
        let mut hi = start as isize + 1;
        let scan = |plane_idx: isize, best: &mut f64| {
            let (pz, list) = &self.planes[plane_idx as usize];
            let dz = (*pz as f64 - z as f64) * sz;
            let dz2 = dz * dz;
            if dz2 >= *best {
                return false; // this and all further planes on this side lose
            }
            for &(py, px) in list {
                let dy = (py as f64 - y as f64) * sy;
                let dx = (px as f64 - x as f64) * sx;
                let d2 = dz2 + dy * dy + dx * dx;
                if d2 < *best {
                    *best = d2;
                }
            }
            true
        };
        loop {
            let mut advanced = false;
            if lo >= 0 {
                advanced = true;
                if scan(lo, &mut best) {
                    lo -= 1;
                } else {
                    lo = -1;
                }
            }
            if (hi as usize) < self.planes.len() {
                advanced = true;
                if scan(hi, &mut best) {
                    hi += 1;
                } else {
                    hi = self.planes.len() as isize;
                }
            }
            if !advanced {
                break;
            }
        }
        best
    }
}

/// Min distance (mm) of every voxel of `from` to the surface `to`.
fn directed_min_distances(from: &SurfaceVoxelSet, to: &SurfaceVoxelSet) -> Vec<f64> {
    let planes = PlanedSurface::build(to);
    from.coordinates
        .par_iter()
        .map(|&(z, y, x)| planes.nearest_sq(z, y, x, from.spacing).sqrt())
        .collect()
}

fn surfaces(
    gt: &Mask3,
    p: &Mask3,
    spacing: (f64, f64, f64),
) -> Result<Option<(SurfaceVoxelSet, SurfaceVoxelSet)>, MetricError> {
    gt.check_same_shape(p)?;
    if gt.is_all_background() || p.is_all_background() {
        return Ok(None);
    }
    Ok(Some((
        extract_surface(gt, spacing),
        extract_surface(p, spacing),
    )))
}

/// Average symmetric surface distance in mm; undefined if either mask is
/// empty.
pub fn assd(gt: &Mask3, p: &Mask3, spacing: (f64, f64, f64)) -> Result<MetricValue, MetricError> {
    let Some((s_gt, s_p)) = surfaces(gt, p, spacing)? else {
        return Ok(None);
    };
    let d_gt = directed_min_distances(&s_gt, &s_p);
    let d_p = directed_min_distances(&s_p, &s_gt);
    let total: f64 = d_gt.iter().sum::<f64>() + d_p.iter().sum::<f64>();
    Ok(Some(total / (d_gt.len() + d_p.len()) as f64))
}

/// Maximum symmetric surface distance (Hausdorff over surface voxels) in
/// mm; undefined if either mask is empty.
pub fn mssd(gt: &Mask3, p: &Mask3, spacing: (f64, f64, f64)) -> Result<MetricValue, MetricError> {
    let Some((s_gt, s_p)) = surfaces(gt, p, spacing)? else {
        return Ok(None);
    };
    let h_gt = directed_min_distances(&s_gt, &s_p)
        .into_iter()
        .fold(0.0f64, f64::max);
    let h_p = directed_min_distances(&s_p, &s_gt)
        .into_iter()
        .fold(0.0f64, f64::max);
    Ok(Some(h_gt.max(h_p)))
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

    /// Plain double loop over surface pairs, the independent route.
    fn naive_directed(from: &SurfaceVoxelSet, to: &SurfaceVoxelSet) -> Vec<f64> {
        let (sz, sy, sx) = from.spacing;
        from.coordinates
            .iter()
            .map(|&(az, ay, ax)| {
                to.coordinates
                    .iter()
                    .map(|&(bz, by, bx)| {
                        let dz = (az as f64 - bz as f64) * sz;
                        let dy = (ay as f64 - by as f64) * sy;
                        let dx = (ax as f64 - bx as f64) * sx;
                        (dz * dz + dy * dy + dx * dx).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let m = cube((8, 8, 8), (2, 2, 2), 3);
        assert_eq!(assd(&m, &m, (1.0, 1.0, 1.0)).unwrap(), Some(0.0));
        assert_eq!(mssd(&m, &m, (1.0, 1.0, 1.0)).unwrap(), Some(0.0));
    }

    #[test]
    fn two_voxels_three_slices_apart() {
        let a = mask((8, 4, 4), &[(1, 2, 2)]);
        let b = mask((8, 4, 4), &[(4, 2, 2)]);
        let spacing = (1.2, 0.4, 0.4);
        let d = assd(&a, &b, spacing).unwrap().unwrap();
        let h = mssd(&a, &b, spacing).unwrap().unwrap();
        assert!((d - 3.6).abs() < 1e-12, "assd {d}");
        assert!((h - 3.6).abs() < 1e-12, "mssd {h}");
    }

    #[test]
    fn shifted_cube_matches_naive_oracle() {
        let gt = cube((7, 7, 7), (2, 2, 2), 2);
        let p = cube((7, 7, 7), (2, 2, 3), 2);
        let spacing = (1.0, 1.0, 1.0);
        let s_gt = extract_surface(&gt, spacing);
        let s_p = extract_surface(&p, spacing);
        let d1 = naive_directed(&s_gt, &s_p);
        let d2 = naive_directed(&s_p, &s_gt);
        let expected_assd =
            (d1.iter().sum::<f64>() + d2.iter().sum::<f64>()) / (d1.len() + d2.len()) as f64;
        let expected_mssd = d1
            .iter()
            .chain(&d2)
            .fold(0.0f64, |acc, &v| acc.max(v));
        let got_assd = assd(&gt, &p, spacing).unwrap().unwrap();
        let got_mssd = mssd(&gt, &p, spacing).unwrap().unwrap();
        assert!((got_assd - expected_assd).abs() < 1e-9);
        assert!((got_mssd - expected_mssd).abs() < 1e-9);
    }

    #[test]
    fn empty_masks_are_undefined() {
        let empty = Mask3::empty((4, 4, 4));
        let m = cube((4, 4, 4), (0, 0, 0), 2);
        assert_eq!(assd(&empty, &m, (1.0, 1.0, 1.0)).unwrap(), None);
        assert_eq!(mssd(&m, &empty, (1.0, 1.0, 1.0)).unwrap(), None);
    }

    #[test]
    fn mssd_dominates_assd_and_both_are_symmetric() {
        let gt = cube((9, 9, 9), (1, 1, 1), 4);
        let p = cube((9, 9, 9), (3, 4, 2), 3);
        let spacing = (1.2, 0.4, 0.4);
        let a1 = assd(&gt, &p, spacing).unwrap().unwrap();
        let a2 = assd(&p, &gt, spacing).unwrap().unwrap();
        let m1 = mssd(&gt, &p, spacing).unwrap().unwrap();
        let m2 = mssd(&p, &gt, spacing).unwrap().unwrap();
        assert!((a1 - a2).abs() < 1e-12);
        assert!((m1 - m2).abs() < 1e-12);
        assert!(m1 >= a1);
    }

    #[test]
    fn interior_voxels_are_not_surface() {
        let m = cube((8, 8, 8), (1, 1, 1), 4); // 64 voxels, 4^3
        let s = extract_surface(&m, (1.0, 1.0, 1.0));
        // 4^3 cube has 4^3 - 2^3 = 56 surface voxels
        assert_eq!(s.coordinates.len(), 56);
    }
}
