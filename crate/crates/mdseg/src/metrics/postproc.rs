//! Stacking, connected-component selection and morphological closing.

use super::{Mask3, MetricError};

/// Per-pixel argmax over stacked per-slice class maps (each slice is a
/// row-major `[classes, h, w]` buffer). Ties resolve to the lowest class.
pub fn stack_argmax_labels(
    slices: &[Vec<f64>],
    classes: usize,
    h: usize,
    w: usize,
) -> Result<Vec<u8>, MetricError> {
    let plane = h * w;
    let expected = classes * plane;
    let mut labels = Vec::with_capacity(slices.len() * plane);
    for (index, slice) in slices.iter().enumerate() {
        if slice.len() != expected {
            return Err(MetricError::InconsistentSlices {
                index,
                expected,
                got: slice.len(),
            });
        }
        for p in 0..plane {
            let mut best = slice[p];
            let mut best_c = 0usize;
            for c in 1..classes {
                let v = slice[c * plane + p];
                if v > best {
                    best = v;
                    best_c = c;
                }
            }
            labels.push(best_c as u8);
        }
    }
    Ok(labels)
}

/// Indicator volume of one class in a label buffer.
pub fn binarize_labels(labels: &[u8], shape: (usize, usize, usize), class: u8) -> Mask3 {
    Mask3::new(shape, labels.iter().map(|&l| l == class).collect())
}

/// Stacks per-slice class maps into a 3D binary volume of one class:
/// argmax per pixel, then indicator of `class`.
pub fn stack_and_binarize(
    slices: &[Vec<f64>],
    classes: usize,
    h: usize,
    w: usize,
    class: usize,
) -> Result<Mask3, MetricError> {
    if class >= classes {
        return Err(MetricError::ClassOutOfRange { class, classes });
    }
    let labels = stack_argmax_labels(slices, classes, h, w)?;
    Ok(binarize_labels(&labels, (slices.len(), h, w), class as u8))
}

const NEIGHBORS_26: [(i32, i32, i32); 26] = {
    let mut out = [(0, 0, 0); 26];
    let mut i = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dz == 0 && dy == 0 && dx == 0) {
                    out[i] = (dz, dy, dx);
                    i += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

/// Keeps only the largest 26-connected foreground component. On a size tie
/// the component containing the lexicographically smallest voxel survives;
/// an empty volume stays empty.
pub fn largest_component(mask: &Mask3) -> Mask3 {
    let (zs, ys, xs) = mask.shape;
    let mut visited = vec![false; mask.data.len()];
    let mut best: Option<(usize, Vec<usize>)> = None;

    let mut stack = Vec::new();
    for z in 0..zs {
        for y in 0..ys {
            for x in 0..xs {
                let start = mask.index(z, y, x);
                if !mask.data[start] || visited[start] {
                    continue;
                }
                // flood fill; components are discovered in order of their
                // lexicographically smallest voxel, so a strict size
                // comparison implements the tie-break
                let mut component = Vec::new();
                visited[start] = true;
                stack.push((z as i32, y as i32, x as i32));
                while let Some((cz, cy, cx)) = stack.pop() {
                    component.push(mask.index(cz as usize, cy as usize, cx as usize));
                    for (dz, dy, dx) in NEIGHBORS_26 {
                        let (nz, ny, nx) = (cz + dz, cy + dy, cx + dx);
                        if nz < 0 || ny < 0 || nx < 0 {
                            continue;
                        }
                        let (nz, ny, nx) = (nz as usize, ny as usize, nx as usize);
                        if nz >= zs || ny >= ys || nx >= xs {
                            continue;
                        }
                        let idx = mask.index(nz, ny, nx);
                        if mask.data[idx] && !visited[idx] {
                            visited[idx] = true;
                            stack.push((nz as i32, ny as i32, nx as i32));
                        }
                    }
                }
                let size = component.len();
                if best.as_ref().is_none_or(|(s, _)| size > *s) {
                    best = Some((size, component));
                }
            }
        }
    }

    let mut out = Mask3::empty(mask.shape);
    if let Some((_, component)) = best {
        for idx in component {
            out.data[idx] = true;
        }
    }
    out
}

/// Offsets of the Euclidean ball of radius 2 voxels (inscribed in 5×5×5).
fn ball_offsets() -> Vec<(i32, i32, i32)> {
    let mut out = Vec::new();
    for dz in -2i32..=2 {
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                if dz * dz + dy * dy + dx * dx <= 4 {
                    out.push((dz, dy, dx));
                }
            }
        }
    }
    out
}

fn dilate(mask: &Mask3, offsets: &[(i32, i32, i32)]) -> Mask3 {
    let (zs, ys, xs) = mask.shape;
    let mut out = Mask3::empty(mask.shape);
    for z in 0..zs as i32 {
        for y in 0..ys as i32 {
            for x in 0..xs as i32 {
                if !mask.get(z as usize, y as usize, x as usize) {
                    continue;
                }
                for &(dz, dy, dx) in offsets {
                    let (nz, ny, nx) = (z + dz, y + dy, x + dx);
                    if nz >= 0 && ny >= 0 && nx >= 0 && nz < zs as i32 && ny < ys as i32 && nx < xs as i32 {
                        let idx = out.index(nz as usize, ny as usize, nx as usize);
                        out.data[idx] = true;
                    }
                }
            }
        }
    }
    out
}

fn ball_fits(mask: &Mask3, offsets: &[(i32, i32, i32)], z: i32, y: i32, x: i32) -> bool {
    let (zs, ys, xs) = mask.shape;
    for &(dz, dy, dx) in offsets {
        let (nz, ny, nx) = (z + dz, y + dy, x + dx);
        // zero padding: out-of-bounds counts as background
        if nz < 0 || ny < 0 || nx < 0 || nz >= zs as i32 || ny >= ys as i32 || nx >= xs as i32 {
            return false;
        }
        if !mask.get(nz as usize, ny as usize, nx as usize) {
            return false;
        }
    }
    true
}

fn erode(mask: &Mask3, offsets: &[(i32, i32, i32)]) -> Mask3 {
    let (zs, ys, xs) = mask.shape;
    let mut out = Mask3::empty(mask.shape);
    for z in 0..zs as i32 {
        for y in 0..ys as i32 {
            for x in 0..xs as i32 {
                if ball_fits(mask, offsets, z, y, x) {
                    let idx = mask.index(z as usize, y as usize, x as usize);
                    out.data[idx] = true;
                }
            }
        }
    }
    out
}

/// Morphological closing (dilation then erosion) with the radius-2 ball;
/// borders are zero-padded.
pub fn morphological_closing(mask: &Mask3) -> Mask3 {
    let offsets = ball_offsets();
    erode(&dilate(mask, &offsets), &offsets)
}
