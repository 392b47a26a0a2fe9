//! On-the-fly 2D augmentation: flips, rotation and translation applied with
//! one shared geometric transform to image and mask. The image interpolates
//! bilinearly (out-of-frame fill = slice minimum), the mask nearest-neighbor
//! (fill = background).

use rand::Rng;

use crate::seeding::rng_for;

use super::AugmentationPolicy;

/// Applies one random draw of `policy` to a slice/mask pair.
pub fn augment(
    slice: &[f64],
    mask: &[u8],
    height: usize,
    width: usize,
    policy: &AugmentationPolicy,
    seed: u64,
) -> (Vec<f64>, Vec<u8>) {
    debug_assert_eq!(slice.len(), height * width);
    debug_assert_eq!(mask.len(), height * width);
    debug_assert!(policy.validate(), "invalid augmentation policy");
    let mut rng = rng_for(seed, &[0xa26]);

    let flip_h = policy.flip_horizontal && rng.gen_bool(0.5);
    let flip_v = policy.flip_vertical && rng.gen_bool(0.5);
    let angle = if policy.max_rotation_deg > 0.0 {
        rng.gen_range(-policy.max_rotation_deg..policy.max_rotation_deg)
            .to_radians()
    } else {
        0.0
    };
    let (ty, tx) = if policy.max_translation_frac > 0.0 {
        let fy = policy.max_translation_frac * height as f64;
        let fx = policy.max_translation_frac * width as f64;
        (rng.gen_range(-fy..fy), rng.gen_range(-fx..fx))
    } else {
        (0.0, 0.0)
    };

    let fill = slice.iter().copied().fold(f64::INFINITY, f64::min);
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();

    let mut out_slice = vec![0.0; slice.len()];
    let mut out_mask = vec![0u8; mask.len()];
    for y in 0..height {
        for x in 0..width {
            // invert: translation, then rotation about the center, then flips
            let py = y as f64 - ty - cy;
            let px = x as f64 - tx - cx;
            let ry = cos * py + sin * px + cy;
            let rx = -sin * py + cos * px + cx;
            let sy = if flip_v { height as f64 - 1.0 - ry } else { ry };
            let sx = if flip_h { width as f64 - 1.0 - rx } else { rx };

            let idx = y * width + x;
            out_slice[idx] = bilinear(slice, height, width, sy, sx, fill);
            out_mask[idx] = nearest(mask, height, width, sy, sx);
        }
    }
    (out_slice, out_mask)
}

fn bilinear(img: &[f64], h: usize, w: usize, y: f64, x: f64, fill: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let dy = y - y0;
    let dx = x - x0;
    let sample = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            fill
        } else {
            img[yy as usize * w + xx as usize]
        }
    };
    let v00 = sample(y0, x0);
    let v01 = sample(y0, x0 + 1.0);
    let v10 = sample(y0 + 1.0, x0);
    let v11 = sample(y0 + 1.0, x0 + 1.0);
    v00 * (1.0 - dy) * (1.0 - dx) + v01 * (1.0 - dy) * dx + v10 * dy * (1.0 - dx) + v11 * dy * dx
}

fn nearest(mask: &[u8], h: usize, w: usize, y: f64, x: f64) -> u8 {
    let yy = y.round();
    let xx = x.round();
    if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
        0
    } else {
        mask[yy as usize * w + xx as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn checkerboard(h: usize, w: usize) -> (Vec<f64>, Vec<u8>) {
        let slice: Vec<f64> = (0..h * w)
            .map(|i| ((i / w + i % w) % 3) as f64 * 0.5 + 0.1)
            .collect();
        let mask: Vec<u8> = (0..h * w)
            .map(|i| if (i / w) > h / 2 && (i % w) > w / 2 { 2 } else { 0 })
            .collect();
        (slice, mask)
    }

    #[test]
    fn identity_draw_returns_input_unchanged() {
        let (slice, mask) = checkerboard(8, 8);
        let (s2, m2) = augment(&slice, &mask, 8, 8, &AugmentationPolicy::identity(), 9);
        assert_eq!(slice, s2);
        assert_eq!(mask, m2);
    }

    #[test]
    fn flips_are_involutions() {
        let policy = AugmentationPolicy {
            flip_horizontal: true,
            flip_vertical: true,
            max_translation_frac: 0.0,
            max_rotation_deg: 0.0,
        };
        let (slice, mask) = checkerboard(8, 10);
        let mut any_changed = false;
        for seed in 0..6 {
            let (s1, m1) = augment(&slice, &mask, 8, 10, &policy, seed);
            any_changed |= s1 != slice;
            let (s2, m2) = augment(&s1, &m1, 8, 10, &policy, seed);
            assert_eq!(slice, s2, "seed {seed}");
            assert_eq!(mask, m2, "seed {seed}");
        }
        assert!(any_changed, "no seed exercised a flip");
    }

    #[test]
    fn rotation_never_invents_labels() {
        let (slice, mask) = checkerboard(16, 16);
        let before: BTreeSet<u8> = mask.iter().copied().collect();
        let policy = AugmentationPolicy {
            flip_horizontal: false,
            flip_vertical: false,
            max_translation_frac: 0.0,
            max_rotation_deg: 30.0,
        };
        for seed in 0..10 {
            let (_, m) = augment(&slice, &mask, 16, 16, &policy, seed);
            let after: BTreeSet<u8> = m.iter().copied().collect();
            assert!(after.is_subset(&before), "seed {seed}: {after:?}");
        }
    }

    #[test]
    fn translation_fills_with_slice_minimum() {
        let slice = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let mask = vec![1u8; 9];
        let policy = AugmentationPolicy {
            flip_horizontal: false,
            flip_vertical: false,
            max_translation_frac: 0.9,
            max_rotation_deg: 0.0,
        };
        let mut saw_fill = false;
        for seed in 0..10 {
            let (s, m) = augment(&slice, &mask, 3, 3, &policy, seed);
            if s.iter().any(|&v| v == 1.0) && m.iter().any(|&l| l == 0) {
                saw_fill = true;
            }
        }
        assert!(saw_fill, "no draw moved content out of frame");
    }
}
