//! Deterministic exam generator for the two synthetic domains.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::network::DomainSpec;
use crate::seeding::rng_for;

use super::{DataError, LabelVolume, Volume};

pub const NUM_DOMAINS: usize = 2;

/// Voxel spacing mirroring an anisotropic acquisition: slices are three
/// times thicker than the in-plane resolution.
pub const SPACING: (f64, f64, f64) = (1.2, 0.4, 0.4);

const DOMAIN0_STRUCTURES: usize = 3;
const DOMAIN1_STRUCTURES: usize = 2;
const PLACEMENT_RETRIES: usize = 80;
const MIN_STRUCTURE_VOXELS: usize = 24;

/// Domain specs matching the generator's label sets.
pub fn synth_domain_specs(num_exams: usize) -> Vec<DomainSpec> {
    vec![
        DomainSpec {
            id: 0,
            labels: ["background", "blob_a", "blob_b", "blob_c"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            sample_count: num_exams,
        },
        DomainSpec {
            id: 1,
            labels: ["background", "plate", "ball"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            sample_count: num_exams,
        },
    ]
}

/// Low-frequency cosine field used for background texture and blob
/// boundary deformation.
struct WobbleField {
    terms: Vec<(f64, [f64; 3], f64)>, // amplitude, frequency vector (cycles per extent), phase
}

impl WobbleField {
    fn draw(rng: &mut ChaCha8Rng, terms: usize, amplitude: f64, max_cycles: f64) -> Self {
        let terms = (0..terms)
            .map(|_| {
                let amp = amplitude * rng.gen_range(0.5..1.0);
                let freq = [
                    rng.gen_range(0.5..max_cycles),
                    rng.gen_range(0.5..max_cycles),
                    rng.gen_range(0.5..max_cycles),
                ];
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                (amp, freq, phase)
            })
            .collect();
        WobbleField { terms }
    }

    /// Evaluated at fractional coordinates in [0,1]^3.
    fn at(&self, fz: f64, fy: f64, fx: f64) -> f64 {
        self.terms
            .iter()
            .map(|(amp, freq, phase)| {
                amp * (std::f64::consts::TAU * (freq[0] * fz + freq[1] * fy + freq[2] * fx) + phase)
                    .cos()
            })
            .sum()
    }
}

enum Shape {
    /// Deformed ellipsoid: `sum(((p-c)/r)^2) + wobble < 1`.
    Blob {
        center: [f64; 3],
        radii: [f64; 3],
        wobble: WobbleField,
    },
    /// Thin curved sheet: `|y - surface(x,z)| < thickness` within an
    /// elliptical (x,z) footprint.
    Plate {
        center: [f64; 3],
        extent_x: f64,
        extent_z: f64,
        curvature: f64,
        tilt: f64,
        thickness: f64,
    },
}

impl Shape {
    fn contains(&self, z: f64, y: f64, x: f64, dims: (usize, usize, usize)) -> bool {
        match self {
            Shape::Blob {
                center,
                radii,
                wobble,
            } => {
                let q = ((z - center[0]) / radii[0]).powi(2)
                    + ((y - center[1]) / radii[1]).powi(2)
                    + ((x - center[2]) / radii[2]).powi(2);
                let (zn, hn, wn) = (dims.0 as f64, dims.1 as f64, dims.2 as f64);
                q + wobble.at(z / zn, y / hn, x / wn) < 1.0
            }
            Shape::Plate {
                center,
                extent_x,
                extent_z,
                curvature,
                tilt,
                thickness,
            } => {
                let ux = (x - center[2]) / extent_x;
                let uz = (z - center[0]) / extent_z;
                if ux * ux + uz * uz >= 1.0 {
                    return false;
                }
                let surface = center[1] + curvature * ux * ux + tilt * ux;
                (y - surface).abs() < *thickness
            }
        }
    }

    /// Conservative bounding box (z0,z1,y0,y1,x0,x1), clipped to the volume.
    fn bounds(&self, dims: (usize, usize, usize)) -> (usize, usize, usize, usize, usize, usize) {
        let clip = |v: f64, hi: usize| v.max(0.0).min(hi as f64 - 1.0) as usize;
        match self {
            Shape::Blob { center, radii, .. } => {
                let m = 1.6; // wobble can push the boundary outward
                (
                    clip(center[0] - radii[0] * m, dims.0),
                    clip(center[0] + radii[0] * m, dims.0),
                    clip(center[1] - radii[1] * m, dims.1),
                    clip(center[1] + radii[1] * m, dims.1),
                    clip(center[2] - radii[2] * m, dims.2),
                    clip(center[2] + radii[2] * m, dims.2),
                )
            }
            Shape::Plate {
                center,
                extent_x,
                extent_z,
                curvature,
                tilt,
                thickness,
            } => {
                let dy = curvature.abs() + tilt.abs() + thickness + 1.0;
                (
                    clip(center[0] - extent_z, dims.0),
                    clip(center[0] + extent_z, dims.0),
                    clip(center[1] - dy, dims.1),
                    clip(center[1] + dy, dims.1),
                    clip(center[2] - extent_x, dims.2),
                    clip(center[2] + extent_x, dims.2),
                )
            }
        }
    }
}

fn rasterize(shape: &Shape, dims: (usize, usize, usize)) -> Vec<usize> {
    let (zb0, zb1, yb0, yb1, xb0, xb1) = shape.bounds(dims);
    let (_, h, w) = dims;
    let mut voxels = Vec::new();
    for z in zb0..=zb1 {
        for y in yb0..=yb1 {
            for x in xb0..=xb1 {
                if shape.contains(z as f64, y as f64, x as f64, dims) {
                    voxels.push((z * h + y) * w + x);
                }
            }
        }
    }
    voxels
}

struct DomainModel {
    structures: usize,
    background_level: f64,
    background_texture_amp: f64,
    structure_levels: Vec<f64>,
    structure_texture_amp: f64,
    noise_sigma: f64,
}

fn domain_model(domain: usize) -> DomainModel {
    match domain {
        // bright, well-contrasted structures, mild noise
        0 => DomainModel {
            structures: DOMAIN0_STRUCTURES,
            background_level: 0.25,
            background_texture_amp: 0.04,
            structure_levels: vec![0.78, 0.84, 0.90],
            structure_texture_amp: 0.05,
            noise_sigma: 0.05,
        },
        // lower contrast and clearly noisier acquisitions
        _ => DomainModel {
            structures: DOMAIN1_STRUCTURES,
            background_level: 0.52,
            background_texture_amp: 0.05,
            structure_levels: vec![0.80, 0.84],
            structure_texture_amp: 0.04,
            noise_sigma: 0.11,
        },
    }
}

fn draw_shape(rng: &mut ChaCha8Rng, domain: usize, class: usize, dims: (usize, usize, usize)) -> Shape {
    let (z, h, w) = (dims.0 as f64, dims.1 as f64, dims.2 as f64);
    let center = [
        rng.gen_range(0.28 * z..0.72 * z),
        rng.gen_range(0.22 * h..0.78 * h),
        rng.gen_range(0.22 * w..0.78 * w),
    ];
    if domain == 1 && class == 1 {
        return Shape::Plate {
            center,
            extent_x: rng.gen_range(0.24 * w..0.34 * w),
            extent_z: rng.gen_range(0.25 * z..0.38 * z),
            curvature: rng.gen_range(0.08 * h..0.16 * h) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            tilt: rng.gen_range(-0.06 * h..0.06 * h),
            thickness: rng.gen_range(1.4..2.4),
        };
    }
    let (r_lo, r_hi) = if domain == 1 {
        (0.11, 0.16) // sphere-like
    } else {
        (0.10, 0.17)
    };
    let radii = [
        rng.gen_range(0.18 * z..0.30 * z),
        rng.gen_range(r_lo * h..r_hi * h),
        rng.gen_range(r_lo * w..r_hi * w),
    ];
    let wobble = WobbleField::draw(rng, 2, 0.14, 2.0);
    Shape::Blob {
        center,
        radii,
        wobble,
    }
}

fn generate_exam(
    seed: u64,
    domain: usize,
    exam_index: usize,
    size: (usize, usize, usize),
) -> Result<(Volume, LabelVolume), DataError> {
    let model = domain_model(domain);
    let (z, h, w) = size;
    let total = z * h * w;
    let mut rng = rng_for(seed, &[0xda7a, domain as u64, exam_index as u64]);

    // smooth background texture
    let background = WobbleField::draw(&mut rng, 2, model.background_texture_amp, 1.5);
    let mut voxels = vec![0.0f64; total];
    for zi in 0..z {
        for yi in 0..h {
            for xi in 0..w {
                let t = background.at(zi as f64 / z as f64, yi as f64 / h as f64, xi as f64 / w as f64);
                voxels[(zi * h + yi) * w + xi] = model.background_level + t;
            }
        }
    }

    // place structures without overlap
    let mut labels = vec![0u8; total];
    for class in 1..=model.structures {
        let mut placed = false;
        for _attempt in 0..PLACEMENT_RETRIES {
            let shape = draw_shape(&mut rng, domain, class, size);
            let candidate = rasterize(&shape, size);
            if candidate.len() < MIN_STRUCTURE_VOXELS {
                continue;
            }
            if candidate.iter().any(|&idx| labels[idx] != 0) {
                continue;
            }
            let texture = WobbleField::draw(&mut rng, 2, model.structure_texture_amp, 2.5);
            let level = model.structure_levels[class - 1];
            for &idx in &candidate {
                labels[idx] = class as u8;
                let zi = idx / (h * w);
                let rem = idx % (h * w);
                let (yi, xi) = (rem / w, rem % w);
                voxels[idx] = level
                    + texture.at(zi as f64 / z as f64, yi as f64 / h as f64, xi as f64 / w as f64);
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(DataError::VolumeTooSmall {
                domain,
                structures: model.structures,
                size,
            });
        }
    }

    // additive Gaussian noise on the magnitude image
    let normal = Normal::new(0.0, model.noise_sigma).expect("positive sigma");
    for v in &mut voxels {
        *v += normal.sample(&mut rng);
    }

    // quantize so file round-trips (f32 storage) are bit-identical
    for v in &mut voxels {
        *v = *v as f32 as f64;
    }

    let exam_id = format!("d{domain}_e{exam_index:03}");
    let volume = Volume::new(exam_id.clone(), domain, size, voxels, SPACING)?;
    let label_volume = LabelVolume::new(exam_id, domain, size, labels)?;
    Ok((volume, label_volume))
}

/// Generates `num_exams` exams of one domain, deterministic per
/// `(seed, domain, exam index)`.
pub fn generate_dataset(
    seed: u64,
    domain: usize,
    num_exams: usize,
    size: (usize, usize, usize),
) -> Result<Vec<(Volume, LabelVolume)>, DataError> {
    if domain >= NUM_DOMAINS {
        return Err(DataError::UnknownDomain(domain));
    }
    if num_exams < 3 {
        return Err(DataError::TooFewExams { got: num_exams });
    }
    (0..num_exams)
        .into_par_iter()
        .map(|i| generate_exam(seed, domain, i, size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const SIZE: (usize, usize, usize) = (16, 64, 64);

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_dataset(42, 0, 3, SIZE).unwrap();
        let b = generate_dataset(42, 0, 3, SIZE).unwrap();
        for ((va, la), (vb, lb)) in a.iter().zip(&b) {
            assert_eq!(va.voxels, vb.voxels);
            assert_eq!(la.labels, lb.labels);
        }
    }

    #[test]
    fn label_histograms_match_domain_label_sets() {
        let d0 = generate_dataset(7, 0, 3, SIZE).unwrap();
        for (_, lv) in &d0 {
            let present: BTreeSet<u8> = lv.labels.iter().copied().collect();
            assert_eq!(present, BTreeSet::from([0, 1, 2, 3]));
        }
        let d1 = generate_dataset(7, 1, 3, SIZE).unwrap();
        for (_, lv) in &d1 {
            let present: BTreeSet<u8> = lv.labels.iter().copied().collect();
            assert_eq!(present, BTreeSet::from([0, 1, 2]));
        }
    }

    #[test]
    fn foreground_fraction_within_range_over_many_seeds() {
        for seed in 0..50 {
            for domain in 0..NUM_DOMAINS {
                let exams = generate_dataset(seed, domain, 3, SIZE).unwrap();
                for (_, lv) in &exams {
                    let fg = lv.labels.iter().filter(|&&l| l != 0).count() as f64;
                    let frac = fg / lv.labels.len() as f64;
                    assert!(
                        (0.02..=0.30).contains(&frac),
                        "seed {seed} domain {domain}: foreground fraction {frac}"
                    );
                }
            }
        }
    }

    #[test]
    fn volumes_are_finite_and_normalizable() {
        let exams = generate_dataset(3, 1, 3, SIZE).unwrap();
        for (v, _) in &exams {
            assert!(v.voxels.iter().all(|x| x.is_finite()));
            for zi in 0..v.num_slices() {
                let out = super::super::normalize_slice(v.slice(zi)).unwrap();
                let n = out.len() as f64;
                let mean = out.iter().sum::<f64>() / n;
                assert!(mean.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cross_domain_streams_are_uncorrelated() {
        // Both domains share a centered-structure prior, so raw matched
        // volumes correlate slightly by construction. Independence of the
        // streams shows in the residuals after removing each domain's mean
        // volume.
        let size = (8, 24, 24);
        let voxels = size.0 * size.1 * size.2;
        let mut all: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
        for seed in 0..20 {
            for domain in 0..2 {
                for (v, _) in generate_dataset(seed, domain, 3, size).unwrap() {
                    all[domain].push(v.voxels);
                }
            }
        }
        let mean_volume = |vols: &[Vec<f64>]| -> Vec<f64> {
            let mut m = vec![0.0; voxels];
            for v in vols {
                for (acc, &x) in m.iter_mut().zip(v) {
                    *acc += x;
                }
            }
            for acc in &mut m {
                *acc /= vols.len() as f64;
            }
            m
        };
        let (m0, m1) = (mean_volume(&all[0]), mean_volume(&all[1]));
        let mut correlations = Vec::new();
        for (v0, v1) in all[0].iter().zip(&all[1]) {
            let r0: Vec<f64> = v0.iter().zip(&m0).map(|(a, b)| a - b).collect();
            let r1: Vec<f64> = v1.iter().zip(&m1).map(|(a, b)| a - b).collect();
            let cov: f64 = r0.iter().zip(&r1).map(|(a, b)| a * b).sum();
            let s0: f64 = r0.iter().map(|a| a * a).sum();
            let s1: f64 = r1.iter().map(|a| a * a).sum();
            correlations.push(cov / (s0.sqrt() * s1.sqrt()));
        }
        let mean = correlations.iter().sum::<f64>() / correlations.len() as f64;
        assert!(mean.abs() < 0.02, "mean residual correlation {mean}");
    }

    #[test]
    fn too_small_volume_is_rejected() {
        let err = generate_dataset(1, 0, 3, (4, 10, 10)).unwrap_err();
        assert!(matches!(err, DataError::VolumeTooSmall { .. }));
    }

    #[test]
    fn too_few_exams_is_rejected() {
        assert!(matches!(
            generate_dataset(1, 0, 2, SIZE).unwrap_err(),
            DataError::TooFewExams { got: 2 }
        ));
    }
}
