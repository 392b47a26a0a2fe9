//! Slice extraction and cross-domain batch composition.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, normalize_slice, AugmentationPolicy, DataError, DomainData};
use crate::seeding::rng_for;
use crate::tensor::Tensor;

/// One training sample: a normalized 2D slice with its mask.
#[derive(Debug, Clone)]
pub struct TrainSlice {
    pub domain: usize,
    pub exam_index: usize,
    pub z: usize,
    pub image: Vec<f64>,
    pub mask: Vec<u8>,
    pub h: usize,
    pub w: usize,
}

/// Extracts and normalizes every slice of the listed exams.
pub fn extract_slices(
    data: &DomainData,
    exam_indices: &[usize],
) -> Result<Vec<TrainSlice>, DataError> {
    let mut out = Vec::new();
    for &exam_index in exam_indices {
        let (volume, labels) = &data.exams[exam_index];
        let (_, h, w) = volume.shape;
        for z in 0..volume.num_slices() {
            out.push(TrainSlice {
                domain: data.spec.id,
                exam_index,
                z,
                image: normalize_slice(volume.slice(z))?,
                mask: labels.slice(z).to_vec(),
                h,
                w,
            });
        }
    }
    Ok(out)
}

/// Draws `batch_size / K` slice indices per domain per step, without
/// replacement within a pass over a domain; an exhausted domain reshuffles
/// and keeps drawing (the smaller domain oversamples). One epoch is one
/// full pass over the largest domain.
pub struct BatchComposer {
    per_domain: usize,
    queues: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
    steps_per_epoch: usize,
}

impl BatchComposer {
    pub fn new(slice_counts: &[usize], batch_size: usize, seed: u64) -> Self {
        let k = slice_counts.len();
        let per_domain = batch_size / k;
        let mut queues = Vec::with_capacity(k);
        let mut rngs = Vec::with_capacity(k);
        for (domain, &count) in slice_counts.iter().enumerate() {
            let mut rng = rng_for(seed, &[0xba7c, domain as u64]);
            let mut order: Vec<usize> = (0..count).collect();
            order.shuffle(&mut rng);
            queues.push(order);
            rngs.push(rng);
        }
        let largest = slice_counts.iter().copied().max().unwrap_or(0);
        let steps_per_epoch = largest.div_ceil(per_domain).max(1);
        BatchComposer {
            per_domain,
            queues,
            cursors: vec![0; k],
            rngs,
            steps_per_epoch,
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn per_domain(&self) -> usize {
        self.per_domain
    }

    /// Next step's per-domain slice indices.
    pub fn next_batch(&mut self) -> Vec<Vec<usize>> {
        (0..self.queues.len())
            .map(|domain| {
                let mut picked = Vec::with_capacity(self.per_domain);
                for _ in 0..self.per_domain {
                    if self.cursors[domain] >= self.queues[domain].len() {
                        self.queues[domain].shuffle(&mut self.rngs[domain]);
                        self.cursors[domain] = 0;
                    }
                    picked.push(self.queues[domain][self.cursors[domain]]);
                    self.cursors[domain] += 1;
                }
                picked
            })
            .collect()
    }
}

/// Builds the input tensor `[N,1,H,W]` and one-hot target `[N,C,H,W]` for
/// a sub-batch, applying one augmentation draw per slice.
///
/// `class_of` maps a mask label to the target channel (identity for
/// base/dsl, the union mapping under joint).
pub fn assemble_batch(
    slices: &[TrainSlice],
    picked: &[usize],
    target_channels: usize,
    class_of: impl Fn(u8) -> usize,
    policy: &AugmentationPolicy,
    augment_seed: Option<u64>,
) -> (Tensor, Tensor) {
    let n = picked.len();
    let (h, w) = (slices[picked[0]].h, slices[picked[0]].w);
    let mut images = Vec::with_capacity(n * h * w);
    let mut targets = vec![0.0; n * target_channels * h * w];
    for (i, &slice_idx) in picked.iter().enumerate() {
        let s = &slices[slice_idx];
        let (img, msk) = match augment_seed {
            Some(seed) => augment(
                &s.image,
                &s.mask,
                h,
                w,
                policy,
                crate::seeding::derive_seed(seed, &[i as u64]),
            ),
            None => (s.image.clone(), s.mask.clone()),
        };
        images.extend_from_slice(&img);
        for (p, &label) in msk.iter().enumerate() {
            let c = class_of(label);
            targets[(i * target_channels + c) * h * w + p] = 1.0;
        }
    }
    let x = Tensor::from_vec(&[n, 1, h, w], images).expect("sized by construction");
    let t = Tensor::from_vec(&[n, target_channels, h, w], targets).expect("sized by construction");
    (x, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn fixed_arithmetic_split() {
        let composer = BatchComposer::new(&[96, 96], 32, 1);
        assert_eq!(composer.per_domain(), 16);
        assert_eq!(composer.steps_per_epoch(), 6);
    }

    #[test]
    fn one_epoch_covers_every_slice_of_each_domain() {
        // unequal domains: the smaller one oversamples, both get covered
        let counts = [50usize, 30];
        let mut composer = BatchComposer::new(&counts, 20, 7);
        let mut seen = [BTreeSet::new(), BTreeSet::new()];
        for _ in 0..composer.steps_per_epoch() {
            let batch = composer.next_batch();
            for (domain, picks) in batch.iter().enumerate() {
                assert_eq!(picks.len(), 10);
                seen[domain].extend(picks.iter().copied());
            }
        }
        assert_eq!(seen[0].len(), 50);
        assert_eq!(seen[1].len(), 30);
    }

    #[test]
    fn same_seed_gives_identical_sequence() {
        let mut a = BatchComposer::new(&[40, 40], 8, 5);
        let mut b = BatchComposer::new(&[40, 40], 8, 5);
        for _ in 0..25 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    #[test]
    fn no_replacement_within_a_pass() {
        let mut composer = BatchComposer::new(&[12], 4, 3);
        let mut seen = BTreeSet::new();
        for _ in 0..3 {
            for i in composer.next_batch().remove(0) {
                assert!(seen.insert(i), "slice {i} repeated within a pass");
            }
        }
        assert_eq!(seen.len(), 12);
    }
}
