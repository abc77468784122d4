//! Double sampling: identity-balanced mini-batches, then triplets drawn over
//! the batch's cached features.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gallery::MixedGallery;
use crate::scalar::Scalar;

/// Slots into a [`MiniBatch`]'s sample list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripletIndices {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// `P` identities with `K` distinct samples each, stored identity-major:
/// slot `i * K + j` is sample `j` of identity `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    identities: Vec<String>,
    samples: Vec<usize>,
    per_identity: usize,
}

impl MiniBatch {
    /// Builds a batch from explicit gallery positions, identity-major.
    pub fn new(identities: Vec<String>, samples: Vec<usize>, per_identity: usize) -> Result<Self> {
        if per_identity == 0 || samples.len() != identities.len() * per_identity {
            return Err(Error::Sampling(format!(
                "{} samples do not fill {} identities x {per_identity}",
                samples.len(),
                identities.len()
            )));
        }
        Ok(MiniBatch { identities, samples, per_identity })
    }

    pub fn num_identities(&self) -> usize {
        self.identities.len()
    }

    pub fn per_identity(&self) -> usize {
        self.per_identity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn identities(&self) -> &[String] {
        &self.identities
    }

    /// Gallery positions, identity-major.
    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    /// Identity slot (`0..P`) owning batch slot `slot`.
    pub fn identity_of(&self, slot: usize) -> usize {
        slot / self.per_identity
    }
}

/// Number of distinct triplets in a `P x K` batch:
/// `P(P−1) · C(K,2) · K` (ordered anchor/negative identities, unordered
/// anchor/positive pair, any negative sample).
pub fn triplet_capacity(persons: u64, per_person: u64) -> u128 {
    let (p, k) = (u128::from(persons), u128::from(per_person));
    if p < 2 || k < 2 {
        return 0;
    }
    p * (p - 1) * (k * (k - 1) / 2) * k
}

/// Half the capacity: 2250 for a 10 x 5 batch.
pub fn default_triplet_count(persons: usize, per_person: usize) -> usize {
    usize::try_from(triplet_capacity(persons as u64, per_person as u64) / 2).unwrap_or(usize::MAX)
}

/// Draws `p` identities uniformly without replacement among those owning at
/// least `k` samples, then `k` of each identity's samples without replacement.
pub fn sample_minibatch<T: Scalar, R: Rng + ?Sized>(
    gallery: &MixedGallery<T>,
    p: usize,
    k: usize,
    rng: &mut R,
) -> Result<MiniBatch> {
    if p == 0 || k == 0 {
        return Err(Error::Sampling(format!("P and K must be positive, got P={p}, K={k}")));
    }
    let eligible: Vec<(&String, &Vec<usize>)> = gallery.index().iter().filter(|(_, s)| s.len() >= k).collect();
    if eligible.len() < p {
        return Err(Error::Sampling(format!("{} identities have at least {k} samples, need {p}", eligible.len())));
    }
    let mut identities = Vec::with_capacity(p);
    let mut samples = Vec::with_capacity(p * k);
    for i in index::sample(rng, eligible.len(), p) {
        let (pid, pool) = eligible[i];
        identities.push(pid.clone());
        samples.extend(index::sample(rng, pool.len(), k).into_iter().map(|j| pool[j]));
    }
    MiniBatch::new(identities, samples, k)
}

/// Draws `count` triplets with replacement.
///
/// Each draw picks an identity, an unordered pair of its samples (the lower
/// slot becomes the anchor), one of the other `P − 1` identities and one of
/// its samples as the negative.
pub fn sample_triplets<R: Rng + ?Sized>(batch: &MiniBatch, count: usize, rng: &mut R) -> Result<Vec<TripletIndices>> {
    let (p, k) = (batch.num_identities(), batch.per_identity());
    if p < 2 || k < 2 {
        return Err(Error::Sampling(format!("triplets need P >= 2 and K >= 2, got P={p}, K={k}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id = rng.random_range(0..p);
        let pair = index::sample(rng, k, 2);
        let (a, b) = (pair.index(0), pair.index(1));
        let mut neg_id = rng.random_range(0..p - 1);
        if neg_id >= id {
            neg_id += 1;
        }
        let neg = rng.random_range(0..k);
        out.push(TripletIndices { anchor: id * k + a.min(b), positive: id * k + a.max(b), negative: neg_id * k + neg });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeSet, HashSet};

    use super::*;
    use crate::gallery::{generate_synthetic, SyntheticConfig};
    use crate::rng;

    fn gallery(n_ids: usize, per_id: usize) -> MixedGallery<f64> {
        generate_synthetic(&SyntheticConfig { n_ids, per_id, dim: 2, ..Default::default() }).unwrap()
    }

    fn layout(p: usize, k: usize) -> MiniBatch {
        MiniBatch::new((0..p).map(|i| i.to_string()).collect(), (0..p * k).collect(), k).unwrap()
    }

    /// Every valid triplet of a `p x k` batch, by exhaustive enumeration.
    fn enumerate(p: usize, k: usize) -> BTreeSet<TripletIndices> {
        let n = p * k;
        let mut all = BTreeSet::new();
        for a in 0..n {
            for q in a + 1..n {
                for m in 0..n {
                    if a / k == q / k && m / k != a / k {
                        all.insert(TripletIndices { anchor: a, positive: q, negative: m });
                    }
                }
            }
        }
        all
    }

    #[test]
    fn capacity_reference_values() {
        assert_eq!(triplet_capacity(100, 10), 4_455_000);
        assert_eq!(triplet_capacity(10, 5), 4500);
        assert_eq!(default_triplet_count(10, 5), 2250);
        assert_eq!(triplet_capacity(1, 7), 0);
        assert_eq!(triplet_capacity(7, 1), 0);
        assert_eq!(triplet_capacity(0, 0), 0);
    }

    #[test]
    fn capacity_matches_enumeration() {
        for p in 0..=5 {
            for k in 0..=4 {
                assert_eq!(triplet_capacity(p as u64, k as u64), enumerate(p, k).len() as u128, "P={p} K={k}");
            }
        }
    }

    #[test]
    fn default_batch_shape() {
        let g = gallery(10, 5);
        let b = sample_minibatch(&g, 10, 5, &mut rng::from_seed(1)).unwrap();
        assert_eq!(b.len(), 50);
        assert_eq!(b.identities().iter().collect::<HashSet<_>>().len(), 10);
        assert_eq!(b.samples().iter().collect::<HashSet<_>>().len(), 50);
        for (slot, &s) in b.samples().iter().enumerate() {
            assert_eq!(g.sample(s).person_id, b.identities()[b.identity_of(slot)]);
        }
        assert_eq!(b, sample_minibatch(&g, 10, 5, &mut rng::from_seed(1)).unwrap());
    }

    #[test]
    fn too_few_eligible_identities() {
        let g = gallery(9, 5);
        assert!(matches!(sample_minibatch(&g, 10, 5, &mut rng::from_seed(0)), Err(Error::Sampling(_))));
        let short = gallery(12, 4);
        assert!(sample_minibatch(&short, 10, 5, &mut rng::from_seed(0)).is_err());
    }

    #[test]
    fn batches_never_repeat_samples() {
        let g = gallery(20, 8);
        let mut r = rng::from_seed(3);
        for _ in 0..200 {
            let b = sample_minibatch(&g, 7, 6, &mut r).unwrap();
            assert_eq!(b.samples().iter().collect::<HashSet<_>>().len(), 42);
        }
    }

    #[test]
    fn default_triplet_draw_is_valid() {
        let b = layout(10, 5);
        let t = sample_triplets(&b, default_triplet_count(10, 5), &mut rng::from_seed(2)).unwrap();
        assert_eq!(t.len(), 2250);
        for x in &t {
            assert_ne!(x.anchor, x.positive);
            assert_eq!(b.identity_of(x.anchor), b.identity_of(x.positive));
            assert_ne!(b.identity_of(x.anchor), b.identity_of(x.negative));
            assert!(x.negative < b.len());
        }
    }

    #[test]
    fn small_batch_reaches_full_capacity() {
        let b = layout(2, 2);
        let seen: BTreeSet<_> = sample_triplets(&b, 10_000, &mut rng::from_seed(0)).unwrap().into_iter().collect();
        assert_eq!(seen, enumerate(2, 2));
        assert_eq!(seen.len(), 4);

        let b = layout(3, 4);
        let seen: BTreeSet<_> = sample_triplets(&b, 50_000, &mut rng::from_seed(0)).unwrap().into_iter().collect();
        assert_eq!(seen, enumerate(3, 4));
    }

    #[test]
    fn degenerate_batches_are_rejected() {
        assert!(sample_triplets(&layout(1, 5), 10, &mut rng::from_seed(0)).is_err());
        assert!(sample_triplets(&layout(5, 1), 10, &mut rng::from_seed(0)).is_err());
    }

    #[test]
    fn anchor_identities_are_uniform() {
        let (p, draws) = (10usize, 100_000usize);
        let t = sample_triplets(&layout(p, 5), draws, &mut rng::from_seed(11)).unwrap();
        let mut counts = vec![0usize; p];
        t.iter().for_each(|x| counts[x.anchor / 5] += 1);
        let mean = draws as f64 / p as f64;
        let sd = (draws as f64 * (1.0 / p as f64) * (1.0 - 1.0 / p as f64)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "count {c} vs {mean} ± {}", 3.0 * sd);
        }
    }
}
