#![allow(dead_code)]

use triplet_reid::gallery::{generate_synthetic, MixedGallery, SyntheticConfig};
use triplet_reid::loss::{batch_triplet_loss, TripletFeatures};
use triplet_reid::training::EpochPlan;
use triplet_reid::{EmbeddingNetwork, LossConfig};

/// Relative error with a 1e-3 magnitude floor, so entries that are exactly
/// zero analytically are compared in absolute terms against FD round-off.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// 30 ids x 6 samples, dim 16, spread 5, noise 0.2.
pub fn reference_gallery(seed: u64) -> MixedGallery<f64> {
    generate_synthetic(&SyntheticConfig {
        n_ids: 30,
        per_id: 6,
        dim: 16,
        cluster_spread: 5.0,
        noise: 0.2,
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// Fresh identities from the same generator, never seen in training.
pub fn held_out_gallery(seed: u64) -> MixedGallery<f64> {
    reference_gallery(seed ^ 0x5eed_0000_0000_0001)
}

/// Smallest |hinge argument| over the planned triplets and smallest
/// |pre-activation| over hidden units of every batch sample.
pub fn kink_margins(
    net: &EmbeddingNetwork<f64>,
    g: &MixedGallery<f64>,
    plan: &EpochPlan,
    loss: &LossConfig<f64>,
) -> (f64, f64) {
    let mut relu = f64::INFINITY;
    let feats: Vec<Vec<f64>> = plan
        .batch
        .samples()
        .iter()
        .map(|&s| {
            let (f, c) = net.forward(&g.sample(s).input).unwrap();
            if let Some(m) = c.min_hidden_margin() {
                relu = relu.min(m);
            }
            f
        })
        .collect();
    let hinge = plan
        .triplets
        .iter()
        .map(|t| {
            TripletFeatures::new(&feats[t.anchor], &feats[t.positive], &feats[t.negative])
                .unwrap()
                .hinge_argument(loss)
                .abs()
        })
        .fold(f64::INFINITY, f64::min);
    (hinge, relu)
}

/// Mean batch loss as a function of the flattened network parameters.
pub fn objective<'a>(
    net: &'a EmbeddingNetwork<f64>,
    g: &'a MixedGallery<f64>,
    plan: &'a EpochPlan,
    loss: &'a LossConfig<f64>,
) -> impl Fn(&[f64]) -> f64 + 'a {
    move |p: &[f64]| {
        let mut n = net.clone();
        n.set_parameters(p).unwrap();
        let feats: Vec<Vec<f64>> = plan.batch.samples().iter().map(|&s| n.embed(&g.sample(s).input).unwrap()).collect();
        batch_triplet_loss(&feats, &plan.triplets, loss).unwrap().mean_loss
    }
}
