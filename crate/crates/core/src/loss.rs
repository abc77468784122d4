//! Weighted triplet ranking loss and its analytic gradients.
//!
//! For anchor `a`, positive `p`, negative `n`:
//!
//! ```text
//! L = max(0, γ‖a − p‖² − β‖a − n‖² + α)
//! ```
//!
//! With `γ = β = 1` this is the ordinary triplet hinge. Distances are squared
//! Euclidean; the subgradient at the kink is zero.

use crate::error::{Error, Result};
use crate::sampling::TripletIndices;
use crate::scalar::{sq_dist, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    /// Margin, `>= 0`.
    pub alpha: T,
    /// Weight on the anchor-positive distance, `> 0`.
    pub gamma: T,
    /// Weight on the anchor-negative distance, `> 0`.
    pub beta: T,
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        LossConfig { alpha: T::one(), gamma: T::one(), beta: T::of(0.3) }
    }
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(alpha: T, gamma: T, beta: T) -> Result<Self> {
        let cfg = LossConfig { alpha, gamma, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The unweighted hinge (`γ = β = 1`).
    pub fn plain(alpha: T) -> Self {
        LossConfig { alpha, gamma: T::one(), beta: T::one() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= T::zero() && self.alpha.is_finite()) {
            return Err(Error::config("alpha", format!("margin must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.gamma > T::zero() && self.gamma.is_finite()) {
            return Err(Error::config("gamma", format!("must be finite and > 0, got {}", self.gamma)));
        }
        if !(self.beta > T::zero() && self.beta.is_finite()) {
            return Err(Error::config("beta", format!("must be finite and > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Borrowed features of one triplet.
#[derive(Debug, Clone, Copy)]
pub struct TripletFeatures<'a, T> {
    pub anchor: &'a [T],
    pub positive: &'a [T],
    pub negative: &'a [T],
}

impl<'a, T: Scalar> TripletFeatures<'a, T> {
    pub fn new(anchor: &'a [T], positive: &'a [T], negative: &'a [T]) -> Result<Self> {
        let d = anchor.len();
        for other in [positive.len(), negative.len()] {
            if other != d {
                return Err(Error::DimensionMismatch { expected: d, got: other });
            }
        }
        Ok(TripletFeatures { anchor, positive, negative })
    }

    /// `(‖a − p‖², ‖a − n‖²)`.
    pub fn distances(&self) -> (T, T) {
        (sq_dist(self.anchor, self.positive), sq_dist(self.anchor, self.negative))
    }

    /// `γ·d⁺ − β·d⁻ + α`; the loss is this value clamped at zero.
    pub fn hinge_argument(&self, cfg: &LossConfig<T>) -> T {
        let (dp, dn) = self.distances();
        cfg.gamma * dp - cfg.beta * dn + cfg.alpha
    }
}

pub fn improved_triplet_loss<T: Scalar>(t: &TripletFeatures<'_, T>, cfg: &LossConfig<T>) -> T {
    t.hinge_argument(cfg).max(T::zero())
}

/// The unweighted hinge `max(0, d⁺ − d⁻ + α)`, evaluated on its own.
pub fn plain_triplet_loss<T: Scalar>(t: &TripletFeatures<'_, T>, alpha: T) -> T {
    let (dp, dn) = t.distances();
    (dp - dn + alpha).max(T::zero())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGradients<T> {
    pub anchor: Vec<T>,
    pub positive: Vec<T>,
    pub negative: Vec<T>,
}

/// Gradients of [`improved_triplet_loss`] with respect to the three features.
///
/// Active hinge:
/// `∂a = 2γ(a − p) − 2β(a − n)`, `∂p = −2γ(a − p)`, `∂n = 2β(a − n)`.
/// Otherwise all three are zero.
pub fn triplet_loss_gradients<T: Scalar>(t: &TripletFeatures<'_, T>, cfg: &LossConfig<T>) -> TripletGradients<T> {
    let d = t.anchor.len();
    if t.hinge_argument(cfg) <= T::zero() {
        return TripletGradients {
            anchor: vec![T::zero(); d],
            positive: vec![T::zero(); d],
            negative: vec![T::zero(); d],
        };
    }
    let two = T::one() + T::one();
    let (gp, gn) = (two * cfg.gamma, two * cfg.beta);
    let mut g = TripletGradients {
        anchor: Vec::with_capacity(d),
        positive: Vec::with_capacity(d),
        negative: Vec::with_capacity(d),
    };
    for ((&a, &p), &n) in t.anchor.iter().zip(t.positive).zip(t.negative) {
        let (ap, an) = (a - p, a - n);
        g.anchor.push(gp * ap - gn * an);
        g.positive.push(-(gp * ap));
        g.negative.push(gn * an);
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss<T> {
    pub mean_loss: T,
    /// Triplets with a strictly positive hinge argument.
    pub active: usize,
    /// `∂(mean loss)/∂features[i]`, one entry per cached feature.
    pub feature_grads: Vec<Vec<T>>,
}

/// Mean loss over `triplets` and the gradient of that mean with respect to
/// every cached feature. A feature referenced by several triplets receives
/// the sum of their contributions. Triplets are reduced in order.
pub fn batch_triplet_loss<T: Scalar>(
    features: &[Vec<T>],
    triplets: &[TripletIndices],
    cfg: &LossConfig<T>,
) -> Result<BatchLoss<T>> {
    if triplets.is_empty() {
        return Err(Error::NoTriplets);
    }
    let len = features.len();
    let dim = features.first().map_or(0, Vec::len);
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: f.len() });
    }
    let scale = T::one() / T::from_usize(triplets.len()).expect("triplet count fits a float");
    let mut grads = vec![vec![T::zero(); dim]; len];
    let mut total = T::zero();
    let mut active = 0;
    for tri in triplets {
        for index in [tri.anchor, tri.positive, tri.negative] {
            if index >= len {
                return Err(Error::IndexOutOfRange { index, len });
            }
        }
        let t = TripletFeatures {
            anchor: &features[tri.anchor],
            positive: &features[tri.positive],
            negative: &features[tri.negative],
        };
        let arg = t.hinge_argument(cfg);
        if arg <= T::zero() {
            continue;
        }
        active += 1;
        total = total + arg;
        let g = triplet_loss_gradients(&t, cfg);
        for (slot, part) in [(tri.anchor, &g.anchor), (tri.positive, &g.positive), (tri.negative, &g.negative)] {
            grads[slot].iter_mut().zip(part).for_each(|(acc, &v)| *acc = *acc + v * scale);
        }
    }
    Ok(BatchLoss { mean_loss: total * scale, active, feature_grads: grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(alpha: f64, gamma: f64, beta: f64) -> LossConfig<f64> {
        LossConfig::new(alpha, gamma, beta).unwrap()
    }

    fn tf<'a>(a: &'a [f64], p: &'a [f64], n: &'a [f64]) -> TripletFeatures<'a, f64> {
        TripletFeatures::new(a, p, n).unwrap()
    }

    fn tri(anchor: usize, positive: usize, negative: usize) -> TripletIndices {
        TripletIndices { anchor, positive, negative }
    }

    #[test]
    fn worked_example() {
        let (a, p, n) = ([0.0, 0.0], [1.0, 0.0], [0.0, 2.0]);
        let t = tf(&a, &p, &n);
        let c = LossConfig::default();
        assert!((improved_triplet_loss(&t, &c) - 0.8).abs() < 1e-12);
        let g = triplet_loss_gradients(&t, &c);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(u, v)| (u - v).abs() < 1e-12);
        assert!(close(&g.anchor, &[-2.0, 1.2]));
        assert!(close(&g.positive, &[2.0, 0.0]));
        assert!(close(&g.negative, &[0.0, -1.2]));
    }

    #[test]
    fn coincident_features_give_margin() {
        let x = [0.3, -1.0, 2.0];
        for c in [cfg(1.0, 1.0, 0.3), cfg(0.5, 2.0, 7.0), cfg(0.0, 0.1, 0.1)] {
            assert_eq!(improved_triplet_loss(&tf(&x, &x, &x), &c), c.alpha);
        }
    }

    #[test]
    fn inactive_hinge_is_flat() {
        let (a, p, n) = ([0.0, 0.0], [0.0, 0.0], [10.0, 0.0]);
        let t = tf(&a, &p, &n);
        let c = cfg(1.0, 1.0, 1.0);
        assert_eq!(improved_triplet_loss(&t, &c), 0.0);
        let g = triplet_loss_gradients(&t, &c);
        assert!(g.anchor.iter().chain(&g.positive).chain(&g.negative).all(|&v| v == 0.0));
    }

    #[test]
    fn config_invariants() {
        assert!(LossConfig::new(1.0, 1.0, 0.0).is_err());
        assert!(LossConfig::new(1.0, 0.0, 0.3).is_err());
        assert!(LossConfig::new(-0.1, 1.0, 0.3).is_err());
        assert!(LossConfig::new(0.0, 1.0, 0.3).is_ok());
        assert!(TripletFeatures::new(&[0.0f64], &[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn batch_mean_and_errors() {
        // losses 0.8 and 0
        let feats = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0], vec![0.0, 0.0], vec![10.0, 0.0]];
        let c = LossConfig::<f64>::default();
        let b = batch_triplet_loss(&feats, &[tri(0, 1, 2), tri(0, 3, 4)], &c).unwrap();
        assert!((b.mean_loss - 0.4).abs() < 1e-12);
        assert_eq!(b.active, 1);
        assert!(matches!(batch_triplet_loss(&feats, &[], &c), Err(Error::NoTriplets)));
        assert!(matches!(
            batch_triplet_loss(&feats, &[tri(0, 1, 5)], &c),
            Err(Error::IndexOutOfRange { index: 5, len: 5 })
        ));
    }

    #[test]
    fn shared_feature_accumulates_scaled_sum() {
        let feats = vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![0.0, 2.0], vec![0.5, -0.5], vec![1.5, 1.0]];
        let c = LossConfig::default();
        let triplets = [tri(0, 1, 2), tri(0, 3, 4)];
        let b = batch_triplet_loss(&feats, &triplets, &c).unwrap();
        assert_eq!(b.active, 2);
        let g1 = triplet_loss_gradients(&tf(&feats[0], &feats[1], &feats[2]), &c);
        let g2 = triplet_loss_gradients(&tf(&feats[0], &feats[3], &feats[4]), &c);
        for k in 0..2 {
            let expect = (g1.anchor[k] + g2.anchor[k]) / 2.0;
            assert!((b.feature_grads[0][k] - expect).abs() < 1e-12);
        }
    }

    fn triple(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        let v = move || proptest::collection::vec(-3.0f64..3.0, dim);
        (v(), v(), v())
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_zero_iff_satisfied(
            (a, p, n) in triple(4), alpha in 0.0f64..2.0, gamma in 0.1f64..3.0, beta in 0.1f64..3.0,
        ) {
            let c = cfg(alpha, gamma, beta);
            let t = tf(&a, &p, &n);
            let l = improved_triplet_loss(&t, &c);
            let (dp, dn) = t.distances();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, gamma * dp + alpha <= beta * dn);
        }

        #[test]
        fn squared_distances_scale_quadratically((a, p, n) in triple(3), s in -4.0f64..4.0) {
            let sc = |v: &[f64]| v.iter().map(|x| x * s).collect::<Vec<_>>();
            let (a2, p2, n2) = (sc(&a), sc(&p), sc(&n));
            let (dp, dn) = tf(&a, &p, &n).distances();
            let (dp2, dn2) = tf(&a2, &p2, &n2).distances();
            prop_assert!((dp2 - s * s * dp).abs() <= 1e-9 * (1.0 + dp2.abs()));
            prop_assert!((dn2 - s * s * dn).abs() <= 1e-9 * (1.0 + dn2.abs()));
        }
    }
}
