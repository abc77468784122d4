//! Feed-forward embedding network with hand-written forward and backward
//! passes.
//!
//! Layer `k` maps `h_{k-1} -> h_k` as `z = W a + b`. Hidden layers apply ReLU,
//! the output layer is linear and unnormalized.

use std::io::{BufRead, Write};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

pub type FeatureVector<T> = Vec<T>;

/// Weights (row-major, `fan_out x fan_in`) and bias of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LayerParams { weights: vec![T::zero(); fan_in * fan_out], bias: vec![T::zero(); fan_out] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNetwork<T> {
    dims: Vec<usize>,
    layers: Vec<LayerParams<T>>,
}

/// Intermediates of one forward pass: `inputs[k]` feeds layer `k`,
/// `pre[k]` is its pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn pre_activations(&self) -> &[Vec<T>] {
        &self.pre
    }

    /// Smallest |z| over hidden-layer pre-activations, i.e. the distance to
    /// the nearest ReLU kink. `None` for networks without hidden layers.
    pub fn min_hidden_margin(&self) -> Option<T> {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden].iter().flatten().map(|z| z.abs()).reduce(T::min)
    }
}

/// Parameter gradients, shaped like the network they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradients<T> {
    dims: Vec<usize>,
    layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> NetworkGradients<T> {
    pub fn zeros_like(net: &EmbeddingNetwork<T>) -> Self {
        NetworkGradients {
            dims: net.dims.clone(),
            layers: net.dims.windows(2).map(|w| LayerParams::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn flatten(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_zero()))
    }

    pub fn add_assign(&mut self, other: &NetworkGradients<T>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!("gradient layouts differ: {:?} vs {:?}", self.dims, other.dims)));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, &y)| *x = *x + y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, &y)| *x = *x + y);
        }
        Ok(())
    }
}

fn flatten<T: Scalar>(layers: &[LayerParams<T>]) -> Vec<T> {
    layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Layout(format!("need at least an input and an output size, got {dims:?}")));
    }
    if dims.contains(&0) {
        return Err(Error::Layout(format!("layer sizes must be positive, got {dims:?}")));
    }
    Ok(())
}

/// `Σ_k (h_{k-1}·h_k + h_k)`.
pub fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Scalar> EmbeddingNetwork<T> {
    /// Glorot-uniform weights on `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = rng::stream(seed, rng::STREAM_INIT);
        let layers = dims
            .windows(2)
            .map(|w| {
                let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let weights = (0..w[0] * w[1]).map(|_| T::of(rng.random_range(-a..=a))).collect();
                LayerParams { weights, bias: vec![T::zero(); w[1]] }
            })
            .collect();
        Ok(EmbeddingNetwork { dims: dims.to_vec(), layers })
    }

    pub fn from_layers(dims: &[usize], layers: Vec<LayerParams<T>>) -> Result<Self> {
        validate_dims(dims)?;
        if layers.len() != dims.len() - 1 {
            return Err(Error::Layout(format!("{} layers for dims {dims:?}", layers.len())));
        }
        for (k, (w, l)) in dims.windows(2).zip(&layers).enumerate() {
            if l.weights.len() != w[0] * w[1] || l.bias.len() != w[1] {
                return Err(Error::Layout(format!("layer {k} parameters do not match {}x{}", w[1], w[0])));
            }
        }
        let net = EmbeddingNetwork { dims: dims.to_vec(), layers };
        if !net.is_finite() {
            return Err(Error::Layout("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated non-empty")
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights (row-major) before bias.
    pub fn parameters(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn set_parameters(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.parameter_count())));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[T]) -> Result<(FeatureVector<T>, ForwardCache<T>)> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} entries, network expects {}", x.len(), self.input_dim())));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut a = x.to_vec();
        for (k, (w, layer)) in self.dims.windows(2).zip(&self.layers).enumerate() {
            let z = affine(layer, w[0], &a);
            let next = if k + 1 < n { z.iter().map(|&v| v.max(T::zero())).collect() } else { z.clone() };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Ok((a, ForwardCache { inputs, pre }))
    }

    /// Forward pass without keeping intermediates.
    pub fn embed(&self, x: &[T]) -> Result<FeatureVector<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} entries, network expects {}", x.len(), self.input_dim())));
        }
        let n = self.layers.len();
        let mut a = x.to_vec();
        for (k, (w, layer)) in self.dims.windows(2).zip(&self.layers).enumerate() {
            a = affine(layer, w[0], &a);
            if k + 1 < n {
                a.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
        }
        Ok(a)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, dl_df: &[T]) -> Result<NetworkGradients<T>> {
        let mut grads = NetworkGradients::zeros_like(self);
        self.backward_into(cache, dl_df, &mut grads)?;
        Ok(grads)
    }

    /// Adds the parameter gradients for one sample into `grads`.
    ///
    /// ReLU'(0) is taken as 0.
    pub fn backward_into(&self, cache: &ForwardCache<T>, dl_df: &[T], grads: &mut NetworkGradients<T>) -> Result<()> {
        if dl_df.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, output is {}",
                dl_df.len(),
                self.output_dim()
            )));
        }
        if grads.dims != self.dims || cache.pre.len() != self.layers.len() {
            return Err(Error::Shape("cache or gradient buffer does not belong to this network".into()));
        }
        let mut delta = dl_df.to_vec();
        for k in (0..self.layers.len()).rev() {
            let fan_in = self.dims[k];
            let input = &cache.inputs[k];
            let g = &mut grads.layers[k];
            for (r, &d) in delta.iter().enumerate() {
                g.bias[r] = g.bias[r] + d;
                let row = &mut g.weights[r * fan_in..(r + 1) * fan_in];
                row.iter_mut().zip(input).for_each(|(gw, &a)| *gw = *gw + d * a);
            }
            if k > 0 {
                let w = &self.layers[k].weights;
                let mut prev = vec![T::zero(); fan_in];
                for (r, &d) in delta.iter().enumerate() {
                    let row = &w[r * fan_in..(r + 1) * fan_in];
                    prev.iter_mut().zip(row).for_each(|(p, &wv)| *p = *p + wv * d);
                }
                for (p, &z) in prev.iter_mut().zip(&cache.pre[k - 1]) {
                    if z <= T::zero() {
                        *p = T::zero();
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Plain SGD: `p <- p - lr * g`. The network is left untouched if the
    /// update would produce a non-finite parameter.
    pub fn apply_sgd_step(&mut self, grads: &NetworkGradients<T>, lr: T) -> Result<()> {
        if grads.dims != self.dims {
            return Err(Error::Shape(format!("gradient layout {:?} vs network {:?}", grads.dims, self.dims)));
        }
        if lr.is_nan() || lr < T::zero() {
            return Err(Error::InvalidArgument(format!("learning rate must be nonnegative, got {lr}")));
        }
        let updated: Vec<LayerParams<T>> = self
            .layers
            .iter()
            .zip(&grads.layers)
            .map(|(p, g)| LayerParams {
                weights: p.weights.iter().zip(&g.weights).map(|(&w, &d)| w - lr * d).collect(),
                bias: p.bias.iter().zip(&g.bias).map(|(&b, &d)| b - lr * d).collect(),
            })
            .collect();
        if !updated.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument("SGD step produced a non-finite parameter".into()));
        }
        self.layers = updated;
        Ok(())
    }

    /// Text checkpoint: `TFNET1`, optional `#` comment lines, a `dims` line,
    /// then per layer one line per weight row followed by one bias line.
    pub fn write_checkpoint<W: Write>(&self, comments: &[String], mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "dims {}", join(&self.dims))?;
        for (d, l) in self.dims.windows(2).zip(&self.layers) {
            for row in l.weights.chunks(d[0]) {
                writeln!(w, "{}", join(row))?;
            }
            writeln!(w, "{}", join(&l.bias))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = Vec::new();
        for l in r.lines() {
            lines.push(l.map_err(|e| bad(e.to_string()))?);
        }
        let mut it = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty());
        if it.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(format!("missing `{CHECKPOINT_MAGIC}` magic")));
        }
        let mut it = it.filter(|l| !l.starts_with('#'));
        let dims: Vec<usize> = it
            .next()
            .and_then(|l| l.strip_prefix("dims "))
            .ok_or_else(|| bad("missing dims line".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad dimension `{t}`"))))
            .collect::<Result<_>>()?;
        validate_dims(&dims)?;
        let mut row = |n: usize| -> Result<Vec<T>> {
            let line = it.next().ok_or_else(|| bad("truncated parameters".into()))?;
            let v: Vec<T> = line
                .split_whitespace()
                .map(|t| t.parse::<T>().map_err(|_| bad(format!("bad value `{t}`"))))
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(bad(format!("expected {n} values, found {}", v.len())));
            }
            Ok(v)
        };
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for d in dims.windows(2) {
            let mut weights = Vec::with_capacity(d[0] * d[1]);
            for _ in 0..d[1] {
                weights.extend(row(d[0])?);
            }
            layers.push(LayerParams { weights, bias: row(d[1])? });
        }
        if it.next().is_some() {
            return Err(bad("trailing data after parameters".into()));
        }
        EmbeddingNetwork::from_layers(&dims, layers)
    }
}

pub const CHECKPOINT_MAGIC: &str = "TFNET1";

fn join<V: std::fmt::Display>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn affine<T: Scalar>(layer: &LayerParams<T>, fan_in: usize, a: &[T]) -> Vec<T> {
    layer
        .weights
        .chunks(fan_in)
        .zip(&layer.bias)
        .map(|(row, &b)| row.iter().zip(a).fold(b, |acc, (&w, &x)| acc + w * x))
        .collect()
}
