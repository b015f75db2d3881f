//! Minimal neural-network engine: sequential pipelines with reverse-mode
//! gradients recorded on an explicit [`Tape`].
//!
//! Gradients accumulate across `backward` calls; callers zero them between
//! optimizer steps with [`Network::zero_grads`].

mod conv;
mod gradcheck;
mod layer;
mod loss;
mod norm;
mod optim;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

pub use conv::{Conv2d, MaxPool2d};
pub use gradcheck::{grad_check, grad_check_sampled, relative_error, GradReport, GradTarget, GRAD_CHECK_LIMIT};
pub use layer::{softmax_rows, window_out, Dense, Layer, LayerKind};
pub use loss::{cross_entropy, cross_entropy_single, PROB_FLOOR};
pub use norm::{BatchNorm, SwitchNorm};
pub use optim::Sgd;

use crate::error::{Error, Result};
use crate::snapshot::Snapshot;
use crate::tensor::Tensor;
use crate::{math, Real};
use layer::Cache;

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(Tensor::zeros(shape))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Record of a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    net_id: u64,
    version: u64,
    caches: Vec<Cache>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

impl Tape {
    /// Branch decisions taken by ReLU (output positive or not) and max
    /// pooling (winning index), in layer order. Two forwards with equal
    /// branches evaluated the same smooth piece of the loss.
    pub fn branches(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for cache in &self.caches {
            match cache {
                layer::Cache::Pool(p) => out.extend_from_slice(p.argmax()),
                layer::Cache::Relu(y) => out.extend(y.data().iter().map(|&v| usize::from(v > 0.0))),
                _ => {}
            }
        }
        out
    }
}

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Ordered layer pipeline with a named parameter store.
///
/// Parameters are addressed as `"{layer index}.{name}"`, e.g. `"0.weight"`;
/// running statistics of norm layers use the same scheme
/// (`"3.running_mean"`).
#[derive(Debug)]
pub struct Network {
    layers: Vec<Layer>,
    id: u64,
    version: u64,
    stats_frozen: bool,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
            stats_frozen: self.stats_frozen,
        }
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network {
            layers,
            id: fresh_id(),
            version: 0,
            stats_frozen: false,
        }
    }

    pub fn from_kinds(kinds: &[LayerKind]) -> Self {
        Network::new(kinds.iter().map(|&k| Layer::new(k)).collect())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    fn touch(&mut self) {
        self.version += 1;
    }

    /// Direct mutable access to one layer; invalidates outstanding tapes.
    pub fn layer_mut(&mut self, index: usize) -> &mut Layer {
        self.touch();
        &mut self.layers[index]
    }

    /// When set, train-mode forwards use batch statistics but leave the
    /// running averages untouched.
    pub fn set_stats_frozen(&mut self, frozen: bool) {
        self.stats_frozen = frozen;
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers.iter().try_fold(input.to_vec(), |dims, l| l.kind().output_dims(&dims))
    }

    /// Runs the pipeline. In [`Mode::Train`] the returned tape supports
    /// [`Network::backward`] and norm layers update their running
    /// statistics; in [`Mode::Eval`] nothing is mutated and the tape is
    /// empty.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        if mode == Mode::Eval {
            let y = self.infer(x)?;
            return Ok((y, Tape {
                net_id: 0,
                version: 0,
                caches: Vec::new(),
            }));
        }
        let update = !self.stats_frozen;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (y, cache) = layer.forward(&h, true, update).map_err(|e| e.context(format!("layer {i}")))?;
            y.check_finite(&format!("layer {i} ({})", layer.kind().name()))?;
            caches.push(cache.ok_or(Error::TapeMismatch)?);
            h = y;
        }
        Ok((h, Tape {
            net_id: self.id,
            version: self.version,
            caches,
        }))
    }

    /// Eval-mode forward; read-only.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, _) = layer.forward_stateless(&h, false).map_err(|e| e.context(format!("layer {i}")))?;
            y.check_finite(&format!("layer {i} ({})", layer.kind().name()))?;
            h = y;
        }
        Ok(h)
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if tape.net_id != self.id || tape.version != self.version || tape.caches.len() != self.layers.len() {
            return Err(Error::TapeMismatch);
        }
        Ok(())
    }

    /// Accumulates gradients for every parameter and returns the gradient
    /// with respect to the network input.
    pub fn backward(&mut self, tape: &Tape, grad_out: &Tensor) -> Result<Tensor> {
        self.check_tape(tape)?;
        if self.layers.is_empty() {
            return Ok(grad_out.clone());
        }
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&tape.caches[i], &g, true)?.ok_or(Error::TapeMismatch)?;
        }
        g.check_finite("backward")?;
        Ok(g)
    }

    /// Like [`Network::backward`] but skips the input gradient of the first
    /// layer, which is wasted work when the input is data.
    pub fn backward_params(&mut self, tape: &Tape, grad_out: &Tensor) -> Result<()> {
        self.check_tape(tape)?;
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            match self.layers[i].backward(&tape.caches[i], &g, i > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            for (_, p) in layer.params_mut() {
                p.grad.fill(0.0);
            }
        }
    }

    /// Trainable parameter count (running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|(_, p)| p.value.len()).sum()
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |(n, p)| (format!("{i}.{n}"), p)))
            .collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).map(|(_, p)| p).collect()
    }

    /// All parameters in store order; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.touch();
        self.layers.iter_mut().flat_map(|l| l.params_mut()).map(|(_, p)| p).collect()
    }

    /// Visits every parameter mutably; invalidates outstanding tapes.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut Param)) {
        self.touch();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (n, p) in layer.params_mut() {
                f(&format!("{i}.{n}"), p);
            }
        }
    }

    /// Parameters and running statistics as a named map.
    pub fn snapshot(&self) -> Snapshot {
        let mut snap = Snapshot::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (n, p) in layer.params() {
                snap.insert(format!("{i}.{n}"), p.value.clone());
            }
            for (n, b) in layer.buffers() {
                snap.insert(format!("{i}.{n}"), b.clone());
            }
        }
        snap
    }

    /// Parameters only, without running statistics.
    pub fn param_snapshot(&self) -> Snapshot {
        let mut snap = Snapshot::new();
        for (name, p) in self.named_params() {
            snap.insert(name, p.value.clone());
        }
        snap
    }

    /// Overwrites parameters and running statistics from `snap`, which must
    /// hold exactly the entries of [`Network::snapshot`] with equal shapes.
    pub fn load_snapshot(&mut self, snap: &Snapshot) -> Result<()> {
        let own = self.snapshot();
        if own.len() != snap.len() {
            return Err(Error::invalid(format!("snapshot has {} entries, network has {}", snap.len(), own.len())));
        }
        for (name, t) in own.iter() {
            let other = snap.get(name).ok_or_else(|| Error::invalid(format!("snapshot lacks {name}")))?;
            if other.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_snapshot",
                    expected: t.shape().to_vec(),
                    found: other.shape().to_vec(),
                });
            }
        }
        self.touch();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (n, p) in layer.params_mut() {
                p.value = snap.get(&format!("{i}.{n}")).cloned().ok_or(Error::TapeMismatch)?;
            }
            for (n, b) in layer.buffers_mut() {
                *b = snap.get(&format!("{i}.{n}")).cloned().ok_or(Error::TapeMismatch)?;
            }
        }
        Ok(())
    }

    /// Splits into `(layers[..at], layers[at..])`, keeping all state.
    pub fn split_off(mut self, at: usize) -> (Network, Network) {
        let tail = self.layers.split_off(at);
        (Network::new(self.layers), Network::new(tail))
    }

    /// Dense and conv weights ~ U(-a, a) with `a = sqrt(1 / fan_in)`;
    /// biases zero; norm scales one and shifts zero.
    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        self.touch();
        for layer in &mut self.layers {
            let fan_in = match layer.kind() {
                LayerKind::Dense { input, .. } => input,
                LayerKind::Conv2d {
                    in_channels, kernel, ..
                } => in_channels * kernel * kernel,
                _ => continue,
            };
            let bound = math::sqrt(1.0 / fan_in as Real);
            for (name, p) in layer.params_mut() {
                if name == "weight" {
                    for v in p.value.data_mut() {
                        *v = rng.gen_range(-bound..bound);
                    }
                } else {
                    p.value.fill(0.0);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
