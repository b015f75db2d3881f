//! Model zoo: five heterogeneous CNNs, their extractor/header split, the
//! gating network, and the per-client mixture of experts.
//!
//! | variant | conv1  | conv2  | fc1  | fc2 | fc3     |
//! |---------|--------|--------|------|-----|---------|
//! | cnn1    | 5x5,16 | 5x5,32 | 2000 | 500 | classes |
//! | cnn2    | 5x5,16 | 5x5,16 | 2000 | 500 | classes |
//! | cnn3    | 5x5,16 | 5x5,32 | 1000 | 500 | classes |
//! | cnn4    | 5x5,16 | 5x5,32 | 800  | 500 | classes |
//! | cnn5    | 5x5,16 | 5x5,32 | 500  | 500 | classes |
//!
//! Every conv is valid (no padding) with stride 1 and is followed by ReLU
//! and a 2x2/2 max pool; FC1 and FC2 are followed by ReLU and FC3 by
//! softmax. The extractor ends after FC2's ReLU, so every variant emits a
//! 500-wide representation and the header is FC3 + softmax.

mod moe;
mod profile;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

pub use moe::{MoeModel, MoeOutput, MoeRates, MoeTape};
pub use profile::{flops_forward, model_bytes, moe_flops_forward, param_count, TRAIN_FLOPS_MULTIPLIER};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Layer, LayerKind, Mode, Network, Sgd};
use crate::rng::{purpose, stream};
use crate::snapshot::Snapshot;
use crate::tensor::Tensor;
use crate::Real;

/// Width of the shared representation emitted by every extractor.
pub const REPRESENTATION_DIM: usize = 500;

/// Smallest square input both valid conv + pool stages accept.
pub const MIN_INPUT_SIDE: usize = 16;

/// Default hidden width of the gating network.
pub const DEFAULT_GATE_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CnnVariant {
    Cnn1,
    Cnn2,
    Cnn3,
    Cnn4,
    Cnn5,
}

impl CnnVariant {
    pub const ALL: [CnnVariant; 5] = [CnnVariant::Cnn1, CnnVariant::Cnn2, CnnVariant::Cnn3, CnnVariant::Cnn4, CnnVariant::Cnn5];

    /// 1-based id.
    pub fn id(self) -> usize {
        self as usize + 1
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id.checked_sub(1)?).copied()
    }

    /// Variant held by `client_id` under the modulo-5 assignment.
    pub fn for_client(client_id: usize) -> Self {
        Self::ALL[client_id % 5]
    }

    pub fn fc1_width(self) -> usize {
        match self {
            CnnVariant::Cnn1 | CnnVariant::Cnn2 => 2000,
            CnnVariant::Cnn3 => 1000,
            CnnVariant::Cnn4 => 800,
            CnnVariant::Cnn5 => 500,
        }
    }

    pub fn conv2_filters(self) -> usize {
        match self {
            CnnVariant::Cnn2 => 16,
            _ => 32,
        }
    }

    pub fn name(self) -> &'static str {
        ["cnn1", "cnn2", "cnn3", "cnn4", "cnn5"][self as usize]
    }
}

impl fmt::Display for CnnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CnnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown model '{s}', expected cnn1..cnn5")))
    }
}

/// Per-sample image dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputDims {
    pub const CIFAR: InputDims = InputDims {
        channels: 3,
        height: 32,
        width: 32,
    };

    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        InputDims { channels, height, width }
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    /// Shape of a batch of `n` samples.
    pub fn batch_shape(&self, n: usize) -> Vec<usize> {
        vec![n, self.channels, self.height, self.width]
    }

    pub fn flat(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Layer list of a CNN variant, without initialization.
pub fn cnn_layers(variant: CnnVariant, dims: InputDims, num_classes: usize) -> Result<Vec<LayerKind>> {
    let too_small = Error::InputTooSmall {
        height: dims.height,
        width: dims.width,
        min: MIN_INPUT_SIDE,
    };
    if dims.channels == 0 || num_classes < 2 {
        return Err(Error::invalid("need at least one channel and two classes"));
    }
    let head = [
        LayerKind::conv5(dims.channels, 16),
        LayerKind::Relu,
        LayerKind::pool2(),
        LayerKind::conv5(16, variant.conv2_filters()),
        LayerKind::Relu,
        LayerKind::pool2(),
        LayerKind::Flatten,
    ];
    let mut shape = dims.shape();
    for k in &head {
        shape = k.output_dims(&shape).map_err(|_| too_small.clone())?;
    }
    let flat = shape[0];
    let mut layers = head.to_vec();
    layers.extend([
        LayerKind::dense(flat, variant.fc1_width()),
        LayerKind::Relu,
        LayerKind::dense(variant.fc1_width(), REPRESENTATION_DIM),
        LayerKind::Relu,
        LayerKind::dense(REPRESENTATION_DIM, num_classes),
        LayerKind::Softmax,
    ]);
    Ok(layers)
}

/// Builds and initializes a CNN variant.
pub fn build_cnn(variant: CnnVariant, dims: InputDims, num_classes: usize, seed: u64) -> Result<Network> {
    let mut net = Network::from_kinds(&cnn_layers(variant, dims, num_classes)?);
    net.init_uniform(&mut stream(seed, &[purpose::INIT]));
    Ok(net)
}

/// A complete model as feature extractor followed by prediction header.
#[derive(Clone, Debug)]
pub struct SplitModel {
    pub extractor: Network,
    pub header: Network,
}

/// Splits a [`build_cnn`] network after FC2's activation.
pub fn split_extractor_header(net: Network) -> Result<SplitModel> {
    let kinds = net.kinds();
    let n = kinds.len();
    let recognized = n >= 4
        && matches!(kinds[n - 1], LayerKind::Softmax)
        && matches!(kinds[n - 2], LayerKind::Dense { input, .. } if input == REPRESENTATION_DIM)
        && matches!(kinds[n - 3], LayerKind::Relu)
        && matches!(kinds[n - 4], LayerKind::Dense { output, .. } if output == REPRESENTATION_DIM);
    if !recognized {
        return Err(Error::invalid("network does not end in Dense(500)+ReLU+Dense+Softmax"));
    }
    let (extractor, header) = net.split_off(n - 2);
    Ok(SplitModel { extractor, header })
}

impl SplitModel {
    pub fn build(variant: CnnVariant, dims: InputDims, num_classes: usize, seed: u64) -> Result<Self> {
        split_extractor_header(build_cnn(variant, dims, num_classes, seed)?)
    }

    /// Reassembles the unsplit network.
    pub fn join(self) -> Network {
        let layers: Vec<Layer> = self.extractor.layers().iter().chain(self.header.layers()).cloned().collect();
        Network::new(layers)
    }

    pub fn param_count(&self) -> usize {
        self.extractor.param_count() + self.header.param_count()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.header.infer(&self.extractor.infer(x)?)
    }

    pub fn zero_grads(&mut self) {
        self.extractor.zero_grads();
        self.header.zero_grads();
    }

    /// One SGD step on mean cross-entropy; returns the loss.
    pub fn train_step(&mut self, x: &Tensor, labels: &[usize], lr: Real) -> Result<Real> {
        self.zero_grads();
        let (rep, ext_tape) = self.extractor.forward(x, Mode::Train)?;
        let (pred, head_tape) = self.header.forward(&rep, Mode::Train)?;
        let (loss, g) = cross_entropy(&pred, labels)?;
        let d_rep = self.header.backward(&head_tape, &g)?;
        self.extractor.backward_params(&ext_tape, &d_rep)?;
        let sgd = Sgd::new(lr)?;
        sgd.step(&mut self.extractor)?;
        sgd.step(&mut self.header)?;
        Ok(loss)
    }

    /// Full state under the prefixes `extractor.` and `header.`.
    pub fn snapshot(&self) -> Snapshot {
        let mut snap = Snapshot::default();
        snap.extend_prefixed("extractor.", &self.extractor.snapshot());
        snap.extend_prefixed("header.", &self.header.snapshot());
        snap
    }

    pub fn load_snapshot(&mut self, snap: &Snapshot) -> Result<()> {
        self.extractor.load_snapshot(&snap.with_prefix_stripped("extractor."))?;
        self.header.load_snapshot(&snap.with_prefix_stripped("header."))
    }
}

/// Gating network layers: flatten, switch norm, two bias-free linear
/// layers each followed by batch norm, sigmoid between them and softmax
/// over the two expert weights at the end.
///
/// The linear layers carry no bias and the switch norm has no affine
/// transform: the following batch norms cancel any per-feature shift and
/// the first linear layer absorbs any per-feature scale. The linear
/// parameter counts stay `d*m` and `m*2`.
pub fn gating_layers(dims: InputDims, hidden: usize) -> Result<Vec<LayerKind>> {
    if hidden < 2 {
        return Err(Error::invalid("gating hidden width must be at least 2"));
    }
    let d = dims.flat();
    if d == 0 {
        return Err(Error::invalid("empty input"));
    }
    Ok(vec![
        LayerKind::Flatten,
        LayerKind::SwitchNorm {
            features: d,
            eps: LayerKind::BN_EPS,
            momentum: LayerKind::BN_MOMENTUM,
            affine: false,
        },
        LayerKind::Dense {
            input: d,
            output: hidden,
            bias: false,
        },
        LayerKind::batch_norm(hidden),
        LayerKind::Sigmoid,
        LayerKind::Dense {
            input: hidden,
            output: 2,
            bias: false,
        },
        LayerKind::batch_norm(2),
        LayerKind::Softmax,
    ])
}

pub fn build_gating(dims: InputDims, hidden: usize, seed: u64) -> Result<Network> {
    let mut net = Network::from_kinds(&gating_layers(dims, hidden)?);
    net.init_uniform(&mut stream(seed, &[purpose::INIT, 0x6a7e]));
    Ok(net)
}
