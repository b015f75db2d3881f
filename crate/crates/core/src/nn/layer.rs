use alloc::vec;
use alloc::vec::Vec;

use super::conv::{Conv2d, MaxPool2d};
use super::norm::{BatchNorm, SwitchNorm};
use super::Param;
use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Tensor};
use crate::{math, Real};

/// Declarative description of a layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerKind {
    Dense {
        input: usize,
        output: usize,
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Flatten,
    Relu,
    Sigmoid,
    /// Softmax over the last axis of a `(batch, classes)` input.
    Softmax,
    BatchNorm {
        features: usize,
        eps: Real,
        momentum: Real,
        affine: bool,
    },
    SwitchNorm {
        features: usize,
        eps: Real,
        momentum: Real,
        affine: bool,
    },
}

impl LayerKind {
    pub const BN_EPS: Real = 1e-5;
    pub const BN_MOMENTUM: Real = 0.1;

    pub fn dense(input: usize, output: usize) -> Self {
        LayerKind::Dense {
            input,
            output,
            bias: true,
        }
    }

    /// 5x5 valid convolution with unit stride.
    pub fn conv5(in_channels: usize, out_channels: usize) -> Self {
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel: 5,
            stride: 1,
            padding: 0,
        }
    }

    pub fn pool2() -> Self {
        LayerKind::MaxPool2d { size: 2, stride: 2 }
    }

    pub fn batch_norm(features: usize) -> Self {
        LayerKind::BatchNorm {
            features,
            eps: Self::BN_EPS,
            momentum: Self::BN_MOMENTUM,
            affine: true,
        }
    }

    pub fn switch_norm(features: usize) -> Self {
        LayerKind::SwitchNorm {
            features,
            eps: Self::BN_EPS,
            momentum: Self::BN_MOMENTUM,
            affine: true,
        }
    }

    /// Short lowercase name used in parameter paths and error messages.
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Softmax => "softmax",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::SwitchNorm { .. } => "switchnorm",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch {
            op: self.name(),
            expected,
            found: input.to_vec(),
        };
        match *self {
            LayerKind::Dense {
                input: i, output, ..
            } => {
                if input != [i] {
                    return Err(mismatch(vec![i]));
                }
                Ok(vec![output])
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(mismatch(vec![in_channels, 0, 0]));
                }
                let h = window_out(input[1], kernel, stride, padding).ok_or_else(|| mismatch(vec![in_channels, kernel, kernel]))?;
                let w = window_out(input[2], kernel, stride, padding).ok_or_else(|| mismatch(vec![in_channels, kernel, kernel]))?;
                Ok(vec![out_channels, h, w])
            }
            LayerKind::MaxPool2d { size, stride } => {
                if input.len() != 3 {
                    return Err(mismatch(vec![0, size, size]));
                }
                let h = window_out(input[1], size, stride, 0).ok_or_else(|| mismatch(vec![input[0], size, size]))?;
                let w = window_out(input[2], size, stride, 0).ok_or_else(|| mismatch(vec![input[0], size, size]))?;
                Ok(vec![input[0], h, w])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Relu | LayerKind::Sigmoid => Ok(input.to_vec()),
            LayerKind::Softmax => {
                if input.len() != 1 {
                    return Err(mismatch(vec![0]));
                }
                Ok(input.to_vec())
            }
            LayerKind::BatchNorm { features, .. } | LayerKind::SwitchNorm { features, .. } => {
                if input != [features] {
                    return Err(mismatch(vec![features]));
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// `floor((n - k + 2p) / s) + 1`, or `None` when that is below 1.
pub fn window_out(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Fully connected layer; weight is `(output, input)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Dense {
    fn new(input: usize, output: usize, bias: bool) -> Self {
        Dense {
            weight: Param::zeros(&[output, input]),
            bias: bias.then(|| Param::zeros(&[output])),
        }
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.weight.value.shape();
        (s[1], s[0])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (input, output) = self.dims();
        if x.rank() != 2 || x.shape()[1] != input {
            return Err(Error::ShapeMismatch {
                op: "dense",
                expected: vec![x.shape()[0], input],
                found: x.shape().to_vec(),
            });
        }
        let batch = x.batch();
        let w = self.weight.value.data();
        let mut out = vec![0.0; batch * output];
        for b in 0..batch {
            let xb = x.row(b);
            let ob = &mut out[b * output..(b + 1) * output];
            for (o, v) in ob.iter_mut().enumerate() {
                *v = dot(&w[o * input..(o + 1) * input], xb);
            }
            if let Some(bias) = &self.bias {
                for (v, &c) in ob.iter_mut().zip(bias.value.data()) {
                    *v += c;
                }
            }
        }
        Ok(Tensor::from_parts(vec![batch, output], out))
    }

    fn backward(&mut self, input: &Tensor, g: &Tensor, need_input: bool) -> Option<Tensor> {
        let (in_dim, out_dim) = self.dims();
        let batch = input.batch();
        {
            let dw = self.weight.grad.data_mut();
            for b in 0..batch {
                let xb = input.row(b);
                for o in 0..out_dim {
                    let go = g.data()[b * out_dim + o];
                    if go != 0.0 {
                        axpy(go, xb, &mut dw[o * in_dim..(o + 1) * in_dim]);
                    }
                }
            }
        }
        if let Some(bias) = &mut self.bias {
            let db = bias.grad.data_mut();
            for b in 0..batch {
                for (d, &v) in db.iter_mut().zip(g.row(b)) {
                    *d += v;
                }
            }
        }
        if !need_input {
            return None;
        }
        let w = self.weight.value.data();
        let mut dx = vec![0.0; batch * in_dim];
        for b in 0..batch {
            let dxb = &mut dx[b * in_dim..(b + 1) * in_dim];
            for o in 0..out_dim {
                let go = g.data()[b * out_dim + o];
                if go != 0.0 {
                    axpy(go, &w[o * in_dim..(o + 1) * in_dim], dxb);
                }
            }
        }
        Some(Tensor::from_parts(input.shape().to_vec(), dx))
    }
}

/// A layer together with its parameters and running statistics.
#[derive(Clone, Debug)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    Flatten,
    Relu,
    Sigmoid,
    Softmax,
    BatchNorm(BatchNorm),
    SwitchNorm(SwitchNorm),
}

/// Values a train-mode forward keeps for the backward pass.
#[derive(Clone, Debug)]
pub(crate) enum Cache {
    Dense { input: Tensor },
    Conv(super::conv::ConvCache),
    Pool(super::conv::PoolCache),
    Flatten { in_shape: Vec<usize> },
    Output(Tensor),
    Relu(Tensor),
    BatchNorm(super::norm::BatchNormCache),
    SwitchNorm(super::norm::SwitchNormCache),
}

impl Layer {
    /// A layer with zero weights, unit norm scales and zero shifts.
    pub fn new(kind: LayerKind) -> Self {
        match kind {
            LayerKind::Dense {
                input,
                output,
                bias,
            } => Layer::Dense(Dense::new(input, output, bias)),
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d(Conv2d::new(in_channels, out_channels, kernel, stride, padding)),
            LayerKind::MaxPool2d { size, stride } => Layer::MaxPool2d(MaxPool2d { size, stride }),
            LayerKind::Flatten => Layer::Flatten,
            LayerKind::Relu => Layer::Relu,
            LayerKind::Sigmoid => Layer::Sigmoid,
            LayerKind::Softmax => Layer::Softmax,
            LayerKind::BatchNorm {
                features,
                eps,
                momentum,
                affine,
            } => Layer::BatchNorm(BatchNorm::new(features, eps, momentum, affine)),
            LayerKind::SwitchNorm {
                features,
                eps,
                momentum,
                affine,
            } => Layer::SwitchNorm(SwitchNorm::new(features, eps, momentum, affine)),
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(d) => {
                let (input, output) = d.dims();
                LayerKind::Dense {
                    input,
                    output,
                    bias: d.bias.is_some(),
                }
            }
            Layer::Conv2d(c) => c.kind(),
            Layer::MaxPool2d(p) => LayerKind::MaxPool2d {
                size: p.size,
                stride: p.stride,
            },
            Layer::Flatten => LayerKind::Flatten,
            Layer::Relu => LayerKind::Relu,
            Layer::Sigmoid => LayerKind::Sigmoid,
            Layer::Softmax => LayerKind::Softmax,
            Layer::BatchNorm(n) => n.kind(),
            Layer::SwitchNorm(n) => n.kind(),
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Dense(d) => {
                let mut v = vec![("weight", &d.weight)];
                if let Some(b) = &d.bias {
                    v.push(("bias", b));
                }
                v
            }
            Layer::Conv2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::BatchNorm(n) => n.params(),
            Layer::SwitchNorm(n) => n.params(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        match self {
            Layer::Dense(d) => {
                let mut v = vec![("weight", &mut d.weight)];
                if let Some(b) = &mut d.bias {
                    v.push(("bias", b));
                }
                v
            }
            Layer::Conv2d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::BatchNorm(n) => n.params_mut(),
            Layer::SwitchNorm(n) => n.params_mut(),
            _ => Vec::new(),
        }
    }

    /// Running statistics (not trained, not counted as parameters).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::BatchNorm(n) => vec![("running_mean", &n.running_mean), ("running_var", &n.running_var)],
            Layer::SwitchNorm(n) => vec![("running_mean", &n.running_mean), ("running_var", &n.running_var)],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::BatchNorm(n) => vec![("running_mean", &mut n.running_mean), ("running_var", &mut n.running_var)],
            Layer::SwitchNorm(n) => vec![("running_mean", &mut n.running_mean), ("running_var", &mut n.running_var)],
            _ => Vec::new(),
        }
    }

    /// Batched forward. `train` selects batch statistics for norm layers;
    /// `update_stats` additionally folds them into the running averages.
    pub(crate) fn forward(&mut self, x: &Tensor, train: bool, update_stats: bool) -> Result<(Tensor, Option<Cache>)> {
        match self {
            Layer::BatchNorm(n) if train => {
                let (y, cache) = n.forward_train(x, update_stats)?;
                Ok((y, Some(Cache::BatchNorm(cache))))
            }
            Layer::SwitchNorm(n) if train => {
                let (y, cache) = n.forward_train(x, update_stats)?;
                Ok((y, Some(Cache::SwitchNorm(cache))))
            }
            _ => self.forward_stateless(x, train),
        }
    }

    /// Forward that never touches running statistics.
    pub(crate) fn forward_stateless(&self, x: &Tensor, train: bool) -> Result<(Tensor, Option<Cache>)> {
        match self {
            Layer::Dense(d) => {
                let y = d.forward(x)?;
                Ok((y, train.then(|| Cache::Dense { input: x.clone() })))
            }
            Layer::Conv2d(c) => {
                let (y, cache) = c.forward(x, train)?;
                Ok((y, cache.map(Cache::Conv)))
            }
            Layer::MaxPool2d(p) => {
                let (y, cache) = p.forward(x)?;
                Ok((y, train.then_some(Cache::Pool(cache))))
            }
            Layer::Flatten => {
                if x.rank() < 2 {
                    return Err(Error::ShapeMismatch {
                        op: "flatten",
                        expected: vec![x.batch(), 0],
                        found: x.shape().to_vec(),
                    });
                }
                let in_shape = x.shape().to_vec();
                let y = x.clone().reshape(&[x.batch(), x.row_len()])?;
                Ok((y, train.then_some(Cache::Flatten { in_shape })))
            }
            Layer::Relu => {
                let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                let y = Tensor::from_parts(x.shape().to_vec(), data);
                let cache = train.then(|| Cache::Relu(y.clone()));
                Ok((y, cache))
            }
            Layer::Sigmoid => {
                let data = x.data().iter().map(|&v| sigmoid(v)).collect();
                let y = Tensor::from_parts(x.shape().to_vec(), data);
                let cache = train.then(|| Cache::Output(y.clone()));
                Ok((y, cache))
            }
            Layer::Softmax => {
                let y = softmax_rows(x)?;
                let cache = train.then(|| Cache::Output(y.clone()));
                Ok((y, cache))
            }
            Layer::BatchNorm(n) => Ok((n.forward_eval(x)?, None)),
            Layer::SwitchNorm(n) => Ok((n.forward_eval(x)?, None)),
        }
    }

    /// Accumulates parameter gradients and, if `need_input`, returns the
    /// gradient with respect to the layer input.
    pub(crate) fn backward(&mut self, cache: &Cache, g: &Tensor, need_input: bool) -> Result<Option<Tensor>> {
        let out = match (self, cache) {
            (Layer::Dense(d), Cache::Dense { input }) => d.backward(input, g, need_input),
            (Layer::Conv2d(c), Cache::Conv(cache)) => c.backward(cache, g, need_input),
            (Layer::MaxPool2d(p), Cache::Pool(cache)) => need_input.then(|| p.backward(cache, g)),
            (Layer::Flatten, Cache::Flatten { in_shape }) => {
                need_input.then(|| Tensor::from_parts(in_shape.clone(), g.data().to_vec()))
            }
            (Layer::Relu, Cache::Relu(y)) => need_input.then(|| {
                let data = g.data().iter().zip(y.data()).map(|(&gi, &yi)| if yi > 0.0 { gi } else { 0.0 }).collect();
                Tensor::from_parts(g.shape().to_vec(), data)
            }),
            (Layer::Sigmoid, Cache::Output(y)) => need_input.then(|| {
                let data = g.data().iter().zip(y.data()).map(|(&gi, &yi)| gi * yi * (1.0 - yi)).collect();
                Tensor::from_parts(g.shape().to_vec(), data)
            }),
            (Layer::Softmax, Cache::Output(y)) => need_input.then(|| softmax_backward(y, g)),
            (Layer::BatchNorm(n), Cache::BatchNorm(cache)) => n.backward(cache, g, need_input),
            (Layer::SwitchNorm(n), Cache::SwitchNorm(cache)) => n.backward(cache, g, need_input),
            _ => return Err(Error::TapeMismatch),
        };
        Ok(out)
    }
}

#[inline]
pub(crate) fn sigmoid(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + math::exp(-v))
    } else {
        let e = math::exp(v);
        e / (1.0 + e)
    }
}

/// Row-wise numerically stable softmax of a `(batch, k)` tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "softmax",
            expected: vec![x.batch(), x.row_len()],
            found: x.shape().to_vec(),
        });
    }
    let mut y = Tensor::from_parts(x.shape().to_vec(), x.data().to_vec());
    for b in 0..x.batch() {
        let row = y.row_mut(b);
        let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(y)
}

fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let mut dx = vec![0.0; y.len()];
    let k = y.row_len();
    for b in 0..y.batch() {
        let yb = y.row(b);
        let gb = g.row(b);
        let s = dot(yb, gb);
        for j in 0..k {
            dx[b * k + j] = yb[j] * (gb[j] - s);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}
