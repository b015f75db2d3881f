//! 2-D convolution (im2col) and max pooling over `(batch, channels, h, w)`.

use alloc::vec;
use alloc::vec::Vec;

use super::layer::{window_out, LayerKind};
use super::Param;
use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Tensor};
use crate::Real;

/// Convolution with weight `(out, in, k, k)` and bias `(out)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct ConvCache {
    /// One `(in*k*k, oh*ow)` column matrix per sample, concatenated.
    cols: Vec<Real>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel of column row `r` at output position `(oh, ow)`.
    #[inline]
    fn source(&self, kh: usize, kw: usize, oh: usize, ow: usize) -> Option<(usize, usize)> {
        let y = (oh * self.stride + kh).checked_sub(self.padding)?;
        let x = (ow * self.stride + kw).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }

    fn im2col(&self, image: &[Real], cols: &mut [Real]) {
        let k = self.kernel;
        let p = self.positions();
        let plane = self.height * self.width;
        for c in 0..self.channels {
            for kh in 0..k {
                for kw in 0..k {
                    let r = (c * k + kh) * k + kw;
                    let row = &mut cols[r * p..(r + 1) * p];
                    for oh in 0..self.out_h {
                        for ow in 0..self.out_w {
                            row[oh * self.out_w + ow] = match self.source(kh, kw, oh, ow) {
                                Some((y, x)) => image[c * plane + y * self.width + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[Real], image: &mut [Real]) {
        let k = self.kernel;
        let p = self.positions();
        let plane = self.height * self.width;
        for c in 0..self.channels {
            for kh in 0..k {
                for kw in 0..k {
                    let r = (c * k + kh) * k + kw;
                    let row = &cols[r * p..(r + 1) * p];
                    for oh in 0..self.out_h {
                        for ow in 0..self.out_w {
                            if let Some((y, x)) = self.source(kh, kw, oh, ow) {
                                image[c * plane + y * self.width + x] += row[oh * self.out_w + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    pub(crate) fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            weight: Param::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Param::zeros(&[out_channels]),
            stride,
            padding,
        }
    }

    pub fn kind(&self) -> LayerKind {
        let s = self.weight.value.shape();
        LayerKind::Conv2d {
            in_channels: s[1],
            out_channels: s[0],
            kernel: s[2],
            stride: self.stride,
            padding: self.padding,
        }
    }

    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        let s = self.weight.value.shape();
        let (in_ch, kernel) = (s[1], s[2]);
        let bad = || Error::ShapeMismatch {
            op: "conv2d",
            expected: vec![x.shape()[0], in_ch, kernel, kernel],
            found: x.shape().to_vec(),
        };
        if x.rank() != 4 || x.shape()[1] != in_ch {
            return Err(bad());
        }
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let out_h = window_out(h, kernel, self.stride, self.padding).ok_or_else(bad)?;
        let out_w = window_out(w, kernel, self.stride, self.padding).ok_or_else(bad)?;
        Ok(Geometry {
            channels: in_ch,
            height: h,
            width: w,
            kernel,
            stride: self.stride,
            padding: self.padding,
            out_h,
            out_w,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor, keep: bool) -> Result<(Tensor, Option<ConvCache>)> {
        let geo = self.geometry(x)?;
        let batch = x.batch();
        let out_ch = self.weight.value.shape()[0];
        let (rows, positions) = (geo.rows(), geo.positions());
        let w = self.weight.value.data();
        let mut cols = vec![0.0; if keep { batch * rows * positions } else { rows * positions }];
        let mut out = vec![0.0; batch * out_ch * positions];
        for b in 0..batch {
            let sample_cols = if keep {
                &mut cols[b * rows * positions..(b + 1) * rows * positions]
            } else {
                &mut cols[..]
            };
            geo.im2col(x.row(b), sample_cols);
            for oc in 0..out_ch {
                let o = &mut out[(b * out_ch + oc) * positions..(b * out_ch + oc + 1) * positions];
                o.fill(self.bias.value.data()[oc]);
                for r in 0..rows {
                    axpy(w[oc * rows + r], &sample_cols[r * positions..(r + 1) * positions], o);
                }
            }
        }
        let y = Tensor::from_parts(vec![batch, out_ch, geo.out_h, geo.out_w], out);
        let cache = keep.then_some(ConvCache {
            cols,
            in_shape: [batch, geo.channels, geo.height, geo.width],
            out_hw: (geo.out_h, geo.out_w),
        });
        Ok((y, cache))
    }

    pub(crate) fn backward(&mut self, cache: &ConvCache, g: &Tensor, need_input: bool) -> Option<Tensor> {
        let [batch, channels, height, width] = cache.in_shape;
        let kernel = self.weight.value.shape()[2];
        let geo = Geometry {
            channels,
            height,
            width,
            kernel,
            stride: self.stride,
            padding: self.padding,
            out_h: cache.out_hw.0,
            out_w: cache.out_hw.1,
        };
        let out_ch = self.weight.value.shape()[0];
        let (rows, positions) = (geo.rows(), geo.positions());
        for b in 0..batch {
            let sample_cols = &cache.cols[b * rows * positions..(b + 1) * rows * positions];
            for oc in 0..out_ch {
                let go = &g.data()[(b * out_ch + oc) * positions..(b * out_ch + oc + 1) * positions];
                self.bias.grad.data_mut()[oc] += go.iter().sum::<Real>();
                let dw = &mut self.weight.grad.data_mut()[oc * rows..(oc + 1) * rows];
                for (r, d) in dw.iter_mut().enumerate() {
                    *d += dot(go, &sample_cols[r * positions..(r + 1) * positions]);
                }
            }
        }
        if !need_input {
            return None;
        }
        let w = self.weight.value.data();
        let plane = channels * height * width;
        let mut dx = vec![0.0; batch * plane];
        let mut dcols = vec![0.0; rows * positions];
        for b in 0..batch {
            dcols.fill(0.0);
            for oc in 0..out_ch {
                let go = &g.data()[(b * out_ch + oc) * positions..(b * out_ch + oc + 1) * positions];
                for r in 0..rows {
                    axpy(w[oc * rows + r], go, &mut dcols[r * positions..(r + 1) * positions]);
                }
            }
            geo.col2im(&dcols, &mut dx[b * plane..(b + 1) * plane]);
        }
        Some(Tensor::from_parts(cache.in_shape.to_vec(), dx))
    }
}

/// Max pooling; ties resolve to the first element in scan order.
#[derive(Clone, Copy, Debug)]
pub struct MaxPool2d {
    pub size: usize,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct PoolCache {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl PoolCache {
    pub(crate) fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

impl MaxPool2d {
    pub(crate) fn forward(&self, x: &Tensor) -> Result<(Tensor, PoolCache)> {
        let bad = || Error::ShapeMismatch {
            op: "maxpool2d",
            expected: vec![x.shape()[0], 0, self.size, self.size],
            found: x.shape().to_vec(),
        };
        if x.rank() != 4 {
            return Err(bad());
        }
        let (batch, ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let oh = window_out(h, self.size, self.stride, 0).ok_or_else(bad)?;
        let ow = window_out(w, self.size, self.stride, 0).ok_or_else(bad)?;
        let mut out = Vec::with_capacity(batch * ch * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        let data = x.data();
        for plane in 0..batch * ch {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * self.stride * w + j * self.stride;
                    for di in 0..self.size {
                        for dj in 0..self.size {
                            let idx = base + (i * self.stride + di) * w + j * self.stride + dj;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let y = Tensor::from_parts(vec![batch, ch, oh, ow], out);
        Ok((
            y,
            PoolCache {
                argmax,
                in_shape: x.shape().to_vec(),
            },
        ))
    }

    pub(crate) fn backward(&self, cache: &PoolCache, g: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(&cache.in_shape);
        let d = dx.data_mut();
        for (&idx, &gv) in cache.argmax.iter().zip(g.data()) {
            d[idx] += gv;
        }
        dx
    }
}
