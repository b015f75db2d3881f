//! Batch normalization and switchable normalization over `(batch, features)`.
//!
//! Switchable normalization mixes batch statistics (per feature, over the
//! batch) with layer statistics (per sample, over features). On 2-D inputs
//! instance statistics coincide with layer statistics, so only two sources
//! remain. Means and variances each get their own pair of softmax-weighted
//! mixing logits.
//!
//! Running averages use the unbiased batch variance and are skipped for
//! single-sample batches, which carry no variance information.

use alloc::vec;
use alloc::vec::Vec;

use super::layer::LayerKind;
use super::Param;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::{math, Real};

fn check_input(op: &'static str, x: &Tensor, features: usize) -> Result<()> {
    if x.rank() != 2 || x.shape()[1] != features {
        return Err(Error::ShapeMismatch {
            op,
            expected: vec![x.shape()[0], features],
            found: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-feature mean and biased variance over the batch axis.
fn batch_moments(x: &Tensor) -> (Vec<Real>, Vec<Real>) {
    let (n, f) = (x.batch(), x.row_len());
    let mut mean = vec![0.0; f];
    for b in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(b)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as Real);
    let mut var = vec![0.0; f];
    for b in 0..n {
        for ((s, &v), &m) in var.iter_mut().zip(x.row(b)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n as Real);
    (mean, var)
}

fn update_running(running_mean: &mut Tensor, running_var: &mut Tensor, mean: &[Real], var: &[Real], n: usize, momentum: Real) {
    if n < 2 {
        return;
    }
    let correction = n as Real / (n - 1) as Real;
    for (r, &m) in running_mean.data_mut().iter_mut().zip(mean) {
        *r = (1.0 - momentum) * *r + momentum * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(var) {
        *r = (1.0 - momentum) * *r + momentum * v * correction;
    }
}

fn softmax2(logits: &[Real]) -> [Real; 2] {
    let m = logits[0].max(logits[1]);
    let a = math::exp(logits[0] - m);
    let b = math::exp(logits[1] - m);
    [a / (a + b), b / (a + b)]
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Option<Param>,
    pub beta: Option<Param>,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: Real,
    pub momentum: Real,
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNormCache {
    xhat: Tensor,
    inv_std: Vec<Real>,
}

impl BatchNorm {
    pub(crate) fn new(features: usize, eps: Real, momentum: Real, affine: bool) -> Self {
        BatchNorm {
            gamma: affine.then(|| Param::new(Tensor::full(&[features], 1.0))),
            beta: affine.then(|| Param::zeros(&[features])),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
            eps,
            momentum,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm {
            features: self.features(),
            eps: self.eps,
            momentum: self.momentum,
            affine: self.gamma.is_some(),
        }
    }

    pub(crate) fn params(&self) -> Vec<(&'static str, &Param)> {
        match (&self.gamma, &self.beta) {
            (Some(g), Some(b)) => vec![("weight", g), ("bias", b)],
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        match (&mut self.gamma, &mut self.beta) {
            (Some(g), Some(b)) => vec![("weight", g), ("bias", b)],
            _ => Vec::new(),
        }
    }

    fn affine(&self, xhat: &mut Tensor) {
        if let (Some(g), Some(b)) = (&self.gamma, &self.beta) {
            let f = self.features();
            for (i, v) in xhat.data_mut().iter_mut().enumerate() {
                let j = i % f;
                *v = g.value.data()[j] * *v + b.value.data()[j];
            }
        }
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor, update_stats: bool) -> Result<(Tensor, BatchNormCache)> {
        check_input("batchnorm", x, self.features())?;
        let (mean, var) = batch_moments(x);
        let inv_std: Vec<Real> = var.iter().map(|&v| 1.0 / math::sqrt(v + self.eps)).collect();
        let f = self.features();
        let xhat_data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[i % f]) * inv_std[i % f])
            .collect();
        let xhat = Tensor::from_parts(x.shape().to_vec(), xhat_data);
        let mut y = xhat.clone();
        self.affine(&mut y);
        if update_stats {
            update_running(&mut self.running_mean, &mut self.running_var, &mean, &var, x.batch(), self.momentum);
        }
        Ok((y, BatchNormCache { xhat, inv_std }))
    }

    pub(crate) fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        check_input("batchnorm", x, self.features())?;
        let f = self.features();
        let rm = self.running_mean.data();
        let rv = self.running_var.data();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - rm[i % f]) / math::sqrt(rv[i % f] + self.eps))
            .collect();
        let mut y = Tensor::from_parts(x.shape().to_vec(), data);
        self.affine(&mut y);
        Ok(y)
    }

    pub(crate) fn backward(&mut self, cache: &BatchNormCache, g: &Tensor, need_input: bool) -> Option<Tensor> {
        let (n, f) = (g.batch(), g.row_len());
        let xhat = cache.xhat.data();
        let mut dxhat = g.data().to_vec();
        if let (Some(gamma), Some(beta)) = (&mut self.gamma, &mut self.beta) {
            for (i, &gv) in g.data().iter().enumerate() {
                gamma.grad.data_mut()[i % f] += gv * xhat[i];
                beta.grad.data_mut()[i % f] += gv;
            }
            for (i, d) in dxhat.iter_mut().enumerate() {
                *d *= gamma.value.data()[i % f];
            }
        }
        if !need_input {
            return None;
        }
        let mut sum = vec![0.0; f];
        let mut sum_x = vec![0.0; f];
        for (i, &d) in dxhat.iter().enumerate() {
            sum[i % f] += d;
            sum_x[i % f] += d * xhat[i];
        }
        let nr = n as Real;
        let dx = dxhat
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let j = i % f;
                cache.inv_std[j] / nr * (nr * d - sum[j] - xhat[i] * sum_x[j])
            })
            .collect();
        Some(Tensor::from_parts(g.shape().to_vec(), dx))
    }
}

#[derive(Clone, Debug)]
pub struct SwitchNorm {
    pub gamma: Option<Param>,
    pub beta: Option<Param>,
    /// Mixing logits for the (batch, layer) means.
    pub mean_logits: Param,
    /// Mixing logits for the (batch, layer) variances.
    pub var_logits: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: Real,
    pub momentum: Real,
}

#[derive(Clone, Debug)]
pub(crate) struct SwitchNormCache {
    x: Tensor,
    xhat: Vec<Real>,
    inv_std: Vec<Real>,
    mean_b: Vec<Real>,
    var_b: Vec<Real>,
    mean_l: Vec<Real>,
    var_l: Vec<Real>,
    p: [Real; 2],
    q: [Real; 2],
}

impl SwitchNorm {
    pub(crate) fn new(features: usize, eps: Real, momentum: Real, affine: bool) -> Self {
        SwitchNorm {
            gamma: affine.then(|| Param::new(Tensor::full(&[features], 1.0))),
            beta: affine.then(|| Param::zeros(&[features])),
            mean_logits: Param::zeros(&[2]),
            var_logits: Param::zeros(&[2]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
            eps,
            momentum,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::SwitchNorm {
            features: self.features(),
            eps: self.eps,
            momentum: self.momentum,
            affine: self.gamma.is_some(),
        }
    }

    pub(crate) fn params(&self) -> Vec<(&'static str, &Param)> {
        let mut v = Vec::new();
        if let (Some(g), Some(b)) = (&self.gamma, &self.beta) {
            v.push(("weight", g));
            v.push(("bias", b));
        }
        v.push(("mean_weight", &self.mean_logits));
        v.push(("var_weight", &self.var_logits));
        v
    }

    pub(crate) fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        let mut v = Vec::new();
        if let (Some(g), Some(b)) = (&mut self.gamma, &mut self.beta) {
            v.push(("weight", g));
            v.push(("bias", b));
        }
        v.push(("mean_weight", &mut self.mean_logits));
        v.push(("var_weight", &mut self.var_logits));
        v
    }

    /// Per-sample mean and biased variance over the feature axis.
    fn layer_moments(x: &Tensor) -> (Vec<Real>, Vec<Real>) {
        let f = x.row_len() as Real;
        (0..x.batch())
            .map(|b| {
                let row = x.row(b);
                let m = row.iter().sum::<Real>() / f;
                let v = row.iter().map(|&z| (z - m) * (z - m)).sum::<Real>() / f;
                (m, v)
            })
            .unzip()
    }

    fn normalize(
        &self,
        x: &Tensor,
        mean_b: &[Real],
        var_b: &[Real],
        mean_l: &[Real],
        var_l: &[Real],
    ) -> (Vec<Real>, Vec<Real>, [Real; 2], [Real; 2]) {
        let f = self.features();
        let p = softmax2(self.mean_logits.value.data());
        let q = softmax2(self.var_logits.value.data());
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(x.len());
        for (i, &v) in x.data().iter().enumerate() {
            let (b, j) = (i / f, i % f);
            let mean = p[0] * mean_b[j] + p[1] * mean_l[b];
            let var = q[0] * var_b[j] + q[1] * var_l[b];
            let s = 1.0 / math::sqrt(var + self.eps);
            xhat.push((v - mean) * s);
            inv_std.push(s);
        }
        (xhat, inv_std, p, q)
    }

    fn output(&self, shape: &[usize], xhat: &[Real]) -> Tensor {
        let f = self.features();
        let data = match (&self.gamma, &self.beta) {
            (Some(g), Some(b)) => xhat
                .iter()
                .enumerate()
                .map(|(i, &v)| g.value.data()[i % f] * v + b.value.data()[i % f])
                .collect(),
            _ => xhat.to_vec(),
        };
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor, update_stats: bool) -> Result<(Tensor, SwitchNormCache)> {
        check_input("switchnorm", x, self.features())?;
        let (mean_b, var_b) = batch_moments(x);
        let (mean_l, var_l) = Self::layer_moments(x);
        let (xhat, inv_std, p, q) = self.normalize(x, &mean_b, &var_b, &mean_l, &var_l);
        let y = self.output(x.shape(), &xhat);
        if update_stats {
            update_running(&mut self.running_mean, &mut self.running_var, &mean_b, &var_b, x.batch(), self.momentum);
        }
        let cache = SwitchNormCache {
            x: x.clone(),
            xhat,
            inv_std,
            mean_b,
            var_b,
            mean_l,
            var_l,
            p,
            q,
        };
        Ok((y, cache))
    }

    pub(crate) fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        check_input("switchnorm", x, self.features())?;
        let (mean_l, var_l) = Self::layer_moments(x);
        let (xhat, ..) = self.normalize(x, self.running_mean.data(), self.running_var.data(), &mean_l, &var_l);
        Ok(self.output(x.shape(), &xhat))
    }

    pub(crate) fn backward(&mut self, c: &SwitchNormCache, g: &Tensor, need_input: bool) -> Option<Tensor> {
        let (n, f) = (g.batch(), g.row_len());
        let mut gh = g.data().to_vec();
        if let (Some(gamma), Some(beta)) = (&mut self.gamma, &mut self.beta) {
            for (i, &gv) in g.data().iter().enumerate() {
                gamma.grad.data_mut()[i % f] += gv * c.xhat[i];
                beta.grad.data_mut()[i % f] += gv;
            }
            for (i, d) in gh.iter_mut().enumerate() {
                *d *= gamma.value.data()[i % f];
            }
        }
        // dL/dmean and dL/dvar per element, reduced onto the statistics.
        let mut d_mean_b = vec![0.0; f];
        let mut d_var_b = vec![0.0; f];
        let mut d_mean_l = vec![0.0; n];
        let mut d_var_l = vec![0.0; n];
        let mut dp = [0.0; 2];
        let mut dq = [0.0; 2];
        for (i, &d) in gh.iter().enumerate() {
            let (b, j) = (i / f, i % f);
            let s = c.inv_std[i];
            let dm = -d * s;
            let dv = -0.5 * d * c.xhat[i] * s * s;
            d_mean_b[j] += dm;
            d_mean_l[b] += dm;
            d_var_b[j] += dv;
            d_var_l[b] += dv;
            dp[0] += dm * c.mean_b[j];
            dp[1] += dm * c.mean_l[b];
            dq[0] += dv * c.var_b[j];
            dq[1] += dv * c.var_l[b];
        }
        for (logits, w, dw) in [(&mut self.mean_logits, c.p, dp), (&mut self.var_logits, c.q, dq)] {
            let avg = w[0] * dw[0] + w[1] * dw[1];
            for k in 0..2 {
                logits.grad.data_mut()[k] += w[k] * (dw[k] - avg);
            }
        }
        if !need_input {
            return None;
        }
        let (nr, fr) = (n as Real, f as Real);
        let dx = gh
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let (b, j) = (i / f, i % f);
                let xv = c.x.data()[i];
                d * c.inv_std[i]
                    + c.p[0] * d_mean_b[j] / nr
                    + c.p[1] * d_mean_l[b] / fr
                    + c.q[0] * d_var_b[j] * 2.0 * (xv - c.mean_b[j]) / nr
                    + c.q[1] * d_var_l[b] * 2.0 * (xv - c.mean_l[b]) / fr
            })
            .collect();
        Some(Tensor::from_parts(g.shape().to_vec(), dx))
    }
}
