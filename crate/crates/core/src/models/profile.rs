//! Parameter, byte and FLOP accounting.
//!
//! FLOP conventions (forward, per sample):
//! - dense: `2 * in * out`
//! - conv2d: `2 * k^2 * c_in * c_out * h_out * w_out`
//! - max pool, activations, softmax and norm layers: one per output element
//! - flatten: zero
//!
//! A training step (forward + backward) counts as
//! [`TRAIN_FLOPS_MULTIPLIER`] forwards.

use super::MoeModel;
use crate::error::Result;
use crate::nn::{LayerKind, Network};

pub const TRAIN_FLOPS_MULTIPLIER: u64 = 3;

/// Trainable parameters, norm affine and mixing weights included, running
/// statistics excluded.
pub fn param_count(net: &Network) -> usize {
    net.param_count()
}

pub fn model_bytes(net: &Network, bytes_per_param: usize) -> usize {
    param_count(net) * bytes_per_param
}

/// Forward FLOPs for one sample of per-sample shape `input`.
pub fn flops_forward(net: &Network, input: &[usize]) -> Result<u64> {
    let mut dims = input.to_vec();
    let mut total = 0u64;
    for kind in net.kinds() {
        let out = kind.output_dims(&dims)?;
        let out_elems: u64 = out.iter().product::<usize>() as u64;
        total += match kind {
            LayerKind::Dense { input, output, .. } => 2 * (input * output) as u64,
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => 2 * (kernel * kernel * in_channels * out_channels * out[1] * out[2]) as u64,
            LayerKind::Flatten => 0,
            _ => out_elems,
        };
        dims = out;
    }
    Ok(total)
}

/// Forward FLOPs of the whole mixture for one sample: both experts, the
/// gate, the mixing (two multiplies and one add per representation
/// element) and the header.
pub fn moe_flops_forward(moe: &MoeModel, input: &[usize]) -> Result<u64> {
    let rep = moe.global_expert.output_dims(input)?;
    let rep_elems = rep.iter().product::<usize>() as u64;
    let gate = if moe.forced_alpha().is_some() {
        0
    } else {
        flops_forward(&moe.gate, input)?
    };
    Ok(flops_forward(&moe.global_expert, input)?
        + flops_forward(&moe.local_expert, input)?
        + gate
        + 3 * rep_elems
        + flops_forward(&moe.header, &rep)?)
}
