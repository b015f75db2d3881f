//! Central finite-difference verification of analytic gradients.
//!
//! ReLU and max pooling make the loss piecewise smooth. When perturbing a
//! coordinate by `±h` flips one of their branch decisions, the difference
//! quotient straddles a kink and says nothing about the analytic gradient
//! at `w`; such coordinates are counted in [`GradReport::kinks`] and left
//! out of the maximum.

use alloc::vec::Vec;

use rand::seq::index::sample;

use super::{cross_entropy, Mode, Network, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Real;

/// Largest parameter count [`grad_check`] will perturb exhaustively.
pub const GRAD_CHECK_LIMIT: usize = 100_000;

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: Real, numeric: Real) -> Real {
    let scale = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    /// Largest [`relative_error`] over the compared coordinates.
    pub max_error: Real,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because `w ± h` crossed a ReLU or max-pool kink.
    pub kinks: usize,
}

/// Something with parameters and a scalar training loss.
///
/// Implementations must evaluate the loss in training mode (batch
/// statistics) without updating running statistics, so that repeated
/// evaluations at the same parameters agree exactly.
pub trait GradTarget {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    /// Loss and the branch decisions taken computing it (see
    /// [`super::Tape::branches`]).
    fn loss(&mut self) -> Result<(Real, Vec<usize>)>;
    /// Zeroes gradients, then computes the loss and fills the gradients.
    fn loss_and_grads(&mut self) -> Result<Real>;
}

struct NetworkLoss<'a> {
    net: &'a mut Network,
    x: &'a Tensor,
    labels: &'a [usize],
}

impl GradTarget for NetworkLoss<'_> {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    fn loss(&mut self) -> Result<(Real, Vec<usize>)> {
        let (y, tape) = self.net.forward(self.x, Mode::Train)?;
        Ok((cross_entropy(&y, self.labels)?.0, tape.branches()))
    }

    fn loss_and_grads(&mut self) -> Result<Real> {
        self.net.zero_grads();
        let (y, tape) = self.net.forward(self.x, Mode::Train)?;
        let (loss, g) = cross_entropy(&y, self.labels)?;
        self.net.backward(&tape, &g)?;
        Ok(loss)
    }
}

fn validate_step(h: Real) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    Ok(())
}

/// Compares analytic gradients with central differences
/// `(L(w+h) - L(w-h)) / 2h` over every parameter of `net`, using mean
/// cross-entropy of `net(x)` against `labels` as the loss.
///
/// Running statistics are frozen for the duration of the check.
pub fn grad_check(net: &mut Network, x: &Tensor, labels: &[usize], h: Real) -> Result<GradReport> {
    validate_step(h)?;
    let params = net.param_count();
    if params > GRAD_CHECK_LIMIT {
        return Err(Error::TooLarge {
            params,
            limit: GRAD_CHECK_LIMIT,
        });
    }
    let frozen = net.stats_frozen;
    net.set_stats_frozen(true);
    let result = check(&mut NetworkLoss { net, x, labels }, h, None);
    net.set_stats_frozen(frozen);
    result
}

/// Finite-difference check over a sample of coordinates: every tensor with
/// at most `per_tensor` entries is checked fully, larger tensors at
/// `per_tensor` distinct positions drawn from `rng`.
pub fn grad_check_sampled<T: GradTarget>(target: &mut T, h: Real, per_tensor: usize, rng: &mut impl rand::Rng) -> Result<GradReport> {
    validate_step(h)?;
    let lens: Vec<usize> = target.params().iter().map(|p| p.value.len()).collect();
    let coords = lens
        .iter()
        .enumerate()
        .flat_map(|(t, &len)| {
            let picks: Vec<usize> = if len <= per_tensor {
                (0..len).collect()
            } else {
                let mut v = sample(rng, len, per_tensor).into_vec();
                v.sort_unstable();
                v
            };
            picks.into_iter().map(move |i| (t, i))
        })
        .collect();
    check(target, h, Some(coords))
}

fn check<T: GradTarget>(target: &mut T, h: Real, coords: Option<Vec<(usize, usize)>>) -> Result<GradReport> {
    let base = target.loss_and_grads()?;
    if !base.is_finite() {
        return Err(Error::non_finite("grad_check loss"));
    }
    let (_, branches) = target.loss()?;
    let analytic: Vec<Vec<Real>> = target.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let coords = coords.unwrap_or_else(|| {
        analytic
            .iter()
            .enumerate()
            .flat_map(|(t, g)| (0..g.len()).map(move |i| (t, i)))
            .collect()
    });
    let mut report = GradReport {
        max_error: 0.0,
        checked: 0,
        kinks: 0,
    };
    for (t, i) in coords {
        let original = target.params()[t].value.data()[i];
        target.params_mut()[t].value.data_mut()[i] = original + h;
        let plus = target.loss();
        target.params_mut()[t].value.data_mut()[i] = original - h;
        let minus = target.loss();
        target.params_mut()[t].value.data_mut()[i] = original;
        let ((plus, plus_branches), (minus, minus_branches)) = (plus?, minus?);
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::non_finite("grad_check loss"));
        }
        if plus_branches != branches || minus_branches != branches {
            report.kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        report.checked += 1;
        report.max_error = report.max_error.max(relative_error(analytic[t][i], numeric));
    }
    Ok(report)
}
