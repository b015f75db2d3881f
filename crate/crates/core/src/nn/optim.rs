use super::Network;
use crate::error::{Error, Result};
use crate::Real;

/// Plain stochastic gradient descent: `w <- w - lr * g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: Real,
}

impl Sgd {
    pub fn new(lr: Real) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        Ok(Sgd { lr })
    }

    /// Applies one step to every parameter of `net`. Gradients are left in
    /// place.
    pub fn step(&self, net: &mut Network) -> Result<()> {
        if self.lr == 0.0 {
            return Ok(());
        }
        let lr = self.lr;
        let mut finite = true;
        net.for_each_param_mut(|_, p| {
            for (w, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *w -= lr * g;
                finite &= w.is_finite();
            }
        });
        if finite {
            Ok(())
        } else {
            Err(Error::non_finite("sgd step"))
        }
    }
}
