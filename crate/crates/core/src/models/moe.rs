use alloc::vec::Vec;

use super::{build_gating, InputDims, SplitModel};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, grad_check_sampled, GradReport, GradTarget, Mode, Network, Param, Sgd, Tape};
use crate::snapshot::Snapshot;
use crate::tensor::{dot, Tensor};
use crate::Real;

/// Per-client mixture: a shared global expert, the client's own local
/// expert, a gate producing per-sample weights `[a_g, a_f]`, and the
/// client's header applied to `a_g * R_g + a_f * R_f`.
#[derive(Clone, Debug)]
pub struct MoeModel {
    pub global_expert: Network,
    pub local_expert: Network,
    pub gate: Network,
    pub header: Network,
    forced_alpha: Option<[Real; 2]>,
}

/// Everything produced by one forward pass.
#[derive(Clone, Debug)]
pub struct MoeOutput {
    pub prediction: Tensor,
    /// `[batch, 2]`, columns `a_g` then `a_f`.
    pub alpha: Tensor,
    pub rep_global: Tensor,
    pub rep_local: Tensor,
    pub rep_mixed: Tensor,
}

#[derive(Debug)]
pub struct MoeTape {
    global: Tape,
    local: Tape,
    gate: Option<Tape>,
    header: Tape,
    alpha: Tensor,
    rep_global: Tensor,
    rep_local: Tensor,
}

/// Learning rates for the three trainable parts. The header is updated
/// with the local expert's rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoeRates {
    pub global: Real,
    pub local: Real,
    pub gate: Real,
}

impl MoeRates {
    pub fn uniform(lr: Real) -> Self {
        MoeRates {
            global: lr,
            local: lr,
            gate: lr,
        }
    }
}

impl MoeModel {
    pub fn new(global_expert: Network, local: SplitModel, gate: Network) -> Result<Self> {
        Ok(MoeModel {
            global_expert,
            local_expert: local.extractor,
            gate,
            header: local.header,
            forced_alpha: None,
        })
    }

    pub fn build(global_expert: Network, local: SplitModel, dims: InputDims, gate_hidden: usize, seed: u64) -> Result<Self> {
        Self::new(global_expert, local, build_gating(dims, gate_hidden, seed)?)
    }

    pub fn forced_alpha(&self) -> Option<[Real; 2]> {
        self.forced_alpha
    }

    /// Replaces the gate output with a constant `[a_g, a_f]`; the gate then
    /// receives no gradient.
    pub fn force_alpha(&mut self, alpha: Option<[Real; 2]>) -> Result<()> {
        if let Some([g, f]) = alpha {
            if !(g.is_finite() && f.is_finite()) {
                return Err(Error::invalid("forced alpha must be finite"));
            }
        }
        self.forced_alpha = alpha;
        Ok(())
    }

    /// Trainable parameters of all four parts.
    pub fn param_count(&self) -> usize {
        self.global_expert.param_count() + self.local_expert.param_count() + self.gate.param_count() + self.header.param_count()
    }

    pub fn set_stats_frozen(&mut self, frozen: bool) {
        for net in self.nets_mut() {
            net.set_stats_frozen(frozen);
        }
    }

    pub fn zero_grads(&mut self) {
        for net in self.nets_mut() {
            net.zero_grads();
        }
    }

    fn nets_mut(&mut self) -> [&mut Network; 4] {
        [&mut self.global_expert, &mut self.local_expert, &mut self.gate, &mut self.header]
    }

    fn constant_alpha(&self, batch: usize) -> Option<Tensor> {
        self.forced_alpha.map(|[g, f]| {
            let data = (0..batch).flat_map(|_| [g, f]).collect();
            Tensor::from_parts(alloc::vec![batch, 2], data)
        })
    }

    /// Training-mode forward keeping what [`MoeModel::backward`] needs.
    pub fn forward(&mut self, x: &Tensor) -> Result<(MoeOutput, MoeTape)> {
        let (rep_global, global) = self.global_expert.forward(x, Mode::Train)?;
        let (rep_local, local) = self.local_expert.forward(x, Mode::Train)?;
        let (alpha, gate) = match self.constant_alpha(x.batch()) {
            Some(a) => (a, None),
            None => {
                let (a, t) = self.gate.forward(x, Mode::Train)?;
                (a, Some(t))
            }
        };
        let rep_mixed = mix(&alpha, &rep_global, &rep_local)?;
        let (prediction, header) = self.header.forward(&rep_mixed, Mode::Train)?;
        let tape = MoeTape {
            global,
            local,
            gate,
            header,
            alpha: alpha.clone(),
            rep_global: rep_global.clone(),
            rep_local: rep_local.clone(),
        };
        let out = MoeOutput {
            prediction,
            alpha,
            rep_global,
            rep_local,
            rep_mixed,
        };
        Ok((out, tape))
    }

    /// Evaluation-mode forward using running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<MoeOutput> {
        let rep_global = self.global_expert.infer(x)?;
        let rep_local = self.local_expert.infer(x)?;
        let alpha = match self.constant_alpha(x.batch()) {
            Some(a) => a,
            None => self.gate.infer(x)?,
        };
        let rep_mixed = mix(&alpha, &rep_global, &rep_local)?;
        let prediction = self.header.infer(&rep_mixed)?;
        Ok(MoeOutput {
            prediction,
            alpha,
            rep_global,
            rep_local,
            rep_mixed,
        })
    }

    /// Accumulates parameter gradients of all parts given the gradient of
    /// the loss with respect to the prediction.
    pub fn backward(&mut self, tape: &MoeTape, grad_pred: &Tensor) -> Result<()> {
        let d_mixed = self.header.backward(&tape.header, grad_pred)?;
        let (batch, width) = (d_mixed.batch(), d_mixed.row_len());
        let mut d_global = Tensor::zeros(&[batch, width]);
        let mut d_local = Tensor::zeros(&[batch, width]);
        let mut d_alpha = Tensor::zeros(&[batch, 2]);
        for b in 0..batch {
            let (ag, af) = (tape.alpha.row(b)[0], tape.alpha.row(b)[1]);
            let dr = d_mixed.row(b);
            for ((g, l), &d) in d_global.row_mut(b).iter_mut().zip(d_local.row_mut(b).iter_mut()).zip(dr) {
                *g = ag * d;
                *l = af * d;
            }
            let da = d_alpha.row_mut(b);
            da[0] = dot(dr, tape.rep_global.row(b));
            da[1] = dot(dr, tape.rep_local.row(b));
        }
        self.global_expert.backward_params(&tape.global, &d_global)?;
        self.local_expert.backward_params(&tape.local, &d_local)?;
        if let Some(gate) = &tape.gate {
            self.gate.backward_params(gate, &d_alpha)?;
        }
        Ok(())
    }

    /// Mean cross-entropy and gradients, without updating parameters.
    pub fn loss_and_grads(&mut self, x: &Tensor, labels: &[usize]) -> Result<Real> {
        self.zero_grads();
        let (out, tape) = self.forward(x)?;
        let (loss, g) = cross_entropy(&out.prediction, labels)?;
        self.backward(&tape, &g)?;
        Ok(loss)
    }

    /// One SGD step; returns the loss before the step.
    pub fn train_step(&mut self, x: &Tensor, labels: &[usize], rates: MoeRates) -> Result<Real> {
        let loss = self.loss_and_grads(x, labels)?;
        Sgd::new(rates.global)?.step(&mut self.global_expert)?;
        let local = Sgd::new(rates.local)?;
        local.step(&mut self.local_expert)?;
        local.step(&mut self.header)?;
        if self.forced_alpha.is_none() {
            Sgd::new(rates.gate)?.step(&mut self.gate)?;
        }
        Ok(loss)
    }

    /// Finite-difference check over sampled coordinates of every tensor.
    pub fn grad_check(&mut self, x: &Tensor, labels: &[usize], h: Real, per_tensor: usize, rng: &mut impl rand::Rng) -> Result<GradReport> {
        self.set_stats_frozen(true);
        let result = grad_check_sampled(&mut MoeLoss { moe: self, x, labels }, h, per_tensor, rng);
        self.set_stats_frozen(false);
        result
    }

    /// Full state under the prefixes `global.`, `local.`, `gate.`, `header.`.
    pub fn snapshot(&self) -> Snapshot {
        let mut snap = Snapshot::default();
        snap.extend_prefixed("global.", &self.global_expert.snapshot());
        snap.extend_prefixed("local.", &self.local_expert.snapshot());
        snap.extend_prefixed("gate.", &self.gate.snapshot());
        snap.extend_prefixed("header.", &self.header.snapshot());
        snap
    }

    pub fn load_snapshot(&mut self, snap: &Snapshot) -> Result<()> {
        self.global_expert.load_snapshot(&snap.with_prefix_stripped("global."))?;
        self.local_expert.load_snapshot(&snap.with_prefix_stripped("local."))?;
        self.gate.load_snapshot(&snap.with_prefix_stripped("gate."))?;
        self.header.load_snapshot(&snap.with_prefix_stripped("header."))
    }
}

/// `a_g * R_g + a_f * R_f` row by row.
pub(super) fn mix(alpha: &Tensor, rg: &Tensor, rf: &Tensor) -> Result<Tensor> {
    if rg.shape() != rf.shape() || alpha.shape() != [rg.batch(), 2] {
        return Err(Error::ShapeMismatch {
            op: "moe mix",
            expected: rg.shape().to_vec(),
            found: rf.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(rg.shape());
    for b in 0..rg.batch() {
        let (ag, af) = (alpha.row(b)[0], alpha.row(b)[1]);
        for ((o, &g), &f) in out.row_mut(b).iter_mut().zip(rg.row(b)).zip(rf.row(b)) {
            *o = ag * g + af * f;
        }
    }
    Ok(out)
}

struct MoeLoss<'a> {
    moe: &'a mut MoeModel,
    x: &'a Tensor,
    labels: &'a [usize],
}

impl GradTarget for MoeLoss<'_> {
    fn params(&self) -> Vec<&Param> {
        let m = &*self.moe;
        let mut v = m.global_expert.params();
        v.extend(m.local_expert.params());
        if m.forced_alpha.is_none() {
            v.extend(m.gate.params());
        }
        v.extend(m.header.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let gated = self.moe.forced_alpha.is_none();
        let m = &mut *self.moe;
        let mut v = m.global_expert.params_mut();
        v.extend(m.local_expert.params_mut());
        if gated {
            v.extend(m.gate.params_mut());
        }
        v.extend(m.header.params_mut());
        v
    }

    fn loss(&mut self) -> Result<(Real, Vec<usize>)> {
        let (out, tape) = self.moe.forward(self.x)?;
        let mut branches = tape.global.branches();
        branches.extend(tape.local.branches());
        if let Some(gate) = &tape.gate {
            branches.extend(gate.branches());
        }
        branches.extend(tape.header.branches());
        Ok((cross_entropy(&out.prediction, self.labels)?.0, branches))
    }

    fn loss_and_grads(&mut self) -> Result<Real> {
        self.moe.loss_and_grads(self.x, self.labels)
    }
}
