//! Accuracy, cost accounting, gate-weight and representation exports, and
//! the parameter-variation diagnostic.

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math;
use crate::models::{MoeModel, SplitModel};
use crate::snapshot::Snapshot;
use crate::tensor::Tensor;
use crate::Real;

/// Samples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 256;

/// How per-client accuracies are combined into the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AccuracyMean {
    /// Every client counts once.
    #[default]
    Unweighted,
    /// Clients weighted by test-set size.
    BySamples,
}

/// One row of `metrics.csv` plus the per-client detail behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: usize,
    /// Test accuracy (%) of every client, by client id.
    pub accuracies: Vec<Real>,
    pub mean_acc: Real,
    pub min_acc: Real,
    pub max_acc: Real,
    /// Mean training loss over the round's participants.
    pub mean_loss: Real,
    /// Parameters sent this round, both directions.
    pub params_tx: u64,
    pub params_tx_cum: u64,
    /// Training FLOPs this round, summed over participants.
    pub flops: u64,
    pub flops_cum: u64,
    /// `(client, |theta_t - theta_k_t|^2)` for each participant uploading an
    /// extractor.
    pub delta_sq: Vec<(usize, Real)>,
    /// Mean of `delta_sq`, 0 when empty.
    pub delta_sq_mean: Real,
}

/// Number of rows of `pred` whose argmax equals the label.
pub fn correct_predictions(pred: &Tensor, labels: &[usize]) -> usize {
    pred.argmax_rows().iter().zip(labels).filter(|(p, l)| p == l).count()
}

fn chunked(ds: &Dataset, mut f: impl FnMut(&Tensor, &[usize], usize) -> Result<()>) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    for (c, idx) in all.chunks(EVAL_CHUNK).enumerate() {
        let (x, y) = ds.batch(idx)?;
        f(&x, &y, c * EVAL_CHUNK)?;
    }
    Ok(())
}

fn percent(correct: usize, total: usize) -> Real {
    100.0 * correct as Real / total as Real
}

/// Eval-mode accuracy (%) of a mixture on `ds`.
pub fn accuracy_moe(moe: &MoeModel, ds: &Dataset) -> Result<Real> {
    let mut correct = 0;
    chunked(ds, |x, y, _| {
        correct += correct_predictions(&moe.infer(x)?.prediction, y);
        Ok(())
    })?;
    Ok(percent(correct, ds.len()))
}

/// Eval-mode accuracy (%) of a plain model on `ds`.
pub fn accuracy_split(model: &SplitModel, ds: &Dataset) -> Result<Real> {
    let mut correct = 0;
    chunked(ds, |x, y, _| {
        correct += correct_predictions(&model.predict(x)?, y);
        Ok(())
    })?;
    Ok(percent(correct, ds.len()))
}

/// Combines per-client accuracies; `sizes` are the test-set sizes.
pub fn mean_accuracy(accs: &[Real], sizes: &[usize], how: AccuracyMean) -> Real {
    if accs.is_empty() {
        return 0.0;
    }
    match how {
        AccuracyMean::Unweighted => accs.iter().sum::<Real>() / accs.len() as Real,
        AccuracyMean::BySamples => {
            let total: usize = sizes.iter().sum();
            accs.iter().zip(sizes).map(|(a, &n)| a * n as Real).sum::<Real>() / total as Real
        }
    }
}

/// First 1-based round whose mean accuracy reaches `target`.
pub fn rounds_to_target(mean_accs: &[Real], target: Real) -> Option<usize> {
    mean_accs.iter().position(|&a| a >= target).map(|i| i + 1)
}

pub fn comm_cost(rounds: u64, per_round_params: u64) -> u64 {
    rounds * per_round_params
}

pub fn comp_cost(rounds: u64, per_round_flops: u64) -> u64 {
    rounds * per_round_flops
}

/// Squared L2 distance between two snapshots of the same layout.
pub fn param_variation(a: &Snapshot, b: &Snapshot) -> Result<Real> {
    if !a.same_layout(b) {
        return Err(Error::invalid("param_variation: snapshot layouts differ"));
    }
    Ok(a.iter()
        .zip(b.iter())
        .flat_map(|((_, x), (_, y))| x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)))
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateRow {
    pub round: usize,
    pub client_id: usize,
    pub sample_index: usize,
    pub label: usize,
    /// Weight of the local expert; the global expert gets `1 - alpha_local`.
    pub alpha_local: Real,
}

/// Eval-mode gate weights for every sample of `ds`.
pub fn gate_weights(moe: &MoeModel, ds: &Dataset, round: usize, client_id: usize) -> Result<Vec<GateRow>> {
    let mut rows = Vec::with_capacity(ds.len());
    chunked(ds, |x, y, offset| {
        let alpha = moe.infer(x)?.alpha;
        for (i, &label) in y.iter().enumerate() {
            rows.push(GateRow {
                round,
                client_id,
                sample_index: offset + i,
                label,
                alpha_local: alpha.row(i)[1],
            });
        }
        Ok(())
    })?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationRow {
    pub client_id: usize,
    pub sample_index: usize,
    pub label: usize,
    /// Mixed representation `a_g * R_g + a_f * R_f`.
    pub values: Vec<Real>,
}

/// Eval-mode mixed representations for every sample of `ds`.
pub fn representations(moe: &MoeModel, ds: &Dataset, client_id: usize) -> Result<Vec<RepresentationRow>> {
    let mut rows = Vec::with_capacity(ds.len());
    chunked(ds, |x, y, offset| {
        let mixed = moe.infer(x)?.rep_mixed;
        for (i, &label) in y.iter().enumerate() {
            rows.push(RepresentationRow {
                client_id,
                sample_index: offset + i,
                label,
                values: mixed.row(i).to_vec(),
            });
        }
        Ok(())
    })?;
    Ok(rows)
}

/// Two-sample Kolmogorov-Smirnov statistic: the largest gap between the
/// empirical CDFs of `a` and `b`.
pub fn ks_statistic(a: &[Real], b: &[Real]) -> Result<Real> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("KS sample"));
    }
    let sorted = |s: &[Real]| {
        let mut v = s.to_vec();
        v.sort_by(|p, q| p.total_cmp(q));
        v
    };
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as Real, b.len() as Real);
    let (mut i, mut j, mut d): (usize, usize, Real) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as Real / na - j as Real / nb).abs());
    }
    Ok(d)
}

/// Population standard deviation.
pub fn std_dev(v: &[Real]) -> Real {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as Real;
    let mean = v.iter().sum::<Real>() / n;
    math::sqrt(v.iter().map(|x| (x - mean) * (x - mean)).sum::<Real>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_gating, CnnVariant, InputDims, REPRESENTATION_DIM};
    use crate::nn::{LayerKind, Network};
    use alloc::vec;

    const TOY: InputDims = InputDims {
        channels: 1,
        height: 16,
        width: 16,
    };

    fn toy_data(n: usize, seed: u64) -> Dataset {
        crate::data::gen_synthetic(2, TOY, n, 1.0, seed).unwrap()
    }

    fn toy_moe(seed: u64) -> MoeModel {
        let global = SplitModel::build(CnnVariant::Cnn5, TOY, 2, seed).unwrap().extractor;
        let local = SplitModel::build(CnnVariant::Cnn3, TOY, 2, seed + 1).unwrap();
        MoeModel::build(global, local, TOY, 8, seed).unwrap()
    }

    /// 2-class model on 1x1x2 inputs predicting class 0 iff x0 > x1.
    fn comparator() -> SplitModel {
        let mut extractor = Network::from_kinds(&[LayerKind::Flatten]);
        extractor.zero_grads();
        let mut header = Network::from_kinds(&[LayerKind::dense(2, 2), LayerKind::Softmax]);
        header.for_each_param_mut(|name, p| {
            if name == "0.weight" {
                p.value.data_mut().copy_from_slice(&[1.0, -1.0, -1.0, 1.0]);
            }
        });
        SplitModel { extractor, header }
    }

    #[test]
    fn accuracy_hand_scored() {
        let dims = InputDims::new(1, 1, 2);
        // x0 > x1 for samples 0, 2, 3
        let pixels = vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.5, 1.0, 0.0, 0.3, 0.4];
        let ds = Dataset::new(dims, pixels, vec![0, 1, 1, 0, 0], 2).unwrap();
        // right: 0, 1, 3; wrong: 2 (says 0), 4 (says 1)
        assert_eq!(accuracy_split(&comparator(), &ds).unwrap(), 60.0);
        let all_right = Dataset::new(dims, vec![0.9, 0.1, 0.2, 0.8], vec![0, 1], 2).unwrap();
        assert_eq!(accuracy_split(&comparator(), &all_right).unwrap(), 100.0);
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let pred = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.9, 0.1], vec![0.9, 0.1], vec![0.9, 0.1]]).unwrap();
        assert_eq!(percent(correct_predictions(&pred, &[0, 1, 0, 1]), 4), 50.0);
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let ds = toy_data(3, 0).subset(&[]);
        assert!(matches!(accuracy_moe(&toy_moe(0), &ds), Err(Error::Empty(_))));
    }

    #[test]
    fn evaluation_is_pure() {
        let moe = toy_moe(1);
        let ds = toy_data(20, 1);
        let before = moe.snapshot();
        let a = accuracy_moe(&moe, &ds).unwrap();
        assert_eq!(a, accuracy_moe(&moe, &ds).unwrap());
        assert_eq!(moe.snapshot(), before);
        assert!((0.0..=100.0).contains(&a));
    }

    #[test]
    fn means() {
        let accs = [50.0, 100.0, 75.0];
        assert_eq!(mean_accuracy(&accs, &[2, 2, 4], AccuracyMean::Unweighted), 75.0);
        assert_eq!(mean_accuracy(&accs, &[2, 2, 4], AccuracyMean::BySamples), 75.0);
        assert_eq!(mean_accuracy(&[0.0, 100.0], &[1, 3], AccuracyMean::BySamples), 75.0);
    }

    #[test]
    fn rounds_to_target_examples() {
        let h = [40.0, 60.0, 55.0, 70.0];
        assert_eq!(rounds_to_target(&h, 60.0), Some(2));
        assert_eq!(rounds_to_target(&h, 0.0), Some(1));
        assert_eq!(rounds_to_target(&h, 101.0), None);
    }

    #[test]
    fn cost_examples() {
        assert_eq!(comm_cost(20, 2 * 670_058), 26_802_320);
        assert_eq!(comm_cost(0, 2 * 670_058), 0);
        assert_eq!(comp_cost(3, 7), 21);
    }

    #[test]
    fn param_variation_examples() {
        let mut a = Snapshot::default();
        a.insert("w", Tensor::from_slice(&[1.0, 2.0]).unwrap());
        let mut b = Snapshot::default();
        b.insert("w", Tensor::from_slice(&[0.0, 0.0]).unwrap());
        assert_eq!(param_variation(&a, &b).unwrap(), 5.0);
        assert_eq!(param_variation(&a, &a).unwrap(), 0.0);
        let mut c = Snapshot::default();
        c.insert("v", Tensor::from_slice(&[0.0, 0.0]).unwrap());
        assert!(param_variation(&a, &c).is_err());
    }

    #[test]
    fn gate_rows_are_in_open_interval() {
        let moe = toy_moe(2);
        let ds = toy_data(10, 2);
        let rows = gate_weights(&moe, &ds, 4, 7).unwrap();
        assert_eq!(rows.len(), 20);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!((r.round, r.client_id, r.sample_index), (4, 7, i));
            assert_eq!(r.label, ds.labels()[i]);
            assert!(r.alpha_local > 0.0 && r.alpha_local < 1.0);
        }
    }

    #[test]
    fn zeroed_second_gate_layer_gives_half() {
        let mut moe = toy_moe(3);
        moe.gate = build_gating(TOY, 8, 3).unwrap();
        moe.gate.for_each_param_mut(|name, p| {
            if name == "5.weight" {
                p.value.fill(0.0);
            }
        });
        for r in gate_weights(&moe, &toy_data(5, 3), 1, 0).unwrap() {
            assert_eq!(r.alpha_local, 0.5);
        }
    }

    #[test]
    fn representation_rows() {
        let mut moe = toy_moe(4);
        let base = toy_data(3, 4);
        let ds = base.subset(&[0, 0, 5]);
        let rows = representations(&moe, &ds, 2).unwrap();
        assert!(rows.iter().all(|r| r.values.len() == REPRESENTATION_DIM));
        assert_eq!(rows[0].values, rows[1].values);
        moe.force_alpha(Some([1.0, 0.0])).unwrap();
        let rows = representations(&moe, &ds, 2).unwrap();
        let (x, _) = ds.batch(&[0, 1, 2]).unwrap();
        let global = moe.global_expert.infer(&x).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.values.as_slice(), global.row(i));
        }
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.5);
        assert!(ks_statistic(&[], &[1.0]).is_err());
    }

    #[test]
    fn std_dev_examples() {
        assert_eq!(std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), 2.0);
        assert_eq!(std_dev(&[]), 0.0);
    }
}
