use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::stream;

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Uniform init for weights, then jitter every parameter (including norm
/// scales, shifts and mixing logits) so no gradient is trivially symmetric.
fn randomized(kinds: &[LayerKind], seed: u64) -> Network {
    let mut rng = stream(seed, &[99]);
    let mut net = Network::from_kinds(kinds);
    net.init_uniform(&mut rng);
    for p in net.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    net
}

fn labels(n: usize, classes: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..classes)).collect()
}

#[test]
fn relu_and_softmax_examples() {
    let mut relu = Network::from_kinds(&[LayerKind::Relu]);
    let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(relu.forward(&x, Mode::Eval).unwrap().0.data(), &[0.0, 0.0, 2.0]);

    let sm = Network::from_kinds(&[LayerKind::Softmax]);
    let y = sm.infer(&Tensor::zeros(&[1, 2])).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5]);
}

#[test]
fn dense_sum_loss_gradient_is_input() {
    let mut rng = stream(1, &[]);
    let mut net = randomized(&[LayerKind::dense(4, 3)], 1);
    let x = random_tensor(&[1, 4], &mut rng);
    let (y, tape) = net.forward(&x, Mode::Train).unwrap();
    net.backward(&tape, &Tensor::full(y.shape(), 1.0)).unwrap();
    let w = net.named_params()[0].1;
    for o in 0..3 {
        assert_eq!(&w.grad.data()[o * 4..(o + 1) * 4], x.data());
    }
    assert_eq!(net.named_params()[1].1.grad.data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn zero_upstream_gradient_gives_zero_param_grads() {
    let mut rng = stream(2, &[]);
    let kinds = [
        LayerKind::conv5(1, 2),
        LayerKind::Relu,
        LayerKind::pool2(),
        LayerKind::Flatten,
        LayerKind::switch_norm(8),
        LayerKind::dense(8, 4),
        LayerKind::batch_norm(4),
        LayerKind::Sigmoid,
        LayerKind::dense(4, 3),
        LayerKind::Softmax,
    ];
    let mut net = randomized(&kinds, 2);
    let x = random_tensor(&[3, 1, 8, 8], &mut rng);
    let (y, tape) = net.forward(&x, Mode::Train).unwrap();
    let dx = net.backward(&tape, &Tensor::zeros(y.shape())).unwrap();
    assert!(dx.data().iter().all(|&v| v == 0.0));
    assert!(net.params().iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn gradients_accumulate_until_zeroed() {
    let mut rng = stream(3, &[]);
    let mut net = randomized(&[LayerKind::dense(3, 2), LayerKind::Softmax], 3);
    let x = random_tensor(&[2, 3], &mut rng);
    let run = |net: &mut Network| {
        let (y, tape) = net.forward(&x, Mode::Train).unwrap();
        let (_, g) = cross_entropy(&y, &[0, 1]).unwrap();
        net.backward(&tape, &g).unwrap();
    };
    run(&mut net);
    let once: Vec<Real> = net.params()[0].grad.data().to_vec();
    run(&mut net);
    for (a, b) in net.params()[0].grad.data().iter().zip(&once) {
        assert!((a - 2.0 * b).abs() < 1e-15);
    }
    net.zero_grads();
    assert!(net.params()[0].grad.data().iter().all(|&v| v == 0.0));
}

#[test]
fn stale_tape_is_rejected() {
    let mut net = randomized(&[LayerKind::dense(2, 2), LayerKind::Softmax], 4);
    let x = Tensor::full(&[1, 2], 0.5);
    let (y, tape) = net.forward(&x, Mode::Train).unwrap();
    let g = Tensor::zeros(y.shape());
    Sgd::new(0.1).unwrap().step(&mut net).unwrap();
    assert_eq!(net.backward(&tape, &g), Err(Error::TapeMismatch));
    let mut other = net.clone();
    let (_, tape) = net.forward(&x, Mode::Train).unwrap();
    assert_eq!(other.backward(&tape, &g), Err(Error::TapeMismatch));
    let (_, eval_tape) = net.forward(&x, Mode::Eval).unwrap();
    assert!(net.backward(&eval_tape, &g).is_err());
}

#[test]
fn shape_mismatch_is_reported() {
    let mut net = Network::from_kinds(&[LayerKind::dense(3, 2)]);
    let err = net.forward(&Tensor::zeros(&[1, 4]), Mode::Train).unwrap_err();
    assert!(matches!(err.root(), Error::ShapeMismatch { op: "dense", .. }));
}

#[test]
fn non_finite_intermediate_is_an_error() {
    let mut net = Network::from_kinds(&[LayerKind::dense(1, 1)]);
    net.params_mut()[0].value.data_mut()[0] = Real::MAX;
    let x = Tensor::full(&[1, 1], 10.0);
    assert!(matches!(net.infer(&x).unwrap_err().root(), Error::NonFinite { .. }));
}

#[test]
fn grad_check_dense_softmax_seed0() {
    let mut rng = stream(0, &[1]);
    let mut net = randomized(&[LayerKind::dense(6, 4), LayerKind::Softmax], 0);
    let x = random_tensor(&[5, 6], &mut rng);
    let y = labels(5, 4, &mut rng);
    let err = grad_check(&mut net, &x, &y, 1e-5).unwrap().max_error;
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn grad_check_all_zero_parameters() {
    let mut net = Network::from_kinds(&[LayerKind::dense(4, 3), LayerKind::dense(3, 3), LayerKind::Softmax]);
    let x = Tensor::new(vec![2, 4], vec![0.5, -1.0, 0.25, 2.0, 1.0, 0.0, -0.5, 0.75]).unwrap();
    let err = grad_check(&mut net, &x, &[0, 2], 1e-5).unwrap().max_error;
    assert!(err < 1e-8, "max relative error {err}");
}

#[test]
fn grad_check_two_layer_network() {
    let mut rng = stream(11, &[]);
    let mut net = randomized(&[LayerKind::dense(5, 7), LayerKind::Sigmoid, LayerKind::dense(7, 3), LayerKind::Softmax], 11);
    let x = random_tensor(&[4, 5], &mut rng);
    let y = labels(4, 3, &mut rng);
    let err = grad_check(&mut net, &x, &y, 1e-5).unwrap().max_error;
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn grad_check_skips_coordinates_straddling_a_relu_kink() {
    let mut net = Network::from_kinds(&[
        LayerKind::Dense {
            input: 1,
            output: 2,
            bias: false,
        },
        LayerKind::Relu,
        LayerKind::dense(2, 2),
        LayerKind::Softmax,
    ]);
    net.for_each_param_mut(|name, p| {
        let v: &[Real] = match name {
            "0.weight" => &[-1e-7, 0.5],
            "2.weight" => &[0.3, -0.2, 0.1, 0.4],
            _ => &[0.0, 0.0],
        };
        p.value.data_mut().copy_from_slice(v);
    });
    let report = grad_check(&mut net, &Tensor::full(&[1, 1], 1.0), &[1], 1e-5).unwrap();
    assert_eq!(report.kinks, 1);
    assert_eq!(report.checked, 7);
    assert!(report.max_error < 1e-8, "{report:?}");
}

#[test]
fn grad_check_rejects_bad_step_and_large_networks() {
    let mut net = Network::from_kinds(&[LayerKind::dense(2, 2), LayerKind::Softmax]);
    let x = Tensor::zeros(&[1, 2]);
    assert!(matches!(grad_check(&mut net, &x, &[0], 0.0), Err(Error::Invalid(_))));
    let mut big = Network::from_kinds(&[LayerKind::dense(400, 300), LayerKind::Softmax]);
    assert!(matches!(
        grad_check(&mut big, &Tensor::zeros(&[1, 400]), &[0], 1e-5),
        Err(Error::TooLarge { params: 120_300, .. })
    ));
}

/// One small network per layer kind; each ends in softmax so the
/// cross-entropy loss applies.
fn per_kind_cases() -> Vec<(&'static str, Vec<LayerKind>, Vec<usize>)> {
    vec![
        ("dense", vec![LayerKind::dense(5, 4), LayerKind::Softmax], vec![5]),
        (
            "conv2d",
            vec![
                LayerKind::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerKind::Flatten,
                LayerKind::dense(27, 3),
                LayerKind::Softmax,
            ],
            vec![2, 5, 5],
        ),
        (
            "maxpool2d",
            vec![
                LayerKind::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 2,
                    stride: 1,
                    padding: 0,
                },
                LayerKind::pool2(),
                LayerKind::Flatten,
                LayerKind::dense(8, 3),
                LayerKind::Softmax,
            ],
            vec![1, 5, 5],
        ),
        ("flatten", vec![LayerKind::Flatten, LayerKind::dense(12, 3), LayerKind::Softmax], vec![3, 2, 2]),
        ("relu", vec![LayerKind::dense(5, 6), LayerKind::Relu, LayerKind::dense(6, 3), LayerKind::Softmax], vec![5]),
        ("sigmoid", vec![LayerKind::dense(5, 6), LayerKind::Sigmoid, LayerKind::dense(6, 3), LayerKind::Softmax], vec![5]),
        ("softmax", vec![LayerKind::dense(4, 3), LayerKind::Softmax], vec![4]),
        (
            "batchnorm",
            vec![
                LayerKind::Dense {
                    input: 5,
                    output: 4,
                    bias: false,
                },
                LayerKind::batch_norm(4),
                LayerKind::dense(4, 3),
                LayerKind::Softmax,
            ],
            vec![5],
        ),
        ("switchnorm", vec![LayerKind::switch_norm(6), LayerKind::dense(6, 3), LayerKind::Softmax], vec![6]),
    ]
}

#[test]
fn every_layer_kind_passes_grad_check_over_ten_seeds() {
    for (name, kinds, dims) in per_kind_cases() {
        for seed in 0..10 {
            let mut rng = stream(seed, &[7]);
            let mut net = randomized(&kinds, seed + 100);
            let mut shape = vec![6];
            shape.extend_from_slice(&dims);
            let x = random_tensor(&shape, &mut rng);
            let y = labels(6, 3.min(net.output_dims(&dims).unwrap()[0]), &mut rng);
            let report = grad_check(&mut net, &x, &y, 1e-5).unwrap();
            assert!(report.checked > 0 && report.kinks * 20 <= report.checked, "{name} seed {seed}: {report:?}");
            assert!(report.max_error < 1e-5, "{name} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn grad_check_leaves_running_stats_untouched() {
    let mut rng = stream(5, &[]);
    let mut net = randomized(&[LayerKind::switch_norm(4), LayerKind::dense(4, 2), LayerKind::Softmax], 5);
    let before = net.snapshot();
    let x = random_tensor(&[5, 4], &mut rng);
    grad_check(&mut net, &x, &[0, 1, 0, 1, 1], 1e-5).unwrap();
    assert_eq!(net.snapshot(), before);
}

#[test]
fn batchnorm_train_output_is_standardized() {
    let mut rng = stream(6, &[]);
    let mut net = Network::from_kinds(&[LayerKind::batch_norm(3)]);
    let mut x = random_tensor(&[16, 3], &mut rng);
    for v in x.data_mut() {
        *v = *v * 4.0 + 7.0;
    }
    let (y, _) = net.forward(&x, Mode::Train).unwrap();
    for j in 0..3 {
        let col: Vec<Real> = (0..16).map(|b| y.row(b)[j]).collect();
        let mean = col.iter().sum::<Real>() / 16.0;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / 16.0;
        assert!(mean.abs() < 1e-7, "mean {mean}");
        // eps shrinks the variance slightly below one
        assert!((var - 1.0).abs() < 1e-6 * 16.0 / 3.0 + 1e-5, "var {var}");
    }
    // running stats moved toward the batch statistics
    let rm = net.snapshot().get("0.running_mean").unwrap().data().to_vec();
    assert!(rm.iter().all(|&m| m > 0.5));
}

#[test]
fn eval_forward_is_pure_and_repeatable() {
    let mut rng = stream(8, &[]);
    let kinds = [LayerKind::switch_norm(4), LayerKind::dense(4, 3), LayerKind::batch_norm(3), LayerKind::Softmax];
    let mut net = randomized(&kinds, 8);
    let warm = random_tensor(&[6, 4], &mut rng);
    net.forward(&warm, Mode::Train).unwrap();
    let before = net.snapshot();
    let x = random_tensor(&[3, 4], &mut rng);
    let a = net.forward(&x, Mode::Eval).unwrap().0;
    let b = net.forward(&x, Mode::Eval).unwrap().0;
    assert_eq!(a, b);
    assert_eq!(net.snapshot(), before);
}

#[test]
fn single_sample_batch_skips_running_update() {
    let mut net = Network::from_kinds(&[LayerKind::batch_norm(2)]);
    let before = net.snapshot();
    let (y, _) = net.forward(&Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap(), Mode::Train).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0]);
    assert_eq!(net.snapshot(), before);
}

#[test]
fn snapshot_roundtrip_through_network() {
    let a = randomized(&[LayerKind::dense(3, 2), LayerKind::batch_norm(2)], 9);
    let mut b = Network::from_kinds(&a.kinds());
    b.load_snapshot(&a.snapshot()).unwrap();
    assert_eq!(a.snapshot(), b.snapshot());
    let mut wrong = Network::from_kinds(&[LayerKind::dense(3, 3), LayerKind::batch_norm(3)]);
    assert!(wrong.load_snapshot(&a.snapshot()).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 4), 1..8)) {
        let rows: Vec<Vec<Real>> = rows.into_iter().map(|r| r.into_iter().map(|v| v as Real).collect()).collect();
        let y = softmax_rows(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for b in 0..y.batch() {
            let s: Real = y.row(b).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(y.row(b).iter().all(|&v| v >= 0.0));
        }
    }
}
