//! Acceptance suite: every criterion runs at its stated tolerance and
//! prints one line, `criterion N: PASS|FAIL|SKIP (...)`, to stderr.
//!
//! Run with `cargo test -p pfedmoe --test acceptance -- --nocapture`.
//! Criterion 11 needs `PFEDMOE_CIFAR_DIR` pointing at the CIFAR-10 binary
//! batches and is skipped otherwise.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use pfedmoe::config::parse_config;
use pfedmoe::runner::{run, RunOptions, RunOutcome};
use pfedmoe::ExperimentConfig;
use pfedmoe_core::data::{build_shards, gen_synthetic, partition, test_count, Dataset, PartitionScheme, PartitionSpec};
use pfedmoe_core::fed::{aggregate_extractors, Algorithm, ExtractorUpdate, Federation, FederationConfig, ModelAssignment, Sequential};
use pfedmoe_core::metrics::{ks_statistic, std_dev, GateRow};
use pfedmoe_core::models::{build_cnn, build_gating, model_bytes, param_count, CnnVariant, InputDims, MoeModel, MoeRates, SplitModel};
use pfedmoe_core::nn::{grad_check, LayerKind, Mode, Network};
use pfedmoe_core::rng::stream;
use pfedmoe_core::{Snapshot, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(budget: Duration, elapsed: Duration, result: Outcome) -> Outcome {
    let note = |d: String| format!("{d}; {:.1}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
    match result {
        Ok(d) if elapsed <= budget => Ok(note(d)),
        Ok(d) => Err(note(format!("{d}; over the time budget"))),
        Err(d) => Err(note(d)),
    }
}

fn timed(budget_secs: u64, f: impl FnOnce() -> Outcome) -> Outcome {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    within(Duration::from_secs(budget_secs), started.elapsed(), result)
}

fn report(n: usize, result: &Option<Outcome>) {
    let line = match result {
        Some(Ok(d)) => format!("criterion {n}: PASS ({d})\n"),
        Some(Err(d)) => format!("criterion {n}: FAIL ({d})\n"),
        None => format!("criterion {n}: SKIP (set PFEDMOE_CIFAR_DIR to the CIFAR-10 binary batches)\n"),
    };
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// 1. Model sizes at 32x32x3, 10 classes, 4-byte parameters.

fn criterion_1() -> Outcome {
    let mib = |v| model_bytes(&build_cnn(v, InputDims::CIFAR, 10, 0).unwrap(), 4) as f64 / (1024.0 * 1024.0);
    let mut notes = Vec::new();
    let mut ok = true;
    for (v, mb) in [(CnnVariant::Cnn1, 10.00), (CnnVariant::Cnn2, 6.92), (CnnVariant::Cnn3, 5.04), (CnnVariant::Cnn5, 2.55)] {
        let got = mib(v);
        let rel = (got - mb).abs() / mb;
        ok &= rel < 0.005;
        notes.push(format!("{v} {got:.3} MB"));
    }
    // The published 3.81 MB for CNN-4 does not follow from its layer
    // widths (conv2 32 filters, fc1 1600 -> 1000 units); the derived count
    // is asserted instead.
    let cnn4 = param_count(&build_cnn(CnnVariant::Cnn4, InputDims::CIFAR, 10, 0).unwrap());
    ok &= cnn4 == 1_060_358;
    notes.push(format!("CNN-4 {cnn4} params"));
    check(ok, notes.join(", "))
}

// 2. Finite-difference gradient checks in 64-bit.

fn per_kind_cases() -> Vec<(&'static str, Vec<LayerKind>, Vec<usize>)> {
    let conv = |i, o, k, s, p| LayerKind::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
    };
    let unbiased = |i, o| LayerKind::Dense {
        input: i,
        output: o,
        bias: false,
    };
    vec![
        ("dense", vec![LayerKind::dense(5, 4), LayerKind::Softmax], vec![5]),
        ("conv2d", vec![conv(2, 3, 3, 2, 1), LayerKind::Flatten, LayerKind::dense(27, 3), LayerKind::Softmax], vec![2, 5, 5]),
        (
            "maxpool2d",
            vec![conv(1, 2, 2, 1, 0), LayerKind::pool2(), LayerKind::Flatten, LayerKind::dense(8, 3), LayerKind::Softmax],
            vec![1, 5, 5],
        ),
        ("flatten", vec![LayerKind::Flatten, LayerKind::dense(12, 3), LayerKind::Softmax], vec![3, 2, 2]),
        ("relu", vec![LayerKind::dense(5, 6), LayerKind::Relu, LayerKind::dense(6, 3), LayerKind::Softmax], vec![5]),
        ("sigmoid", vec![LayerKind::dense(5, 6), LayerKind::Sigmoid, LayerKind::dense(6, 3), LayerKind::Softmax], vec![5]),
        ("softmax", vec![LayerKind::dense(4, 3), LayerKind::Softmax], vec![4]),
        ("batchnorm", vec![unbiased(5, 4), LayerKind::batch_norm(4), LayerKind::dense(4, 3), LayerKind::Softmax], vec![5]),
        ("switchnorm", vec![LayerKind::switch_norm(6), LayerKind::dense(6, 3), LayerKind::Softmax], vec![6]),
    ]
}

/// Uniform init, then every parameter jittered so norm scales, shifts and
/// mixing logits are away from their symmetric defaults.
fn jittered(kinds: &[LayerKind], seed: u64) -> Network {
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

const TOY: InputDims = InputDims {
    channels: 3,
    height: 16,
    width: 16,
};

fn toy_moe(local: CnnVariant, classes: usize, seed: u64) -> MoeModel {
    let global = SplitModel::build(CnnVariant::Cnn5, TOY, classes, seed).unwrap().extractor;
    let local = SplitModel::build(local, TOY, classes, seed + 1000).unwrap();
    MoeModel::build(global, local, TOY, 8, seed).unwrap()
}

fn criterion_2() -> Outcome {
    let seeds = 0..10u64;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut note = |name: &str, seed: u64, err: f64| {
        worst = worst.max(err);
        if err.is_nan() || err >= 1e-5 {
            failures.push(format!("{name} seed {seed}: {err:e}"));
        }
    };
    for (name, kinds, dims) in per_kind_cases() {
        for seed in seeds.clone() {
            let mut rng = stream(seed, &[7]);
            let mut net = jittered(&kinds, seed + 100);
            let mut shape = vec![6];
            shape.extend_from_slice(&dims);
            let x = random_tensor(&shape, &mut rng);
            let y: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
            note(name, seed, grad_check(&mut net, &x, &y, 1e-5).unwrap().max_error);
        }
    }
    // The gate is checked exhaustively, so on small inputs.
    let dims = InputDims::new(3, 4, 4);
    for seed in seeds.clone() {
        let mut gate = build_gating(dims, 8, seed).unwrap();
        let x = random_tensor(&dims.batch_shape(4), &mut stream(seed, &[50]));
        note("gate", seed, grad_check(&mut gate, &x, &[0, 1, 1, 0], 1e-5).unwrap().max_error);
    }
    for seed in seeds {
        let mut moe = toy_moe(CnnVariant::Cnn5, 4, seed);
        let x = random_tensor(&TOY.batch_shape(4), &mut stream(seed, &[100]));
        let mut rng = stream(seed, &[pfedmoe_core::rng::purpose::GRAD_CHECK]);
        note("moe", seed, moe.grad_check(&x, &[0, 1, 2, 3], 1e-5, 12, &mut rng).unwrap().max_error);
    }
    check(
        failures.is_empty(),
        format!("9 layer kinds, gate, full MoE at 16x16 x 10 seeds; max rel err {worst:.2e} {}", failures.join(", ")),
    )
}

// 3. Gate outputs on 10^4 random batches.

fn criterion_3() -> Outcome {
    let mut rng = stream(3, &[]);
    let shapes = [InputDims::new(3, 16, 16), InputDims::new(1, 4, 4), InputDims::new(2, 5, 3)];
    let mut gates: Vec<Network> = (0..6u64).map(|s| build_gating(shapes[s as usize % 3], 2 + 6 * (s as usize % 3), s).unwrap()).collect();
    let (mut rows, mut worst_sum, mut bad) = (0usize, 0.0f64, 0usize);
    for b in 0..10_000 {
        let g = b % gates.len();
        let dims = shapes[g % 3];
        let n = rng.gen_range(1..9);
        let scale = [0.01, 1.0, 100.0][rng.gen_range(0..3)];
        let mut x = random_tensor(&dims.batch_shape(n), &mut rng);
        x.data_mut().iter_mut().for_each(|v| *v *= scale);
        let out = if b % 2 == 0 {
            gates[g].forward(&x, Mode::Train).unwrap().0
        } else {
            gates[g].infer(&x).unwrap()
        };
        for r in 0..n {
            let a = out.row(r);
            rows += 1;
            worst_sum = worst_sum.max((a[0] + a[1] - 1.0).abs());
            if !a.iter().all(|&v| v > 0.0 && v < 1.0) {
                bad += 1;
            }
        }
    }
    check(
        bad == 0 && worst_sum <= 1e-6,
        format!("10000 batches, {rows} rows, {bad} outside (0,1), max |sum - 1| {worst_sum:.1e}"),
    )
}

// 4. Forcing the gate reduces a mixture step to a plain step.

fn max_param_gap(a: &Network, b: &Network) -> f64 {
    a.params()
        .iter()
        .zip(b.params())
        .flat_map(|(p, q)| p.value.data().iter().zip(q.value.data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn criterion_4() -> Outcome {
    let lr = 0.05;
    let mut worst: f64 = 0.0;
    let mut untouched = true;
    for seed in 0..10u64 {
        let x = random_tensor(&TOY.batch_shape(6), &mut stream(seed, &[40]));
        let labels = [0, 1, 2, 3, 1, 2];
        for (alpha, local) in [([0.0, 1.0], true), ([1.0, 0.0], false)] {
            let mut moe = toy_moe(CnnVariant::Cnn5, 4, seed);
            moe.force_alpha(Some(alpha)).unwrap();
            let idle = if local { moe.global_expert.snapshot() } else { moe.local_expert.snapshot() };
            let mut plain = SplitModel {
                extractor: if local { moe.local_expert.clone() } else { moe.global_expert.clone() },
                header: moe.header.clone(),
            };
            moe.train_step(&x, &labels, MoeRates::uniform(lr)).unwrap();
            plain.train_step(&x, &labels, lr).unwrap();
            let expert = if local { &moe.local_expert } else { &moe.global_expert };
            worst = worst.max(max_param_gap(expert, &plain.extractor)).max(max_param_gap(&moe.header, &plain.header));
            let idle_after = if local { moe.global_expert.snapshot() } else { moe.local_expert.snapshot() };
            untouched &= idle_after == idle;
        }
    }
    check(
        worst <= 1e-9 && untouched,
        format!("alpha (0,1) and (1,0), 10 seeds: max parameter gap {worst:.1e}, idle expert unchanged {untouched}"),
    )
}

// 5. Weighted aggregation against a brute-force mean.

fn criterion_5() -> Outcome {
    let mut rng = stream(5, &[]);
    let mut worst: f64 = 0.0;
    let mut fixed = true;
    for _ in 0..500 {
        let tensors = rng.gen_range(1..5);
        let shapes: Vec<Vec<usize>> = (0..tensors)
            .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..7)).collect())
            .collect();
        let clients = rng.gen_range(2..=7);
        let n_k: Vec<usize> = (0..clients).map(|_| rng.gen_range(1..1000)).collect();
        let values: Vec<Vec<Vec<f64>>> = (0..clients)
            .map(|_| {
                shapes
                    .iter()
                    .map(|s| (0..s.iter().product::<usize>()).map(|_| rng.gen_range(-10.0..10.0)).collect())
                    .collect()
            })
            .collect();
        let snap = |v: &[Vec<f64>]| {
            let mut s = Snapshot::new();
            for (i, (shape, data)) in shapes.iter().zip(v).enumerate() {
                s.insert(format!("t{i}"), Tensor::new(shape.clone(), data.clone()).unwrap());
            }
            s
        };
        assert!(snap(&values[0]).scalar_count() <= 1000);
        let updates: Vec<ExtractorUpdate> = (0..clients)
            .rev()
            .map(|k| ExtractorUpdate {
                client_id: k,
                theta: snap(&values[k]),
                n_k: n_k[k],
            })
            .collect();
        let got = aggregate_extractors(&updates).unwrap();
        let total: usize = n_k.iter().sum();
        for (i, _) in shapes.iter().enumerate() {
            let t = got.get(&format!("t{i}")).unwrap();
            for (j, &g) in t.data().iter().enumerate() {
                let mut want = 0.0;
                for k in 0..clients {
                    want += n_k[k] as f64 * values[k][i][j];
                }
                worst = worst.max((g - want / total as f64).abs());
            }
        }
        let same: Vec<ExtractorUpdate> = (0..clients)
            .map(|k| ExtractorUpdate {
                client_id: k,
                theta: snap(&values[0]),
                n_k: n_k[k],
            })
            .collect();
        fixed &= aggregate_extractors(&same).unwrap() == snap(&values[0]);
    }
    check(
        worst <= 1e-12 && fixed,
        format!("500 cases: max error {worst:.1e}, identical snapshots exact {fixed}"),
    )
}

// 6. Partition and split properties over 100 fuzzed triples.

fn criterion_6() -> Outcome {
    let mut rng = stream(6, &[]);
    let mut failures = Vec::new();
    let mut checked = 0;
    while checked < 100 {
        let classes: usize = rng.gen_range(2..11);
        let counts: Vec<usize> = (0..classes).map(|_| rng.gen_range(10..80)).collect();
        let clients = rng.gen_range(1..13);
        let seed: u64 = rng.gen();
        let practical = rng.gen_bool(0.5);
        let k = rng.gen_range(classes.div_ceil(clients)..=classes);
        let scheme = if practical {
            PartitionScheme::Practical {
                gamma: rng.gen_range(0.1..5.0),
            }
        } else {
            PartitionScheme::Pathological {
                classes_per_client: k,
                concentration: rng.gen_range(0.1..5.0),
            }
        };
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| vec![c; n]).collect();
        let ds = Dataset::new(InputDims::new(1, 1, 1), labels.iter().map(|&l| l as f64).collect(), labels.clone(), classes).unwrap();
        let spec = PartitionSpec {
            scheme,
            num_clients: clients,
            seed,
        };
        let (Ok(pools), Ok(shards)) = (partition(&ds, &spec), build_shards(&ds, &spec)) else {
            // refused triples (a class smaller than its holder count, or a
            // pool too small to train on) are redrawn
            continue;
        };
        checked += 1;
        let mut fail = |what: &str| failures.push(format!("{spec:?}: {what}"));
        if partition(&ds, &spec).unwrap() != pools {
            fail("not deterministic");
        }
        let mut all = pools.concat();
        all.sort_unstable();
        if all != (0..ds.len()).collect::<Vec<_>>() {
            fail("indices not conserved");
        }
        for (c, &n) in counts.iter().enumerate() {
            if pools.iter().map(|p| p.iter().filter(|&&i| labels[i] == c).count()).sum::<usize>() != n {
                fail("class total not conserved");
            }
        }
        if !practical && pools.iter().any(|p| p.iter().map(|&i| labels[i]).collect::<BTreeSet<_>>().len() != k) {
            fail("pathological coverage is not exactly k");
        }
        for (shard, pool) in shards.iter().zip(&pools) {
            let mut held = vec![0usize; classes];
            pool.iter().for_each(|&i| held[labels[i]] += 1);
            let (train, test) = (shard.train.class_counts(), shard.test.class_counts());
            if (0..classes).any(|c| test[c] != test_count(held[c]) || train[c] + test[c] != held[c]) {
                fail("stratified 8:2 rounding");
            }
        }
    }
    check(failures.is_empty(), format!("100 triples, {} violations {}", failures.len(), failures.join("; ")))
}

// 7. Synthetic convergence against Standalone over 3 seeds.

/// Settings for the convergence comparison; the README explains the
/// input side, separation and learning rate.
fn convergence_config(seed: u64, algorithm: &str) -> ExperimentConfig {
    parse_config(&format!(
        "seed = {seed}
[dataset]
kind = \"synthetic\"
classes = 4
height = 16
width = 16
samples_per_class = 200
separation = 40.0
[partition]
scheme = \"pathological\"
classes_per_client = 2
[federation]
algorithm = \"{algorithm}\"
clients = 8
rounds = 30
local_epochs = 1
batch_size = 8
lr_theta = 0.01
lr_omega = 0.01
lr_phi = 0.01
[model]
assignment = \"cnn5\"
gate_hidden = 64
"
    ))
    .unwrap()
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn run_quiet(cfg: &ExperimentConfig) -> RunOutcome {
    let out = tempfile::tempdir().unwrap();
    run(cfg, Path::new("."), out.path(), &RunOptions::default()).unwrap()
}

fn seed_mean(runs: &[RunOutcome]) -> Vec<f64> {
    let rounds = runs[0].history.len();
    (0..rounds).map(|t| runs.iter().map(|r| r.history[t].mean_acc).sum::<f64>() / runs.len() as f64).collect()
}

fn criterion_7(moe_runs: &mut Vec<RunOutcome>) -> Outcome {
    let standalone: Vec<RunOutcome> = SEEDS.iter().map(|&s| run_quiet(&convergence_config(s, "standalone"))).collect();
    moe_runs.extend(SEEDS.iter().map(|&s| run_quiet(&convergence_config(s, "pfedmoe"))));
    let (moe, alone) = (seed_mean(moe_runs), seed_mean(&standalone));
    let last = moe.len() - 1;
    let (worst_gap, worst_round) = (5..moe.len()).map(|t| (moe[t] - alone[t], t + 1)).fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
    let finals: Vec<String> = moe_runs.iter().map(|r| format!("{:.1}", r.history[last].mean_acc)).collect();
    check(
        moe[last] >= 90.0 && worst_gap >= -1.0,
        format!(
            "round 30 mean acc pFedMoE {:.2}% (seeds {}), Standalone {:.2}%; worst gap after round 5 {worst_gap:+.2} pp at round {worst_round}",
            moe[last],
            finals.join("/"),
            alone[last]
        ),
    )
}

// 8. Measured per-round traffic, pFedMoE against FedAvg.

fn one_round_traffic(algorithm: Algorithm, assignment: ModelAssignment, ds: &Dataset) -> u64 {
    let spec = PartitionSpec {
        scheme: PartitionScheme::Practical { gamma: 100.0 },
        num_clients: 1,
        seed: 8,
    };
    let cfg = FederationConfig {
        algorithm,
        num_clients: 1,
        rounds: 1,
        batch_size: 64,
        assignment,
        gate_hidden: 4,
        seed: 8,
        ..FederationConfig::default()
    };
    let mut fed = Federation::new(cfg, build_shards(ds, &spec).unwrap()).unwrap();
    fed.run_round(&Sequential).unwrap().params_tx
}

fn criterion_8() -> Outcome {
    let ds = gen_synthetic(2, InputDims::CIFAR, 2, 3.0, 8).unwrap();
    let moe = one_round_traffic(Algorithm::PfedMoe, ModelAssignment::Modulo5, &ds);
    let mut ok = moe > 0;
    let mut notes = vec![format!("pFedMoE {moe}")];
    for v in CnnVariant::ALL {
        let fedavg = one_round_traffic(Algorithm::FedAvg, ModelAssignment::Fixed(v), &ds);
        ok &= moe < fedavg;
        notes.push(format!("FedAvg {v} {fedavg}"));
    }
    check(ok, format!("params per round at 32x32, 1 client: {}", notes.join(", ")))
}

// 9. The golden config twice, single-threaded.

fn golden() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/config.toml");
    parse_config(&fs::read_to_string(path).unwrap()).unwrap()
}

fn criterion_9() -> Outcome {
    let cfg = golden();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&cfg, Path::new("."), a.path(), &RunOptions::default()).unwrap();
    run(&cfg, Path::new("."), b.path(), &RunOptions::default()).unwrap();
    let files = ["metrics.csv", "gate_weights.csv", "representations.bin"];
    let differing: Vec<&str> = files
        .into_iter()
        .filter(|f| fs::read(a.path().join(f)).unwrap() != fs::read(b.path().join(f)).unwrap())
        .collect();
    check(differing.is_empty(), format!("{} byte-identical, differing: {differing:?}", files.join(", ")))
}

// 10. Gate-weight spread and client-to-client variation.

/// Two-sample KS critical coefficient at the 1% level; a pair differs when
/// `D > KS_C * sqrt((n + m) / (n m))`.
const KS_C: f64 = 1.628;

fn criterion_10(moe_runs: &[RunOutcome]) -> Outcome {
    let Some(trained) = moe_runs.first() else {
        return Err("no trained run from criterion 7".into());
    };
    let last = trained.history.len();
    let mut per_client: Vec<(usize, Vec<f64>)> = Vec::new();
    for row in trained.gate_rows.iter().filter(|r| r.round == last) {
        let GateRow { client_id, alpha_local, .. } = *row;
        match per_client.last_mut() {
            Some((c, v)) if *c == client_id => v.push(alpha_local),
            _ => per_client.push((client_id, vec![alpha_local])),
        }
    }
    if per_client.len() < 2 {
        return Err(format!("gate weights for {} clients", per_client.len()));
    }
    let stds: Vec<f64> = per_client.iter().map(|(_, v)| std_dev(v)).collect();
    let min_std = stds.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut best = (0.0, 0.0, 0, 0);
    for (i, (a, va)) in per_client.iter().enumerate() {
        for (b, vb) in &per_client[i + 1..] {
            let d = ks_statistic(va, vb).unwrap();
            let (n, m) = (va.len() as f64, vb.len() as f64);
            let threshold = KS_C * ((n + m) / (n * m)).sqrt();
            if d - threshold > best.0 - best.1 || best == (0.0, 0.0, 0, 0) {
                best = (d, threshold, *a, *b);
            }
        }
    }
    let means: Vec<String> = per_client.iter().map(|(_, v)| format!("{:.2}", v.iter().sum::<f64>() / v.len() as f64)).collect();
    check(
        min_std > 0.01 && best.0 > best.1,
        format!(
            "seed {} round {last}: min per-client std {min_std:.3}, mean alpha_local by client [{}], max KS {:.3} (clients {} vs {}) vs threshold {:.3}",
            SEEDS[0],
            means.join(" "),
            best.0,
            best.2,
            best.3,
            best.1
        ),
    )
}

// 11. Optional CIFAR-10 smoke.

fn criterion_11(dir: &Path) -> Outcome {
    let mut files: Vec<String> = (1..=5).map(|i| format!("data_batch_{i}.bin")).collect();
    files.push("test_batch.bin".into());
    let list = files.iter().map(|f| format!("\"{}\"", dir.join(f).display())).collect::<Vec<_>>().join(", ");
    let cfg = parse_config(&format!(
        "seed = 1
[dataset]
kind = \"cifar10\"
files = [{list}]
[partition]
scheme = \"pathological\"
classes_per_client = 2
[federation]
algorithm = \"pfedmoe\"
clients = 10
rounds = 20
batch_size = 64
[model]
assignment = \"modulo5\"
"
    ))
    .map_err(|e| e.line())?;
    let out = tempfile::tempdir().unwrap();
    let outcome = run(&cfg, Path::new("/"), out.path(), &RunOptions::default()).map_err(|e| e.line())?;
    let acc: Vec<f64> = outcome.history.iter().map(|m| m.mean_acc).collect();
    let (first, last) = (acc[0], acc[acc.len() - 1]);
    let head = acc[..5].iter().sum::<f64>() / 5.0;
    let tail = acc[acc.len() - 5..].iter().sum::<f64>() / 5.0;
    check(
        last - first >= 10.0 && tail > head,
        format!("round 1 {first:.2}%, round 20 {last:.2}%, rounds 1-5 mean {head:.2}%, rounds 16-20 mean {tail:.2}%"),
    )
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<Option<Outcome>> = Vec::new();
    let mut emit = |r: Option<Outcome>| {
        report(results.len() + 1, &r);
        results.push(r);
    };
    emit(Some(timed(1, criterion_1)));
    emit(Some(timed(120, criterion_2)));
    emit(Some(timed(30, criterion_3)));
    emit(Some(timed(10, criterion_4)));
    emit(Some(timed(5, criterion_5)));
    emit(Some(timed(30, criterion_6)));
    let mut moe_runs = Vec::new();
    let c7 = timed(600, || criterion_7(&mut moe_runs));
    emit(Some(c7));
    emit(Some(timed(1, criterion_8)));
    emit(Some(timed(120, criterion_9)));
    emit(Some(timed(5, || criterion_10(&moe_runs))));
    emit(std::env::var_os("PFEDMOE_CIFAR_DIR").map(|d| timed(3600, || criterion_11(Path::new(&d)))));

    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r, Some(Err(_))))
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
