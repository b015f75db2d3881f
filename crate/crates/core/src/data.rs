//! Datasets, non-IID partitioning and per-client train/test splits.
//!
//! Partitioners return index pools into the source dataset; the pools of
//! one partition are pairwise disjoint and cover every sample.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::models::InputDims;
use crate::rng::{purpose, stream};
use crate::tensor::Tensor;
use crate::Real;

/// Bytes per CIFAR-10 record: one label byte and 32*32*3 pixels.
pub const CIFAR10_RECORD: usize = 1 + 3072;

/// Re-draws allowed before a partitioner gives up.
pub const MAX_PARTITION_ATTEMPTS: u64 = 100;

/// Default Dirichlet concentration for per-class counts in the
/// pathological scheme.
pub const DEFAULT_COUNT_CONCENTRATION: Real = 0.5;

/// Labelled images stored row-major as `[n, c, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dims: InputDims,
    pixels: Vec<Real>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(dims: InputDims, pixels: Vec<Real>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dims.flat() == 0 || num_classes == 0 {
            return Err(Error::invalid("dataset needs non-empty samples and at least one class"));
        }
        if pixels.len() != labels.len() * dims.flat() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                expected: dims.batch_shape(labels.len()),
                found: vec![pixels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes: num_classes });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("dataset pixels"));
        }
        Ok(Dataset {
            dims,
            pixels,
            labels,
            num_classes,
        })
    }

    pub fn dims(&self) -> InputDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[Real] {
        &self.pixels
    }

    pub fn sample(&self, i: usize) -> &[Real] {
        let d = self.dims.flat();
        &self.pixels[i * d..(i + 1) * d]
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.dims.flat());
        for &i in indices {
            pixels.extend_from_slice(self.sample(i));
        }
        Dataset {
            dims: self.dims,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Images and labels at `indices` as a network input batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let sub = self.subset(indices);
        let x = Tensor::from_parts(self.dims.batch_shape(indices.len()), sub.pixels);
        Ok((x, sub.labels))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of each class in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Concatenation of `self` and `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dims != other.dims || self.num_classes != other.num_classes {
            return Err(Error::invalid("cannot concatenate datasets of different shape"));
        }
        let mut out = self.clone();
        out.pixels.extend_from_slice(&other.pixels);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }
}

/// Parses one CIFAR-10 binary batch. Pixels are scaled by 1/255 and record
/// order is preserved.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD) {
        return Err(Error::Format(format!(
            "CIFAR-10 data of {} bytes is not a whole number of {CIFAR10_RECORD}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR10_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * 3072);
    for (r, record) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        if record[0] > 9 {
            return Err(Error::Format(format!("record {r}: label byte {} > 9", record[0])));
        }
        labels.push(usize::from(record[0]));
        pixels.extend(record[1..].iter().map(|&b| Real::from(b) / 255.0));
    }
    Dataset::new(InputDims::CIFAR, pixels, labels, 10)
}

/// Noise standard deviation of the synthetic generator.
pub const SYNTHETIC_SIGMA: Real = 0.25;

/// Isotropic Gaussian classes. Class `c` is centred at
/// `0.5 + separation * sigma * u_c / sqrt(2)` for a random unit vector
/// `u_c`, so two class means are about `separation * sigma` apart. Samples
/// are class-major.
pub fn gen_synthetic(num_classes: usize, dims: InputDims, samples_per_class: usize, separation: Real, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || samples_per_class == 0 || dims.flat() == 0 {
        return Err(Error::invalid("synthetic dataset needs classes, samples and dimensions"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("class separation must be finite and non-negative"));
    }
    let d = dims.flat();
    let mut rng = stream(seed, &[purpose::SYNTHETIC]);
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let u: Vec<Real> = (0..d).map(|_| rng.sample::<Real, _>(StandardNormal)).collect();
        let norm = math::sqrt(u.iter().map(|v| v * v).sum::<Real>());
        let scale = separation * SYNTHETIC_SIGMA / (math::sqrt(2.0) * norm);
        means.push(u.into_iter().map(|v| 0.5 + scale * v).collect::<Vec<Real>>());
    }
    let mut pixels = Vec::with_capacity(num_classes * samples_per_class * d);
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            pixels.extend(mean.iter().map(|&m| m + SYNTHETIC_SIGMA * rng.sample::<Real, _>(StandardNormal)));
            labels.push(c);
        }
    }
    Dataset::new(dims, pixels, labels, num_classes)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PartitionScheme {
    /// Each client holds `classes_per_client` classes assigned round-robin;
    /// each class is divided among its holders by Dirichlet(`concentration`)
    /// proportions.
    Pathological { classes_per_client: usize, concentration: Real },
    /// Each class is divided among all clients by Dirichlet(`gamma`)
    /// proportions.
    Practical { gamma: Real },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    pub seed: u64,
}

/// Classes held by `client` under the round-robin rule
/// `(client * k + j) mod num_classes` for `j < k`.
pub fn pathological_classes(client: usize, k: usize, num_classes: usize) -> Vec<usize> {
    (0..k).map(|j| (client * k + j) % num_classes).collect()
}

/// Splits `n` into integer counts proportional to `weights`: floors first,
/// then one extra unit to the largest remainders (ties to the lower index).
pub fn largest_remainder(n: usize, weights: &[Real]) -> Vec<usize> {
    let total: Real = weights.iter().sum();
    let quotas: Vec<Real> = weights.iter().map(|w| w / total * n as Real).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|&q| q as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - counts[a] as Real, quotas[b] - counts[b] as Real);
        rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Symmetric Dirichlet draw over `k` outcomes via normalized Gamma samples.
/// Returns `None` when every Gamma sample underflows to zero.
fn dirichlet(rng: &mut impl Rng, alpha: Real, k: usize) -> Option<Vec<Real>> {
    let gamma = Gamma::new(alpha, 1.0).ok()?;
    let draws: Vec<Real> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: Real = draws.iter().sum();
    (sum > 0.0 && sum.is_finite()).then_some(draws)
}

fn check_concentration(value: Real, name: &str) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::invalid(format!("{name} must be positive")));
    }
    Ok(())
}

/// Index pools, one per client.
pub fn partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    if spec.num_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    match spec.scheme {
        PartitionScheme::Pathological {
            classes_per_client,
            concentration,
        } => partition_pathological(ds, spec.num_clients, classes_per_client, concentration, spec.seed),
        PartitionScheme::Practical { gamma } => partition_practical(ds, spec.num_clients, gamma, spec.seed),
    }
}

pub fn partition_pathological(ds: &Dataset, num_clients: usize, k: usize, concentration: Real, seed: u64) -> Result<Vec<Vec<usize>>> {
    let classes = ds.num_classes();
    check_concentration(concentration, "count concentration")?;
    if k == 0 || k > classes {
        return Err(Error::invalid(format!("classes per client must be in 1..={classes}, got {k}")));
    }
    if num_clients * k < classes {
        return Err(Error::Partition(format!(
            "{num_clients} clients x {k} classes cannot cover {classes} classes"
        )));
    }
    let mut holders = vec![Vec::new(); classes];
    for client in 0..num_clients {
        for c in pathological_classes(client, k, classes) {
            holders[c].push(client);
        }
    }
    let by_class = ds.class_indices();
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < holders[c].len() {
            return Err(Error::Partition(format!(
                "class {c} has {} samples for {} holders",
                idx.len(),
                holders[c].len()
            )));
        }
    }
    let mut pools = vec![Vec::new(); num_clients];
    for (c, idx) in by_class.into_iter().enumerate() {
        let h = &holders[c];
        let mut attempt = 0;
        let counts = loop {
            if attempt == MAX_PARTITION_ATTEMPTS {
                return Err(Error::Partition(format!(
                    "class {c}: some holder got no samples after {MAX_PARTITION_ATTEMPTS} draws"
                )));
            }
            let mut rng = stream(seed, &[purpose::PARTITION, c as u64, attempt]);
            attempt += 1;
            let Some(p) = (if h.len() == 1 { Some(vec![1.0]) } else { dirichlet(&mut rng, concentration, h.len()) }) else {
                continue;
            };
            let counts = largest_remainder(idx.len(), &p);
            if counts.iter().all(|&n| n > 0) {
                break counts;
            }
        };
        deal(idx, &counts, h, &mut pools, &mut stream(seed, &[purpose::PARTITION, c as u64, u64::MAX]));
    }
    Ok(pools)
}

pub fn partition_practical(ds: &Dataset, num_clients: usize, gamma: Real, seed: u64) -> Result<Vec<Vec<usize>>> {
    check_concentration(gamma, "gamma")?;
    if ds.len() < num_clients {
        return Err(Error::Partition(format!("{} samples cannot cover {num_clients} clients", ds.len())));
    }
    let by_class = ds.class_indices();
    let clients: Vec<usize> = (0..num_clients).collect();
    'attempt: for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut rng = stream(seed, &[purpose::PARTITION, attempt]);
        let mut pools = vec![Vec::new(); num_clients];
        for idx in &by_class {
            let Some(p) = dirichlet(&mut rng, gamma, num_clients) else {
                continue 'attempt;
            };
            let counts = largest_remainder(idx.len(), &p);
            deal(idx.clone(), &counts, &clients, &mut pools, &mut rng);
        }
        if pools.iter().all(|p| !p.is_empty()) {
            return Ok(pools);
        }
    }
    Err(Error::Partition(format!(
        "some client got no samples after {MAX_PARTITION_ATTEMPTS} draws"
    )))
}

/// Shuffles `idx` and hands out consecutive runs of `counts[j]` to client
/// `owners[j]`.
fn deal(mut idx: Vec<usize>, counts: &[usize], owners: &[usize], pools: &mut [Vec<usize>], rng: &mut impl Rng) {
    idx.shuffle(rng);
    let mut rest = idx.as_slice();
    for (&owner, &n) in owners.iter().zip(counts) {
        let (take, tail) = rest.split_at(n);
        pools[owner].extend_from_slice(take);
        rest = tail;
    }
}

/// Test samples for a class with `n` samples: `floor(n / 5)`, but at least
/// one when `n >= 2` so every class with two samples is evaluated.
pub fn test_count(n: usize) -> usize {
    match n / 5 {
        0 if n >= 2 => 1,
        t => t,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: Dataset,
    pub test: Dataset,
}

impl ClientShard {
    /// Training sample count, the aggregation weight.
    pub fn n_k(&self) -> usize {
        self.train.len()
    }
}

/// Per-class stratified 80/20 split of one client's pool; returns
/// `(train, test)` index lists, class-major.
pub fn split_indices(ds: &Dataset, pool: &[usize], client_id: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if pool.is_empty() {
        return Err(Error::Empty("client pool"));
    }
    let mut by_class = vec![Vec::new(); ds.num_classes()];
    for &i in pool {
        by_class[ds.labels()[i]].push(i);
    }
    let mut rng = stream(seed, &[purpose::SPLIT, client_id as u64]);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut idx in by_class {
        idx.sort_unstable();
        idx.shuffle(&mut rng);
        let t = test_count(idx.len());
        test.extend_from_slice(&idx[..t]);
        train.extend_from_slice(&idx[t..]);
    }
    Ok((train, test))
}

pub fn split_train_test(ds: &Dataset, pool: &[usize], client_id: usize, seed: u64) -> Result<ClientShard> {
    let (train, test) = split_indices(ds, pool, client_id, seed)?;
    if train.is_empty() {
        return Err(Error::Empty("client training set"));
    }
    Ok(ClientShard {
        client_id,
        train: ds.subset(&train),
        test: ds.subset(&test),
    })
}

/// Partitions `ds` and splits every pool.
pub fn build_shards(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    partition(ds, spec)?
        .iter()
        .enumerate()
        .map(|(k, pool)| split_train_test(ds, pool, k, spec.seed).map_err(|e| e.context(format!("client {k}"))))
        .collect()
}
