//! The federation state machine: client sampling, broadcast of the global
//! extractor, local mixture training, upload and weighted aggregation,
//! plus the Standalone and homogeneous FedAvg reference algorithms.
//!
//! Every random choice is keyed by `(seed, purpose, round, client, ...)`,
//! so a round's outcome depends only on the state entering it. Client
//! updates within a round are independent and may run on any
//! [`Executor`]; aggregation consumes them in ascending client order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{accuracy_moe, accuracy_split, mean_accuracy, param_variation, AccuracyMean, RoundMetrics};
use crate::models::{
    build_cnn, flops_forward, moe_flops_forward, split_extractor_header, CnnVariant, InputDims, MoeModel, MoeRates, SplitModel,
    DEFAULT_GATE_HIDDEN, TRAIN_FLOPS_MULTIPLIER,
};
use crate::nn::Network;
use crate::rng::{derive_seed, purpose, stream};
use crate::snapshot::Snapshot;
use crate::tensor::Tensor;
use crate::Real;

/// Architecture of the shared global expert.
pub const GLOBAL_EXTRACTOR: CnnVariant = CnnVariant::Cnn5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Algorithm {
    /// Per-client mixture of the shared extractor and a private one.
    #[default]
    PfedMoe,
    /// Each client trains its own model; nothing is exchanged.
    Standalone,
    /// Complete homogeneous models averaged every round.
    FedAvg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PfedMoe => "pfedmoe",
            Algorithm::Standalone => "standalone",
            Algorithm::FedAvg => "fedavg",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Algorithm::PfedMoe, Algorithm::Standalone, Algorithm::FedAvg]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm '{s}', expected pfedmoe, standalone or fedavg")))
    }
}

/// Which local model each client holds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModelAssignment {
    /// Client `k` holds `cnn{(k mod 5) + 1}`.
    #[default]
    Modulo5,
    /// Every client holds the same variant.
    Fixed(CnnVariant),
}

impl ModelAssignment {
    pub fn variant(self, client_id: usize) -> CnnVariant {
        match self {
            ModelAssignment::Modulo5 => CnnVariant::for_client(client_id),
            ModelAssignment::Fixed(v) => v,
        }
    }

    /// Whether every one of `num_clients` clients gets the same variant.
    pub fn is_homogeneous(self, num_clients: usize) -> bool {
        match self {
            ModelAssignment::Modulo5 => num_clients <= 1,
            ModelAssignment::Fixed(_) => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    /// N
    pub num_clients: usize,
    /// C, the fraction of clients sampled per round.
    pub participation: Real,
    /// T
    pub rounds: usize,
    /// E
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Global expert learning rate.
    pub lr_theta: Real,
    /// Local expert and header learning rate; also the only rate used by
    /// Standalone and FedAvg.
    pub lr_omega: Real,
    /// Gating network learning rate.
    pub lr_phi: Real,
    pub assignment: ModelAssignment,
    pub gate_hidden: usize,
    pub accuracy_mean: AccuracyMean,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            algorithm: Algorithm::PfedMoe,
            num_clients: 10,
            participation: 1.0,
            rounds: 20,
            local_epochs: 1,
            batch_size: 64,
            lr_theta: 0.01,
            lr_omega: 0.01,
            lr_phi: 0.01,
            assignment: ModelAssignment::Modulo5,
            gate_hidden: DEFAULT_GATE_HIDDEN,
            accuracy_mean: AccuracyMean::Unweighted,
            seed: 0,
        }
    }
}

impl FederationConfig {
    /// K = round(C * N), halves rounding up.
    pub fn sampled_per_round(&self) -> usize {
        math::floor(self.participation * self.num_clients as Real + 0.5) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::invalid("num_clients must be at least 1"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::invalid(format!("participation must satisfy 0 < C <= 1, got {}", self.participation)));
        }
        if self.sampled_per_round() == 0 {
            return Err(Error::invalid(format!(
                "participation {} of {} clients samples no client per round",
                self.participation, self.num_clients
            )));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("local_epochs and batch_size must be at least 1"));
        }
        for (name, lr) in [("lr_theta", self.lr_theta), ("lr_omega", self.lr_omega), ("lr_phi", self.lr_phi)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {lr}")));
            }
        }
        if self.gate_hidden < 2 {
            return Err(Error::invalid("gate_hidden must be at least 2"));
        }
        if self.algorithm == Algorithm::FedAvg && !self.assignment.is_homogeneous(self.num_clients) {
            return Err(Error::invalid("fedavg needs homogeneous clients, set a fixed model assignment"));
        }
        Ok(())
    }
}

/// The `k` clients taking part in round `round`, ascending.
pub fn sample_clients(seed: u64, num_clients: usize, k: usize, round: usize) -> Result<Vec<usize>> {
    if k == 0 || k > num_clients {
        return Err(Error::invalid(format!("cannot sample {k} of {num_clients} clients")));
    }
    let mut ids = sample(&mut stream(seed, &[purpose::SAMPLE_CLIENTS, round as u64]), num_clients, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// The only payload a client sends to the server.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorUpdate {
    pub client_id: usize,
    /// The trained copy of the shared model (the global extractor, or the
    /// complete model under FedAvg), running statistics included.
    pub theta: Snapshot,
    /// Training samples the client holds.
    pub n_k: usize,
}

/// Weighted mean `sum_k (n_k / n) theta_k` with `n` summed over the
/// updates given, accumulated in ascending client order as
/// `theta_first + sum_k w_k (theta_k - theta_first)`, which returns
/// identical inputs unchanged.
pub fn aggregate_extractors(updates: &[ExtractorUpdate]) -> Result<Snapshot> {
    let mut order: Vec<&ExtractorUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let first = *order.first().ok_or(Error::Empty("extractor updates"))?;
    for u in &order {
        if !u.theta.same_layout(&first.theta) {
            return Err(Error::invalid(format!("client {} uploaded a differently shaped extractor", u.client_id)));
        }
        if u.n_k == 0 {
            return Err(Error::invalid(format!("client {} reports no training samples", u.client_id)));
        }
    }
    let n: usize = order.iter().map(|u| u.n_k).sum();
    let mut out = first.theta.clone();
    for (name, acc) in out.iter_mut() {
        let base = first.theta.get(name).ok_or(Error::TapeMismatch)?.data();
        for u in &order[1..] {
            let w = u.n_k as Real / n as Real;
            let theta = u.theta.get(name).ok_or(Error::TapeMismatch)?.data();
            for ((a, &t), &b) in acc.data_mut().iter_mut().zip(theta).zip(base) {
                *a += w * (t - b);
            }
        }
    }
    Ok(out)
}

/// What a client trains.
#[derive(Clone, Debug)]
pub enum ClientModel {
    Moe(MoeModel),
    Plain(SplitModel),
}

#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: usize,
    pub variant: CnnVariant,
    pub model: ClientModel,
    pub shard: ClientShard,
    /// Training FLOPs per sample.
    pub train_flops_per_sample: u64,
}

impl ClientState {
    pub fn new(client_id: usize, variant: CnnVariant, model: ClientModel, shard: ClientShard) -> Result<Self> {
        if shard.train.is_empty() {
            return Err(Error::Empty("client training shard").context(format!("client {client_id}")));
        }
        let input = shard.train.dims().shape();
        let forward = match &model {
            ClientModel::Moe(moe) => moe_flops_forward(moe, &input)?,
            ClientModel::Plain(m) => {
                let rep = m.extractor.output_dims(&input)?;
                flops_forward(&m.extractor, &input)? + flops_forward(&m.header, &rep)?
            }
        };
        Ok(ClientState {
            client_id,
            variant,
            model,
            shard,
            train_flops_per_sample: TRAIN_FLOPS_MULTIPLIER * forward,
        })
    }

    /// Test accuracy (%) of the resident model.
    pub fn accuracy(&self) -> Result<Real> {
        match &self.model {
            ClientModel::Moe(moe) => accuracy_moe(moe, &self.shard.test),
            ClientModel::Plain(m) => accuracy_split(m, &self.shard.test),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        match &self.model {
            ClientModel::Moe(moe) => moe.snapshot(),
            ClientModel::Plain(m) => m.snapshot(),
        }
    }

    pub fn load_snapshot(&mut self, snap: &Snapshot) -> Result<()> {
        match &mut self.model {
            ClientModel::Moe(moe) => moe.load_snapshot(snap),
            ClientModel::Plain(m) => m.load_snapshot(snap),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    /// Mean mini-batch loss.
    pub mean_loss: Real,
    pub batches: usize,
    /// Samples processed, counting every epoch.
    pub samples: usize,
}

/// Runs `step` over `E` shuffled epochs of the client's training set in
/// mini-batches, the last one possibly short.
fn train_epochs(
    shard: &ClientShard,
    cfg: &FederationConfig,
    round: usize,
    mut step: impl FnMut(&Tensor, &[usize]) -> Result<Real>,
) -> Result<TrainStats> {
    let client = shard.client_id;
    let n = shard.train.len();
    if n == 0 {
        return Err(Error::Empty("client training shard").context(format!("round {round} client {client}")));
    }
    let mut stats = TrainStats::default();
    let mut total = 0.0;
    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, &[purpose::SHUFFLE, client as u64, round as u64, epoch as u64]));
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let at = || format!("round {round} client {client} epoch {epoch} batch {b}");
            let (x, y) = shard.train.batch(idx).map_err(|e| e.context(at()))?;
            let loss = step(&x, &y).map_err(|e| e.context(at()))?;
            if !loss.is_finite() {
                return Err(Error::non_finite("training loss").context(at()));
            }
            total += loss;
            stats.batches += 1;
            stats.samples += idx.len();
        }
    }
    stats.mean_loss = total / stats.batches as Real;
    Ok(stats)
}

fn wrong_model(client_id: usize, algorithm: Algorithm) -> Error {
    Error::invalid(format!("client {client_id} does not hold a {algorithm} model"))
}

/// Loads `theta` into the client's global expert, trains the mixture and
/// returns the trained global expert. The local expert, header and gate
/// stay on the client.
pub fn client_update_pfedmoe(
    client: &mut ClientState,
    theta: &Snapshot,
    cfg: &FederationConfig,
    round: usize,
) -> Result<(ExtractorUpdate, TrainStats)> {
    let id = client.client_id;
    let ClientModel::Moe(moe) = &mut client.model else {
        return Err(wrong_model(id, Algorithm::PfedMoe));
    };
    moe.global_expert
        .load_snapshot(theta)
        .map_err(|e| e.context(format!("round {round} client {id} loading global extractor")))?;
    let rates = MoeRates {
        global: cfg.lr_theta,
        local: cfg.lr_omega,
        gate: cfg.lr_phi,
    };
    let stats = train_epochs(&client.shard, cfg, round, |x, y| moe.train_step(x, y, rates))?;
    let update = ExtractorUpdate {
        client_id: id,
        theta: moe.global_expert.snapshot(),
        n_k: client.shard.n_k(),
    };
    Ok((update, stats))
}

/// Trains the client's plain model on its own data.
pub fn client_update_standalone(client: &mut ClientState, cfg: &FederationConfig, round: usize) -> Result<TrainStats> {
    let id = client.client_id;
    let ClientModel::Plain(model) = &mut client.model else {
        return Err(wrong_model(id, Algorithm::Standalone));
    };
    train_epochs(&client.shard, cfg, round, |x, y| model.train_step(x, y, cfg.lr_omega))
}

/// Loads the global complete model, trains it and returns it.
pub fn client_update_fedavg(
    client: &mut ClientState,
    global: &Snapshot,
    cfg: &FederationConfig,
    round: usize,
) -> Result<(ExtractorUpdate, TrainStats)> {
    let id = client.client_id;
    let ClientModel::Plain(model) = &mut client.model else {
        return Err(wrong_model(id, Algorithm::FedAvg));
    };
    model
        .load_snapshot(global)
        .map_err(|e| e.context(format!("round {round} client {id} loading global model")))?;
    let stats = train_epochs(&client.shard, cfg, round, |x, y| model.train_step(x, y, cfg.lr_omega))?;
    let update = ExtractorUpdate {
        client_id: id,
        theta: model.snapshot(),
        n_k: client.shard.n_k(),
    };
    Ok((update, stats))
}

/// Runs independent jobs and returns their results in input order.
pub trait Executor: Sync {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send;
}

/// One job after another on the calling thread; bit-exact.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        items.into_iter().map(f).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    /// Global extractor (complete model under FedAvg).
    pub theta: Snapshot,
    /// Rounds completed.
    pub round: usize,
}

/// Server, clients and the metrics of every completed round.
#[derive(Clone, Debug)]
pub struct Federation {
    cfg: FederationConfig,
    server: ServerState,
    clients: Vec<ClientState>,
    /// FedAvg's global model, kept for evaluation.
    global_model: Option<SplitModel>,
    /// Parameters sent in one direction per participant.
    params_per_transfer: u64,
    history: Vec<RoundMetrics>,
}

struct ClientOutcome {
    client_id: usize,
    update: Option<ExtractorUpdate>,
    stats: TrainStats,
}

impl Federation {
    /// Initializes server and clients. All clients receive the same
    /// initial global extractor; client `k`'s own models are seeded from
    /// `(seed, k)`.
    pub fn new(cfg: FederationConfig, shards: Vec<ClientShard>) -> Result<Self> {
        cfg.validate()?;
        if shards.len() != cfg.num_clients {
            return Err(Error::invalid(format!("{} shards for {} clients", shards.len(), cfg.num_clients)));
        }
        let first = &shards[0].train;
        let (dims, classes) = (first.dims(), first.num_classes());
        for (k, s) in shards.iter().enumerate() {
            if s.client_id != k {
                return Err(Error::invalid(format!("shard {k} belongs to client {}", s.client_id)));
            }
            if s.train.dims() != dims || s.test.dims() != dims || s.train.num_classes() != classes {
                return Err(Error::invalid(format!("client {k} data differs in shape or class count")));
            }
        }
        let init = |tags: &[u64]| derive_seed(cfg.seed, tags);
        let theta0 = initial_extractor(cfg.seed, dims, classes)?;
        let mut global_model = None;
        let (theta, params_per_transfer) = match cfg.algorithm {
            Algorithm::FedAvg => {
                let model = SplitModel::build(cfg.assignment.variant(0), dims, classes, init(&[purpose::INIT, 0]))?;
                let out = (model.snapshot(), model.param_count() as u64);
                global_model = Some(model);
                out
            }
            _ => (theta0.snapshot(), theta0.param_count() as u64),
        };
        let mut clients = Vec::with_capacity(shards.len());
        for shard in shards {
            let k = shard.client_id;
            let variant = cfg.assignment.variant(k);
            let model = match (cfg.algorithm, &global_model) {
                (Algorithm::FedAvg, Some(g)) => ClientModel::Plain(g.clone()),
                _ => {
                    let local = SplitModel::build(variant, dims, classes, init(&[purpose::INIT, 1, k as u64]))?;
                    if cfg.algorithm == Algorithm::Standalone {
                        ClientModel::Plain(local)
                    } else {
                        let moe = MoeModel::build(theta0.clone(), local, dims, cfg.gate_hidden, init(&[purpose::INIT, 2, k as u64]))?;
                        ClientModel::Moe(moe)
                    }
                }
            };
            clients.push(ClientState::new(k, variant, model, shard)?);
        }
        Ok(Federation {
            cfg,
            server: ServerState { theta, round: 0 },
            clients,
            global_model,
            params_per_transfer,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [ClientState] {
        &mut self.clients
    }

    /// Rounds completed.
    pub fn round(&self) -> usize {
        self.server.round
    }

    pub fn is_finished(&self) -> bool {
        self.server.round >= self.cfg.rounds
    }

    pub fn history(&self) -> &[RoundMetrics] {
        &self.history
    }

    pub fn input_dims(&self) -> InputDims {
        self.clients[0].shard.train.dims()
    }

    /// Parameters (running statistics excluded) a participant downloads
    /// and again uploads each round; 0 for Standalone.
    pub fn params_per_transfer(&self) -> u64 {
        match self.cfg.algorithm {
            Algorithm::Standalone => 0,
            _ => self.params_per_transfer,
        }
    }

    /// Sample, broadcast, train, aggregate, evaluate, advance.
    pub fn run_round(&mut self, exec: &impl Executor) -> Result<&RoundMetrics> {
        if self.is_finished() {
            return Err(Error::invalid(format!("all {} rounds already ran", self.cfg.rounds)));
        }
        let t = self.server.round + 1;
        let sampled = sample_clients(self.cfg.seed, self.cfg.num_clients, self.cfg.sampled_per_round(), t)?;
        let cfg = &self.cfg;
        let theta = &self.server.theta;
        let jobs: Vec<&mut ClientState> = self.clients.iter_mut().filter(|c| sampled.binary_search(&c.client_id).is_ok()).collect();
        let outcomes = exec.map(jobs, |client| -> Result<ClientOutcome> {
            let client_id = client.client_id;
            let (update, stats) = match cfg.algorithm {
                Algorithm::PfedMoe => client_update_pfedmoe(client, theta, cfg, t).map(|(u, s)| (Some(u), s))?,
                Algorithm::Standalone => (None, client_update_standalone(client, cfg, t)?),
                Algorithm::FedAvg => client_update_fedavg(client, theta, cfg, t).map(|(u, s)| (Some(u), s))?,
            };
            Ok(ClientOutcome { client_id, update, stats })
        });
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        let updates: Vec<ExtractorUpdate> = outcomes.iter().filter_map(|o| o.update.clone()).collect();
        if !updates.is_empty() {
            self.server.theta = aggregate_extractors(&updates).map_err(|e| e.context(format!("round {t} aggregation")))?;
        }
        if let Some(g) = &mut self.global_model {
            g.load_snapshot(&self.server.theta)?;
        }
        let mut delta_sq = Vec::with_capacity(updates.len());
        for u in &updates {
            delta_sq.push((u.client_id, param_variation(&self.server.theta, &u.theta)?));
        }
        let accuracies = self.evaluate(exec)?;
        let test_sizes: Vec<usize> = self.clients.iter().map(|c| c.shard.test.len()).collect();
        let prev = self.history.last();
        let params_tx = sampled.len() as u64 * 2 * self.params_per_transfer();
        let flops = outcomes
            .iter()
            .map(|o| o.stats.samples as u64 * self.clients[o.client_id].train_flops_per_sample)
            .sum::<u64>();
        let metrics = RoundMetrics {
            round: t,
            mean_acc: mean_accuracy(&accuracies, &test_sizes, self.cfg.accuracy_mean),
            min_acc: accuracies.iter().copied().fold(Real::INFINITY, Real::min),
            max_acc: accuracies.iter().copied().fold(Real::NEG_INFINITY, Real::max),
            accuracies,
            mean_loss: outcomes.iter().map(|o| o.stats.mean_loss).sum::<Real>() / outcomes.len() as Real,
            params_tx,
            params_tx_cum: prev.map_or(0, |m| m.params_tx_cum) + params_tx,
            flops,
            flops_cum: prev.map_or(0, |m| m.flops_cum) + flops,
            delta_sq_mean: if delta_sq.is_empty() {
                0.0
            } else {
                delta_sq.iter().map(|d| d.1).sum::<Real>() / delta_sq.len() as Real
            },
            delta_sq,
        };
        self.history.push(metrics);
        self.server.round = t;
        Ok(self.history.last().expect("just pushed"))
    }

    /// Runs the remaining rounds.
    pub fn run(&mut self, exec: &impl Executor) -> Result<()> {
        while !self.is_finished() {
            self.run_round(exec)?;
        }
        Ok(())
    }

    /// Test accuracy (%) of every client by id: each client's resident
    /// model, or the global model under FedAvg.
    pub fn evaluate(&self, exec: &impl Executor) -> Result<Vec<Real>> {
        let global = self.global_model.as_ref();
        let jobs: Vec<&ClientState> = self.clients.iter().collect();
        exec.map(jobs, |c| {
            match global {
                Some(g) => accuracy_split(g, &c.shard.test),
                None => c.accuracy(),
            }
            .map_err(|e| e.context(format!("evaluating client {}", c.client_id)))
        })
        .into_iter()
        .collect()
    }

    /// Server and client state: `round`, `server.*` and `client.{k}.*`.
    pub fn checkpoint(&self) -> Snapshot {
        let mut snap = Snapshot::default();
        snap.insert("round", Tensor::full(&[1], self.server.round as Real));
        snap.extend_prefixed("server.", &self.server.theta);
        for c in &self.clients {
            snap.extend_prefixed(&format!("client.{}.", c.client_id), &c.snapshot());
        }
        snap
    }

    /// Restores a [`Federation::checkpoint`] together with the metrics of
    /// the rounds it covers. `self` must have been built from the same
    /// configuration and shards.
    pub fn restore(&mut self, snap: &Snapshot, history: Vec<RoundMetrics>) -> Result<()> {
        let round = snap.get("round").and_then(|t| t.data().first().copied()).ok_or_else(|| Error::Format(String::from("checkpoint lacks round")))?;
        let round = round as usize;
        if round > self.cfg.rounds || history.len() != round || history.iter().enumerate().any(|(i, m)| m.round != i + 1) {
            return Err(Error::Format(format!("checkpoint at round {round} does not match its {} metric rows", history.len())));
        }
        let theta = snap.with_prefix_stripped("server.");
        if !theta.same_layout(&self.server.theta) {
            return Err(Error::Format(String::from("checkpoint server state has a different layout")));
        }
        let mut clients = self.clients.clone();
        for c in &mut clients {
            let id = c.client_id;
            c.load_snapshot(&snap.with_prefix_stripped(&format!("client.{id}.")))
                .map_err(|e| e.context(format!("restoring client {id}")))?;
        }
        if let Some(g) = &mut self.global_model {
            g.load_snapshot(&theta)?;
        }
        self.clients = clients;
        self.server = ServerState { theta, round };
        self.history = history;
        Ok(())
    }
}

/// Global extractor of a fresh run, before any training.
pub fn initial_extractor(seed: u64, dims: InputDims, num_classes: usize) -> Result<Network> {
    Ok(split_extractor_header(build_cnn(GLOBAL_EXTRACTOR, dims, num_classes, derive_seed(seed, &[purpose::INIT, 0]))?)?.extractor)
}
