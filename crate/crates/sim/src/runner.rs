//! Runs an experiment end to end and writes its output bundle:
//!
//! | file | content |
//! |------|---------|
//! | `config.toml` | resolved configuration |
//! | `metrics.csv` | one row per round |
//! | `per_client.csv` | every client's accuracy every round |
//! | `gate_weights.csv` | per-sample gate weights at logged rounds (pFedMoE) |
//! | `representations.bin` (+ `.txt`, `_index.csv`) | final mixed representations (pFedMoE) |
//! | `summary.txt` | final summary |
//! | `checkpoint_round_NNNN.bin` | optional checkpoints |

use std::fs;
use std::path::{Path, PathBuf};

use pfedmoe_core::data::{self, parse_cifar10, Dataset};
use pfedmoe_core::fed::{Algorithm, ClientModel, ClientState, Executor, Federation, Sequential};
use pfedmoe_core::metrics::{gate_weights, representations, GateRow, RepresentationRow, RoundMetrics};
use pfedmoe_core::models::REPRESENTATION_DIM;
use rayon::prelude::*;

use crate::config::{parse_config, DatasetConfig, ExperimentConfig};
use crate::error::{Result, SimError};
use crate::formats::{self, Checkpoint, GATE_HEADER};
use crate::summary::Summary;

/// Client updates on a rayon pool; results keep input order.
#[derive(Debug)]
pub struct Parallel(rayon::ThreadPool);

impl Parallel {
    pub fn new(threads: usize) -> Result<Self> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(Parallel)
            .map_err(|e| SimError::Config(format!("--threads: {e}")))
    }
}

impl Executor for Parallel {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        self.0.install(|| items.into_par_iter().map(f).collect())
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// 1 runs single-threaded and bit-exact.
    pub threads: usize,
    pub resume: Option<PathBuf>,
    /// Print one progress line per round to stdout.
    pub progress: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            threads: 1,
            resume: None,
            progress: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub history: Vec<RoundMetrics>,
    pub summary: Summary,
    pub gate_rows: Vec<GateRow>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| SimError::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| SimError::io(path, e))
}

/// Reads and validates a config file; relative dataset paths resolve
/// against its directory.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let text = String::from_utf8(read(path)?).map_err(|_| SimError::Config(format!("{}: not UTF-8", path.display())))?;
    let cfg = parse_config(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

pub fn load_dataset(cfg: &ExperimentConfig, base: &Path) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            classes,
            samples_per_class,
            separation,
            ..
        } => data::gen_synthetic(*classes, cfg.input_dims(), *samples_per_class, *separation as _, cfg.seed).map_err(SimError::Data),
        DatasetConfig::Cifar10 { files, max_per_class } => {
            let mut all: Option<Dataset> = None;
            for f in files {
                let path = base.join(f);
                let ds = parse_cifar10(&read(&path)?).map_err(|e| SimError::Data(e.context(path.display().to_string())))?;
                all = Some(match all {
                    None => ds,
                    Some(prev) => prev.concat(&ds).map_err(SimError::Data)?,
                });
            }
            let all = all.ok_or_else(|| SimError::Config("dataset.files: must list at least one file".into()))?;
            if *max_per_class == 0 {
                return Ok(all);
            }
            let mut seen = vec![0usize; all.num_classes()];
            let keep: Vec<usize> = (0..all.len())
                .filter(|&i| {
                    let c = &mut seen[all.labels()[i]];
                    *c += 1;
                    *c <= *max_per_class
                })
                .collect();
            Ok(all.subset(&keep))
        }
    }
}

/// Builds the federation in its initial state.
pub fn build_federation(cfg: &ExperimentConfig, base: &Path) -> Result<Federation> {
    let ds = load_dataset(cfg, base)?;
    let shards = data::build_shards(&ds, &cfg.partition_spec()).map_err(SimError::Data)?;
    Federation::new(cfg.federation_config()?, shards).map_err(SimError::Run)
}

fn mixture_clients(fed: &Federation) -> Vec<&ClientState> {
    fed.clients().iter().filter(|c| matches!(c.model, ClientModel::Moe(_))).collect()
}

fn log_gates(fed: &Federation, exec: &impl Executor, round: usize) -> Result<Vec<GateRow>> {
    let rows = exec.map(mixture_clients(fed), |c| match &c.model {
        ClientModel::Moe(m) => gate_weights(m, &c.shard.test, round, c.client_id),
        ClientModel::Plain(_) => Ok(Vec::new()),
    });
    Ok(rows.into_iter().collect::<Result<Vec<_>, _>>().map_err(SimError::Run)?.concat())
}

fn export_representations(fed: &Federation, exec: &impl Executor) -> Result<Vec<RepresentationRow>> {
    let rows = exec.map(mixture_clients(fed), |c| match &c.model {
        ClientModel::Moe(m) => representations(m, &c.shard.test, c.client_id),
        ClientModel::Plain(_) => Ok(Vec::new()),
    });
    Ok(rows.into_iter().collect::<Result<Vec<_>, _>>().map_err(SimError::Run)?.concat())
}

/// Runs `cfg` and writes the bundle into `out`.
pub fn run(cfg: &ExperimentConfig, base: &Path, out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    if opts.threads == 0 {
        return Err(SimError::Config("--threads: must be at least 1".into()));
    }
    if opts.threads == 1 {
        run_with(cfg, base, out, opts, &Sequential)
    } else {
        run_with(cfg, base, out, opts, &Parallel::new(opts.threads)?)
    }
}

fn run_with(cfg: &ExperimentConfig, base: &Path, out: &Path, opts: &RunOptions, exec: &impl Executor) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| SimError::io(out, e))?;
    let echo = cfg.echo();
    let digest = formats::config_digest(&echo);
    write(&out.join("config.toml"), &echo)?;
    let mut fed = build_federation(cfg, base)?;
    let mut gate_rows = Vec::new();
    if let Some(path) = &opts.resume {
        let ckpt = formats::decode_checkpoint(&read(path)?)?;
        if ckpt.config_sha256 != digest {
            return Err(SimError::Checkpoint(format!("{} was written for a different configuration", path.display())));
        }
        fed.restore(&ckpt.state, ckpt.history).map_err(|e| SimError::Checkpoint(e.to_string()))?;
        let old = out.join("gate_weights.csv");
        if old.exists() {
            let text = String::from_utf8_lossy(&read(&old)?).into_owned();
            gate_rows = formats::parse_gate_csv(&text)?.into_iter().filter(|r| r.round <= ckpt.round).collect();
        }
    }
    let moe = cfg.federation_config()?.algorithm == Algorithm::PfedMoe;
    while !fed.is_finished() {
        let m = fed.run_round(exec).map_err(SimError::Run)?;
        let t = m.round;
        if opts.progress {
            println!(
                "round {t}/{} mean_acc {:.4} loss {:.6}",
                cfg.federation.rounds, m.mean_acc, m.mean_loss
            );
        }
        if moe && cfg.logs_gate_at(t) {
            gate_rows.extend(log_gates(&fed, exec, t)?);
        }
        write(&out.join("metrics.csv"), formats::metrics_csv(fed.history()))?;
        write(&out.join("per_client.csv"), formats::per_client_csv(fed.history()))?;
        let every = cfg.output.checkpoint_every;
        if every > 0 && t % every == 0 {
            let ckpt = Checkpoint {
                config_sha256: digest,
                round: t,
                history: fed.history().to_vec(),
                state: fed.checkpoint(),
            };
            write(&out.join(format!("checkpoint_round_{t:04}.bin")), formats::encode_checkpoint(&ckpt))?;
        }
    }
    write(&out.join("metrics.csv"), formats::metrics_csv(fed.history()))?;
    write(&out.join("per_client.csv"), formats::per_client_csv(fed.history()))?;
    write(&out.join("gate_weights.csv"), format!("{GATE_HEADER}\n{}", formats::gate_rows_csv(&gate_rows)))?;
    if moe {
        let reps = export_representations(&fed, exec)?;
        write(&out.join("representations.bin"), formats::representations_bin(&reps))?;
        write(
            &out.join("representations.txt"),
            formats::representations_sidecar(reps.len(), REPRESENTATION_DIM, fed.round()),
        )?;
        write(&out.join("representations_index.csv"), formats::representations_index_csv(&reps))?;
    }
    let summary = Summary::from_history(&cfg.federation.algorithm, fed.history(), &cfg.output.targets)?;
    write(&out.join("summary.txt"), summary.render())?;
    Ok(RunOutcome {
        history: fed.history().to_vec(),
        summary,
        gate_rows,
    })
}

/// Loads `config` and runs it.
pub fn run_file(config: &Path, out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let (cfg, base) = load_config(config)?;
    run(&cfg, &base, out, opts)
}
