//! The run summary: final accuracies, rounds-to-target with the cost of
//! getting there, totals, and the parameter-variation trajectory.
//!
//! It can be built from the in-memory history or recomputed from
//! `metrics.csv` and `per_client.csv`; both give the same document.

use std::fmt::Write as _;

use pfedmoe_core::metrics::{rounds_to_target, RoundMetrics};

use crate::error::{Result, SimError};
use crate::formats::{parse_metrics_csv, parse_per_client_csv};

pub const NOT_REACHED: &str = "not reached";

#[derive(Clone, Debug, PartialEq)]
pub struct TargetResult {
    pub target: f64,
    /// First round with mean accuracy at or above the target.
    pub round: Option<usize>,
    /// Cumulative parameters sent by then.
    pub params_tx: Option<u64>,
    /// Cumulative training FLOPs by then.
    pub flops: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub algorithm: String,
    pub rounds: usize,
    pub final_mean_acc: f64,
    pub final_min_acc: f64,
    pub final_max_acc: f64,
    /// Final accuracy of every client, by id.
    pub final_accuracies: Vec<f64>,
    pub targets: Vec<TargetResult>,
    pub total_params_tx: u64,
    pub total_flops: u64,
    /// Per-round mean parameter variation.
    pub delta_sq: Vec<f64>,
}

struct Row {
    mean_acc: f64,
    min_acc: f64,
    max_acc: f64,
    params_tx_cum: u64,
    flops_cum: u64,
    delta_sq_mean: f64,
}

fn build(algorithm: &str, rows: &[Row], final_accuracies: Vec<f64>, targets: &[f64]) -> Result<Summary> {
    let last = rows.last().ok_or_else(|| SimError::Format("no completed rounds to summarize".into()))?;
    let means: Vec<pfedmoe_core::Real> = rows.iter().map(|r| r.mean_acc as _).collect();
    let targets = targets
        .iter()
        .map(|&target| {
            let round = rounds_to_target(&means, target as _);
            TargetResult {
                target,
                round,
                params_tx: round.map(|t| rows[t - 1].params_tx_cum),
                flops: round.map(|t| rows[t - 1].flops_cum),
            }
        })
        .collect();
    Ok(Summary {
        algorithm: algorithm.into(),
        rounds: rows.len(),
        final_mean_acc: last.mean_acc,
        final_min_acc: last.min_acc,
        final_max_acc: last.max_acc,
        final_accuracies,
        targets,
        total_params_tx: last.params_tx_cum,
        total_flops: last.flops_cum,
        delta_sq: rows.iter().map(|r| r.delta_sq_mean).collect(),
    })
}

impl Summary {
    #[allow(clippy::unnecessary_cast)]
    pub fn from_history(algorithm: &str, history: &[RoundMetrics], targets: &[f64]) -> Result<Summary> {
        let rows: Vec<Row> = history
            .iter()
            .map(|m| Row {
                mean_acc: m.mean_acc as f64,
                min_acc: m.min_acc as f64,
                max_acc: m.max_acc as f64,
                params_tx_cum: m.params_tx_cum,
                flops_cum: m.flops_cum,
                delta_sq_mean: m.delta_sq_mean as f64,
            })
            .collect();
        let finals = history.last().map(|m| m.accuracies.iter().map(|&a| a as f64).collect()).unwrap_or_default();
        build(algorithm, &rows, finals, targets)
    }

    /// Recomputes the summary from the CSV files of a bundle.
    pub fn from_csv(algorithm: &str, metrics: &str, per_client: &str, targets: &[f64]) -> Result<Summary> {
        let parsed = parse_metrics_csv(metrics)?;
        let rows: Vec<Row> = parsed
            .iter()
            .map(|m| Row {
                mean_acc: m.mean_acc,
                min_acc: m.min_acc,
                max_acc: m.max_acc,
                params_tx_cum: m.params_tx_cum,
                flops_cum: m.flops_cum,
                delta_sq_mean: m.delta_sq_mean,
            })
            .collect();
        let last_round = parsed.last().map_or(0, |m| m.round);
        let mut finals: Vec<(usize, f64)> = parse_per_client_csv(per_client)?
            .into_iter()
            .filter(|r| r.0 == last_round)
            .map(|r| (r.1, r.2))
            .collect();
        finals.sort_by_key(|r| r.0);
        build(algorithm, &rows, finals.into_iter().map(|r| r.1).collect(), targets)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "algorithm = {}", self.algorithm);
        let _ = writeln!(s, "rounds = {}", self.rounds);
        let _ = writeln!(s, "final_mean_acc = {}", self.final_mean_acc);
        let _ = writeln!(s, "final_min_acc = {}", self.final_min_acc);
        let _ = writeln!(s, "final_max_acc = {}", self.final_max_acc);
        for (k, a) in self.final_accuracies.iter().enumerate() {
            let _ = writeln!(s, "final_acc.client{k} = {a}");
        }
        for t in &self.targets {
            let show = |v: Option<String>| v.unwrap_or_else(|| NOT_REACHED.into());
            let _ = writeln!(s, "rounds_to_target.{} = {}", t.target, show(t.round.map(|r| r.to_string())));
            let _ = writeln!(s, "params_tx_to_target.{} = {}", t.target, show(t.params_tx.map(|r| r.to_string())));
            let _ = writeln!(s, "flops_to_target.{} = {}", t.target, show(t.flops.map(|r| r.to_string())));
        }
        let _ = writeln!(s, "total_params_tx = {}", self.total_params_tx);
        let _ = writeln!(s, "total_flops = {}", self.total_flops);
        if let (Some(first), Some(last)) = (self.delta_sq.first(), self.delta_sq.last()) {
            let max = self.delta_sq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = self.delta_sq.iter().sum::<f64>() / self.delta_sq.len() as f64;
            let _ = writeln!(s, "delta_sq.first = {first}");
            let _ = writeln!(s, "delta_sq.last = {last}");
            let _ = writeln!(s, "delta_sq.max = {max}");
            let _ = writeln!(s, "delta_sq.mean = {mean}");
        }
        s
    }
}
