//! Output bundle and checkpoint encodings. Byte layouts are described in
//! the README.
//!
//! Floats in CSV files use Rust's shortest round-trip formatting, so
//! parsing a value back yields the identical number.

use std::fmt::Write as _;

use pfedmoe_core::metrics::{GateRow, RepresentationRow, RoundMetrics};
use pfedmoe_core::{Real, Snapshot};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};

pub const METRICS_HEADER: &str = "round,mean_acc,min_acc,max_acc,mean_loss,params_tx_cum,flops_cum,delta_sq_mean";
pub const PER_CLIENT_HEADER: &str = "round,client_id,acc";
pub const GATE_HEADER: &str = "round,client_id,sample_idx,label,alpha_local";
pub const REPRESENTATION_INDEX_HEADER: &str = "row,client_id,sample_idx,label";

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PFCKPT01";

pub fn metrics_csv(history: &[RoundMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in history {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.round, m.mean_acc, m.min_acc, m.max_acc, m.mean_loss, m.params_tx_cum, m.flops_cum, m.delta_sq_mean
        )
        .unwrap();
    }
    s
}

pub fn per_client_csv(history: &[RoundMetrics]) -> String {
    let mut s = format!("{PER_CLIENT_HEADER}\n");
    for m in history {
        for (k, acc) in m.accuracies.iter().enumerate() {
            writeln!(s, "{},{k},{acc}", m.round).unwrap();
        }
    }
    s
}

pub fn gate_rows_csv(rows: &[GateRow]) -> String {
    let mut s = String::new();
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.round, r.client_id, r.sample_index, r.label, r.alpha_local).unwrap();
    }
    s
}

/// Mixed representations as little-endian `f32`, row-major.
pub fn representations_bin(rows: &[RepresentationRow]) -> Vec<u8> {
    let mut out = Vec::with_capacity(rows.iter().map(|r| r.values.len() * 4).sum());
    for r in rows {
        for &v in &r.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn representations_sidecar(rows: usize, dim: usize, round: usize) -> String {
    format!(
        "file = representations.bin\n\
         rows = {rows}\n\
         dim = {dim}\n\
         dtype = f32 little-endian\n\
         layout = row-major, no header, row r occupies bytes [4*dim*r, 4*dim*(r+1))\n\
         round = {round}\n\
         columns = mixed representation a_g * R_g + a_f * R_f, eval mode, one column per feature\n\
         rows_order = client_id ascending, then test sample index ascending\n\
         index = representations_index.csv ({REPRESENTATION_INDEX_HEADER})\n"
    )
}

pub fn representations_index_csv(rows: &[RepresentationRow]) -> String {
    let mut s = format!("{REPRESENTATION_INDEX_HEADER}\n");
    for (i, r) in rows.iter().enumerate() {
        writeln!(s, "{i},{},{},{}", r.client_id, r.sample_index, r.label).unwrap();
    }
    s
}

/// Decodes `representations.bin` into rows of `dim` values.
pub fn read_representations(bytes: &[u8], dim: usize) -> Result<Vec<Vec<f32>>> {
    if dim == 0 || !bytes.len().is_multiple_of(4 * dim) {
        return Err(SimError::Format(format!("{} bytes is not a whole number of {dim}-wide f32 rows", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4 * dim)
        .map(|row| row.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
        .collect())
}

fn csv_rows<'a>(text: &'a str, header: &str, file: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>> {
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(SimError::Format(format!("{file}: expected header '{header}'")));
    }
    Ok(lines.enumerate().map(|(i, l)| (i + 2, l.split(',').collect())))
}

fn field<T: std::str::FromStr>(cols: &[&str], i: usize, file: &str, line: usize) -> Result<T> {
    cols.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| SimError::Format(format!("{file}:{line}: bad column {}", i + 1)))
}

/// One parsed row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub mean_acc: f64,
    pub min_acc: f64,
    pub max_acc: f64,
    pub mean_loss: f64,
    pub params_tx_cum: u64,
    pub flops_cum: u64,
    pub delta_sq_mean: f64,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let f = "metrics.csv";
    csv_rows(text, METRICS_HEADER, f)?
        .map(|(n, c)| {
            Ok(MetricsRow {
                round: field(&c, 0, f, n)?,
                mean_acc: field(&c, 1, f, n)?,
                min_acc: field(&c, 2, f, n)?,
                max_acc: field(&c, 3, f, n)?,
                mean_loss: field(&c, 4, f, n)?,
                params_tx_cum: field(&c, 5, f, n)?,
                flops_cum: field(&c, 6, f, n)?,
                delta_sq_mean: field(&c, 7, f, n)?,
            })
        })
        .collect()
}

/// `(round, client_id, acc)` rows of `per_client.csv`.
pub fn parse_per_client_csv(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let f = "per_client.csv";
    csv_rows(text, PER_CLIENT_HEADER, f)?
        .map(|(n, c)| Ok((field(&c, 0, f, n)?, field(&c, 1, f, n)?, field(&c, 2, f, n)?)))
        .collect()
}

pub fn parse_gate_csv(text: &str) -> Result<Vec<GateRow>> {
    let f = "gate_weights.csv";
    csv_rows(text, GATE_HEADER, f)?
        .map(|(n, c)| {
            Ok(GateRow {
                round: field(&c, 0, f, n)?,
                client_id: field(&c, 1, f, n)?,
                sample_index: field(&c, 2, f, n)?,
                label: field(&c, 3, f, n)?,
                alpha_local: field(&c, 4, f, n)?,
            })
        })
        .collect()
}

pub fn config_digest(echo: &str) -> [u8; 32] {
    Sha256::digest(echo.as_bytes()).into()
}

/// A decoded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_sha256: [u8; 32],
    pub round: usize,
    pub history: Vec<RoundMetrics>,
    pub state: Snapshot,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let history = encode_history(&ckpt.history);
    let state = ckpt.state.encode();
    let mut out = Vec::with_capacity(60 + history.len() + state.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&ckpt.config_sha256);
    out.extend_from_slice(&(ckpt.round as u32).to_le_bytes());
    out.extend_from_slice(&(history.len() as u64).to_le_bytes());
    out.extend_from_slice(&history);
    out.extend_from_slice(&(state.len() as u64).to_le_bytes());
    out.extend_from_slice(&state);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(SimError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let config_sha256 = r.take(32)?.try_into().unwrap();
    let round = r.u32()? as usize;
    let len = r.u64()? as usize;
    let history = decode_history(r.take(len)?)?;
    let len = r.u64()? as usize;
    let state = Snapshot::decode(r.take(len)?).map_err(|e| SimError::Checkpoint(e.to_string()))?;
    if r.pos != bytes.len() {
        return Err(SimError::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        config_sha256,
        round,
        history,
        state,
    })
}

#[allow(clippy::unnecessary_cast)]
fn encode_history(history: &[RoundMetrics]) -> Vec<u8> {
    let mut out = Vec::new();
    let f = |out: &mut Vec<u8>, v: Real| out.extend_from_slice(&(v as f64).to_le_bytes());
    out.extend_from_slice(&(history.len() as u32).to_le_bytes());
    for m in history {
        out.extend_from_slice(&(m.round as u32).to_le_bytes());
        for v in [m.mean_acc, m.min_acc, m.max_acc, m.mean_loss] {
            f(&mut out, v);
        }
        for v in [m.params_tx, m.params_tx_cum, m.flops, m.flops_cum] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        f(&mut out, m.delta_sq_mean);
        out.extend_from_slice(&(m.accuracies.len() as u32).to_le_bytes());
        for &a in &m.accuracies {
            f(&mut out, a);
        }
        out.extend_from_slice(&(m.delta_sq.len() as u32).to_le_bytes());
        for &(k, d) in &m.delta_sq {
            out.extend_from_slice(&(k as u32).to_le_bytes());
            f(&mut out, d);
        }
    }
    out
}

fn decode_history(bytes: &[u8]) -> Result<Vec<RoundMetrics>> {
    let mut r = Reader { bytes, pos: 0 };
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let round = r.u32()? as usize;
        let (mean_acc, min_acc, max_acc, mean_loss) = (r.real()?, r.real()?, r.real()?, r.real()?);
        let (params_tx, params_tx_cum, flops, flops_cum) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
        let delta_sq_mean = r.real()?;
        let accuracies = (0..r.u32()?).map(|_| r.real()).collect::<Result<Vec<_>>>()?;
        let delta_sq = (0..r.u32()?)
            .map(|_| Ok((r.u32()? as usize, r.real()?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(RoundMetrics {
            round,
            accuracies,
            mean_acc,
            min_acc,
            max_acc,
            mean_loss,
            params_tx,
            params_tx_cum,
            flops,
            flops_cum,
            delta_sq,
            delta_sq_mean,
        });
    }
    if r.pos != bytes.len() {
        return Err(SimError::Checkpoint("trailing bytes after metric history".into()));
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SimError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn real(&mut self) -> Result<Real> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()) as Real)
    }
}
