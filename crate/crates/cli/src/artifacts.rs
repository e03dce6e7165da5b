//! On-disk artifacts: packed draw matrices and the run metadata record.
//!
//! Binary layout (little-endian throughout): magic `ZNBS`, u32 version,
//! u32 kind (1 = parameter draws, 2 = pointwise log-likelihood), u32 chain
//! count, u32 rows per chain, u32 columns, u32 name-block byte length, the
//! newline-joined UTF-8 column names, then chains × rows × columns f64
//! values in chain-major, row-major order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use zinb_core::model::{CountFamily, ModelSpec};
use zinb_core::ParameterState;

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"ZNBS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Draws,
    PointwiseLoglik,
}

impl BinKind {
    fn code(self) -> u32 {
        match self {
            BinKind::Draws => 1,
            BinKind::PointwiseLoglik => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(BinKind::Draws),
            2 => Ok(BinKind::PointwiseLoglik),
            other => Err(CliError::input(format!("unknown artifact kind {other}"))),
        }
    }
}

/// A chain-major matrix artifact.
#[derive(Debug, Clone)]
pub struct BinMatrix {
    pub kind: BinKind,
    pub n_chains: usize,
    pub rows_per_chain: usize,
    pub n_cols: usize,
    /// Column names (empty for log-likelihood matrices).
    pub names: Vec<String>,
    /// chains × rows × cols values.
    pub data: Vec<f64>,
}

impl BinMatrix {
    pub fn chain_rows(&self, chain: usize) -> &[f64] {
        let stride = self.rows_per_chain * self.n_cols;
        &self.data[chain * stride..(chain + 1) * stride]
    }

    pub fn total_rows(&self) -> usize {
        self.n_chains * self.rows_per_chain
    }
}

pub fn write_bin(path: &Path, m: &BinMatrix) -> Result<()> {
    let expected = m.n_chains * m.rows_per_chain * m.n_cols;
    if m.data.len() != expected {
        return Err(CliError::input(format!(
            "artifact data length {} does not match dims {expected}",
            m.data.len()
        )));
    }
    let names = m.names.join("\n");
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(&MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&m.kind.code().to_le_bytes())?;
    f.write_all(&(m.n_chains as u32).to_le_bytes())?;
    f.write_all(&(m.rows_per_chain as u32).to_le_bytes())?;
    f.write_all(&(m.n_cols as u32).to_le_bytes())?;
    f.write_all(&(names.len() as u32).to_le_bytes())?;
    f.write_all(names.as_bytes())?;
    let mut buf = Vec::with_capacity(m.data.len() * 8);
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_bin(path: &Path) -> Result<BinMatrix> {
    let mut f = std::fs::File::open(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    let name = path.display();
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)
        .map_err(|_| CliError::input(format!("{name}: truncated header")))?;
    if magic != MAGIC {
        return Err(CliError::input(format!(
            "{name}: bad magic {magic:?}; not a ZNBS artifact"
        )));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |f: &mut std::fs::File, what: &str| -> Result<u32> {
        f.read_exact(&mut u32buf)
            .map_err(|_| CliError::input(format!("{name}: truncated {what}")))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut f, "version")?;
    if version != VERSION {
        return Err(CliError::input(format!(
            "{name}: unsupported artifact version {version} (expected {VERSION})"
        )));
    }
    let kind = BinKind::from_code(read_u32(&mut f, "kind")?)?;
    let n_chains = read_u32(&mut f, "chain count")? as usize;
    let rows_per_chain = read_u32(&mut f, "row count")? as usize;
    let n_cols = read_u32(&mut f, "column count")? as usize;
    let name_len = read_u32(&mut f, "name block")? as usize;
    let mut name_bytes = vec![0u8; name_len];
    f.read_exact(&mut name_bytes)
        .map_err(|_| CliError::input(format!("{name}: truncated name block")))?;
    let names: Vec<String> = if name_len == 0 {
        Vec::new()
    } else {
        String::from_utf8(name_bytes)
            .map_err(|_| CliError::input(format!("{name}: name block is not UTF-8")))?
            .split('\n')
            .map(|s| s.to_string())
            .collect()
    };
    let expected = n_chains * rows_per_chain * n_cols;
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != expected * 8 {
        return Err(CliError::input(format!(
            "{name}: {} data bytes, expected {}",
            raw.len(),
            expected * 8
        )));
    }
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(BinMatrix {
        kind,
        n_chains,
        rows_per_chain,
        n_cols,
        names,
        data,
    })
}

/// Rebuilds parameter states from packed draw rows (z is not stored; it is
/// reset to the y > 0 mask, which marginal summaries never consult).
pub fn states_from_rows(
    spec: &ModelSpec,
    n_covariates: usize,
    rows: &[f64],
    n_cols: usize,
    z_mask: &[bool],
) -> Result<Vec<ParameterState>> {
    let p = n_covariates;
    let mut expect = 2 * p;
    if spec.count_family == CountFamily::NegBinomial {
        expect += 1;
    }
    if spec.spatial {
        expect += spec.q + 1;
    }
    if n_cols != expect {
        return Err(CliError::input(format!(
            "draw matrix has {n_cols} columns, the model expects {expect}"
        )));
    }
    let mut out = Vec::with_capacity(rows.len() / n_cols);
    for row in rows.chunks_exact(n_cols) {
        let mut at = 0usize;
        let beta1 = nalgebra::DVector::from_row_slice(&row[at..at + p]);
        at += p;
        let beta2 = nalgebra::DVector::from_row_slice(&row[at..at + p]);
        at += p;
        let theta = if spec.count_family == CountFamily::NegBinomial {
            let t = row[at];
            at += 1;
            Some(t)
        } else {
            None
        };
        let (delta, sigma_w) = if spec.spatial {
            let d = nalgebra::DVector::from_row_slice(&row[at..at + spec.q]);
            at += spec.q;
            let s = row[at];
            at += 1;
            (d, Some(s))
        } else {
            (nalgebra::DVector::zeros(0), None)
        };
        debug_assert_eq!(at, n_cols);
        out.push(ParameterState {
            beta1,
            beta2,
            theta,
            delta,
            sigma_w,
            z: z_mask.to_vec(),
        });
    }
    Ok(out)
}

/// Machine-readable record of one fit, written as run.json.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub command: String,
    pub seed: u64,
    pub n_chains: usize,
    pub paths: PathsRecord,
    pub model: ModelRecord,
    pub sampler: SamplerRecord,
    pub n_units: usize,
    pub n_counties: usize,
    pub n_years: usize,
    pub n_draws_per_chain: usize,
    pub dropped_missing: usize,
    pub unmatched_keys: usize,
    pub acceptance_rates: Vec<ChainRates>,
    /// Largest split-R̂ across parameters (absent for one chain).
    pub rhat_max: Option<f64>,
    pub warnings: Vec<String>,
    pub clamp_events: u64,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PathsRecord {
    pub counts: String,
    pub covariates: String,
    pub adjacency: Option<String>,
    pub out_dir: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelRecord {
    pub family: String,
    pub spatial: bool,
    pub q_requested: Option<usize>,
    pub q_used: usize,
    pub prior_beta_sd: f64,
    pub prior_log_theta_sd: f64,
    pub prior_sigma_w_scale: f64,
}

impl ModelRecord {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec {
            count_family: CountFamily::parse(&self.family).map_err(CliError::from)?,
            spatial: self.spatial,
            q: self.q_used,
            prior_beta_sd: self.prior_beta_sd,
            prior_log_theta_sd: self.prior_log_theta_sd,
            prior_sigma_w_scale: self.prior_sigma_w_scale,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SamplerRecord {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub target_accept_vector: f64,
    pub target_accept_scalar: f64,
    pub adapt_window: usize,
    pub threads: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChainRates {
    pub chain: usize,
    pub seed: u64,
    pub rates: Vec<BlockRate>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BlockRate {
    pub block: String,
    pub rate: f64,
}

pub fn write_run_record(path: &Path, record: &RunRecord) -> Result<()> {
    let json = serde_json::to_string_pretty(record)
        .map_err(|e| CliError::input(format!("cannot serialize run record: {e}")))?;
    std::fs::write(path, json + "\n")
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_run_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("{}: invalid run record: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.bin");
        let m = BinMatrix {
            kind: BinKind::Draws,
            n_chains: 2,
            rows_per_chain: 3,
            n_cols: 2,
            names: vec!["a".into(), "b".into()],
            data: (0..12).map(|i| i as f64 * 0.5 - 1.0).collect(),
        };
        write_bin(&path, &m).unwrap();
        let back = read_bin(&path).unwrap();
        assert_eq!(back.kind, BinKind::Draws);
        assert_eq!(back.n_chains, 2);
        assert_eq!(back.names, m.names);
        assert_eq!(back.data, m.data);
        assert_eq!(back.chain_rows(1), &m.data[6..]);
    }

    #[test]
    fn bin_rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPExxxxxxxxxxxxxxxxxxxx").unwrap();
        let err = read_bin(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");

        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 20]);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_bin(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported artifact version"), "{err}");
    }

    #[test]
    fn states_round_trip_layout() {
        let spec = ModelSpec {
            spatial: true,
            q: 2,
            ..ModelSpec::default()
        };
        // beta1 (2), beta2 (2), theta, delta (2), sigma_w → 8 columns.
        let row: Vec<f64> = vec![0.1, 0.2, 0.3, 0.4, 1.5, -0.6, 0.7, 0.9];
        let states = states_from_rows(&spec, 2, &row, 8, &[true, false]).unwrap();
        assert_eq!(states.len(), 1);
        let s = &states[0];
        assert_eq!(s.beta1.as_slice(), &[0.1, 0.2]);
        assert_eq!(s.beta2.as_slice(), &[0.3, 0.4]);
        assert_eq!(s.theta, Some(1.5));
        assert_eq!(s.delta.as_slice(), &[-0.6, 0.7]);
        assert_eq!(s.sigma_w, Some(0.9));
        assert_eq!(s.scalar_values(), row);
    }
}
