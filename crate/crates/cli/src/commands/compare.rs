//! `compare`: WAIC comparison of two fits over the same dataset.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use zinb_core::diagnostics::{compare_waic, CompareVerdict};

use crate::artifacts::{read_bin, BinKind};
use crate::error::{CliError, Result};
use crate::fmt;

fn load_loglik(fit_dir: &Path) -> Result<DMatrix<f64>> {
    let bin = read_bin(&fit_dir.join("pointwise_loglik.bin"))?;
    if bin.kind != BinKind::PointwiseLoglik {
        return Err(CliError::input(format!(
            "{} does not hold a pointwise log-likelihood matrix",
            fit_dir.display()
        )));
    }
    Ok(DMatrix::from_row_slice(
        bin.total_rows(),
        bin.n_cols,
        &bin.data,
    ))
}

#[derive(Serialize)]
struct CompareReport {
    waic_a: f64,
    se_a: f64,
    p_waic_a: f64,
    waic_b: f64,
    se_b: f64,
    p_waic_b: f64,
    diff: f64,
    se_diff: f64,
    verdict: String,
}

pub fn run(fit_a: &Path, fit_b: &Path, out: Option<&Path>) -> Result<()> {
    let a = load_loglik(fit_a)?;
    let b = load_loglik(fit_b)?;
    if a.ncols() != b.ncols() {
        return Err(CliError::input(format!(
            "fits cover different unit counts: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let cmp = compare_waic(&a, &b).map_err(CliError::from)?;
    let verdict = match cmp.verdict {
        CompareVerdict::Indistinguishable => "indistinguishable",
        CompareVerdict::FirstBetter => "fit-a",
        CompareVerdict::SecondBetter => "fit-b",
    };
    println!("waic_a={}", fmt::float(cmp.first.waic));
    println!("se_a={}", fmt::float(cmp.first.se));
    println!("p_waic_a={}", fmt::float(cmp.first.p_waic));
    println!("waic_b={}", fmt::float(cmp.second.waic));
    println!("se_b={}", fmt::float(cmp.second.se));
    println!("p_waic_b={}", fmt::float(cmp.second.p_waic));
    println!("diff={}", fmt::float(cmp.diff));
    println!("se_diff={}", fmt::float(cmp.se_diff));
    println!("verdict={verdict}");

    if let Some(path) = out {
        let report = CompareReport {
            waic_a: cmp.first.waic,
            se_a: cmp.first.se,
            p_waic_a: cmp.first.p_waic,
            waic_b: cmp.second.waic,
            se_b: cmp.second.se,
            p_waic_b: cmp.second.p_waic,
            diff: cmp.diff,
            se_diff: cmp.se_diff,
            verdict: verdict.to_string(),
        };
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::input(format!("cannot serialize report: {e}")))?;
        super::write_text(path, &(json + "\n"))?;
    }
    Ok(())
}
