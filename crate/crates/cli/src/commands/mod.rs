//! Subcommand implementations.

pub mod compare;
pub mod diagnose;
pub mod fit;
pub mod simulate;
pub mod summarize;

use std::io::Write;
use std::path::Path;

use zinb_core::diagnostics::FitSummary;
use zinb_core::graph::AdjacencyGraph;
use zinb_core::moran::{compute_basis, MoranBasis};

use crate::artifacts::{read_run_record, RunRecord};
use crate::data::{load_dataset, read_adjacency, LoadedData};
use crate::error::{CliError, Result};
use crate::fmt;

/// RNG stream (iteration 0) reserved for residual randomization.
pub(crate) const RQR_STREAM: u64 = 7;

pub(crate) fn write_text(path: &Path, content: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

/// Builds the county graph over the dataset's county universe and the
/// truncated Moran basis; isolated counties and rank truncation become
/// warnings.
pub(crate) fn build_spatial(
    county_ids: &[String],
    adjacency: &Path,
    q_requested: usize,
) -> Result<(AdjacencyGraph, MoranBasis, Vec<String>)> {
    let edges = read_adjacency(adjacency)?;
    let graph = AdjacencyGraph::with_universe(county_ids.to_vec(), &edges)
        .map_err(CliError::from)?;
    let mut warnings = Vec::new();
    let isolated = graph.isolated_counties();
    if !isolated.is_empty() {
        warnings.push(format!(
            "{} counties have no neighbors in {}",
            isolated.len(),
            adjacency.display()
        ));
    }
    let (basis, mut basis_warnings) = compute_basis(&graph, q_requested).map_err(CliError::from)?;
    warnings.append(&mut basis_warnings);
    if basis.rank() == 0 {
        return Err(CliError::input(
            "the Moran operator has no strictly positive eigenvalues; refit without spatial effects",
        ));
    }
    Ok((graph, basis, warnings))
}

pub(crate) fn write_summary_csv(path: &Path, summary: &FitSummary) -> Result<()> {
    let mut out = String::from("parameter,mean,sd,hpd_lo,hpd_hi,ess,rhat,excludes_zero\n");
    for p in &summary.parameters {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.name,
            fmt::float(p.mean),
            fmt::float(p.sd),
            fmt::float(p.hpd_lo),
            fmt::float(p.hpd_hi),
            fmt::opt_float(p.ess),
            fmt::opt_float(p.rhat),
            p.excludes_zero
        ));
    }
    write_text(path, &out)
}

pub(crate) fn write_unit_estimates_csv(
    path: &Path,
    summary: &FitSummary,
    county_ids: &[String],
    year_labels: &[i64],
) -> Result<()> {
    let mut out = String::from(
        "county_id,year,pi_mean,pi_hpd_lo,pi_hpd_hi,mu_mean,mu_hpd_lo,mu_hpd_hi,\
         rate_per_1000_mean,rate_per_1000_hpd_lo,rate_per_1000_hpd_hi\n",
    );
    for u in &summary.units {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            county_ids[u.county_index],
            year_labels[u.year_index],
            fmt::float(u.pi_mean),
            fmt::float(u.pi_hpd.0),
            fmt::float(u.pi_hpd.1),
            fmt::float(u.mu_mean),
            fmt::float(u.mu_hpd.0),
            fmt::float(u.mu_hpd.1),
            fmt::opt_float(u.rate_mean),
            fmt::opt_float(u.rate_hpd.map(|h| h.0)),
            fmt::opt_float(u.rate_hpd.map(|h| h.1)),
        ));
    }
    write_text(path, &out)
}

/// Reloads data, model spec, and basis from a fit directory's run record.
/// `data_config` optionally overrides the recorded input paths.
pub(crate) struct ReloadedFit {
    pub record: RunRecord,
    pub loaded: LoadedData,
    pub spec: zinb_core::ModelSpec,
    pub basis: Option<MoranBasis>,
}

pub(crate) fn reload_fit(fit_dir: &Path, data_config: Option<&Path>) -> Result<ReloadedFit> {
    let record = read_run_record(&fit_dir.join("run.json"))?;
    let (counts, covariates, adjacency) = match data_config {
        Some(cfg_path) => {
            let cfg = crate::config::RunConfig::from_file(cfg_path)?;
            (cfg.counts, cfg.covariates, cfg.adjacency)
        }
        None => (
            record.paths.counts.clone().into(),
            record.paths.covariates.clone().into(),
            record.paths.adjacency.clone().map(Into::into),
        ),
    };
    let loaded = load_dataset(&counts, &covariates)?;
    let spec = record.model.to_spec()?;
    let basis = if spec.spatial {
        let adjacency = adjacency.ok_or_else(|| {
            CliError::input("the fit is spatial but no adjacency path is available")
        })?;
        let (_graph, basis, _warnings) =
            build_spatial(&loaded.county_ids, &adjacency, record.model.q_used)?;
        if basis.rank() != spec.q {
            return Err(CliError::input(format!(
                "rebuilt basis rank {} does not match the recorded rank {}",
                basis.rank(),
                spec.q
            )));
        }
        Some(basis)
    } else {
        None
    };
    Ok(ReloadedFit {
        record,
        loaded,
        spec,
        basis,
    })
}
