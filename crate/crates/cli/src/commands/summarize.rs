//! `summarize`: rebuild summary.csv and unit_estimates.csv from stored draws.

use std::path::Path;

use nalgebra::DMatrix;
use zinb_core::diagnostics::summarize;
use zinb_core::sampler::{BlockScales, PosteriorSamples, SamplerConfig};

use crate::artifacts::{read_bin, states_from_rows, BinKind};
use crate::error::{CliError, Result};

use super::{reload_fit, write_summary_csv, write_unit_estimates_csv};

pub fn run(fit_dir: &Path, data_config: Option<&Path>) -> Result<()> {
    let fit = reload_fit(fit_dir, data_config)?;
    let data = &fit.loaded.dataset;

    let draws_bin = read_bin(&fit_dir.join("draws.bin"))?;
    if draws_bin.kind != BinKind::Draws {
        return Err(CliError::input("draws.bin does not hold parameter draws"));
    }
    let loglik_bin = read_bin(&fit_dir.join("pointwise_loglik.bin"))?;
    if loglik_bin.kind != BinKind::PointwiseLoglik {
        return Err(CliError::input(
            "pointwise_loglik.bin does not hold a log-likelihood matrix",
        ));
    }
    if draws_bin.n_chains != loglik_bin.n_chains
        || draws_bin.rows_per_chain != loglik_bin.rows_per_chain
    {
        return Err(CliError::input("draws and log-likelihood artifacts disagree on shape"));
    }

    let z_mask: Vec<bool> = data.y.iter().map(|&y| y > 0).collect();
    let mut chains: Vec<PosteriorSamples> = Vec::with_capacity(draws_bin.n_chains);
    for c in 0..draws_bin.n_chains {
        let states = states_from_rows(
            &fit.spec,
            data.n_covariates(),
            draws_bin.chain_rows(c),
            draws_bin.n_cols,
            &z_mask,
        )?;
        let pointwise = DMatrix::from_row_slice(
            loglik_bin.rows_per_chain,
            loglik_bin.n_cols,
            loglik_bin.chain_rows(c),
        );
        let seed = fit.record.seed + c as u64;
        chains.push(PosteriorSamples {
            draws: states,
            pointwise_loglik: pointwise,
            acceptance_rates: Vec::new(),
            final_scales: BlockScales::default(),
            adaptation_log: Vec::new(),
            clamp_events: 0,
            seed,
            config: SamplerConfig {
                n_iterations: fit.record.sampler.iterations,
                n_burnin: fit.record.sampler.burnin,
                thin: fit.record.sampler.thin,
                seed,
                ..SamplerConfig::default()
            },
        });
    }

    let refs: Vec<&PosteriorSamples> = chains.iter().collect();
    let summary = summarize(&refs, &fit.spec, data, fit.basis.as_ref()).map_err(CliError::from)?;
    write_summary_csv(&fit_dir.join("summary.csv"), &summary)?;
    write_unit_estimates_csv(
        &fit_dir.join("unit_estimates.csv"),
        &summary,
        &fit.loaded.county_ids,
        &fit.loaded.year_labels,
    )?;
    println!(
        "summaries rebuilt from {} chains x {} draws -> {}",
        draws_bin.n_chains,
        draws_bin.rows_per_chain,
        fit_dir.display()
    );
    Ok(())
}
