//! `fit`: run the sampler and write all artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use zinb_core::diagnostics::summarize;
use zinb_core::model::{default_basis_rank, parameter_names, CountFamily, ModelSpec};
use zinb_core::sampler::{run_chains, SamplerConfig};

use crate::artifacts::{
    write_bin, write_run_record, BinKind, BinMatrix, BlockRate, ChainRates, ModelRecord,
    PathsRecord, RunRecord, SamplerRecord,
};
use crate::config::RunConfig;
use crate::data::load_dataset;
use crate::error::Result;

use super::{build_spatial, write_summary_csv, write_unit_estimates_csv};

#[derive(Debug, Clone)]
pub struct FitOverrides {
    pub spatial: Option<bool>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

pub fn run(config_path: &Path, overrides: &FitOverrides) -> Result<()> {
    let started = Instant::now();
    let mut cfg = RunConfig::from_file(config_path)?;
    if let Some(s) = overrides.spatial {
        cfg.spatial = s;
    }
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(c) = overrides.chains {
        cfg.chains = c.max(1);
    }
    if let Some(t) = overrides.threads {
        cfg.threads = t;
    }
    if let Some(out) = &overrides.out_dir {
        cfg.out_dir = out.clone();
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| crate::error::CliError::input(format!("cannot build thread pool: {e}")))?;
    pool.install(|| fit_in_pool(&cfg, started))
}

fn fit_in_pool(cfg: &RunConfig, started: Instant) -> Result<()> {
    let loaded = load_dataset(&cfg.counts, &cfg.covariates)?;
    let data = &loaded.dataset;
    let mut warnings = Vec::new();
    if loaded.dropped_missing > 0 {
        warnings.push(format!("{} rows dropped for missing values", loaded.dropped_missing));
    }
    if loaded.unmatched_keys > 0 {
        warnings.push(format!(
            "{} (county, year) keys present in only one input file",
            loaded.unmatched_keys
        ));
    }

    let q_requested = if cfg.spatial {
        Some(cfg.q.unwrap_or_else(|| default_basis_rank(data.n_counties)))
    } else {
        None
    };
    let basis = match q_requested {
        Some(q_req) => {
            let adjacency = cfg.adjacency.as_ref().ok_or_else(|| {
                crate::error::CliError::input("spatial fits need an `adjacency` path in the config")
            })?;
            let (_graph, basis, mut w) = build_spatial(&loaded.county_ids, adjacency, q_req)?;
            warnings.append(&mut w);
            Some(basis)
        }
        None => None,
    };
    let q_used = basis.as_ref().map_or(0, |b| b.rank());

    let spec = ModelSpec {
        count_family: cfg.family,
        spatial: basis.is_some(),
        q: q_used,
        prior_beta_sd: cfg.prior_beta_sd,
        prior_log_theta_sd: cfg.prior_log_theta_sd,
        prior_sigma_w_scale: cfg.prior_sigma_w_scale,
    };
    let sampler_config = SamplerConfig {
        n_iterations: cfg.iterations,
        n_burnin: cfg.burnin,
        thin: cfg.thin,
        seed: cfg.seed,
        target_accept_vector: cfg.target_accept_vector,
        target_accept_scalar: cfg.target_accept_scalar,
        adapt_window: cfg.adapt_window,
        ..SamplerConfig::default()
    };
    let seeds: Vec<u64> = (0..cfg.chains as u64).map(|j| cfg.seed + j).collect();

    let chain_set = run_chains(&spec, data, basis.as_ref(), &sampler_config, &seeds)?;
    let chain_refs: Vec<&zinb_core::PosteriorSamples> = chain_set.chains.iter().collect();
    let summary = summarize(&chain_refs, &spec, data, basis.as_ref())?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    write_summary_csv(&cfg.out_dir.join("summary.csv"), &summary)?;
    write_unit_estimates_csv(
        &cfg.out_dir.join("unit_estimates.csv"),
        &summary,
        &loaded.county_ids,
        &loaded.year_labels,
    )?;

    let names = parameter_names(&spec, &data.covariate_names);
    let n_draws = chain_set.chains[0].n_draws();
    let mut draw_data = Vec::with_capacity(cfg.chains * n_draws * names.len());
    let mut loglik_data = Vec::with_capacity(cfg.chains * n_draws * data.n_units());
    for chain in &chain_set.chains {
        for d in &chain.draws {
            draw_data.extend(d.scalar_values());
        }
        let m = &chain.pointwise_loglik;
        for s in 0..m.nrows() {
            for i in 0..m.ncols() {
                loglik_data.push(m[(s, i)]);
            }
        }
    }
    write_bin(
        &cfg.out_dir.join("draws.bin"),
        &BinMatrix {
            kind: BinKind::Draws,
            n_chains: cfg.chains,
            rows_per_chain: n_draws,
            n_cols: names.len(),
            names,
            data: draw_data,
        },
    )?;
    write_bin(
        &cfg.out_dir.join("pointwise_loglik.bin"),
        &BinMatrix {
            kind: BinKind::PointwiseLoglik,
            n_chains: cfg.chains,
            rows_per_chain: n_draws,
            n_cols: data.n_units(),
            names: Vec::new(),
            data: loglik_data,
        },
    )?;

    let rhat_max = chain_set
        .rhat
        .iter()
        .map(|r| r.value)
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        });
    if let Some(r) = rhat_max {
        if r > 1.1 {
            warnings.push(format!(
                "nonconvergence heuristic: largest split-R\u{302} = {r:.4} exceeds 1.1"
            ));
        }
    }
    let clamp_events: u64 = chain_set.chains.iter().map(|c| c.clamp_events).sum();

    let record = RunRecord {
        version: 1,
        command: "fit".into(),
        seed: cfg.seed,
        n_chains: cfg.chains,
        paths: PathsRecord {
            counts: cfg.counts.display().to_string(),
            covariates: cfg.covariates.display().to_string(),
            adjacency: cfg.adjacency.as_ref().map(|p| p.display().to_string()),
            out_dir: cfg.out_dir.display().to_string(),
        },
        model: ModelRecord {
            family: match cfg.family {
                CountFamily::NegBinomial => "negative-binomial".into(),
                CountFamily::Poisson => "poisson".into(),
            },
            spatial: spec.spatial,
            q_requested,
            q_used,
            prior_beta_sd: cfg.prior_beta_sd,
            prior_log_theta_sd: cfg.prior_log_theta_sd,
            prior_sigma_w_scale: cfg.prior_sigma_w_scale,
        },
        sampler: SamplerRecord {
            iterations: cfg.iterations,
            burnin: cfg.burnin,
            thin: cfg.thin,
            target_accept_vector: cfg.target_accept_vector,
            target_accept_scalar: cfg.target_accept_scalar,
            adapt_window: cfg.adapt_window,
            threads: cfg.threads,
        },
        n_units: data.n_units(),
        n_counties: data.n_counties,
        n_years: data.n_years,
        n_draws_per_chain: n_draws,
        dropped_missing: loaded.dropped_missing,
        unmatched_keys: loaded.unmatched_keys,
        acceptance_rates: chain_set
            .chains
            .iter()
            .enumerate()
            .map(|(i, c)| ChainRates {
                chain: i,
                seed: c.seed,
                rates: c
                    .acceptance_rates
                    .iter()
                    .map(|(b, r)| BlockRate {
                        block: b.name().into(),
                        rate: *r,
                    })
                    .collect(),
            })
            .collect(),
        rhat_max,
        warnings: warnings.clone(),
        clamp_events,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    write_run_record(&cfg.out_dir.join("run.json"), &record)?;

    println!(
        "fit complete: {} chains x {} draws over {} units -> {}",
        cfg.chains,
        n_draws,
        data.n_units(),
        cfg.out_dir.display()
    );
    for w in &warnings {
        println!("warning: {w}");
    }
    Ok(())
}
