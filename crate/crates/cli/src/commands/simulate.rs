//! `simulate`: draw a synthetic dataset and export it in the ingestion formats.

use std::path::Path;

use serde::Serialize;
use zinb_core::simulate::{simulate_dataset, SpatialMode};

use crate::config::scenario_from_file;
use crate::error::Result;
use crate::fmt;

use super::write_text;

#[derive(Serialize)]
struct TruthParams {
    beta1: Vec<f64>,
    beta2: Vec<f64>,
    theta: f64,
    spatial: String,
    q: usize,
    sigma_w: Option<f64>,
    delta: Vec<f64>,
    seed: u64,
}

pub fn run(scenario_path: &Path, out_dir: &Path) -> Result<()> {
    let scenario = scenario_from_file(scenario_path)?;
    let sim = simulate_dataset(&scenario)?;
    std::fs::create_dir_all(out_dir)?;

    let data = &sim.dataset;
    let ids = sim.graph.county_ids();
    let has_population = data.population.is_some();

    let mut counts = String::from(if has_population {
        "county_id,year,y,population\n"
    } else {
        "county_id,year,y\n"
    });
    for i in 0..data.n_units() {
        counts.push_str(&format!(
            "{},{},{}",
            ids[data.county_index[i]],
            data.year_index[i],
            data.y[i]
        ));
        if let Some(pop) = &data.population {
            counts.push_str(&format!(",{}", fmt::float(pop[i])));
        }
        counts.push('\n');
    }
    write_text(&out_dir.join("counts.csv"), &counts)?;

    let k = data.n_covariates() - 1;
    let mut covs = String::from("county_id,year");
    for name in &data.covariate_names[1..] {
        covs.push(',');
        covs.push_str(name);
    }
    covs.push('\n');
    for i in 0..data.n_units() {
        covs.push_str(&format!(
            "{},{}",
            ids[data.county_index[i]],
            data.year_index[i]
        ));
        for j in 0..k {
            covs.push_str(&format!(",{}", fmt::float(data.design[(i, j + 1)])));
        }
        covs.push('\n');
    }
    write_text(&out_dir.join("covariates.csv"), &covs)?;

    let mut adj = String::from("county_id_a,county_id_b\n");
    for &(a, b) in sim.graph.edges() {
        adj.push_str(&format!("{},{}\n", ids[a], ids[b]));
    }
    write_text(&out_dir.join("adjacency.txt"), &adj)?;

    let mut truth = String::from("county_id,year,w,z,pi,mu\n");
    for i in 0..data.n_units() {
        truth.push_str(&format!(
            "{},{},{},{},{},{}\n",
            ids[data.county_index[i]],
            data.year_index[i],
            fmt::float(sim.truth.w[data.county_index[i]]),
            u8::from(sim.truth.z[i]),
            fmt::float(sim.truth.pi[i]),
            fmt::float(sim.truth.mu[i]),
        ));
    }
    write_text(&out_dir.join("truth.csv"), &truth)?;

    let (spatial_name, q, sigma_w) = match scenario.spatial_mode {
        SpatialMode::None => ("none".to_string(), 0, None),
        SpatialMode::Moran { q, sigma_w } => ("moran".to_string(), q, Some(sigma_w)),
    };
    let params = TruthParams {
        beta1: sim.truth.beta1.iter().copied().collect(),
        beta2: sim.truth.beta2.iter().copied().collect(),
        theta: sim.truth.theta,
        spatial: spatial_name,
        q,
        sigma_w,
        delta: sim.truth.delta.iter().copied().collect(),
        seed: scenario.seed,
    };
    let json = serde_json::to_string_pretty(&params)
        .map_err(|e| crate::error::CliError::input(format!("cannot serialize truth: {e}")))?;
    write_text(&out_dir.join("truth_params.json"), &(json + "\n"))?;

    let zeros = data.y.iter().filter(|&&y| y == 0).count();
    println!(
        "simulated {} counties x {} years ({} units, zero fraction {:.3}) -> {}",
        data.n_counties,
        data.n_years,
        data.n_units(),
        zeros as f64 / data.n_units() as f64,
        out_dir.display()
    );
    for w in &sim.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
