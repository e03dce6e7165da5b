//! `diagnose`: randomized quantile residuals and QQ data for a finished fit.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use zinb_core::diagnostics::{ks_test_standard_normal, rqr};
use zinb_core::numeric::normal_quantile;

use crate::artifacts::{read_bin, states_from_rows, BinKind};
use crate::error::{CliError, Result};
use crate::fmt;

use super::{reload_fit, write_text, RQR_STREAM};

#[derive(Serialize)]
struct DiagnoseReport {
    n_units: usize,
    ks_statistic: f64,
    ks_p: f64,
    clamped: usize,
}

pub fn run(fit_dir: &Path, data_config: Option<&Path>) -> Result<()> {
    let fit = reload_fit(fit_dir, data_config)?;
    let data = &fit.loaded.dataset;
    if fit.record.n_units != data.n_units() {
        return Err(CliError::input(format!(
            "fit covers {} units but the data loads {}",
            fit.record.n_units,
            data.n_units()
        )));
    }

    let draws_bin = read_bin(&fit_dir.join("draws.bin"))?;
    if draws_bin.kind != BinKind::Draws {
        return Err(CliError::input("draws.bin does not hold parameter draws"));
    }
    let z_mask: Vec<bool> = data.y.iter().map(|&y| y > 0).collect();
    let states = states_from_rows(
        &fit.spec,
        data.n_covariates(),
        &draws_bin.data,
        draws_bin.n_cols,
        &z_mask,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(fit.record.seed);
    rng.set_stream(RQR_STREAM);
    let r = rqr(&fit.spec, data, fit.basis.as_ref(), &states, &mut rng)
        .map_err(CliError::from)?;
    let ks = ks_test_standard_normal(&r.residuals).map_err(CliError::from)?;

    let mut rqr_csv = String::from("county_id,year,y,pit,residual\n");
    for i in 0..data.n_units() {
        rqr_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fit.loaded.county_ids[data.county_index[i]],
            fit.loaded.year_labels[data.year_index[i]],
            data.y[i],
            fmt::float(r.pit[i]),
            fmt::float(r.residuals[i]),
        ));
    }
    write_text(&fit_dir.join("rqr.csv"), &rqr_csv)?;

    let mut sorted = r.residuals.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut qq = String::from("theoretical,sample\n");
    for (i, &s) in sorted.iter().enumerate() {
        let q = normal_quantile((i as f64 + 0.5) / n as f64);
        qq.push_str(&format!("{},{}\n", fmt::float(q), fmt::float(s)));
    }
    write_text(&fit_dir.join("qq.csv"), &qq)?;

    let report = DiagnoseReport {
        n_units: n,
        ks_statistic: ks.statistic,
        ks_p: ks.p_value,
        clamped: r.clamped,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::input(format!("cannot serialize report: {e}")))?;
    write_text(&fit_dir.join("diagnose.json"), &(json + "\n"))?;

    println!("n_units={n}");
    println!("ks_statistic={}", fmt::float(ks.statistic));
    println!("ks_p={}", fmt::float(ks.p_value));
    println!("clamped={}", r.clamped);
    Ok(())
}
