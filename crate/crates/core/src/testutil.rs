//! Shared fixtures for unit tests.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::Dataset;
use crate::numeric;

pub fn standardized_column(raw: &[f64]) -> Vec<f64> {
    let m = numeric::mean(raw);
    let sd = numeric::sample_variance(raw).sqrt();
    raw.iter().map(|v| (v - m) / sd).collect()
}

/// 4 units over 2 counties × 2 years with one standardized covariate.
pub fn small_dataset() -> Dataset {
    let y = vec![0, 3, 1, 0];
    let x1 = standardized_column(&[0.5, -1.0, 2.0, 0.25]);
    let design = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { x1[i] });
    Dataset::new(
        y,
        vec![0, 0, 1, 1],
        vec![0, 1, 0, 1],
        design,
        None,
        vec!["intercept".into(), "x1".into()],
    )
    .unwrap()
}

/// Random standardized design over `n_counties × n_years` units.
pub fn random_dataset(n_counties: usize, n_years: usize, n_covariates: usize, seed: u64) -> Dataset {
    let n = n_counties * n_years;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for _ in 0..n_covariates {
        let raw: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                4.0 * (u - 0.5)
            })
            .collect();
        cols.push(standardized_column(&raw));
    }
    let design = DMatrix::from_fn(n, n_covariates + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            cols[j - 1][i]
        }
    });
    let y: Vec<u64> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let county_index: Vec<usize> = (0..n).map(|i| i / n_years).collect();
    let year_index: Vec<usize> = (0..n).map(|i| i % n_years).collect();
    let mut names = vec!["intercept".to_string()];
    for j in 1..=n_covariates {
        names.push(format!("x{j}"));
    }
    Dataset::new(y, county_index, year_index, design, None, names).unwrap()
}
