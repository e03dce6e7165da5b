//! Domain types: observed data, model variants, and the sampled parameter state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric;

/// Count distribution used for detected observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountFamily {
    /// Negative binomial with mean μ and dispersion θ (variance μ + μ²/θ).
    NegBinomial,
    /// Poisson with mean μ (equi-dispersion alternative).
    Poisson,
}

impl CountFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            CountFamily::NegBinomial => "negative-binomial",
            CountFamily::Poisson => "poisson",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "negative-binomial" | "nb" | "negbinomial" => Ok(CountFamily::NegBinomial),
            "poisson" => Ok(CountFamily::Poisson),
            other => Err(Error::Input(format!("unknown count family `{other}`"))),
        }
    }
}

/// Model variant and prior hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub count_family: CountFamily,
    /// Include Moran-basis spatial random effects in the abundance layer.
    pub spatial: bool,
    /// Basis rank; ignored when `spatial` is false.
    pub q: usize,
    pub prior_beta_sd: f64,
    pub prior_log_theta_sd: f64,
    pub prior_sigma_w_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            count_family: CountFamily::NegBinomial,
            spatial: false,
            q: 0,
            prior_beta_sd: 10.0,
            prior_log_theta_sd: 2.0,
            prior_sigma_w_scale: 1.0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self, n_counties: usize) -> Result<()> {
        if !(self.prior_beta_sd > 0.0 && self.prior_log_theta_sd > 0.0 && self.prior_sigma_w_scale > 0.0)
        {
            return Err(Error::Input("prior hyperparameters must be positive".into()));
        }
        if self.spatial {
            if self.q < 1 {
                return Err(Error::Input("basis rank q must be at least 1 for a spatial model".into()));
            }
            if self.q >= n_counties {
                return Err(Error::Input(format!(
                    "basis rank q = {} must be below the county count {}",
                    self.q, n_counties
                )));
            }
        }
        Ok(())
    }
}

/// Default basis rank for a spatial fit: min(100, ⌊n_counties / 10⌋), at least 1.
pub fn default_basis_rank(n_counties: usize) -> usize {
    (n_counties / 10).clamp(1, 100)
}

/// County-year observations with their standardized design matrix.
///
/// Loaders and the simulator produce rows in county-major, year-minor order;
/// the invariants themselves do not depend on row ordering.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<u64>,
    pub county_index: Vec<usize>,
    pub year_index: Vec<usize>,
    /// One row per unit; first column is the constant intercept.
    pub design: DMatrix<f64>,
    /// Children under five per unit, for per-1,000 rate reporting only.
    pub population: Option<Vec<f64>>,
    /// Column names of `design` ("intercept" first).
    pub covariate_names: Vec<String>,
    pub n_counties: usize,
    pub n_years: usize,
    // Precomputed pieces reused by batched likelihood evaluation.
    pub(crate) lgamma_y_plus_1: Vec<f64>,
    pub(crate) distinct_y: Vec<u64>,
    pub(crate) distinct_slot: Vec<u32>,
}

const STANDARDIZE_TOL: f64 = 1e-8;

impl Dataset {
    /// Validates the invariants and precomputes per-unit constants.
    pub fn new(
        y: Vec<u64>,
        county_index: Vec<usize>,
        year_index: Vec<usize>,
        design: DMatrix<f64>,
        population: Option<Vec<f64>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Input("dataset has no rows".into()));
        }
        if county_index.len() != n || year_index.len() != n || design.nrows() != n {
            return Err(Error::Dimension(format!(
                "row counts disagree: y={}, county={}, year={}, design={}",
                n,
                county_index.len(),
                year_index.len(),
                design.nrows()
            )));
        }
        if let Some(pop) = &population {
            if pop.len() != n {
                return Err(Error::Dimension("population length does not match rows".into()));
            }
            if pop.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(Error::Input("population values must be positive".into()));
            }
        }
        let p = design.ncols();
        if covariate_names.len() != p {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} design columns",
                covariate_names.len(),
                p
            )));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("design matrix contains non-finite values".into()));
        }
        for i in 0..n {
            if design[(i, 0)] != 1.0 {
                return Err(Error::Input(format!(
                    "design row {i} does not start with the intercept constant 1"
                )));
            }
        }
        for (j, name) in covariate_names.iter().enumerate().skip(1) {
            let col: Vec<f64> = design.column(j).iter().copied().collect();
            let m = numeric::mean(&col);
            let sd = numeric::sample_variance(&col).sqrt();
            if m.abs() > STANDARDIZE_TOL {
                return Err(Error::Input(format!(
                    "covariate `{name}` has mean {m:.3e}; columns must be centered"
                )));
            }
            if (sd - 1.0).abs() > STANDARDIZE_TOL {
                return Err(Error::Input(format!(
                    "covariate `{name}` has sample sd {sd:.6}; columns must be standardized"
                )));
            }
        }
        // Full column rank via singular values.
        {
            let svd = design.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let rank = svd
                .singular_values
                .iter()
                .filter(|s| **s > 1e-10 * smax.max(1.0))
                .count();
            if rank < p {
                return Err(Error::Input(format!(
                    "design matrix is rank deficient (rank {rank} < {p} columns)"
                )));
            }
        }
        let n_counties = county_index.iter().copied().max().unwrap() + 1;
        let n_years = year_index.iter().copied().max().unwrap() + 1;
        {
            let mut seen = std::collections::HashSet::with_capacity(n);
            for i in 0..n {
                if !seen.insert((county_index[i], year_index[i])) {
                    return Err(Error::Input(format!(
                        "duplicate (county, year) pair at row {i}: ({}, {})",
                        county_index[i], year_index[i]
                    )));
                }
            }
        }

        let lgamma_y_plus_1: Vec<f64> = y
            .iter()
            .map(|&yi| statrs::function::gamma::ln_gamma(yi as f64 + 1.0))
            .collect();
        let mut distinct_y: Vec<u64> = y.clone();
        distinct_y.sort_unstable();
        distinct_y.dedup();
        let distinct_slot: Vec<u32> = y
            .iter()
            .map(|yi| distinct_y.binary_search(yi).unwrap() as u32)
            .collect();

        Ok(Dataset {
            y,
            county_index,
            year_index,
            design,
            population,
            covariate_names,
            n_counties,
            n_years,
            lgamma_y_plus_1,
            distinct_y,
            distinct_slot,
        })
    }

    pub fn n_units(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.design.ncols()
    }
}

/// One point in parameter space, including the latent detection indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    /// Detection (logit) coefficients.
    pub beta1: DVector<f64>,
    /// Abundance (log-linear) coefficients.
    pub beta2: DVector<f64>,
    /// Dispersion; `None` under the Poisson family.
    pub theta: Option<f64>,
    /// Moran-basis coefficients; empty when non-spatial.
    pub delta: DVector<f64>,
    /// Spatial-effect scale; `None` when non-spatial.
    pub sigma_w: Option<f64>,
    /// Latent detection indicator per unit; forced true wherever y > 0.
    pub z: Vec<bool>,
}

impl ParameterState {
    pub fn validate(&self, spec: &ModelSpec, data: &Dataset) -> Result<()> {
        let p = data.n_covariates();
        if self.beta1.len() != p || self.beta2.len() != p {
            return Err(Error::Dimension(format!(
                "coefficient lengths ({}, {}) do not match {} design columns",
                self.beta1.len(),
                self.beta2.len(),
                p
            )));
        }
        match (spec.count_family, self.theta) {
            (CountFamily::NegBinomial, Some(t)) if t > 0.0 && t.is_finite() => {}
            (CountFamily::NegBinomial, _) => {
                return Err(Error::Domain("negative binomial state needs theta > 0".into()))
            }
            (CountFamily::Poisson, None) => {}
            (CountFamily::Poisson, Some(_)) => {
                return Err(Error::Domain("poisson state must not carry theta".into()))
            }
        }
        if spec.spatial {
            if self.delta.len() != spec.q {
                return Err(Error::Dimension(format!(
                    "delta has length {} but q = {}",
                    self.delta.len(),
                    spec.q
                )));
            }
            match self.sigma_w {
                Some(s) if s > 0.0 && s.is_finite() => {}
                _ => return Err(Error::Domain("spatial state needs sigma_w > 0".into())),
            }
        } else if !self.delta.is_empty() || self.sigma_w.is_some() {
            return Err(Error::Dimension("non-spatial state carries spatial fields".into()));
        }
        if self.z.len() != data.n_units() {
            return Err(Error::Dimension("z length does not match units".into()));
        }
        for i in 0..data.n_units() {
            if data.y[i] > 0 && !self.z[i] {
                return Err(Error::Domain(format!(
                    "z must be 1 wherever y > 0 (violated at row {i})"
                )));
            }
        }
        Ok(())
    }

    /// Scalar parameters in reporting order: beta1, beta2, theta, delta, sigma_w.
    pub fn scalar_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.beta1.len() + self.beta2.len() + 2 + self.delta.len(),
        );
        out.extend(self.beta1.iter().copied());
        out.extend(self.beta2.iter().copied());
        if let Some(t) = self.theta {
            out.push(t);
        }
        out.extend(self.delta.iter().copied());
        if let Some(s) = self.sigma_w {
            out.push(s);
        }
        out
    }
}

/// Names matching [`ParameterState::scalar_values`] order.
pub fn parameter_names(spec: &ModelSpec, covariate_names: &[String]) -> Vec<String> {
    let mut names = Vec::new();
    for n in covariate_names {
        names.push(format!("beta1[{n}]"));
    }
    for n in covariate_names {
        names.push(format!("beta2[{n}]"));
    }
    if spec.count_family == CountFamily::NegBinomial {
        names.push("theta".to_string());
    }
    if spec.spatial {
        for j in 0..spec.q {
            names.push(format!("delta[{j}]"));
        }
        names.push("sigma_w".to_string());
    }
    names
}
