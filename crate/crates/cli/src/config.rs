//! Flat key=value configuration files (`#` starts a comment).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use zinb_core::model::CountFamily;
use zinb_core::simulate::{GraphSpec, SimulationScenario, SpatialMode};

use crate::error::{CliError, Result};

/// Parsed key=value pairs with typed, consuming accessors.
pub struct KeyValues {
    path: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::input(format!("{path} line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if entries.insert(key.clone(), (lineno + 1, value)).is_some() {
                return Err(CliError::input(format!(
                    "{path} line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(KeyValues {
            path: path.to_string(),
            entries,
        })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    pub fn req_string(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| CliError::input(format!("{}: missing required key `{key}`", self.path)))
    }

    pub fn opt_string(&mut self, key: &str) -> Option<String> {
        self.take(key)
    }

    pub fn req_path(&mut self, key: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.req_string(key)?))
    }

    pub fn opt_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(PathBuf::from)
    }

    fn parse_with<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            CliError::input(format!(
                "{}: key `{key}` has invalid value `{raw}`",
                self.path
            ))
        })
    }

    pub fn opt_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            Some(raw) => Ok(Some(self.parse_with(key, &raw)?)),
            None => Ok(None),
        }
    }

    pub fn parse_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.opt_parse(key)?.unwrap_or(default))
    }

    pub fn opt_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => match raw.as_str() {
                "true" | "on" | "yes" | "1" => Ok(Some(true)),
                "false" | "off" | "no" | "0" => Ok(Some(false)),
                other => Err(CliError::input(format!(
                    "{}: key `{key}` has invalid boolean `{other}`",
                    self.path
                ))),
            },
        }
    }

    pub fn req_f64_list(&mut self, key: &str) -> Result<Vec<f64>> {
        let raw = self.req_string(key)?;
        raw.split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    CliError::input(format!(
                        "{}: key `{key}` has non-numeric entry `{}`",
                        self.path,
                        s.trim()
                    ))
                })
            })
            .collect()
    }

    /// Errors on any key that was never consumed.
    pub fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(CliError::input(format!(
                "{} line {line}: unknown key `{key}`",
                self.path
            )));
        }
        Ok(())
    }
}

/// Everything a `fit` run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub counts: PathBuf,
    pub covariates: PathBuf,
    pub adjacency: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub family: CountFamily,
    pub spatial: bool,
    /// Requested basis rank; None means the default rule at fit time.
    pub q: Option<usize>,
    pub prior_beta_sd: f64,
    pub prior_log_theta_sd: f64,
    pub prior_sigma_w_scale: f64,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub target_accept_vector: f64,
    pub target_accept_scalar: f64,
    pub adapt_window: usize,
    pub threads: usize,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut kv = KeyValues::from_file(path)?;
        let family = match kv.opt_string("family") {
            Some(raw) => CountFamily::parse(&raw).map_err(CliError::from)?,
            None => CountFamily::NegBinomial,
        };
        let cfg = RunConfig {
            counts: kv.req_path("counts")?,
            covariates: kv.req_path("covariates")?,
            adjacency: kv.opt_path("adjacency"),
            out_dir: kv.req_path("out_dir")?,
            family,
            spatial: kv.opt_bool("spatial")?.unwrap_or(false),
            q: kv.opt_parse("q")?,
            prior_beta_sd: kv.parse_or("prior_beta_sd", 10.0)?,
            prior_log_theta_sd: kv.parse_or("prior_log_theta_sd", 2.0)?,
            prior_sigma_w_scale: kv.parse_or("prior_sigma_w_scale", 1.0)?,
            iterations: kv.parse_or("iterations", 60_000)?,
            burnin: kv.parse_or("burnin", 20_000)?,
            thin: kv.parse_or("thin", 10)?,
            seed: kv.parse_or("seed", 0)?,
            chains: kv.parse_or("chains", 1)?,
            target_accept_vector: kv.parse_or("target_accept_vector", 0.234)?,
            target_accept_scalar: kv.parse_or("target_accept_scalar", 0.44)?,
            adapt_window: kv.parse_or("adapt_window", 50)?,
            threads: kv.parse_or("threads", 0)?,
        };
        kv.finish()?;
        if cfg.chains == 0 {
            return Err(CliError::input("chains must be at least 1"));
        }
        Ok(cfg)
    }
}

/// Scenario file for the `simulate` command.
pub fn scenario_from_file(path: &Path) -> Result<SimulationScenario> {
    let mut kv = KeyValues::from_file(path)?;
    let graph = match kv.req_string("graph")?.as_str() {
        "lattice" => GraphSpec::Lattice {
            rows: kv.parse_or("rows", 10)?,
            cols: kv.parse_or("cols", 10)?,
        },
        "file" => {
            let adjacency = kv.req_path("adjacency")?;
            let edges = crate::data::read_adjacency(&adjacency)?;
            GraphSpec::Supplied(zinb_core::AdjacencyGraph::build(&edges).map_err(CliError::from)?)
        }
        other => {
            return Err(CliError::input(format!(
                "scenario graph must be `lattice` or `file`, got `{other}`"
            )))
        }
    };
    let beta1 = DVector::from_vec(kv.req_f64_list("beta1")?);
    let beta2 = DVector::from_vec(kv.req_f64_list("beta2")?);
    let spatial_mode = match kv.opt_string("spatial").as_deref() {
        None | Some("none") => SpatialMode::None,
        Some("moran") => SpatialMode::Moran {
            q: kv.parse_or("q", 10)?,
            sigma_w: kv.parse_or("sigma_w", 1.0)?,
        },
        Some(other) => {
            return Err(CliError::input(format!(
                "scenario spatial must be `none` or `moran`, got `{other}`"
            )))
        }
    };
    let population_range = match (
        kv.opt_parse::<f64>("population_min")?,
        kv.opt_parse::<f64>("population_max")?,
    ) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => {
            return Err(CliError::input(
                "population_min and population_max must be given together",
            ))
        }
    };
    let scenario = SimulationScenario {
        graph,
        n_years: kv.parse_or("years", 4)?,
        beta1,
        beta2,
        theta: kv.parse_or("theta", 1.2)?,
        spatial_mode,
        population_range,
        seed: kv.parse_or("seed", 0)?,
    };
    kv.finish()?;
    Ok(scenario)
}
