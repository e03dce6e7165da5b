//! Probability kernels and likelihoods for the zero-inflated count model
//! with a detection mixture.

use nalgebra::DVector;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{CountFamily, Dataset, ModelSpec, ParameterState};
use crate::moran::MoranBasis;
use crate::numeric::{
    self, chunked_sum, log_add_exp, logistic, PARALLEL_THRESHOLD, SUM_CHUNK,
};

/// Detection probabilities are clamped to this band inside likelihood code.
pub const PI_FLOOR: f64 = 1e-12;
/// Abundance means are clamped to [MU_FLOOR, MU_CEIL] inside likelihood code.
pub const MU_FLOOR: f64 = 1e-12;
pub const MU_CEIL: f64 = 1e12;

fn check_mu_theta(mu: f64, theta: f64) -> Result<()> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("mu must be finite and positive, got {mu}")));
    }
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::Domain(format!("theta must be finite and positive, got {theta}")));
    }
    Ok(())
}

fn check_pi(pi: f64) -> Result<()> {
    if !(pi.is_finite() && pi > 0.0 && pi < 1.0) {
        return Err(Error::Domain(format!("pi must lie strictly in (0, 1), got {pi}")));
    }
    Ok(())
}

/// Shared inner expression so that batched evaluation reproduces the scalar
/// kernel bit for bit.
#[inline]
fn nb_logpmf_parts(y: f64, mu: f64, theta: f64, lg_y_theta: f64, lg_theta: f64, lg_y1: f64) -> f64 {
    lg_y_theta - lg_theta - lg_y1 + theta * (theta / (theta + mu)).ln() + y * (mu / (theta + mu)).ln()
}

/// Log-pmf of the negative binomial with mean `mu` and dispersion `theta`
/// (variance μ + μ²/θ).
pub fn nb_logpmf(y: u64, mu: f64, theta: f64) -> Result<f64> {
    check_mu_theta(mu, theta)?;
    let yf = y as f64;
    Ok(nb_logpmf_parts(
        yf,
        mu,
        theta,
        ln_gamma(yf + theta),
        ln_gamma(theta),
        ln_gamma(yf + 1.0),
    ))
}

/// Log-pmf of the Poisson with mean `mu`.
pub fn poisson_logpmf(y: u64, mu: f64) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("mu must be finite and positive, got {mu}")));
    }
    let yf = y as f64;
    Ok(yf * mu.ln() - mu - ln_gamma(yf + 1.0))
}

/// Log-pmf of the zero-inflated negative binomial mixture:
/// y = 0 with probability 1 − π, otherwise NB(μ, θ).
pub fn zinb_logpmf(y: u64, pi: f64, mu: f64, theta: f64) -> Result<f64> {
    check_pi(pi)?;
    let nb = nb_logpmf(y, mu, theta)?;
    if y == 0 {
        Ok(log_add_exp((1.0 - pi).ln(), pi.ln() + nb))
    } else {
        Ok(pi.ln() + nb)
    }
}

/// Zero-inflated Poisson analog of [`zinb_logpmf`].
pub fn zip_logpmf(y: u64, pi: f64, mu: f64) -> Result<f64> {
    check_pi(pi)?;
    let pois = poisson_logpmf(y, mu)?;
    if y == 0 {
        Ok(log_add_exp((1.0 - pi).ln(), pi.ln() + pois))
    } else {
        Ok(pi.ln() + pois)
    }
}

/// Mixture log-pmf for either count family.
pub fn mixture_logpmf(
    family: CountFamily,
    y: u64,
    pi: f64,
    mu: f64,
    theta: Option<f64>,
) -> Result<f64> {
    match family {
        CountFamily::NegBinomial => {
            let t = theta.ok_or_else(|| Error::Domain("negative binomial needs theta".into()))?;
            zinb_logpmf(y, pi, mu, t)
        }
        CountFamily::Poisson => zip_logpmf(y, pi, mu),
    }
}

/// CDF of the zero-inflated negative binomial; `F(-1) = 0` by convention.
pub fn zinb_cdf(y: i64, pi: f64, mu: f64, theta: f64) -> Result<f64> {
    check_pi(pi)?;
    check_mu_theta(mu, theta)?;
    if y < 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for k in 0..=(y as u64) {
        acc += zinb_logpmf(k, pi, mu, theta)?.exp();
    }
    Ok(acc.min(1.0))
}

/// CDF of the zero-inflated Poisson; `F(-1) = 0` by convention.
pub fn zip_cdf(y: i64, pi: f64, mu: f64) -> Result<f64> {
    check_pi(pi)?;
    if y < 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for k in 0..=(y as u64) {
        acc += zip_logpmf(k, pi, mu)?.exp();
    }
    Ok(acc.min(1.0))
}

/// Mixture CDF for either count family.
pub fn mixture_cdf(family: CountFamily, y: i64, pi: f64, mu: f64, theta: Option<f64>) -> Result<f64> {
    match family {
        CountFamily::NegBinomial => {
            let t = theta.ok_or_else(|| Error::Domain("negative binomial needs theta".into()))?;
            zinb_cdf(y, pi, mu, t)
        }
        CountFamily::Poisson => zip_cdf(y, pi, mu),
    }
}

/// Per-unit detection probabilities and abundance means, with clamp counts.
#[derive(Debug, Clone)]
pub struct Predictors {
    pub pi: DVector<f64>,
    pub mu: DVector<f64>,
    /// How many π or μ values hit their numerical floor or ceiling.
    pub clamp_events: u64,
}

fn check_state_shapes(
    state: &ParameterState,
    data: &Dataset,
    basis: Option<&MoranBasis>,
) -> Result<()> {
    let p = data.n_covariates();
    if state.beta1.len() != p || state.beta2.len() != p {
        return Err(Error::Dimension(format!(
            "coefficient lengths ({}, {}) do not match {} design columns",
            state.beta1.len(),
            state.beta2.len(),
            p
        )));
    }
    match (basis, state.delta.len()) {
        (None, 0) => {}
        (None, d) => {
            return Err(Error::Dimension(format!(
                "state carries {d} basis coefficients but no basis was given"
            )))
        }
        (Some(b), d) => {
            if b.rank() != d {
                return Err(Error::Dimension(format!(
                    "delta has length {d} but the basis has rank {}",
                    b.rank()
                )));
            }
            if b.n_counties() != data.n_counties {
                return Err(Error::Dimension(format!(
                    "basis covers {} counties, dataset has {}",
                    b.n_counties(),
                    data.n_counties
                )));
            }
        }
    }
    Ok(())
}

/// Detection probabilities π and abundance means μ for every unit.
///
/// π_it = logistic(x_itᵀβ₁) and μ_it = exp(x_itᵀβ₂ + W_county(it)) with
/// W = basis · δ (zero without a basis). W is constant across years within a
/// county by construction. Outputs are clamped to the documented floors and
/// the clamp count reported.
pub fn linear_predictors(
    state: &ParameterState,
    data: &Dataset,
    basis: Option<&MoranBasis>,
) -> Result<Predictors> {
    check_state_shapes(state, data, basis)?;
    let eta1 = &data.design * &state.beta1;
    let eta2 = &data.design * &state.beta2;
    let w = spatial_effects(state, basis, data.n_counties);
    let n = data.n_units();
    let mut pi = DVector::zeros(n);
    let mut mu = DVector::zeros(n);
    let mut clamps = 0u64;
    for i in 0..n {
        let p_raw = logistic(eta1[i]);
        let p = p_raw.clamp(PI_FLOOR, 1.0 - PI_FLOOR);
        if p != p_raw {
            clamps += 1;
        }
        pi[i] = p;
        let m_raw = (eta2[i] + w[data.county_index[i]]).exp();
        let m = m_raw.clamp(MU_FLOOR, MU_CEIL);
        if m != m_raw {
            clamps += 1;
        }
        mu[i] = m;
    }
    Ok(Predictors { pi, mu, clamp_events: clamps })
}

/// County-level spatial effects W = basis · δ (zeros without a basis).
pub fn spatial_effects(
    state: &ParameterState,
    basis: Option<&MoranBasis>,
    n_counties: usize,
) -> DVector<f64> {
    match basis {
        Some(b) if !state.delta.is_empty() => b.vectors() * &state.delta,
        _ => DVector::zeros(n_counties),
    }
}

/// Marginal log-likelihood per unit under the detection mixture.
///
/// Element i is the mixture log-pmf of y_i at (π_i, μ_i, θ). The total
/// log-likelihood is the fixed-order chunked sum of these elements.
pub fn loglik_pointwise(
    spec: &ModelSpec,
    state: &ParameterState,
    data: &Dataset,
    basis: Option<&MoranBasis>,
) -> Result<DVector<f64>> {
    let pred = linear_predictors(state, data, basis)?;
    let theta = match spec.count_family {
        CountFamily::NegBinomial => Some(
            state
                .theta
                .ok_or_else(|| Error::Domain("negative binomial state needs theta".into()))?,
        ),
        CountFamily::Poisson => None,
    };
    let n = data.n_units();
    let mut out = DVector::zeros(n);
    let eval = |i: usize| -> f64 {
        mixture_logpmf(spec.count_family, data.y[i], pred.pi[i], pred.mu[i], theta)
            .expect("clamped predictors stay in domain")
    };
    if n >= PARALLEL_THRESHOLD {
        out.as_mut_slice()
            .par_chunks_mut(SUM_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = c * SUM_CHUNK;
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = eval(base + k);
                }
            });
    } else {
        for i in 0..n {
            out[i] = eval(i);
        }
    }
    Ok(out)
}

/// Bernoulli log-likelihood of the detection indicators:
/// Σ z ln π + (1 − z) ln(1 − π), accumulated in fixed chunk order.
pub fn detection_loglik(pi: &DVector<f64>, z: &[bool]) -> f64 {
    let n = z.len();
    let term = |i: usize| {
        if z[i] {
            pi[i].ln()
        } else {
            (1.0 - pi[i]).ln()
        }
    };
    sum_terms(n, term)
}

/// Count-layer log-likelihood over detected units (z = 1 only).
///
/// Negative binomial evaluations share the log-gamma terms across repeated y
/// values; the per-unit expression is identical to [`nb_logpmf`].
pub fn count_loglik(
    family: CountFamily,
    theta: Option<f64>,
    data: &Dataset,
    mu: &DVector<f64>,
    z: &[bool],
) -> Result<f64> {
    let n = data.n_units();
    match family {
        CountFamily::NegBinomial => {
            let t = theta.ok_or_else(|| Error::Domain("negative binomial needs theta".into()))?;
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Domain(format!("theta must be finite and positive, got {t}")));
            }
            let lg_theta = ln_gamma(t);
            let lg_y_theta: Vec<f64> = data
                .distinct_y
                .iter()
                .map(|&yd| ln_gamma(yd as f64 + t))
                .collect();
            let term = |i: usize| {
                if z[i] {
                    nb_logpmf_parts(
                        data.y[i] as f64,
                        mu[i],
                        t,
                        lg_y_theta[data.distinct_slot[i] as usize],
                        lg_theta,
                        data.lgamma_y_plus_1[i],
                    )
                } else {
                    0.0
                }
            };
            Ok(sum_terms(n, term))
        }
        CountFamily::Poisson => {
            let term = |i: usize| {
                if z[i] {
                    let yf = data.y[i] as f64;
                    yf * mu[i].ln() - mu[i] - data.lgamma_y_plus_1[i]
                } else {
                    0.0
                }
            };
            Ok(sum_terms(n, term))
        }
    }
}

/// Chunked fixed-order sum of `term(i)` for i in 0..n; chunks may be
/// evaluated on the rayon pool but are always folded in index order.
fn sum_terms<F: Fn(usize) -> f64 + Sync>(n: usize, term: F) -> f64 {
    if n >= PARALLEL_THRESHOLD {
        let chunk_sums: Vec<f64> = (0..n.div_ceil(SUM_CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * SUM_CHUNK;
                let hi = (lo + SUM_CHUNK).min(n);
                let mut acc = 0.0;
                for i in lo..hi {
                    acc += term(i);
                }
                acc
            })
            .collect();
        let mut total = 0.0;
        for s in chunk_sums {
            total += s;
        }
        total
    } else {
        let mut total = 0.0;
        let mut lo = 0;
        while lo < n {
            let hi = (lo + SUM_CHUNK).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += term(i);
            }
            total += acc;
            lo = hi;
        }
        total
    }
}

/// Joint log-prior density in the sampling parameterization.
///
/// β components are iid Normal(0, prior_beta_sd²); log θ is Normal(0,
/// prior_log_theta_sd²) (the prior is placed on log θ directly, so no
/// Jacobian applies); δ_j are iid Normal(0, σ_w²); σ_w is half-Normal with
/// the configured scale and is sampled on the log scale, so its log|Jacobian|
/// term log σ_w is included.
pub fn log_prior(state: &ParameterState, spec: &ModelSpec) -> Result<f64> {
    let mut lp = 0.0;
    for b in state.beta1.iter().chain(state.beta2.iter()) {
        lp += numeric::normal_logpdf(*b, spec.prior_beta_sd);
    }
    if spec.count_family == CountFamily::NegBinomial {
        let t = state
            .theta
            .ok_or_else(|| Error::Domain("negative binomial state needs theta".into()))?;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Domain(format!("theta must be finite and positive, got {t}")));
        }
        lp += numeric::normal_logpdf(t.ln(), spec.prior_log_theta_sd);
    }
    if spec.spatial {
        let s = state
            .sigma_w
            .ok_or_else(|| Error::Domain("spatial state needs sigma_w".into()))?;
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Domain(format!("sigma_w must be finite and positive, got {s}")));
        }
        for d in state.delta.iter() {
            lp += numeric::normal_logpdf(*d, s);
        }
        lp += numeric::half_normal_logpdf(s, spec.prior_sigma_w_scale) + s.ln();
    }
    Ok(lp)
}

/// Total marginal log-likelihood (fixed-order chunked sum of the pointwise vector).
pub fn loglik_total(
    spec: &ModelSpec,
    state: &ParameterState,
    data: &Dataset,
    basis: Option<&MoranBasis>,
) -> Result<f64> {
    let pw = loglik_pointwise(spec, state, data, basis)?;
    Ok(chunked_sum(pw.as_slice()))
}
