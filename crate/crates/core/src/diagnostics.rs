//! Model-fit diagnostics: WAIC comparison, randomized quantile residuals,
//! HPD intervals, effective sample size, split-R̂, and posterior summaries.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::likelihood::{linear_predictors, mixture_cdf, mixture_logpmf};
use crate::model::{parameter_names, CountFamily, Dataset, ModelSpec, ParameterState};
use crate::moran::MoranBasis;
use crate::numeric::{self, log_add_exp, logistic, normal_quantile};
use crate::sampler::PosteriorSamples;

/// WAIC with its standard error and effective parameter count.
#[derive(Debug, Clone, Copy)]
pub struct Waic {
    pub waic: f64,
    pub se: f64,
    pub p_waic: f64,
    pub lppd: f64,
}

/// Pointwise contribution −2(lppd_i − p_i) per unit.
fn waic_pointwise(pointwise_loglik: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = pointwise_loglik.nrows();
    let n = pointwise_loglik.ncols();
    if s < 2 {
        return Err(Error::Input(format!("WAIC needs at least 2 draws, got {s}")));
    }
    if pointwise_loglik.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("pointwise log-likelihood contains non-finite entries".into()));
    }
    let mut out = Vec::with_capacity(n);
    let mut col = vec![0.0f64; s];
    for i in 0..n {
        for (k, v) in pointwise_loglik.column(i).iter().enumerate() {
            col[k] = *v;
        }
        let mut lse = f64::NEG_INFINITY;
        for &v in &col {
            lse = log_add_exp(lse, v);
        }
        let lppd_i = lse - (s as f64).ln();
        let p_i = numeric::sample_variance(&col);
        out.push(-2.0 * (lppd_i - p_i));
    }
    Ok(out)
}

/// WAIC = −2·lppd + 2·p_waic with lppd_i = log mean_s exp(ll_si) and
/// p_i = var_s(ll_si); se = sqrt(n · var_i of the pointwise contributions).
pub fn waic(pointwise_loglik: &DMatrix<f64>) -> Result<Waic> {
    let s = pointwise_loglik.nrows();
    let n = pointwise_loglik.ncols();
    if s < 2 {
        return Err(Error::Input(format!("WAIC needs at least 2 draws, got {s}")));
    }
    if pointwise_loglik.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("pointwise log-likelihood contains non-finite entries".into()));
    }
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut contributions = Vec::with_capacity(n);
    let mut col = vec![0.0f64; s];
    for i in 0..n {
        for (k, v) in pointwise_loglik.column(i).iter().enumerate() {
            col[k] = *v;
        }
        let mut lse = f64::NEG_INFINITY;
        for &v in &col {
            lse = log_add_exp(lse, v);
        }
        let lppd_i = lse - (s as f64).ln();
        let p_i = numeric::sample_variance(&col);
        lppd += lppd_i;
        p_waic += p_i;
        contributions.push(-2.0 * (lppd_i - p_i));
    }
    let se = if n >= 2 {
        (n as f64 * numeric::sample_variance(&contributions)).sqrt()
    } else {
        0.0
    };
    Ok(Waic {
        waic: -2.0 * lppd + 2.0 * p_waic,
        se,
        p_waic,
        lppd,
    })
}

/// Outcome of a two-model WAIC comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareVerdict {
    /// |Δ| within two combined standard errors.
    Indistinguishable,
    FirstBetter,
    SecondBetter,
}

impl CompareVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            CompareVerdict::Indistinguishable => "indistinguishable",
            CompareVerdict::FirstBetter => "first",
            CompareVerdict::SecondBetter => "second",
        }
    }
}

/// Decision rule on a WAIC difference: indistinguishable unless the gap
/// exceeds twice its standard error; otherwise the lower-WAIC model wins.
pub fn comparison_verdict(diff: f64, se_diff: f64) -> CompareVerdict {
    if diff.abs() <= 2.0 * se_diff {
        CompareVerdict::Indistinguishable
    } else if diff < 0.0 {
        CompareVerdict::FirstBetter
    } else {
        CompareVerdict::SecondBetter
    }
}

/// Paired WAIC comparison over a shared dataset.
#[derive(Debug, Clone, Copy)]
pub struct WaicComparison {
    pub first: Waic,
    pub second: Waic,
    /// waic_first − waic_second.
    pub diff: f64,
    /// sqrt(n · var of pointwise contribution differences).
    pub se_diff: f64,
    pub verdict: CompareVerdict,
}

pub fn compare_waic(
    first: &DMatrix<f64>,
    second: &DMatrix<f64>,
) -> Result<WaicComparison> {
    if first.ncols() != second.ncols() {
        return Err(Error::Dimension(format!(
            "models cover different unit counts: {} vs {}",
            first.ncols(),
            second.ncols()
        )));
    }
    let wa = waic(first)?;
    let wb = waic(second)?;
    let ca = waic_pointwise(first)?;
    let cb = waic_pointwise(second)?;
    let diffs: Vec<f64> = ca.iter().zip(&cb).map(|(a, b)| a - b).collect();
    let n = diffs.len();
    let se_diff = if n >= 2 {
        (n as f64 * numeric::sample_variance(&diffs)).sqrt()
    } else {
        0.0
    };
    let diff = wa.waic - wb.waic;
    Ok(WaicComparison {
        first: wa,
        second: wb,
        diff,
        se_diff,
        verdict: comparison_verdict(diff, se_diff),
    })
}

/// How RQR evaluates the fitted distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RqrMode {
    /// Evaluate F and f at the posterior-mean parameters (default).
    PosteriorMean,
    /// Average the randomized PIT over draws before inverting.
    PerDraw,
}

/// Randomized quantile residuals with their uniformized PIT values.
#[derive(Debug, Clone)]
pub struct Rqr {
    pub residuals: Vec<f64>,
    /// u_i = F(y_i − 1) + v_i·f(y_i), before clamping.
    pub pit: Vec<f64>,
    /// PIT values that hit the clamp band before Φ⁻¹.
    pub clamped: usize,
}

const PIT_CLAMP: f64 = 1e-10;

/// Maps a PIT value to a standard-normal residual, clamping into
/// [1e-10, 1 − 1e-10] first so residuals stay finite.
pub fn pit_to_residual(u: f64) -> (f64, bool) {
    let clamped = u.clamp(PIT_CLAMP, 1.0 - PIT_CLAMP);
    (normal_quantile(clamped), clamped != u)
}

/// Posterior-mean parameter state over a set of draws (z is carried from the
/// data mask; it plays no role in marginal quantities).
pub fn posterior_mean_state(draws: &[ParameterState], data: &Dataset) -> Result<ParameterState> {
    if draws.is_empty() {
        return Err(Error::Input("no posterior draws".into()));
    }
    let s = draws.len() as f64;
    let p = draws[0].beta1.len();
    let q = draws[0].delta.len();
    let mut beta1 = DVector::zeros(p);
    let mut beta2 = DVector::zeros(p);
    let mut delta = DVector::zeros(q);
    let mut theta = 0.0;
    let mut sigma = 0.0;
    for d in draws {
        beta1 += &d.beta1;
        beta2 += &d.beta2;
        delta += &d.delta;
        theta += d.theta.unwrap_or(0.0);
        sigma += d.sigma_w.unwrap_or(0.0);
    }
    Ok(ParameterState {
        beta1: beta1 / s,
        beta2: beta2 / s,
        theta: draws[0].theta.map(|_| theta / s),
        delta: delta / s,
        sigma_w: draws[0].sigma_w.map(|_| sigma / s),
        z: data.y.iter().map(|&y| y > 0).collect(),
    })
}

/// Randomized quantile residuals at the posterior-mean parameters.
pub fn rqr(
    spec: &ModelSpec,
    data: &Dataset,
    basis: Option<&MoranBasis>,
    draws: &[ParameterState],
    rng: &mut ChaCha8Rng,
) -> Result<Rqr> {
    rqr_with_mode(spec, data, basis, draws, rng, RqrMode::PosteriorMean)
}

pub fn rqr_with_mode(
    spec: &ModelSpec,
    data: &Dataset,
    basis: Option<&MoranBasis>,
    draws: &[ParameterState],
    rng: &mut ChaCha8Rng,
    mode: RqrMode,
) -> Result<Rqr> {
    if draws.is_empty() {
        return Err(Error::Input("no posterior draws".into()));
    }
    let n = data.n_units();
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let pit = match mode {
        RqrMode::PosteriorMean => {
            let state = posterior_mean_state(draws, data)?;
            pit_for_state(spec, data, basis, &state, &v)?
        }
        RqrMode::PerDraw => {
            let mut acc = vec![0.0f64; n];
            for d in draws {
                let u = pit_for_state(spec, data, basis, d, &v)?;
                for i in 0..n {
                    acc[i] += u[i];
                }
            }
            let s = draws.len() as f64;
            acc.iter().map(|u| u / s).collect()
        }
    };
    let mut residuals = Vec::with_capacity(n);
    let mut clamped = 0usize;
    for &u in &pit {
        let (r, was_clamped) = pit_to_residual(u);
        if was_clamped {
            clamped += 1;
        }
        residuals.push(r);
    }
    Ok(Rqr { residuals, pit, clamped })
}

fn pit_for_state(
    spec: &ModelSpec,
    data: &Dataset,
    basis: Option<&MoranBasis>,
    state: &ParameterState,
    v: &[f64],
) -> Result<Vec<f64>> {
    let pred = linear_predictors(state, data, basis)?;
    let theta = match spec.count_family {
        CountFamily::NegBinomial => state.theta,
        CountFamily::Poisson => None,
    };
    let mut out = Vec::with_capacity(data.n_units());
    for (i, &vi) in v.iter().enumerate() {
        let y = data.y[i];
        let f_prev = mixture_cdf(spec.count_family, y as i64 - 1, pred.pi[i], pred.mu[i], theta)?;
        let f_y = mixture_logpmf(spec.count_family, y, pred.pi[i], pred.mu[i], theta)?.exp();
        out.push(f_prev + vi * f_y);
    }
    Ok(out)
}

/// Kolmogorov-Smirnov test result.
#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test of `values` against the given CDF.
pub fn ks_test(values: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Input("KS test needs at least one value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    let t = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(t),
    })
}

pub fn ks_test_standard_normal(values: &[f64]) -> Result<KsResult> {
    ks_test(values, numeric::normal_cdf)
}

pub fn ks_test_uniform(values: &[f64]) -> Result<KsResult> {
    ks_test(values, |u| u.clamp(0.0, 1.0))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.18 {
        let f = (-std::f64::consts::PI * std::f64::consts::PI / (8.0 * t * t)).exp();
        let series = f + f.powi(9) + f.powi(25);
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / t * series).clamp(0.0, 1.0)
    } else {
        let e = (-2.0 * t * t).exp();
        (2.0 * (e - e.powi(4) + e.powi(9))).clamp(0.0, 1.0)
    }
}

/// Shortest interval containing ⌈level·n⌉ sorted samples; ties resolve to
/// the smallest lower endpoint.
pub fn hpd(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::Input(format!("HPD needs at least 10 samples, got {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Input("HPD level must lie in (0, 1)".into()));
    }
    let m = (level * n as f64).ceil() as usize;
    if m > n {
        return Err(Error::Input("fewer samples than the HPD window".into()));
    }
    let m = m.max(1);
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_i = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=(n - m) {
        let width = sorted[i + m - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best_i = i;
        }
    }
    Ok((sorted[best_i], sorted[best_i + m - 1]))
}

/// Effective sample size with its degenerate-chain flag.
#[derive(Debug, Clone, Copy)]
pub struct EssResult {
    pub value: f64,
    /// Set for a constant chain (ESS defined as 0).
    pub constant: bool,
}

/// Effective sample size by Geyer's initial-positive-sequence estimator,
/// capped at n.
pub fn ess(samples: &[f64]) -> Result<EssResult> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::Input(format!("ESS needs at least 10 samples, got {n}")));
    }
    let m = numeric::mean(samples);
    let c0: f64 = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return Ok(EssResult { value: 0.0, constant: true });
    }
    let autocov = |t: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..(n - t) {
            acc += (samples[i] - m) * (samples[i + t] - m);
        }
        acc / n as f64
    };
    // Sum Γ_k = ρ_{2k} + ρ_{2k+1} while positive.
    let mut tau = -1.0;
    let mut k = 0usize;
    loop {
        let t0 = 2 * k;
        let t1 = 2 * k + 1;
        if t1 >= n {
            break;
        }
        let gamma = (if t0 == 0 { c0 } else { autocov(t0) } + autocov(t1)) / c0;
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        k += 1;
    }
    let tau = tau.max(1e-12);
    Ok(EssResult {
        value: (n as f64 / tau).min(n as f64),
        constant: false,
    })
}

/// Split-R̂ outcome.
#[derive(Debug, Clone, Copy)]
pub struct RhatResult {
    pub value: f64,
    /// Set when between-chain or within-chain variance degenerates.
    pub flagged: bool,
}

/// Split potential scale reduction: each chain is halved, then
/// R̂ = sqrt(((n−1)/n·W + B/n) / W) over the half-chains.
///
/// Duplicate chains (a zero-information comparison) are flagged.
pub fn split_rhat(chains: &[&[f64]]) -> Result<RhatResult> {
    if chains.len() < 2 {
        return Err(Error::Input("split-R̂ needs at least 2 chains".into()));
    }
    let min_len = chains.iter().map(|c| c.len()).min().unwrap();
    if min_len < 4 {
        return Err(Error::Input("split-R̂ needs at least 4 draws per chain".into()));
    }
    let mut duplicate = false;
    for a in 0..chains.len() {
        for b in (a + 1)..chains.len() {
            if chains[a][..min_len] == chains[b][..min_len] {
                duplicate = true;
            }
        }
    }
    let half = min_len / 2;
    let mut sequences: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        sequences.push(&c[..half]);
        sequences.push(&c[min_len - half..min_len]);
    }
    let n = half as f64;
    let means: Vec<f64> = sequences.iter().map(|s| numeric::mean(s)).collect();
    let vars: Vec<f64> = sequences.iter().map(|s| numeric::sample_variance(s)).collect();
    let w = numeric::mean(&vars);
    let b = n * numeric::sample_variance(&means);
    if w == 0.0 {
        return Ok(RhatResult { value: f64::NAN, flagged: true });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    let value = (var_plus / w).sqrt();
    Ok(RhatResult {
        value,
        flagged: duplicate || b == 0.0 || !value.is_finite(),
    })
}

/// Posterior summary for one scalar parameter.
#[derive(Debug, Clone)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub hpd_lo: f64,
    pub hpd_hi: f64,
    pub ess: Option<f64>,
    pub rhat: Option<f64>,
    pub rhat_flagged: bool,
    /// The 95% HPD interval excludes zero.
    pub excludes_zero: bool,
}

/// Posterior summary for one county-year unit.
#[derive(Debug, Clone)]
pub struct UnitSummary {
    pub county_index: usize,
    pub year_index: usize,
    pub pi_mean: f64,
    pub pi_hpd: (f64, f64),
    pub mu_mean: f64,
    pub mu_hpd: (f64, f64),
    /// Rate per 1,000 children, when population is available.
    pub rate_mean: Option<f64>,
    pub rate_hpd: Option<(f64, f64)>,
}

/// Parameter and per-unit posterior summaries.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub parameters: Vec<ParamSummary>,
    pub units: Vec<UnitSummary>,
    pub n_draws_total: usize,
    pub n_chains: usize,
}

const HPD_LEVEL: f64 = 0.95;

/// HPD with a degenerate fallback for very short draw vectors.
fn hpd_or_range(samples: &[f64]) -> (f64, f64) {
    if samples.len() >= 10 {
        hpd(samples, HPD_LEVEL).expect("window fits")
    } else {
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Assembles parameter and unit summaries from one or more chains.
///
/// Means, sds, and HPDs pool the thinned draws across chains (in chain
/// order); ESS sums per-chain estimates; R̂ is the split statistic across
/// chains and absent for a single chain.
pub fn summarize(
    chains: &[&PosteriorSamples],
    spec: &ModelSpec,
    data: &Dataset,
    basis: Option<&MoranBasis>,
) -> Result<FitSummary> {
    if chains.is_empty() || chains.iter().any(|c| c.draws.is_empty()) {
        return Err(Error::Input("summaries need at least one draw".into()));
    }
    let names = parameter_names(spec, &data.covariate_names);
    let traces: Vec<DMatrix<f64>> = chains.iter().map(|c| c.scalar_draws()).collect();
    let n_total: usize = traces.iter().map(|t| t.nrows()).sum();
    let multi = chains.len() >= 2;
    let min_draws = chains.iter().map(|c| c.draws.len()).min().unwrap();

    let mut parameters = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let mut pooled = Vec::with_capacity(n_total);
        let mut per_chain: Vec<Vec<f64>> = Vec::with_capacity(chains.len());
        for t in &traces {
            let col: Vec<f64> = t.column(j).iter().copied().collect();
            pooled.extend_from_slice(&col);
            per_chain.push(col);
        }
        let mean = numeric::mean(&pooled);
        let sd = numeric::sample_variance(&pooled).sqrt();
        let (lo, hi) = hpd_or_range(&pooled);
        let ess_total = if min_draws >= 10 {
            let mut acc = 0.0;
            for c in &per_chain {
                acc += ess(c)?.value;
            }
            Some(acc)
        } else {
            None
        };
        let (rhat, rhat_flagged) = if multi && min_draws >= 4 {
            let refs: Vec<&[f64]> = per_chain.iter().map(|v| v.as_slice()).collect();
            let r = split_rhat(&refs)?;
            (Some(r.value), r.flagged)
        } else {
            (None, false)
        };
        parameters.push(ParamSummary {
            name: name.clone(),
            mean,
            sd,
            hpd_lo: lo,
            hpd_hi: hi,
            ess: ess_total,
            rhat,
            rhat_flagged,
            excludes_zero: lo > 0.0 || hi < 0.0,
        });
    }

    // Per-unit quantities from the pooled draws.
    let pooled_draws: Vec<&ParameterState> =
        chains.iter().flat_map(|c| c.draws.iter()).collect();
    let s_total = pooled_draws.len();
    let n_counties = data.n_counties;
    // County effects per draw (zero matrix when non-spatial).
    let w_per_draw: Vec<DVector<f64>> = pooled_draws
        .iter()
        .map(|d| match basis {
            Some(b) if !d.delta.is_empty() => b.vectors() * &d.delta,
            _ => DVector::zeros(n_counties),
        })
        .collect();

    let mut units = Vec::with_capacity(data.n_units());
    let mut pi_s = vec![0.0f64; s_total];
    let mut mu_s = vec![0.0f64; s_total];
    let mut rate_s = vec![0.0f64; s_total];
    for i in 0..data.n_units() {
        let xi = data.design.row(i);
        for (s, d) in pooled_draws.iter().enumerate() {
            let mut e1 = 0.0;
            let mut e2 = 0.0;
            for j in 0..data.n_covariates() {
                e1 += xi[j] * d.beta1[j];
                e2 += xi[j] * d.beta2[j];
            }
            pi_s[s] = logistic(e1);
            mu_s[s] = (e2 + w_per_draw[s][data.county_index[i]]).exp();
        }
        let (rate_mean, rate_hpd) = match &data.population {
            Some(pop) => {
                for s in 0..s_total {
                    rate_s[s] = mu_s[s] / pop[i] * 1000.0;
                }
                (Some(numeric::mean(&rate_s)), Some(hpd_or_range(&rate_s)))
            }
            None => (None, None),
        };
        units.push(UnitSummary {
            county_index: data.county_index[i],
            year_index: data.year_index[i],
            pi_mean: numeric::mean(&pi_s),
            pi_hpd: hpd_or_range(&pi_s),
            mu_mean: numeric::mean(&mu_s),
            mu_hpd: hpd_or_range(&mu_s),
            rate_mean,
            rate_hpd,
        });
    }

    Ok(FitSummary {
        parameters,
        units,
        n_draws_total: n_total,
        n_chains: chains.len(),
    })
}
