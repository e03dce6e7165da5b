//! Small numeric utilities shared across the crate.

/// Chunk length used for all fixed-order reductions over units.
///
/// Sums over units are always accumulated per chunk and then folded in chunk
/// order, so totals are bitwise independent of how many worker threads
/// evaluated the chunks.
pub const SUM_CHUNK: usize = 1024;

/// Number of units above which per-unit evaluations run on the rayon pool.
pub const PARALLEL_THRESHOLD: usize = 4096;

const LN_2PI: f64 = 1.8378770664093453;

/// log(exp(a) + exp(b)) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-density of Normal(mean 0, sd) at x.
pub fn normal_logpdf(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (x / sd) * (x / sd)
}

/// Log-density of a half-Normal with the given scale at x ≥ 0.
pub fn half_normal_logpdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    std::f64::consts::LN_2 + normal_logpdf(x, scale)
}

/// Sum of a slice accumulated per [`SUM_CHUNK`] and folded in chunk order.
pub fn chunked_sum(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for chunk in values.chunks(SUM_CHUNK) {
        let mut acc = 0.0;
        for v in chunk {
            acc += v;
        }
        total += acc;
    }
    total
}

pub fn mean(values: &[f64]) -> f64 {
    chunked_sum(values) / values.len() as f64
}

/// Unbiased sample variance (denominator n − 1). Constant input is exactly 0.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    if values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let m = mean(values);
    let mut total = 0.0;
    for chunk in values.chunks(SUM_CHUNK) {
        let mut acc = 0.0;
        for v in chunk {
            let d = v - m;
            acc += d * d;
        }
        total += acc;
    }
    total / (n - 1) as f64
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    let n = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    n.inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    let n = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    n.cdf(x)
}
