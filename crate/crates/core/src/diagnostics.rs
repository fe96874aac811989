//! Monte Carlo diagnostics used by the correctness tests: batch-means
//! standard errors, Kolmogorov–Smirnov statistics and Geweke-style z-scores.

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means with `⌊√n⌋` batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let n_batches = ((n as f64).sqrt().floor() as usize).max(2);
    let size = n / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect();
    (variance(&means) / n_batches as f64).sqrt()
}

/// Standard error of the mean of independent draws.
pub fn iid_se(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// One-sample KS statistic against the uniform distribution on `[lo, hi]`.
pub fn ks_statistic_uniform(xs: &[f64], lo: f64, hi: f64) -> f64 {
    ks_statistic(xs, |x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Geweke-style comparison of a monitored scalar between independent forward
/// draws and a successive-conditional chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GewekeComparison {
    pub forward_mean: f64,
    pub chain_mean: f64,
    pub z: f64,
}

pub fn geweke_z(forward: &[f64], chain: &[f64]) -> GewekeComparison {
    let fm = mean(forward);
    let cm = mean(chain);
    let se = (iid_se(forward).powi(2) + batch_means_se(chain).powi(2)).sqrt();
    GewekeComparison {
        forward_mean: fm,
        chain_mean: cm,
        z: if se > 0.0 { (fm - cm) / se } else { 0.0 },
    }
}
