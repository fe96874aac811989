//! Tuning-free MCMC kernels: univariate step-out/shrinkage slice sampling,
//! elliptical slice sampling, and the whitened hyperparameter update.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{chol_jitter, gram, HyperParams, KernelSpec, SeasonCalendar, SideInfo};
use crate::model::HyperBox;

/// Step-out and shrinkage limits for [`slice_sample_1d`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceConfig {
    pub initial_width: f64,
    pub max_step_outs: usize,
    pub max_shrinks: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            initial_width: 1.0,
            max_step_outs: 32,
            max_shrinks: 200,
        }
    }
}

impl SliceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_width > 0.0 && self.initial_width.is_finite())
            || self.max_step_outs == 0
            || self.max_shrinks == 0
        {
            return Err(Error::Config(format!("invalid slice configuration {self:?}")));
        }
        Ok(())
    }

    pub fn with_width(self, initial_width: f64) -> Self {
        Self {
            initial_width,
            ..self
        }
    }
}

/// Result of one slice-sampling update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceStep {
    pub value: f64,
    pub log_density: f64,
    pub step_outs: usize,
    pub shrinks: usize,
}

/// One step-out/shrinkage slice-sampling update of `x0`.
pub fn slice_sample_1d<R: Rng + ?Sized>(
    x0: f64,
    log_density: impl FnMut(f64) -> f64,
    cfg: &SliceConfig,
    rng: &mut R,
) -> Result<f64> {
    slice_step(x0, None, log_density, cfg, rng).map(|s| s.value)
}

/// As [`slice_sample_1d`] but reports bracket statistics, and accepts the log
/// density at `x0` when the caller already has it.
pub fn slice_step<R: Rng + ?Sized>(
    x0: f64,
    log_density_x0: Option<f64>,
    mut log_density: impl FnMut(f64) -> f64,
    cfg: &SliceConfig,
    rng: &mut R,
) -> Result<SliceStep> {
    let ld0 = log_density_x0.unwrap_or_else(|| log_density(x0));
    if !ld0.is_finite() {
        return Err(Error::Sampler(format!(
            "slice sampler started at {x0} where the log density is {ld0}"
        )));
    }
    let e: f64 = rng.sample(Exp1);
    let height = ld0 - e;
    let w = cfg.initial_width;

    let mut left = x0 - w * rng.random::<f64>();
    let mut right = left + w;
    let mut left_budget = (cfg.max_step_outs as f64 * rng.random::<f64>()).floor() as usize;
    let mut right_budget = cfg.max_step_outs - 1 - left_budget.min(cfg.max_step_outs - 1);
    let mut step_outs = 0;
    while left_budget > 0 && log_density(left) > height {
        left -= w;
        left_budget -= 1;
        step_outs += 1;
    }
    while right_budget > 0 && log_density(right) > height {
        right += w;
        right_budget -= 1;
        step_outs += 1;
    }

    for shrinks in 0..cfg.max_shrinks {
        let x1 = left + (right - left) * rng.random::<f64>();
        let ld1 = log_density(x1);
        if ld1 > height {
            return Ok(SliceStep {
                value: x1,
                log_density: ld1,
                step_outs,
                shrinks,
            });
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    Err(Error::Sampler(format!(
        "slice sampler exhausted {} shrinks around {x0}",
        cfg.max_shrinks
    )))
}

/// Gaussian prior for [`elliptical_slice`].
#[derive(Debug, Clone, Copy)]
pub enum GaussianPrior<'a> {
    /// `N(0, I)`.
    StandardNormal,
    /// `N(0, L Lᵀ)`.
    Cholesky(&'a DMatrix<f64>),
}

impl GaussianPrior<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        match self {
            GaussianPrior::StandardNormal => z,
            GaussianPrior::Cholesky(l) => (*l * DVector::from_vec(z)).data.into(),
        }
    }
}

/// Result of one elliptical slice update.
#[derive(Debug, Clone, PartialEq)]
pub struct EssStep {
    pub value: Vec<f64>,
    pub log_lik: f64,
    /// Accepted angle; 0 would mean the input was returned.
    pub angle: f64,
    pub shrinks: usize,
}

/// Shrinks past this many proposals fall back to the current state (angle 0).
const ESS_MAX_SHRINKS: usize = 10_000;

/// Angle search of elliptical slice sampling. `log_lik_at(θ)` evaluates the
/// proposal `f cos θ + ν sin θ`; returns the accepted angle and its log
/// likelihood.
pub fn ess_angle<R: Rng + ?Sized>(
    current_log_lik: f64,
    mut log_lik_at: impl FnMut(f64) -> f64,
    rng: &mut R,
) -> Result<(f64, f64, usize)> {
    if !current_log_lik.is_finite() {
        return Err(Error::Sampler(format!(
            "elliptical slice started from a state with log likelihood {current_log_lik}"
        )));
    }
    let threshold = current_log_lik + rng.random::<f64>().ln();
    let mut theta = 2.0 * PI * rng.random::<f64>();
    let mut lo = theta - 2.0 * PI;
    let mut hi = theta;
    for shrinks in 0..ESS_MAX_SHRINKS {
        let ll = log_lik_at(theta);
        if ll > threshold {
            return Ok((theta, ll, shrinks));
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = lo + (hi - lo) * rng.random::<f64>();
    }
    Ok((0.0, current_log_lik, ESS_MAX_SHRINKS))
}

/// One elliptical slice sampling update for a posterior proportional to
/// `N(f; 0, Σ) exp(log_lik(f))`.
pub fn elliptical_slice<R: Rng + ?Sized>(
    f: &[f64],
    prior: GaussianPrior<'_>,
    log_lik: impl FnMut(&[f64]) -> f64,
    rng: &mut R,
) -> Result<EssStep> {
    let aux = prior.sample(f.len(), rng);
    elliptical_slice_with_aux(f, &aux, None, log_lik, rng)
}

/// Elliptical slice update with a caller-supplied auxiliary prior draw.
pub fn elliptical_slice_with_aux<R: Rng + ?Sized>(
    f: &[f64],
    aux: &[f64],
    current_log_lik: Option<f64>,
    mut log_lik: impl FnMut(&[f64]) -> f64,
    rng: &mut R,
) -> Result<EssStep> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampler("elliptical slice given a non-finite state".into()));
    }
    let current = current_log_lik.unwrap_or_else(|| log_lik(f));
    let mut proposal = vec![0.0; f.len()];
    let (angle, ll, shrinks) = ess_angle(
        current,
        |theta| {
            let (s, c) = theta.sin_cos();
            for ((p, a), b) in proposal.iter_mut().zip(f).zip(aux) {
                *p = a * c + b * s;
            }
            log_lik(&proposal)
        },
        rng,
    )?;
    let (s, c) = angle.sin_cos();
    let value = f.iter().zip(aux).map(|(a, b)| a * c + b * s).collect();
    Ok(EssStep {
        value,
        log_lik: ll,
        angle,
        shrinks,
    })
}

/// Unwhitened function values `m + L_θ ν` for every member at `hp`, or
/// `None` if any Gram matrix fails to factor.
pub fn unwhiten_all(
    nu_all: &[DVector<f64>],
    mean: f64,
    hp: &HyperParams,
    sites: &[Vec<SideInfo>],
    spec: &KernelSpec,
    cal: &SeasonCalendar,
) -> Option<Vec<DVector<f64>>> {
    nu_all
        .iter()
        .zip(sites)
        .map(|(nu, s)| {
            if s.is_empty() {
                return Some(DVector::zeros(0));
            }
            let g = gram(s, spec, hp, cal).ok()?;
            let l = chol_jitter(&g).ok()?.l;
            Some((l * nu).add_scalar(mean))
        })
        .collect()
}

/// Coordinate-wise slice update of one hyperparameter set with the whitened
/// values `ν` held fixed, so `f(θ) = m + L_θ ν` moves with `θ`.
///
/// Length scales are updated on the log scale (with the Jacobian of the
/// top-hat prior); the season gap, when `sample_gap` is set, on its linear
/// scale. A Gram matrix that will not factor gives log density `-∞`.
#[allow(clippy::too_many_arguments)]
pub fn whitened_hyper_update<R: Rng + ?Sized>(
    nu_all: &[DVector<f64>],
    mean: f64,
    hp: &HyperParams,
    sites: &[Vec<SideInfo>],
    spec: &KernelSpec,
    cal: &SeasonCalendar,
    prior: &HyperBox,
    sample_gap: bool,
    mut log_lik_given_f: impl FnMut(&[DVector<f64>]) -> f64,
    cfg: &SliceConfig,
    rng: &mut R,
) -> Result<HyperParams> {
    if !prior.contains(hp) {
        return Err(Error::Domain(format!("hyperparameters {hp:?} outside the prior box")));
    }
    let mut current = hp.clone();
    let mut eval = |h: &HyperParams| -> f64 {
        match unwhiten_all(nu_all, mean, h, sites, spec, cal) {
            Some(f) => log_lik_given_f(&f),
            None => f64::NEG_INFINITY,
        }
    };
    let mut current_ll = eval(&current);
    for d in 0..current.length_scales.len() {
        let b = prior.length_bounds[d];
        let (lo, hi) = (b.lo.ln(), b.hi.ln());
        let mut trial = current.clone();
        // uniform in ℓ is density ℓ on the log scale
        let step = slice_step(
            current.length_scales[d].ln(),
            Some(current_ll + current.length_scales[d].ln()),
            |x| {
                if x < lo || x > hi {
                    return f64::NEG_INFINITY;
                }
                trial.length_scales[d] = x.exp();
                eval(&trial) + x
            },
            cfg,
            rng,
        )?;
        current.length_scales[d] = step.value.exp();
        current_ll = step.log_density - step.value;
    }
    if sample_gap {
        let max = prior.gap_max;
        let gap_cfg = cfg.with_width(max / 4.0);
        let mut trial = current.clone();
        let step = slice_step(
            current.season_gap_weeks,
            Some(current_ll),
            |g| {
                if g <= 0.0 || g > max {
                    return f64::NEG_INFINITY;
                }
                trial.season_gap_weeks = g;
                eval(&trial)
            },
            &gap_cfg,
            rng,
        )?;
        current.season_gap_weeks = step.value;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{batch_means_se, ks_statistic_uniform, ks_critical_1pct};
    use crate::kernels::TIME_DIM;
    use crate::model::{Bounds, PriorBoxes};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_normal_ld(x: f64) -> f64 {
        -0.5 * x * x
    }

    #[test]
    fn slice_recovers_standard_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SliceConfig::default();
        let mut x = 0.0;
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            x = slice_sample_1d(x, std_normal_ld, &cfg, &mut rng).unwrap();
            xs.push(x);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn slice_uniform_on_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SliceConfig::default().with_width(0.3);
        let mut x = 0.5;
        let mut xs = Vec::new();
        // every 5th draw of a 5e4 chain to keep the KS sample near-independent
        for i in 0..50_000 {
            x = slice_sample_1d(x, |v| if (0.0..=1.0).contains(&v) { 0.0 } else { f64::NEG_INFINITY }, &cfg, &mut rng)
                .unwrap();
            if i % 5 == 0 {
                xs.push(x);
            }
        }
        assert_eq!(xs.len(), 10_000);
        let d = ks_statistic_uniform(&xs, 0.0, 1.0);
        assert!(d < ks_critical_1pct(xs.len()), "KS {d}");
    }

    #[test]
    fn slice_flat_density_accepts_first_proposal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SliceConfig::default();
        for _ in 0..200 {
            let s = slice_step(1.0, None, |_| 0.0, &cfg, &mut rng).unwrap();
            assert_eq!(s.shrinks, 0);
        }
    }

    #[test]
    fn slice_rejects_infinite_start_and_reports_exhaustion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SliceConfig::default();
        assert!(slice_sample_1d(0.0, |_| f64::NEG_INFINITY, &cfg, &mut rng).is_err());
        // a spike at exactly x0 cannot be hit by the continuous proposals
        let tight = SliceConfig {
            max_shrinks: 5,
            ..cfg
        };
        let r = slice_sample_1d(0.25, |x| if x == 0.25 { 0.0 } else { f64::NEG_INFINITY }, &tight, &mut rng);
        assert!(matches!(r, Err(Error::Sampler(_))));
    }

    #[test]
    fn slice_is_deterministic_per_seed() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = 0.3;
            (0..50)
                .map(|_| {
                    x = slice_sample_1d(x, std_normal_ld, &SliceConfig::default(), &mut rng).unwrap();
                    x
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn ess_flat_likelihood_samples_prior_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut l = DMatrix::<f64>::zeros(5, 5);
        for i in 0..5 {
            for j in 0..i {
                l[(i, j)] = 0.3 * (rng.random::<f64>() - 0.5);
            }
            l[(i, i)] = 0.6 + 0.4 * rng.random::<f64>();
        }
        let sigma = &l * l.transpose();
        let mut f = vec![0.0; 5];
        let mut acc = DMatrix::<f64>::zeros(5, 5);
        let n = 10_000;
        for i in 0..n * 5 {
            f = elliptical_slice(&f, GaussianPrior::Cholesky(&l), |_| 0.0, &mut rng).unwrap().value;
            if i % 5 == 4 {
                let v = DVector::from_column_slice(&f);
                acc += &v * v.transpose();
            }
        }
        acc /= n as f64;
        assert!((acc - sigma).amax() < 0.05);
    }

    #[test]
    fn ess_conjugate_gaussian_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut f = vec![0.0];
        let burn = 1_000;
        let n = 50_000;
        let mut xs = Vec::with_capacity(n);
        for i in 0..burn + n {
            f = elliptical_slice(&f, GaussianPrior::StandardNormal, |x| -0.5 * (x[0] - 1.0).powi(2), &mut rng)
                .unwrap()
                .value;
            if i >= burn {
                xs.push(f[0]);
            }
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sq: Vec<f64> = xs.iter().map(|x| (x - 0.5).powi(2)).collect();
        let var = sq.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * batch_means_se(&xs), "mean {mean}");
        assert!((var - 0.5).abs() < 3.0 * batch_means_se(&sq), "var {var}");
    }

    #[test]
    fn ess_aux_equal_to_state_accepts_at_first_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = vec![0.4, -1.1, 2.0];
        let step = elliptical_slice_with_aux(&f, &f, None, |_| 0.0, &mut rng).unwrap();
        assert_eq!(step.shrinks, 0);
        let (s, c) = step.angle.sin_cos();
        for (v, x) in step.value.iter().zip(&f) {
            assert!((v - x * (c + s)).abs() < 1e-12);
        }
    }

    #[test]
    fn ess_accepted_point_meets_threshold_and_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ll = |x: &[f64]| -0.5 * x.iter().map(|v| (v - 2.0).powi(2)).sum::<f64>();
        let mut f = vec![0.1, 0.2];
        for _ in 0..500 {
            let before = ll(&f);
            let step = elliptical_slice(&f, GaussianPrior::StandardNormal, ll, &mut rng).unwrap();
            assert!(step.log_lik.is_finite());
            assert!(step.log_lik > before + (1e-300f64).ln());
            assert_ne!(step.value, f);
            f = step.value;
        }
    }

    #[test]
    fn ess_rejects_invalid_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let r = elliptical_slice(&[0.0], GaussianPrior::StandardNormal, |_| f64::NEG_INFINITY, &mut rng);
        assert!(matches!(r, Err(Error::Sampler(_))));
        let r = elliptical_slice(&[f64::NAN], GaussianPrior::StandardNormal, |_| 0.0, &mut rng);
        assert!(r.is_err());
    }

    fn line_sites(n: usize, spacing: f64) -> Vec<SideInfo> {
        (0..n).map(|i| SideInfo::new(i as f64 * spacing, true)).collect()
    }

    fn time_box(lo: f64, hi: f64) -> HyperBox {
        let boxes = PriorBoxes {
            time: Bounds::new(lo, hi).unwrap(),
            ..PriorBoxes::default()
        };
        HyperBox::for_kernel(&KernelSpec::ard(&[TIME_DIM]), &boxes, 28.0)
    }

    #[test]
    fn hyper_update_flat_likelihood_recovers_top_hat() {
        let spec = KernelSpec::ard(&[TIME_DIM]);
        let cal = SeasonCalendar::single_season();
        let prior = time_box(0.5, 20.0);
        let sites = vec![line_sites(5, 1.0), line_sites(3, 2.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let nu: Vec<DVector<f64>> = sites
            .iter()
            .map(|s| DVector::from_fn(s.len(), |_, _| rng.sample(StandardNormal)))
            .collect();
        let mut hp = HyperParams::new(vec![3.0], 10.0).unwrap();
        let cfg = SliceConfig::default();
        let mut ls = Vec::new();
        let mut gaps = Vec::new();
        for i in 0..30_000 {
            hp = whitened_hyper_update(&nu, 0.0, &hp, &sites, &spec, &cal, &prior, true, |_| 0.0, &cfg, &mut rng)
                .unwrap();
            if i % 3 == 0 {
                ls.push(hp.length_scales[0]);
                gaps.push(hp.season_gap_weeks);
            }
        }
        assert_eq!(ls.len(), 10_000);
        let d = ks_statistic_uniform(&ls, 0.5, 20.0);
        assert!(d < ks_critical_1pct(ls.len()), "KS length scale {d}");
        let d = ks_statistic_uniform(&gaps, 0.0, 28.0);
        assert!(d < ks_critical_1pct(gaps.len()), "KS gap {d}");
    }

    #[test]
    fn hyper_update_with_zero_nu_ignores_likelihood_shape() {
        // ν = 0 makes f = m for every θ, so any likelihood of f is constant in θ
        let spec = KernelSpec::ard(&[TIME_DIM]);
        let cal = SeasonCalendar::single_season();
        let prior = time_box(0.5, 20.0);
        let sites = vec![line_sites(6, 1.0)];
        let nu = vec![DVector::zeros(6)];
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut hp = HyperParams::new(vec![2.0], 28.0).unwrap();
        let mut ls = Vec::new();
        for i in 0..30_000 {
            hp = whitened_hyper_update(
                &nu,
                1.5,
                &hp,
                &sites,
                &spec,
                &cal,
                &prior,
                false,
                |f| -f[0].iter().map(|v| (v - 1.0).powi(2)).sum::<f64>(),
                &SliceConfig::default(),
                &mut rng,
            )
            .unwrap();
            if i % 3 == 0 {
                ls.push(hp.length_scales[0]);
            }
        }
        let d = ks_statistic_uniform(&ls, 0.5, 20.0);
        assert!(d < ks_critical_1pct(ls.len()), "KS {d}");
    }

    #[test]
    fn hyper_update_matches_marginal_posterior() {
        // 40 sites drawn with ℓ = 3 and observed with low noise; ν moves under
        // ESS while ℓ moves under the whitened update
        let spec = KernelSpec::ard(&[TIME_DIM]);
        let cal = SeasonCalendar::single_season();
        let prior = time_box(0.1, 50.0);
        let sites = vec![line_sites(40, 0.75)];
        let truth_hp = HyperParams::new(vec![3.0], 28.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let l_true = chol_jitter(&gram(&sites[0], &spec, &truth_hp, &cal).unwrap()).unwrap().l;
        let z = DVector::from_fn(40, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f_true = &l_true * z;
        let noise = 0.3;
        let y: Vec<f64> = f_true.iter().map(|v| v + noise * rng.sample::<f64, _>(StandardNormal)).collect();
        let ll = |f: &[f64]| -0.5 * f.iter().zip(&y).map(|(a, b)| ((a - b) / noise).powi(2)).sum::<f64>();

        let mut hp = HyperParams::new(vec![20.0], 28.0).unwrap();
        let mut nu = DVector::zeros(40);
        let cfg = SliceConfig::default();
        let mut samples = Vec::new();
        for it in 0..12_000 {
            let l = chol_jitter(&gram(&sites[0], &spec, &hp, &cal).unwrap()).unwrap().l;
            for _ in 0..3 {
                let step = elliptical_slice(
                    nu.as_slice(),
                    GaussianPrior::StandardNormal,
                    |v| ll((&l * DVector::from_column_slice(v)).as_slice()),
                    &mut rng,
                )
                .unwrap();
                nu = DVector::from_vec(step.value);
            }
            hp = whitened_hyper_update(
                std::slice::from_ref(&nu),
                0.0,
                &hp,
                &sites,
                &spec,
                &cal,
                &prior,
                false,
                |f| ll(f[0].as_slice()),
                &cfg,
                &mut rng,
            )
            .unwrap();
            if it >= 1_000 {
                samples.push(hp.length_scales[0]);
            }
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| samples[(samples.len() as f64 * p) as usize];

        // exact marginal posterior of ℓ on a log grid: N(y; 0, K_ℓ + s²I)
        // times the top-hat prior (density ℓ in log ℓ)
        let yv = DVector::from_column_slice(&y);
        let grid: Vec<f64> = (0..=2000).map(|i| (0.1f64).ln() + (500.0f64).ln() * i as f64 / 2000.0).collect();
        let logp: Vec<f64> = grid
            .iter()
            .map(|&x| {
                let hp = HyperParams::new(vec![x.exp()], 28.0).unwrap();
                let k = gram(&sites[0], &spec, &hp, &cal).unwrap() + DMatrix::identity(40, 40) * noise * noise;
                let c = k.cholesky().unwrap();
                let a = c.l().solve_lower_triangular(&yv).unwrap();
                let logdet: f64 = c.l().diagonal().iter().map(|d| d.ln()).sum();
                -0.5 * a.dot(&a) - logdet + x
            })
            .collect();
        let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logp.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let oracle_q = |p: f64| {
            let mut acc = 0.0;
            for (x, wi) in grid.iter().zip(&w) {
                acc += wi / total;
                if acc >= p {
                    return x.exp();
                }
            }
            grid.last().unwrap().exp()
        };
        let (om, o05, o95) = (oracle_q(0.5), oracle_q(0.05), oracle_q(0.95));
        assert!(q(0.05) < om && om < q(0.95), "oracle median {om} vs sampled [{}, {}]", q(0.05), q(0.95));
        assert!(o05 < q(0.5) && q(0.5) < o95, "sampled median {} vs oracle [{o05}, {o95}]", q(0.5));
    }

    #[test]
    fn hyper_update_rejects_start_outside_box() {
        let spec = KernelSpec::ard(&[TIME_DIM]);
        let prior = time_box(0.5, 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let hp = HyperParams::new(vec![30.0], 28.0).unwrap();
        let r = whitened_hyper_update(
            &[],
            0.0,
            &hp,
            &[],
            &spec,
            &SeasonCalendar::single_season(),
            &prior,
            false,
            |_| 0.0,
            &SliceConfig::default(),
            &mut rng,
        );
        assert!(r.is_err());
    }
}
