//! GP conditional prediction at unseen sites, Rao–Blackwellized predictive
//! mixtures over score pairs, and prediction-quality metrics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::driver::CholTable;
use crate::error::{Error, Result};
use crate::kernels::{chol_jitter, cross_correlations, gram_from_coords, site_coordinates, HyperParams, KernelSpec, SeasonCalendar, SideInfo};
use crate::likelihood::{score_pair_logpdf, LikelihoodParams};
use crate::model::{inner_softplus, member_cholesky, Matchup, ModelState, Problem, Side};

/// Conditional mean and variance of a unit-variance zero-mean GP at
/// `test_site`, given noiseless values `f_train` at `train_sites`.
pub fn gp_conditional(
    train_sites: &[SideInfo],
    f_train: &[f64],
    test_site: &SideInfo,
    spec: &KernelSpec,
    hp: &HyperParams,
    cal: &SeasonCalendar,
) -> Result<(f64, f64)> {
    if train_sites.len() != f_train.len() {
        return Err(Error::Domain(format!(
            "{} training sites but {} values",
            train_sites.len(),
            f_train.len()
        )));
    }
    if train_sites.is_empty() {
        return Ok((0.0, 1.0));
    }
    let coords = site_coordinates(train_sites, hp.season_gap_weeks, cal)?;
    let test = test_site.coordinates(hp.season_gap_weeks, cal)?;
    let l = chol_jitter(&gram_from_coords(&coords, spec, &hp.length_scales))?.l;
    let kstar = cross_correlations(&coords, &test, spec, &hp.length_scales);
    let nu = l
        .solve_lower_triangular(&DVector::from_column_slice(f_train))
        .ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
    Ok(conditional_from_factor(&l, &nu, &kstar))
}

/// Conditional moments given the training factor `L` and whitened training
/// values `ν = L⁻¹ f`: mean `aᵀν`, variance `1 - aᵀa` with `a = L⁻¹ k*`.
pub(crate) fn conditional_from_factor(l: &DMatrix<f64>, nu: &DVector<f64>, kstar: &DVector<f64>) -> (f64, f64) {
    if l.nrows() == 0 {
        return (0.0, 1.0);
    }
    let a = l
        .solve_lower_triangular(kstar)
        .unwrap_or_else(|| DVector::zeros(kstar.len()));
    let mean = a.dot(nu);
    let var = (1.0 - a.dot(&a)).clamp(0.0, 1.0);
    (mean, var)
}

/// Gram factors for every member, feature and side at the state's
/// hyperparameters.
pub fn cholesky_table(state: &ModelState, problem: &Problem) -> Result<CholTable> {
    let mut table: CholTable = [Vec::new(), Vec::new()];
    for side in Side::BOTH {
        table[side.index()] = (0..problem.k)
            .map(|k| {
                (0..problem.n_members())
                    .map(|m| member_cholesky(problem, m, state.hyper(side, k)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(table)
}

/// Draw latent values at every test game's sites and return the implied
/// (home, away) score means.
pub fn draw_predictive_state<R: Rng + ?Sized>(
    state: &ModelState,
    problem: &Problem,
    test_games: &[Matchup],
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    let table = cholesky_table(state, problem)?;
    draw_predictive_with(state, problem, &table, test_games, rng)
}

/// As [`draw_predictive_state`] with precomputed Gram factors.
pub fn draw_predictive_with<R: Rng + ?Sized>(
    state: &ModelState,
    problem: &Problem,
    chol: &CholTable,
    test_games: &[Matchup],
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    let k = problem.k;
    // Training coordinates per (side, feature, member) depend on the gap of
    // that feature's kernel; build them lazily once per call.
    let mut coords: [Vec<Vec<Option<Vec<Vec<f64>>>>>; 2] =
        Side::BOTH.map(|_| vec![vec![None; problem.n_members()]; k]);
    let mut out = Vec::with_capacity(test_games.len());
    for game in test_games {
        if game.home >= problem.n_members() || game.away >= problem.n_members() {
            return Err(Error::Index("test game references an unknown member".into()));
        }
        // [participant][side] mixed K-vectors
        let mut vecs = [[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
        for (slot, (member, site)) in [(game.home, &game.home_site), (game.away, &game.away_site)]
            .into_iter()
            .enumerate()
        {
            for side in Side::BOTH {
                let s = side.index();
                let mut f_star = DVector::<f64>::zeros(k);
                for kk in 0..k {
                    let hp = state.hyper(side, kk);
                    let cached = &mut coords[s][kk][member];
                    if cached.is_none() {
                        *cached = Some(site_coordinates(&problem.index.sites[member], hp.season_gap_weeks, &problem.calendar)?);
                    }
                    let train = cached.as_ref().expect("filled above");
                    let test = site.coordinates(hp.season_gap_weeks, &problem.calendar)?;
                    let kstar = cross_correlations(train, &test, &problem.kernel, &hp.length_scales);
                    let nu = DVector::from_column_slice(state.whitened.get(side, kk, member));
                    let (mean, var) = conditional_from_factor(&chol[s][kk][member], &nu, &kstar);
                    let z: f64 = rng.sample(StandardNormal);
                    f_star[kk] = mean + var.sqrt() * z;
                }
                let mut mixed = state.mixing.chol(side) * f_star;
                for (v, mu) in mixed.iter_mut().zip(state.mixing.mu(side)) {
                    *v += mu;
                }
                vecs[slot][s] = mixed.iter().copied().collect();
            }
        }
        let [[u_h, v_h], [u_a, v_a]] = vecs;
        out.push((inner_softplus(&u_h, &v_a), inner_softplus(&u_a, &v_h)));
    }
    Ok(out)
}

/// Equal-weight mixture of bivariate Gaussians over one game's score pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMixture {
    /// (home mean, away mean) and likelihood parameters per component.
    pub components: Vec<((f64, f64), LikelihoodParams)>,
}

impl PredictiveMixture {
    pub fn new(components: Vec<((f64, f64), LikelihoodParams)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("a predictive mixture needs at least one component".into()));
        }
        for (_, p) in &components {
            LikelihoodParams::new(p.sigma, p.rho)?;
        }
        Ok(Self { components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Mixture mean of the (home, away) scores.
    pub fn mean(&self) -> (f64, f64) {
        let n = self.components.len() as f64;
        let (h, a) = self
            .components
            .iter()
            .fold((0.0, 0.0), |acc, ((h, a), _)| (acc.0 + h, acc.1 + a));
        (h / n, a / n)
    }

    /// Probability that the first (home) score exceeds the second.
    pub fn prob_home_win(&self) -> f64 {
        let n = self.components.len() as f64;
        self.components
            .iter()
            .map(|((h, a), p)| normal_cdf((h - a) / p.difference_variance().sqrt()))
            .sum::<f64>()
            / n
    }

    /// Log density at `z` on the `(home, away)` scale.
    pub fn logpdf(&self, z: (f64, f64)) -> f64 {
        mixture_logpdf(self, z)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `log((1/S) Σ_s N(z; y_s, Σ(p_s)))`, stabilized by the largest term.
pub fn mixture_logpdf(mix: &PredictiveMixture, z: (f64, f64)) -> f64 {
    let terms: Vec<f64> = mix
        .components
        .iter()
        .map(|(y, p)| score_pair_logpdf(z, *y, p))
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + (sum / terms.len() as f64).ln()
}

/// Mixture probability of the box `[h0, h1] × [a0, a1]` on the (home, away)
/// scale: Simpson's rule over the home score of the exact conditional
/// probability of the away range.
pub fn box_mass(mix: &PredictiveMixture, home: (f64, f64), away: (f64, f64)) -> f64 {
    const N: usize = 2000;
    let (h0, h1) = home;
    let h = (h1 - h0) / N as f64;
    let mut total = 0.0;
    for ((yh, ya), p) in &mix.components {
        let cond_sd = p.sigma * (1.0 - p.rho * p.rho).sqrt();
        let f = |x: f64| {
            let z = (x - yh) / p.sigma;
            let dens = (-0.5 * z * z).exp() / (p.sigma * (2.0 * std::f64::consts::PI).sqrt());
            let m = ya + p.rho * (x - yh);
            dens * (normal_cdf((away.1 - m) / cond_sd) - normal_cdf((away.0 - m) / cond_sd))
        };
        let mut acc = f(h0) + f(h1);
        for i in 1..N {
            acc += f(h0 + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        total += acc * h / 3.0;
    }
    total / mix.components.len() as f64
}

/// Grid nodes `lo, lo + step, …` up to and including `hi`.
pub fn grid_nodes(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Domain(format!("bad grid [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

/// Mixture density at every (home, away) grid node, rows indexed by home.
pub fn density_grid(mix: &PredictiveMixture, home_nodes: &[f64], away_nodes: &[f64]) -> Vec<Vec<f64>> {
    home_nodes
        .iter()
        .map(|&h| away_nodes.iter().map(|&a| mix.logpdf((h, a)).exp()).collect())
        .collect()
}

/// Point prediction implied by the betting lines, on the (home, away) scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertPoint {
    pub home: f64,
    pub away: f64,
}

/// Per-game contributions, kept so metrics pool across blocks and seasons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameScore {
    pub log_prob: f64,
    pub winner_correct: bool,
    /// Sum of the two squared score errors of the mixture mean.
    pub sq_err: f64,
    pub expert: Option<ExpertScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertScore {
    pub winner_correct: bool,
    pub sq_err: f64,
}

/// Pooled evaluation metrics over a set of games.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub n_games: usize,
    pub mean_log_prob: f64,
    pub winner_error_pct: f64,
    /// Root mean square over all `2G` score entries.
    pub rmse: f64,
    pub expert: Option<ExpertMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertMetrics {
    pub n_games: usize,
    pub winner_error_pct: f64,
    pub rmse: f64,
}

/// Score one game. A game is a home win when the home score is strictly
/// higher; the model predicts a home win when `P(home > away) > 0.5`, the
/// expert when its implied home score is at least the away score.
pub fn score_game(mix: &PredictiveMixture, truth: (f64, f64), expert: Option<ExpertPoint>) -> GameScore {
    let home_won = truth.0 > truth.1;
    let (mh, ma) = mix.mean();
    GameScore {
        log_prob: mix.logpdf(truth),
        winner_correct: (mix.prob_home_win() > 0.5) == home_won,
        sq_err: (mh - truth.0).powi(2) + (ma - truth.1).powi(2),
        expert: expert.map(|e| ExpertScore {
            winner_correct: (e.home >= e.away) == home_won,
            sq_err: (e.home - truth.0).powi(2) + (e.away - truth.1).powi(2),
        }),
    }
}

/// Pool per-game scores into one metrics row.
pub fn summarize(scores: &[GameScore]) -> MetricsRow {
    let n = scores.len();
    let nf = n.max(1) as f64;
    let expert: Vec<&ExpertScore> = scores.iter().filter_map(|s| s.expert.as_ref()).collect();
    MetricsRow {
        n_games: n,
        mean_log_prob: scores.iter().map(|s| s.log_prob).sum::<f64>() / nf,
        winner_error_pct: 100.0 * scores.iter().filter(|s| !s.winner_correct).count() as f64 / nf,
        rmse: (scores.iter().map(|s| s.sq_err).sum::<f64>() / (2.0 * nf)).sqrt(),
        expert: (!expert.is_empty()).then(|| {
            let ne = expert.len() as f64;
            ExpertMetrics {
                n_games: expert.len(),
                winner_error_pct: 100.0 * expert.iter().filter(|e| !e.winner_correct).count() as f64 / ne,
                rmse: (expert.iter().map(|e| e.sq_err).sum::<f64>() / (2.0 * ne)).sqrt(),
            }
        }),
    }
}

/// Metrics for aligned per-game mixtures, truths and optional expert lines.
pub fn metrics(
    mixes: &[PredictiveMixture],
    truths: &[(f64, f64)],
    expert: Option<&[Option<ExpertPoint>]>,
) -> Result<(MetricsRow, Vec<GameScore>)> {
    if mixes.len() != truths.len() || expert.is_some_and(|e| e.len() != truths.len()) {
        return Err(Error::Validation(format!(
            "metrics need aligned inputs: {} mixtures, {} truths",
            mixes.len(),
            truths.len()
        )));
    }
    let scores: Vec<GameScore> = mixes
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (m, t))| score_game(m, *t, expert.and_then(|e| e[i])))
        .collect();
    Ok((summarize(&scores), scores))
}
