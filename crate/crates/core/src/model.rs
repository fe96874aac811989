//! The DPMF latent state and the pure functions that turn it into score
//! means.
//!
//! Every member (team) carries `K` latent functions on each side. Functions
//! are stored whitened: for feature `k` of member `m` on side `s`, the raw
//! Gaussian-process values at that member's sites are `f = L_θ ν` where
//! `L_θ` is the Cholesky factor of the member's correlation matrix. The
//! multi-task mixing `L_Σ f + μ` happens per site after unwhitening, and the
//! right-hand (defense) vectors pass through the softplus before the inner
//! product.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{chol_jitter, gram, HyperParams, KernelSpec, SeasonCalendar, SideInfo, HOME_DIM, TIME_DIM};
use crate::likelihood::LikelihoodParams;

/// Left (offense, `U`) or right (defense, `V`) factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    U,
    V,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::U, Side::V];

    pub fn index(self) -> usize {
        match self {
            Side::U => 0,
            Side::V => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::U => "u",
            Side::V => "v",
        }
    }
}

/// Which directed entry of the score pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Points scored by the home team against the away team.
    HomeVsAway,
    /// Points scored by the away team against the home team.
    AwayVsHome,
}

/// A game described by member indices and the side information each
/// participant sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matchup {
    pub home: usize,
    pub away: usize,
    pub home_site: SideInfo,
    pub away_site: SideInfo,
    /// Observed (home, away) scores.
    pub scores: (f64, f64),
}

impl Matchup {
    /// Both participants at the same week, home flag set for the home team.
    pub fn at_week(home: usize, away: usize, week: f64, scores: (f64, f64)) -> Self {
        Self {
            home,
            away,
            home_site: SideInfo::new(week, true),
            away_site: SideInfo::new(week, false),
            scores,
        }
    }
}

/// A training game resolved to site positions in each participant's list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedGame {
    pub home: usize,
    pub away: usize,
    pub home_pos: usize,
    pub away_pos: usize,
    pub scores: (f64, f64),
}

/// Per-member site lists and the map from sites back to games.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteIndex {
    pub members: Vec<String>,
    /// `sites[m]` lists member `m`'s side information in game order.
    pub sites: Vec<Vec<SideInfo>>,
    /// `site_games[m][p]` is the game observed at site `p` of member `m`.
    pub site_games: Vec<Vec<usize>>,
}

impl SiteIndex {
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn n_sites(&self, member: usize) -> usize {
        self.sites[member].len()
    }
}

/// Lower and upper bounds for one length-scale slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid prior box [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Prior boxes for the length scales of each coordinate type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBoxes {
    pub time: Bounds,
    pub home: Bounds,
    pub extra: Bounds,
}

impl Default for PriorBoxes {
    fn default() -> Self {
        Self {
            time: Bounds { lo: 0.25, hi: 500.0 },
            home: Bounds { lo: 0.01, hi: 100.0 },
            extra: Bounds { lo: 0.01, hi: 100.0 },
        }
    }
}

/// Top-hat prior over one hyperparameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBox {
    pub length_bounds: Vec<Bounds>,
    /// Season gap is uniform on `(0, gap_max]`.
    pub gap_max: f64,
}

impl HyperBox {
    pub fn for_kernel(spec: &KernelSpec, boxes: &PriorBoxes, gap_max: f64) -> Self {
        let length_bounds = spec
            .slot_dims()
            .into_iter()
            .map(|d| match d {
                TIME_DIM => boxes.time,
                HOME_DIM => boxes.home,
                _ => boxes.extra,
            })
            .collect();
        Self {
            length_bounds,
            gap_max,
        }
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        hp.length_scales.len() == self.length_bounds.len()
            && hp
                .length_scales
                .iter()
                .zip(&self.length_bounds)
                .all(|(l, b)| b.contains(*l))
            && hp.season_gap_weeks > 0.0
            && hp.season_gap_weeks <= self.gap_max
    }

    /// Length scales at the top of every box: the static-PMF limit.
    pub fn upper_corner(&self, gap: f64) -> HyperParams {
        HyperParams {
            length_scales: self.length_bounds.iter().map(|b| b.hi).collect(),
            season_gap_weeks: gap,
        }
    }

    /// Uniform draw from the box (length scales uniform on their linear scale).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperParams {
        let length_scales = self
            .length_bounds
            .iter()
            .map(|b| b.lo + (b.hi - b.lo) * rng.random::<f64>())
            .collect();
        // (0, gap_max]: 1 - U with U in [0, 1)
        let season_gap_weeks = self.gap_max * (1.0 - rng.random::<f64>());
        HyperParams {
            length_scales,
            season_gap_weeks,
        }
    }
}

/// Priors over everything except the whitened functions (which are standard
/// normal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Mean of the Gaussian prior on every coordinate of `μ_U`.
    pub mu_center_u: f64,
    /// Mean of the Gaussian prior on every coordinate of `μ_V`.
    pub mu_center_v: f64,
    pub mu_sd: f64,
    /// Log-diagonal entries of the mixing Cholesky factors.
    pub chol_log_diag_sd: f64,
    pub chol_off_diag_sd: f64,
    /// Prior on `ln σ` is `N(0, sd²)`.
    pub log_sigma_sd: f64,
    /// Prior on `atanh ρ` is `N(0, sd²)`.
    pub atanh_rho_sd: f64,
    pub hyper_box: HyperBox,
}

impl Priors {
    /// Mean priors centred so that `μ_U · softplus(μ_V)` equals the mean
    /// observed score.
    pub fn centered(mean_score: f64, k: usize, hyper_box: HyperBox) -> Self {
        let per_feature = (mean_score.max(1e-6) / k as f64).sqrt();
        Self {
            mu_center_u: per_feature,
            mu_center_v: softplus_inv(per_feature),
            mu_sd: 5.0,
            chol_log_diag_sd: 1.5,
            chol_off_diag_sd: 1.0,
            log_sigma_sd: 1.5,
            atanh_rho_sd: 1.5,
            hyper_box,
        }
    }

    pub fn mu_center(&self, side: Side) -> f64 {
        match side {
            Side::U => self.mu_center_u,
            Side::V => self.mu_center_v,
        }
    }
}

/// Everything the chain conditions on: structure, sites, observed scores and
/// priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub k: usize,
    pub kernel: KernelSpec,
    pub calendar: SeasonCalendar,
    pub index: SiteIndex,
    pub games: Vec<IndexedGame>,
    pub priors: Priors,
    /// When false the chain targets the prior (scores are ignored).
    pub use_likelihood: bool,
}

impl Problem {
    pub fn new(
        k: usize,
        kernel: KernelSpec,
        calendar: SeasonCalendar,
        members: Vec<String>,
        matchups: &[Matchup],
        priors: Priors,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let n = members.len();
        let mut sites = vec![Vec::new(); n];
        let mut site_games = vec![Vec::new(); n];
        let mut games = Vec::with_capacity(matchups.len());
        for (g, mu) in matchups.iter().enumerate() {
            if mu.home >= n || mu.away >= n {
                return Err(Error::Index(format!("game {g} references an unknown member")));
            }
            if mu.home == mu.away {
                return Err(Error::Validation(format!("game {g} pairs a member with itself")));
            }
            let home_pos = sites[mu.home].len();
            sites[mu.home].push(mu.home_site.clone());
            site_games[mu.home].push(g);
            let away_pos = sites[mu.away].len();
            sites[mu.away].push(mu.away_site.clone());
            site_games[mu.away].push(g);
            games.push(IndexedGame {
                home: mu.home,
                away: mu.away,
                home_pos,
                away_pos,
                scores: mu.scores,
            });
        }
        let n_dims = matchups.first().map(|m| m.home_site.n_dims()).unwrap_or(2);
        kernel.validate(n_dims)?;
        if priors.hyper_box.length_bounds.len() != kernel.n_length_scales() {
            return Err(Error::Config("prior box does not match the kernel".into()));
        }
        Ok(Self {
            k,
            kernel,
            calendar,
            index: SiteIndex {
                members,
                sites,
                site_games,
            },
            games,
            priors,
            use_likelihood: true,
        })
    }

    pub fn n_members(&self) -> usize {
        self.index.n_members()
    }

    pub fn all_games(&self) -> Vec<usize> {
        (0..self.games.len()).collect()
    }
}

/// Whitened GP values: `nu[side][k][member]` has one entry per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenedFunctions {
    pub nu: [Vec<Vec<Vec<f64>>>; 2],
}

impl WhitenedFunctions {
    pub fn get(&self, side: Side, k: usize, member: usize) -> &[f64] {
        &self.nu[side.index()][k][member]
    }

    pub fn get_mut(&mut self, side: Side, k: usize, member: usize) -> &mut Vec<f64> {
        &mut self.nu[side.index()][k][member]
    }

    /// Filled with `draw()` at every site.
    pub fn from_fn(problem: &Problem, mut draw: impl FnMut() -> f64) -> Self {
        let mut build = || {
            (0..problem.k)
                .map(|_| {
                    (0..problem.n_members())
                        .map(|m| (0..problem.index.n_sites(m)).map(|_| draw()).collect())
                        .collect()
                })
                .collect::<Vec<Vec<Vec<f64>>>>()
        };
        let u = build();
        let v = build();
        Self { nu: [u, v] }
    }
}

/// Inter-feature mixing: Cholesky factors of `Σ_U`, `Σ_V` and the mean
/// vectors. The factors are the stored primal; `Σ` is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingState {
    pub chol: [DMatrix<f64>; 2],
    pub mu: [Vec<f64>; 2],
}

impl MixingState {
    pub fn identity(k: usize, mu_u: f64, mu_v: f64) -> Self {
        Self {
            chol: [DMatrix::identity(k, k), DMatrix::identity(k, k)],
            mu: [vec![mu_u; k], vec![mu_v; k]],
        }
    }

    pub fn chol(&self, side: Side) -> &DMatrix<f64> {
        &self.chol[side.index()]
    }

    pub fn mu(&self, side: Side) -> &[f64] {
        &self.mu[side.index()]
    }

    pub fn sigma(&self, side: Side) -> DMatrix<f64> {
        let l = self.chol(side);
        l * l.transpose()
    }

    /// Number of free entries in one `K×K` lower factor.
    pub fn n_factor_params(k: usize) -> usize {
        k * (k + 1) / 2
    }

    /// Row/column of unconstrained factor parameter `idx` (row-major over the
    /// lower triangle).
    pub fn factor_param_position(idx: usize) -> (usize, usize) {
        let mut row = 0;
        let mut start = 0;
        while start + row < idx {
            start += row + 1;
            row += 1;
        }
        (row, idx - start)
    }

    /// Unconstrained value of a factor entry: log of diagonal entries, raw
    /// off-diagonal entries.
    pub fn factor_param(&self, side: Side, idx: usize) -> f64 {
        let (i, j) = Self::factor_param_position(idx);
        let v = self.chol(side)[(i, j)];
        if i == j {
            v.ln()
        } else {
            v
        }
    }

    pub fn set_factor_param(&mut self, side: Side, idx: usize, value: f64) {
        let (i, j) = Self::factor_param_position(idx);
        self.chol[side.index()][(i, j)] = if i == j { value.exp() } else { value };
    }
}

/// Full Markov chain state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub whitened: WhitenedFunctions,
    pub mixing: MixingState,
    /// `hypers[side][k]`.
    pub hypers: [Vec<HyperParams>; 2],
    pub likelihood: LikelihoodParams,
    pub rng_seed: u64,
}

impl ModelState {
    pub fn k(&self) -> usize {
        self.mixing.mu[0].len()
    }

    pub fn hyper(&self, side: Side, k: usize) -> &HyperParams {
        &self.hypers[side.index()][k]
    }

    /// Draw a complete state from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(problem: &Problem, rng: &mut R) -> Self {
        let k = problem.k;
        let whitened = WhitenedFunctions::from_fn(problem, || rng.sample(StandardNormal));
        let pri = &problem.priors;
        let mut mixing = MixingState::identity(k, pri.mu_center_u, pri.mu_center_v);
        for side in Side::BOTH {
            for kk in 0..k {
                let z: f64 = rng.sample(StandardNormal);
                mixing.mu[side.index()][kk] = pri.mu_center(side) + pri.mu_sd * z;
            }
            for idx in 0..MixingState::n_factor_params(k) {
                let (i, j) = MixingState::factor_param_position(idx);
                let sd = if i == j { pri.chol_log_diag_sd } else { pri.chol_off_diag_sd };
                let z: f64 = rng.sample(StandardNormal);
                mixing.set_factor_param(side, idx, sd * z);
            }
        }
        let hypers = [
            (0..k).map(|_| pri.hyper_box.sample(rng)).collect(),
            (0..k).map(|_| pri.hyper_box.sample(rng)).collect(),
        ];
        let log_sigma: f64 = pri.log_sigma_sd * rng.sample::<f64, _>(StandardNormal);
        let atanh_rho: f64 = pri.atanh_rho_sd * rng.sample::<f64, _>(StandardNormal);
        ModelState {
            whitened,
            mixing,
            hypers,
            likelihood: LikelihoodParams {
                sigma: log_sigma.exp(),
                rho: atanh_rho.tanh().clamp(-1.0 + 1e-15, 1.0 - 1e-15),
            },
            rng_seed: 0,
        }
    }
}

/// `f = L_θ ν`, the GP draw before mixing.
pub fn unwhiten(nu: &DVector<f64>, l: &DMatrix<f64>) -> DVector<f64> {
    l * nu
}

/// `ν = L_θ⁻¹ f` by forward substitution.
pub fn whiten(f: &DVector<f64>, l: &DMatrix<f64>) -> Result<DVector<f64>> {
    l.solve_lower_triangular(f)
        .ok_or_else(|| Error::Domain("singular triangular factor".into()))
}

/// `ln(1 + eʳ)` without overflow.
pub fn softplus(r: f64) -> f64 {
    if r > 30.0 {
        r + (-r).exp().ln_1p()
    } else {
        r.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `x > 0`.
pub fn softplus_inv(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// Cholesky factor of one member's correlation matrix for one feature. A
/// member without sites gets a `0×0` factor.
pub fn member_cholesky(problem: &Problem, member: usize, hp: &HyperParams) -> Result<DMatrix<f64>> {
    let sites = &problem.index.sites[member];
    if sites.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let g = gram(sites, &problem.kernel, hp, &problem.calendar)?;
    Ok(chol_jitter(&g)?.l)
}

/// Mixed latent vectors at every site: `u[m]` and `v_raw[m]` are `K × n_m`
/// matrices whose columns are the per-site vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVectors {
    pub u: Vec<DMatrix<f64>>,
    pub v_raw: Vec<DMatrix<f64>>,
}

impl LatentVectors {
    pub fn side(&self, side: Side) -> &[DMatrix<f64>] {
        match side {
            Side::U => &self.u,
            Side::V => &self.v_raw,
        }
    }
}

/// Unwhiten every function, mix with `L_Σ` and add `μ`.
pub fn latent_vectors_at_sites(state: &ModelState, problem: &Problem) -> Result<LatentVectors> {
    let k = problem.k;
    let mut out: [Vec<DMatrix<f64>>; 2] = [Vec::new(), Vec::new()];
    for side in Side::BOTH {
        let chol_sigma = state.mixing.chol(side);
        let mu = DVector::from_column_slice(state.mixing.mu(side));
        for m in 0..problem.n_members() {
            let n = problem.index.n_sites(m);
            let mut raw = DMatrix::<f64>::zeros(k, n);
            for kk in 0..k {
                let l = member_cholesky(problem, m, state.hyper(side, kk))?;
                let nu = DVector::from_column_slice(state.whitened.get(side, kk, m));
                let f = unwhiten(&nu, &l);
                raw.row_mut(kk).copy_from(&f.transpose());
            }
            let mut mixed = chol_sigma * raw;
            for mut col in mixed.column_iter_mut() {
                col += &mu;
            }
            out[side.index()].push(mixed);
        }
    }
    let [u, v_raw] = out;
    Ok(LatentVectors { u, v_raw })
}

/// `uᵀ ψ(v_raw)`.
pub fn inner_softplus(u: &[f64], v_raw: &[f64]) -> f64 {
    u.iter().zip(v_raw).map(|(a, b)| a * softplus(*b)).sum()
}

/// Both directed score means of an indexed game: (home scored, away scored).
pub fn y_pair_from_latents(lv: &LatentVectors, game: &IndexedGame) -> (f64, f64) {
    let u_h = lv.u[game.home].column(game.home_pos);
    let v_h = lv.v_raw[game.home].column(game.home_pos);
    let u_a = lv.u[game.away].column(game.away_pos);
    let v_a = lv.v_raw[game.away].column(game.away_pos);
    (
        inner_softplus(u_h.as_slice(), v_a.as_slice()),
        inner_softplus(u_a.as_slice(), v_h.as_slice()),
    )
}

/// Score-mean pair of one game, recomputed from scratch.
pub fn y_pair(state: &ModelState, problem: &Problem, game: &IndexedGame) -> Result<(f64, f64)> {
    let lv = latent_vectors_at_sites(state, problem)?;
    Ok(y_pair_from_latents(&lv, game))
}

/// One directed entry `Y_{m,n}(x) = u_m(x)ᵀ ψ(v_n(x))` for training game `g`.
pub fn y_value(state: &ModelState, problem: &Problem, g: usize, direction: Direction) -> Result<f64> {
    let game = problem
        .games
        .get(g)
        .ok_or_else(|| Error::Index(format!("unknown game {g}")))?;
    let (home, away) = y_pair(state, problem, game)?;
    Ok(match direction {
        Direction::HomeVsAway => home,
        Direction::AwayVsHome => away,
    })
}
