//! One Markov chain over a fixed [`Problem`], with caches of everything the
//! transition operators need: per-member Gram factors, unwhitened functions,
//! mixed latent vectors, softplus of the defense vectors, and per-game score
//! means.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{HyperParams, TIME_DIM};
use crate::likelihood::{normal_logpdf, score_pair_logpdf, LikelihoodParams};
use crate::model::{member_cholesky, softplus, IndexedGame, MixingState, ModelState, Problem, Side};
use crate::samplers::{ess_angle, slice_step, unwhiten_all, whitened_hyper_update, SliceConfig};

/// `[side][k][member]` lower Cholesky factors of the per-member correlation
/// matrices.
pub type CholTable = [Vec<Vec<DMatrix<f64>>>; 2];

/// Which blocks of the state a sweep updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub slice: SliceConfig,
    pub sample_hypers: bool,
    /// One season gap for all `2K` kernels rather than one per kernel.
    pub share_season_gap: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            slice: SliceConfig::default(),
            sample_hypers: true,
            share_season_gap: true,
        }
    }
}

pub struct Chain<'p> {
    problem: &'p Problem,
    state: ModelState,
    opts: SweepOptions,
    chol: CholTable,
    /// `f[side][k][member]`, raw GP values `L_θ ν`.
    f: [Vec<Vec<DVector<f64>>>; 2],
    /// `mixed[side][member]`, `K × n` matrix of `L_Σ f + μ`.
    mixed: [Vec<DMatrix<f64>>; 2],
    /// Softplus of `mixed[V]`.
    psi: Vec<DMatrix<f64>>,
    /// Per-game (home, away) score means.
    y: Vec<(f64, f64)>,
}

/// Build the `K × n` mixed matrix `L_Σ F + μ 1ᵀ` from per-feature rows.
fn mix(chol_sigma: &DMatrix<f64>, mu: &[f64], rows: &[&DVector<f64>]) -> DMatrix<f64> {
    let k = mu.len();
    let n = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut out = DMatrix::<f64>::zeros(k, n);
    for i in 0..k {
        for j in 0..=i {
            let w = chol_sigma[(i, j)];
            if w != 0.0 {
                for (o, v) in out.row_mut(i).iter_mut().zip(rows[j].iter()) {
                    *o += w * v;
                }
            }
        }
        out.row_mut(i).add_scalar_mut(mu[i]);
    }
    out
}

fn psi_of(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(softplus)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'p> Chain<'p> {
    pub fn new(problem: &'p Problem, state: ModelState, opts: SweepOptions) -> Result<Self> {
        opts.slice.validate()?;
        check_shapes(problem, &state)?;
        let mut chain = Chain {
            problem,
            state,
            opts,
            chol: [Vec::new(), Vec::new()],
            f: [Vec::new(), Vec::new()],
            mixed: [Vec::new(), Vec::new()],
            psi: Vec::new(),
            y: Vec::new(),
        };
        chain.refresh_all()?;
        Ok(chain)
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn problem(&self) -> &'p Problem {
        self.problem
    }

    pub fn cholesky_table(&self) -> &CholTable {
        &self.chol
    }

    /// Cached per-game score means.
    pub fn score_means(&self) -> &[(f64, f64)] {
        &self.y
    }

    pub fn log_likelihood(&self) -> f64 {
        self.loglik_from(&self.y, &self.state.likelihood)
    }

    fn loglik_from(&self, y: &[(f64, f64)], lik: &LikelihoodParams) -> f64 {
        if !self.problem.use_likelihood {
            return 0.0;
        }
        self.problem
            .games
            .iter()
            .zip(y)
            .map(|(g, &yy)| score_pair_logpdf(g.scores, yy, lik))
            .sum()
    }

    fn refresh_all(&mut self) -> Result<()> {
        let p = self.problem;
        for side in Side::BOTH {
            let s = side.index();
            self.chol[s] = (0..p.k)
                .map(|k| {
                    (0..p.n_members())
                        .map(|m| member_cholesky(p, m, self.state.hyper(side, k)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
        }
        self.refresh_functions();
        Ok(())
    }

    /// Recompute `f`, mixed vectors, softplus and score means from the
    /// current factors and whitened values.
    fn refresh_functions(&mut self) {
        let p = self.problem;
        for side in Side::BOTH {
            let s = side.index();
            self.f[s] = (0..p.k)
                .map(|k| {
                    (0..p.n_members())
                        .map(|m| &self.chol[s][k][m] * DVector::from_column_slice(self.state.whitened.get(side, k, m)))
                        .collect()
                })
                .collect();
            self.refresh_mixed(side);
        }
        self.refresh_y();
    }

    fn mixed_member(&self, m: usize, chol_sigma: &DMatrix<f64>, mu: &[f64], f_side: &[Vec<DVector<f64>>]) -> DMatrix<f64> {
        let rows: Vec<&DVector<f64>> = (0..self.problem.k).map(|k| &f_side[k][m]).collect();
        mix(chol_sigma, mu, &rows)
    }

    fn mixed_side(&self, chol_sigma: &DMatrix<f64>, mu: &[f64], f_side: &[Vec<DVector<f64>>]) -> Vec<DMatrix<f64>> {
        (0..self.problem.n_members())
            .map(|m| self.mixed_member(m, chol_sigma, mu, f_side))
            .collect()
    }

    fn refresh_mixed(&mut self, side: Side) {
        let s = side.index();
        self.mixed[s] = self.mixed_side(self.state.mixing.chol(side), self.state.mixing.mu(side), &self.f[s]);
        if side == Side::V {
            self.psi = self.mixed[1].iter().map(psi_of).collect();
        }
    }

    fn refresh_y(&mut self) {
        let games = &self.problem.games;
        self.y = games
            .iter()
            .map(|g| game_means(g, &self.mixed[0], &self.psi))
            .collect();
    }

    /// Log likelihood with candidate mixed matrices for either side.
    fn loglik_with(&self, u: Option<&[DMatrix<f64>]>, v_raw: Option<&[DMatrix<f64>]>) -> f64 {
        if !self.problem.use_likelihood {
            return 0.0;
        }
        let u = u.unwrap_or(&self.mixed[0]);
        let lik = &self.state.likelihood;
        match v_raw {
            None => self
                .problem
                .games
                .iter()
                .map(|g| score_pair_logpdf(g.scores, game_means(g, u, &self.psi), lik))
                .sum(),
            Some(v) => {
                let psi: Vec<DMatrix<f64>> = v.iter().map(psi_of).collect();
                self.problem
                    .games
                    .iter()
                    .map(|g| score_pair_logpdf(g.scores, game_means(g, u, &psi), lik))
                    .sum()
            }
        }
    }

    fn loglik_side(&self, side: Side, cand: &[DMatrix<f64>]) -> f64 {
        match side {
            Side::U => self.loglik_with(Some(cand), None),
            Side::V => self.loglik_with(None, Some(cand)),
        }
    }

    /// One full transition: ESS on every whitened function, then slice
    /// updates of the means, mixing factors, hyperparameters (when enabled)
    /// and likelihood parameters.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let p = self.problem;
        for side in Side::BOTH {
            for k in 0..p.k {
                for m in 0..p.n_members() {
                    self.ess_member(side, k, m, rng)?;
                }
            }
        }
        for side in Side::BOTH {
            for k in 0..p.k {
                self.update_mu(side, k, rng)?;
            }
        }
        for side in Side::BOTH {
            for idx in 0..MixingState::n_factor_params(p.k) {
                self.update_factor(side, idx, rng)?;
            }
        }
        if self.opts.sample_hypers {
            let sample_gap = self.kernel_uses_time();
            for side in Side::BOTH {
                for k in 0..p.k {
                    self.update_hypers(side, k, sample_gap && !self.opts.share_season_gap, rng)?;
                }
            }
            if sample_gap && self.opts.share_season_gap {
                self.update_shared_gap(rng)?;
            }
        }
        self.update_sigma(rng)?;
        self.update_rho(rng)?;
        Ok(())
    }

    fn kernel_uses_time(&self) -> bool {
        self.problem.kernel.slot_dims().contains(&TIME_DIM)
    }

    fn ess_member<R: Rng + ?Sized>(&mut self, side: Side, k: usize, m: usize, rng: &mut R) -> Result<()> {
        let p = self.problem;
        let n = p.index.n_sites(m);
        if n == 0 {
            return Ok(());
        }
        let s = side.index();
        let aux_nu = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let aux_f = &self.chol[s][k][m] * &aux_nu;
        let f_cur = &self.f[s][k][m];
        let c: Vec<f64> = self.state.mixing.chol(side).column(k).iter().copied().collect();
        let lik = self.state.likelihood;

        // For each site: the game, which score it moves, the unaffected
        // score, and what the affected score needs.
        struct Touch {
            game: usize,
            moves_home: bool,
            other: f64,
            // U side: affected score is a + b f
            a: f64,
            b: f64,
            // V side: affected score is u_opp · ψ(base + c f)
            base: Vec<f64>,
            u_opp: Vec<f64>,
        }
        let mut touches = Vec::with_capacity(n);
        for pos in 0..n {
            let g = p.index.site_games[m][pos];
            let game = &p.games[g];
            let is_home = game.home == m && game.home_pos == pos;
            let (opp, opp_pos) = if is_home {
                (game.away, game.away_pos)
            } else {
                (game.home, game.home_pos)
            };
            let fp = f_cur[pos];
            let t = match side {
                Side::U => {
                    let psi_opp = self.psi[opp].column(opp_pos);
                    let b = dot(&c, psi_opp.as_slice());
                    let a = dot(self.mixed[0][m].column(pos).as_slice(), psi_opp.as_slice()) - fp * b;
                    Touch {
                        game: g,
                        moves_home: is_home,
                        other: if is_home { self.y[g].1 } else { self.y[g].0 },
                        a,
                        b,
                        base: Vec::new(),
                        u_opp: Vec::new(),
                    }
                }
                Side::V => {
                    let base = self.mixed[1][m]
                        .column(pos)
                        .iter()
                        .zip(&c)
                        .map(|(v, cj)| v - cj * fp)
                        .collect();
                    // m defends: its V vector moves the opponent's score
                    Touch {
                        game: g,
                        moves_home: !is_home,
                        other: if is_home { self.y[g].0 } else { self.y[g].1 },
                        a: 0.0,
                        b: 0.0,
                        base,
                        u_opp: self.mixed[0][opp].column(opp_pos).iter().copied().collect(),
                    }
                }
            };
            touches.push(t);
        }

        let use_lik = p.use_likelihood;
        let games = &p.games;
        let affected = |t: &Touch, fp: f64| -> f64 {
            match side {
                Side::U => t.a + t.b * fp,
                Side::V => t
                    .u_opp
                    .iter()
                    .zip(&t.base)
                    .zip(&c)
                    .map(|((u, b0), cj)| u * softplus(b0 + cj * fp))
                    .sum(),
            }
        };
        let ll_at = |fv: &dyn Fn(usize) -> f64| -> f64 {
            if !use_lik {
                return 0.0;
            }
            touches
                .iter()
                .enumerate()
                .map(|(pos, t)| {
                    let moved = affected(t, fv(pos));
                    let pair = if t.moves_home { (moved, t.other) } else { (t.other, moved) };
                    score_pair_logpdf(games[t.game].scores, pair, &lik)
                })
                .sum()
        };
        let current = ll_at(&|pos| f_cur[pos]);
        let (theta, _, _) = ess_angle(
            current,
            |theta| {
                let (sn, cs) = theta.sin_cos();
                ll_at(&|pos| f_cur[pos] * cs + aux_f[pos] * sn)
            },
            rng,
        )?;

        let (sn, cs) = theta.sin_cos();
        {
            let nu = self.state.whitened.get_mut(side, k, m);
            for (v, a) in nu.iter_mut().zip(aux_nu.iter()) {
                *v = *v * cs + a * sn;
            }
        }
        self.f[s][k][m] = &self.chol[s][k][m] * DVector::from_column_slice(self.state.whitened.get(side, k, m));
        let updated = self.mixed_member(m, self.state.mixing.chol(side), self.state.mixing.mu(side), &self.f[s]);
        if side == Side::V {
            self.psi[m] = psi_of(&updated);
        }
        self.mixed[s][m] = updated;
        for &g in &p.index.site_games[m] {
            self.y[g] = game_means(&p.games[g], &self.mixed[0], &self.psi);
        }
        Ok(())
    }

    fn update_mu<R: Rng + ?Sized>(&mut self, side: Side, k: usize, rng: &mut R) -> Result<()> {
        let s = side.index();
        let pri = &self.problem.priors;
        let (center, sd) = (pri.mu_center(side), pri.mu_sd);
        let x0 = self.state.mixing.mu(side)[k];
        let mut cand = self.mixed[s].clone();
        let step = slice_step(
            x0,
            Some(normal_logpdf(x0, center, sd) + self.log_likelihood()),
            |x| {
                for (c, orig) in cand.iter_mut().zip(&self.mixed[s]) {
                    c.row_mut(k).copy_from(&orig.row(k).add_scalar(x - x0));
                }
                normal_logpdf(x, center, sd) + self.loglik_side(side, &cand)
            },
            &self.opts.slice,
            rng,
        )?;
        self.state.mixing.mu[s][k] = step.value;
        self.refresh_mixed(side);
        self.refresh_y();
        Ok(())
    }

    fn update_factor<R: Rng + ?Sized>(&mut self, side: Side, idx: usize, rng: &mut R) -> Result<()> {
        let s = side.index();
        let pri = &self.problem.priors;
        let (i, j) = MixingState::factor_param_position(idx);
        let sd = if i == j { pri.chol_log_diag_sd } else { pri.chol_off_diag_sd };
        let x0 = self.state.mixing.factor_param(side, idx);
        let mut trial = self.state.mixing.clone();
        let step = slice_step(
            x0,
            Some(normal_logpdf(x0, 0.0, sd) + self.log_likelihood()),
            |x| {
                trial.set_factor_param(side, idx, x);
                let cand = self.mixed_side(trial.chol(side), trial.mu(side), &self.f[s]);
                normal_logpdf(x, 0.0, sd) + self.loglik_side(side, &cand)
            },
            &self.opts.slice,
            rng,
        )?;
        self.state.mixing.set_factor_param(side, idx, step.value);
        self.refresh_mixed(side);
        self.refresh_y();
        Ok(())
    }

    fn update_hypers<R: Rng + ?Sized>(&mut self, side: Side, k: usize, sample_gap: bool, rng: &mut R) -> Result<()> {
        let p = self.problem;
        let s = side.index();
        let nu_all: Vec<DVector<f64>> = (0..p.n_members())
            .map(|m| DVector::from_column_slice(self.state.whitened.get(side, k, m)))
            .collect();
        let current = self.state.hyper(side, k).clone();
        let new_hp = {
            let mut f_side = self.f[s].clone();
            whitened_hyper_update(
                &nu_all,
                0.0,
                &current,
                &p.index.sites,
                &p.kernel,
                &p.calendar,
                &p.priors.hyper_box,
                sample_gap,
                |f_all| {
                    f_side[k] = f_all.to_vec();
                    let cand = self.mixed_side(self.state.mixing.chol(side), self.state.mixing.mu(side), &f_side);
                    self.loglik_side(side, &cand)
                },
                &self.opts.slice,
                rng,
            )?
        };
        self.set_hyper(side, k, new_hp)?;
        self.refresh_functions();
        Ok(())
    }

    fn set_hyper(&mut self, side: Side, k: usize, hp: HyperParams) -> Result<()> {
        let p = self.problem;
        let s = side.index();
        self.chol[s][k] = (0..p.n_members())
            .map(|m| member_cholesky(p, m, &hp))
            .collect::<Result<Vec<_>>>()?;
        self.state.hypers[s][k] = hp;
        Ok(())
    }

    fn update_shared_gap<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let p = self.problem;
        let max = p.priors.hyper_box.gap_max;
        let g0 = self.state.hypers[0][0].season_gap_weeks;
        let nu: [Vec<Vec<DVector<f64>>>; 2] = Side::BOTH.map(|side| {
            (0..p.k)
                .map(|k| {
                    (0..p.n_members())
                        .map(|m| DVector::from_column_slice(self.state.whitened.get(side, k, m)))
                        .collect()
                })
                .collect()
        });
        let cfg = self.opts.slice.with_width(max / 4.0);
        let step = slice_step(
            g0,
            Some(self.log_likelihood()),
            |g| {
                if g <= 0.0 || g > max {
                    return f64::NEG_INFINITY;
                }
                let mut cands: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(2);
                for side in Side::BOTH {
                    let s = side.index();
                    let mut f_side = Vec::with_capacity(p.k);
                    for k in 0..p.k {
                        let mut hp = self.state.hypers[s][k].clone();
                        hp.season_gap_weeks = g;
                        match unwhiten_all(&nu[s][k], 0.0, &hp, &p.index.sites, &p.kernel, &p.calendar) {
                            Some(f) => f_side.push(f),
                            None => return f64::NEG_INFINITY,
                        }
                    }
                    cands.push(self.mixed_side(self.state.mixing.chol(side), self.state.mixing.mu(side), &f_side));
                }
                self.loglik_with(Some(&cands[0]), Some(&cands[1]))
            },
            &cfg,
            rng,
        )?;
        for side in Side::BOTH {
            for k in 0..p.k {
                let mut hp = self.state.hyper(side, k).clone();
                hp.season_gap_weeks = step.value;
                self.set_hyper(side, k, hp)?;
            }
        }
        self.refresh_functions();
        Ok(())
    }

    fn update_sigma<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let sd = self.problem.priors.log_sigma_sd;
        let x0 = self.state.likelihood.sigma.ln();
        let rho = self.state.likelihood.rho;
        let step = slice_step(
            x0,
            None,
            |x| {
                let lik = LikelihoodParams { sigma: x.exp(), rho };
                if !(lik.sigma > 0.0 && lik.sigma.is_finite()) {
                    return f64::NEG_INFINITY;
                }
                normal_logpdf(x, 0.0, sd) + self.loglik_from(&self.y, &lik)
            },
            &self.opts.slice,
            rng,
        )?;
        self.state.likelihood.sigma = step.value.exp();
        Ok(())
    }

    fn update_rho<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let sd = self.problem.priors.atanh_rho_sd;
        let x0 = self.state.likelihood.rho.atanh();
        let sigma = self.state.likelihood.sigma;
        let step = slice_step(
            x0,
            None,
            |x| {
                let rho = x.tanh();
                if rho.abs() >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                normal_logpdf(x, 0.0, sd) + self.loglik_from(&self.y, &LikelihoodParams { sigma, rho })
            },
            &self.opts.slice,
            rng,
        )?;
        self.state.likelihood.rho = step.value.tanh();
        Ok(())
    }
}

/// (home, away) score means of a game from mixed offense vectors and
/// softplus-transformed defense vectors.
fn game_means(g: &IndexedGame, u: &[DMatrix<f64>], psi: &[DMatrix<f64>]) -> (f64, f64) {
    (
        dot(u[g.home].column(g.home_pos).as_slice(), psi[g.away].column(g.away_pos).as_slice()),
        dot(u[g.away].column(g.away_pos).as_slice(), psi[g.home].column(g.home_pos).as_slice()),
    )
}

fn check_shapes(problem: &Problem, state: &ModelState) -> Result<()> {
    let k = problem.k;
    let bad = |what: &str| Err(Error::Validation(format!("state does not match problem: {what}")));
    if state.k() != k || state.mixing.mu[1].len() != k {
        return bad("number of features");
    }
    for side in Side::BOTH {
        let s = side.index();
        if state.hypers[s].len() != k || state.whitened.nu[s].len() != k {
            return bad("per-feature blocks");
        }
        if state.mixing.chol[s].shape() != (k, k) {
            return bad("mixing factor shape");
        }
        for kk in 0..k {
            if state.whitened.nu[s][kk].len() != problem.n_members() {
                return bad("members");
            }
            for m in 0..problem.n_members() {
                if state.whitened.get(side, kk, m).len() != problem.index.n_sites(m) {
                    return bad("sites");
                }
            }
        }
    }
    Ok(())
}
