//! Bivariate Gaussian observation model for the two scores of one game.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{y_pair, ModelState, Problem};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Shared score standard deviation and within-game score correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodParams {
    pub sigma: f64,
    pub rho: f64,
}

impl LikelihoodParams {
    pub fn new(sigma: f64, rho: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::Domain(format!("rho must lie in (-1, 1), got {rho}")));
        }
        Ok(Self { sigma, rho })
    }

    /// Variance of the difference of the two scores, `2σ²(1-ρ)`.
    pub fn difference_variance(&self) -> f64 {
        2.0 * self.sigma * self.sigma * (1.0 - self.rho)
    }
}

/// Log density of `z` under a bivariate normal with mean `y` and covariance
/// `σ² [[1, ρ], [ρ, 1]]`.
pub fn score_pair_logpdf(z: (f64, f64), y: (f64, f64), p: &LikelihoodParams) -> f64 {
    let s2 = p.sigma * p.sigma;
    let one_m_r2 = 1.0 - p.rho * p.rho;
    let d1 = z.0 - y.0;
    let d2 = z.1 - y.1;
    let quad = (d1 * d1 - 2.0 * p.rho * d1 * d2 + d2 * d2) / (s2 * one_m_r2);
    -LN_2PI - s2.ln() - 0.5 * one_m_r2.ln() - 0.5 * quad
}

/// Draw a score pair around `y`.
pub fn sample_score_pair<R: Rng + ?Sized>(
    y: (f64, f64),
    p: &LikelihoodParams,
    rng: &mut R,
) -> (f64, f64) {
    let e1: f64 = rng.sample(StandardNormal);
    let e2: f64 = rng.sample(StandardNormal);
    let z1 = y.0 + p.sigma * e1;
    let z2 = y.1 + p.sigma * (p.rho * e1 + (1.0 - p.rho * p.rho).sqrt() * e2);
    (z1, z2)
}

/// Sum of score-pair log densities over the selected games of `problem`.
///
/// Each game contributes one bivariate term covering both directed entries
/// (home-vs-away and away-vs-home).
pub fn game_loglik(state: &ModelState, problem: &Problem, games: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &g in games {
        let game = problem
            .games
            .get(g)
            .ok_or_else(|| Error::Index(format!("unknown game {g}")))?;
        let y = y_pair(state, problem, game)?;
        total += score_pair_logpdf(game.scores, y, &state.likelihood);
    }
    Ok(total)
}

/// Univariate normal log density, used for the transformed-scale priors.
pub(crate) fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}
