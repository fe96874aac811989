//! MCMC orchestration: chain schedules, cold and warm starts, parallel
//! chains and the bank of retained predictive samples.

pub mod chain;
pub mod checkpoint;
pub mod hyperfile;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use chain::{Chain, CholTable, SweepOptions};

use crate::error::{Error, Result};
use crate::kernels::HyperParams;
use crate::likelihood::LikelihoodParams;
use crate::model::{Matchup, MixingState, ModelState, Problem, Side, WhitenedFunctions};
use crate::predict::{draw_predictive_with, PredictiveMixture};
use crate::samplers::SliceConfig;

/// Hyperparameters for every kernel, indexed `[side][k]`.
pub type HyperSet = [Vec<HyperParams>; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSchedule {
    pub n_chains: usize,
    pub cold_burnin: usize,
    pub warm_burnin: usize,
    pub thin: usize,
    pub keep_per_chain: usize,
}

impl Default for ChainSchedule {
    fn default() -> Self {
        Self {
            n_chains: 10,
            cold_burnin: 1000,
            warm_burnin: 100,
            thin: 4,
            keep_per_chain: 100,
        }
    }
}

impl ChainSchedule {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_chains", self.n_chains),
            ("cold_burnin", self.cold_burnin),
            ("warm_burnin", self.warm_burnin),
            ("thin", self.thin),
            ("keep_per_chain", self.keep_per_chain),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("schedule.{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn bank_size(&self) -> usize {
        self.n_chains * self.keep_per_chain
    }
}

/// Whether a block samples the kernel hyperparameters or holds them fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperMode {
    /// Sample, starting cold chains from `initial`.
    Sample { initial: HyperSet },
    Frozen(HyperSet),
}

impl HyperMode {
    fn hypers(&self) -> &HyperSet {
        match self {
            HyperMode::Sample { initial } => initial,
            HyperMode::Frozen(h) => h,
        }
    }

    fn is_frozen(&self) -> bool {
        matches!(self, HyperMode::Frozen(_))
    }
}

/// One retained MCMC sample: predictive score means at every test game plus
/// the parameters needed to turn them into a density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedSample {
    pub means: Vec<(f64, f64)>,
    pub likelihood: LikelihoodParams,
    pub hypers: HyperSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBank {
    pub n_test_games: usize,
    /// Chain-major: all of chain 0's samples, then chain 1's, and so on.
    pub samples: Vec<RetainedSample>,
}

impl SampleBank {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Equal-weight predictive mixture for test game `g`.
    pub fn mixture(&self, g: usize) -> Result<PredictiveMixture> {
        if g >= self.n_test_games {
            return Err(Error::Index(format!("test game {g} out of range")));
        }
        PredictiveMixture::new(self.samples.iter().map(|s| (s.means[g], s.likelihood)).collect())
    }

    pub fn mixtures(&self) -> Result<Vec<PredictiveMixture>> {
        (0..self.n_test_games).map(|g| self.mixture(g)).collect()
    }
}

/// Everything a block run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSettings {
    pub schedule: ChainSchedule,
    pub hyper_mode: HyperMode,
    pub slice: SliceConfig,
    pub share_season_gap: bool,
    pub seed: u64,
    /// Distinguishes the rng streams of successive blocks under one seed.
    pub block_id: u64,
}

#[derive(Debug, Clone)]
pub struct BlockResult {
    pub bank: SampleBank,
    /// Final state of every chain, for warm starts and checkpoints.
    pub final_states: Vec<ModelState>,
    /// Each chain's rng after its last draw.
    pub final_rngs: Vec<ChaCha8Rng>,
    /// Seed each chain's rng was created from; the stream is the chain index.
    pub chain_seed: u64,
}

/// Seed shared by every chain of one block.
pub fn block_seed(seed: u64, block_id: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ block_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn chain_rng(block_seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(block_seed);
    rng.set_stream(chain as u64);
    rng
}

/// Empirical standard deviation of all observed scores, 1 without data.
fn empirical_score_sd(problem: &Problem) -> f64 {
    let xs: Vec<f64> = problem.games.iter().flat_map(|g| [g.scores.0, g.scores.1]).collect();
    if xs.len() < 2 {
        return 1.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    if v > 0.0 {
        v.sqrt()
    } else {
        1.0
    }
}

/// Fresh state: small whitened values, means at the prior centers, identity
/// mixing, `σ` at the empirical score spread and `ρ = 0.2`.
pub fn cold_start_state<R: Rng + ?Sized>(problem: &Problem, hypers: &HyperSet, rng: &mut R) -> Result<ModelState> {
    check_hyper_shape(problem, hypers)?;
    let whitened = WhitenedFunctions::from_fn(problem, || 0.1 * rng.sample::<f64, _>(StandardNormal));
    Ok(ModelState {
        whitened,
        mixing: MixingState::identity(problem.k, problem.priors.mu_center_u, problem.priors.mu_center_v),
        hypers: hypers.clone(),
        likelihood: LikelihoodParams::new(empirical_score_sd(problem), 0.2)?,
        rng_seed: 0,
    })
}

/// Site identity used to carry whitened values between problems.
fn site_key(week: f64, is_home: bool) -> (u64, bool) {
    (week.to_bits(), is_home)
}

/// Carry a state from a previous problem onto a new one. Whitened values are
/// matched by (member name, week, venue); sites new to this problem get fresh
/// standard normal draws, which is an exact conditional draw whenever the old
/// sites form a prefix of the new ones.
pub fn transfer_state<R: Rng + ?Sized>(prev: &ModelState, prev_problem: &Problem, problem: &Problem, rng: &mut R) -> Result<ModelState> {
    if prev.k() != problem.k {
        return Err(Error::Validation("warm start with a different number of features".into()));
    }
    let by_name: HashMap<&str, usize> = prev_problem
        .index
        .members
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut whitened = WhitenedFunctions::from_fn(problem, || rng.sample::<f64, _>(StandardNormal));
    for (m, name) in problem.index.members.iter().enumerate() {
        let Some(&pm) = by_name.get(name.as_str()) else { continue };
        let old_pos: HashMap<(u64, bool), usize> = prev_problem.index.sites[pm]
            .iter()
            .enumerate()
            .map(|(p, s)| (site_key(s.raw_week, s.is_home), p))
            .collect();
        for (p, site) in problem.index.sites[m].iter().enumerate() {
            if let Some(&op) = old_pos.get(&site_key(site.raw_week, site.is_home)) {
                for side in Side::BOTH {
                    for k in 0..problem.k {
                        whitened.get_mut(side, k, m)[p] = prev.whitened.get(side, k, pm)[op];
                    }
                }
            }
        }
    }
    Ok(ModelState {
        whitened,
        mixing: prev.mixing.clone(),
        hypers: prev.hypers.clone(),
        likelihood: prev.likelihood,
        rng_seed: prev.rng_seed,
    })
}

fn check_hyper_shape(problem: &Problem, hypers: &HyperSet) -> Result<()> {
    for h in hypers {
        if h.len() != problem.k || h.iter().any(|hp| hp.length_scales.len() != problem.kernel.n_length_scales()) {
            return Err(Error::Config("hyperparameters do not match K and the kernel".into()));
        }
    }
    Ok(())
}

/// Run every chain of one block and collect the predictive bank.
///
/// `prev` holds the previous block's final states together with the problem
/// they were defined on; when present each chain warm-starts from its own
/// predecessor (cycling if there are fewer).
pub fn run_block(
    prev: Option<(&[ModelState], &Problem)>,
    problem: &Problem,
    test_games: &[Matchup],
    settings: &BlockSettings,
) -> Result<BlockResult> {
    settings.schedule.validate()?;
    settings.slice.validate()?;
    if problem.games.is_empty() {
        return Err(Error::Config("no training games for this block".into()));
    }
    check_hyper_shape(problem, settings.hyper_mode.hypers())?;
    if let Some((states, _)) = prev {
        if states.is_empty() {
            return Err(Error::Config("warm start needs at least one previous state".into()));
        }
    }
    let opts = SweepOptions {
        slice: settings.slice,
        sample_hypers: !settings.hyper_mode.is_frozen(),
        share_season_gap: settings.share_season_gap,
    };
    let seed = block_seed(settings.seed, settings.block_id);
    let sched = settings.schedule;
    let outcomes: Vec<Result<(Vec<RetainedSample>, ModelState, ChaCha8Rng)>> = (0..sched.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(seed, c);
            let (mut state, burnin) = match prev {
                None => (cold_start_state(problem, settings.hyper_mode.hypers(), &mut rng)?, sched.cold_burnin),
                Some((states, prev_problem)) => {
                    let s = transfer_state(&states[c % states.len()], prev_problem, problem, &mut rng)?;
                    (s, sched.warm_burnin)
                }
            };
            if let HyperMode::Frozen(h) = &settings.hyper_mode {
                state.hypers = h.clone();
            }
            state.rng_seed = seed;
            let mut chain = Chain::new(problem, state, opts)?;
            for _ in 0..burnin {
                chain.sweep(&mut rng)?;
            }
            let mut kept = Vec::with_capacity(sched.keep_per_chain);
            for _ in 0..sched.keep_per_chain {
                for _ in 0..sched.thin {
                    chain.sweep(&mut rng)?;
                }
                let st = chain.state();
                let means = draw_predictive_with(st, problem, chain.cholesky_table(), test_games, &mut rng)?;
                kept.push(RetainedSample {
                    means,
                    likelihood: st.likelihood,
                    hypers: st.hypers.clone(),
                });
            }
            Ok((kept, chain.into_state(), rng))
        })
        .collect();
    let mut samples = Vec::with_capacity(sched.bank_size());
    let mut final_states = Vec::with_capacity(sched.n_chains);
    let mut final_rngs = Vec::with_capacity(sched.n_chains);
    for o in outcomes {
        let (kept, state, rng) = o?;
        samples.extend(kept);
        final_states.push(state);
        final_rngs.push(rng);
    }
    Ok(BlockResult {
        bank: SampleBank {
            n_test_games: test_games.len(),
            samples,
        },
        final_states,
        final_rngs,
        chain_seed: seed,
    })
}

/// Per-coordinate median over retained samples.
pub fn median_hypers(bank: &SampleBank) -> Result<HyperSet> {
    let first = bank
        .samples
        .first()
        .ok_or_else(|| Error::Validation("empty sample bank".into()))?;
    let median = |mut xs: Vec<f64>| {
        xs.sort_by(|a, b| a.total_cmp(b));
        let n = xs.len();
        if n % 2 == 1 {
            xs[n / 2]
        } else {
            0.5 * (xs[n / 2 - 1] + xs[n / 2])
        }
    };
    let mut out = first.hypers.clone();
    for s in 0..2 {
        for (k, hp) in out[s].iter_mut().enumerate() {
            for (d, l) in hp.length_scales.iter_mut().enumerate() {
                *l = median(bank.samples.iter().map(|r| r.hypers[s][k].length_scales[d]).collect());
            }
            hp.season_gap_weeks = median(bank.samples.iter().map(|r| r.hypers[s][k].season_gap_weeks).collect());
        }
    }
    Ok(out)
}
