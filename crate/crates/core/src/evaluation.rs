//! Rolling censored-data evaluation: refit before every four-week block on
//! strictly earlier games, score the block's predictive mixtures, and pool
//! the results per season and overall.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::config::{HyperModeSetting, RunConfig, Variant};
use crate::data::{assert_no_leakage, calendar_from_games, make_rolling_blocks, matchups, teams_of, GameRecord};
use crate::driver::{run_block, BlockSettings, HyperMode, HyperSet};
use crate::error::{Error, Result};
use crate::kernels::TIME_DIM;
use crate::model::{ModelState, Priors, Problem};
use crate::predict::{score_game, summarize, ExpertPoint, GameScore, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Cold,
    Warm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub season: i32,
    pub index_in_season: usize,
    pub start_date: NaiveDate,
    pub block_start_week: f64,
    pub block_end_week: f64,
    pub n_train: usize,
    pub start: StartKind,
    pub metrics: MetricsRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingReport {
    pub variant: Variant,
    pub k: usize,
    pub blocks: Vec<BlockReport>,
    /// Blocks with test games but no earlier training data in the window.
    pub skipped_blocks: usize,
    pub seasons: Vec<(i32, MetricsRow)>,
    pub overall: MetricsRow,
    /// Per scored game: index into the game list and its contributions.
    pub game_scores: Vec<(usize, GameScore)>,
    /// Season-gap values over every retained sample (empty without a time
    /// dimension).
    pub gap_samples: Vec<f64>,
}

/// Date that week 0 refers to.
pub fn epoch_of(games: &[GameRecord]) -> Option<NaiveDate> {
    games
        .first()
        .map(|g| g.date - Duration::days((g.week * 7.0).round() as i64))
}

/// Hyperparameter handling for a configuration: PMF pins the static limit,
/// a frozen configuration needs `frozen`.
pub fn hyper_mode_for(cfg: &RunConfig, frozen: Option<&HyperSet>) -> Result<HyperMode> {
    let initial = cfg.initial_hypers()?;
    if cfg.variant == Variant::Pmf {
        return Ok(HyperMode::Frozen(initial));
    }
    match (cfg.hypers.mode, frozen) {
        (HyperModeSetting::Frozen, Some(h)) => Ok(HyperMode::Frozen(h.clone())),
        (HyperModeSetting::Frozen, None) => Err(Error::Config("frozen hyperparameters were not supplied".into())),
        (HyperModeSetting::Sample, _) => Ok(HyperMode::Sample { initial }),
    }
}

/// Problem over `train` game indices with every team as a member.
pub fn build_problem(games: &[GameRecord], train: &[usize], cfg: &RunConfig) -> Result<Problem> {
    let teams = teams_of(games);
    let all = matchups(games, &teams)?;
    let cal = calendar_from_games(games, cfg.true_gap_weeks)?;
    let train_m: Vec<_> = train.iter().map(|&i| all[i].clone()).collect();
    let mean = if train.is_empty() {
        1.0
    } else {
        train.iter().map(|&i| games[i].home_score + games[i].away_score).sum::<f64>() / (2 * train.len()) as f64
    };
    let priors = Priors::centered(mean, cfg.k, cfg.hyper_box()?);
    Problem::new(cfg.k, cfg.kernel_spec(), cal, teams, &train_m, priors)
}

pub fn evaluate_rolling(games: &[GameRecord], cfg: &RunConfig, frozen: Option<&HyperSet>) -> Result<RollingReport> {
    cfg.validate()?;
    let mode = hyper_mode_for(cfg, frozen)?;
    let teams = teams_of(games);
    let all = matchups(games, &teams)?;
    let blocks = make_rolling_blocks(games)?;
    let epoch = epoch_of(games).ok_or_else(|| Error::Config("no games to evaluate".into()))?;
    let uses_time = cfg.kernel_spec().slot_dims().contains(&TIME_DIM);

    let mut prev: Option<(Vec<ModelState>, Problem, i32)> = None;
    let mut reports = Vec::new();
    let mut game_scores = Vec::new();
    let mut gap_samples = Vec::new();
    let mut skipped = 0;
    for (bi, block) in blocks.iter().enumerate() {
        assert_no_leakage(block, games)?;
        if block.train_games.is_empty() {
            skipped += 1;
            prev = None;
            continue;
        }
        let problem = build_problem(games, &block.train_games, cfg)?;
        let test: Vec<_> = block.test_games.iter().map(|&i| all[i].clone()).collect();
        let warm = prev.as_ref().filter(|p| p.2 == block.season);
        let settings = BlockSettings {
            schedule: cfg.schedule,
            hyper_mode: mode.clone(),
            slice: cfg.slice,
            share_season_gap: cfg.hypers.share_season_gap,
            seed: cfg.seed,
            block_id: bi as u64,
        };
        let result = run_block(warm.map(|(s, p, _)| (s.as_slice(), p)), &problem, &test, &settings)?;
        let mut scores = Vec::with_capacity(test.len());
        for (t, &gi) in block.test_games.iter().enumerate() {
            let g = &games[gi];
            let expert = g.expert().map(|(home, away)| ExpertPoint { home, away });
            let s = score_game(&result.bank.mixture(t)?, g.scores(), expert);
            scores.push(s);
            game_scores.push((gi, s));
        }
        if uses_time && !matches!(mode, HyperMode::Frozen(_)) {
            for s in &result.bank.samples {
                if cfg.hypers.share_season_gap {
                    gap_samples.push(s.hypers[0][0].season_gap_weeks);
                } else {
                    gap_samples.extend(s.hypers.iter().flatten().map(|h| h.season_gap_weeks));
                }
            }
        }
        reports.push(BlockReport {
            season: block.season,
            index_in_season: block.index_in_season,
            start_date: epoch + Duration::days((block.block_start_week * 7.0).round() as i64),
            block_start_week: block.block_start_week,
            block_end_week: block.block_end_week,
            n_train: block.train_games.len(),
            start: if warm.is_some() { StartKind::Warm } else { StartKind::Cold },
            metrics: summarize(&scores),
        });
        prev = Some((result.final_states, problem, block.season));
    }
    let mut by_season: BTreeMap<i32, Vec<GameScore>> = BTreeMap::new();
    for (gi, s) in &game_scores {
        by_season.entry(games[*gi].season).or_default().push(*s);
    }
    let all_scores: Vec<GameScore> = game_scores.iter().map(|(_, s)| *s).collect();
    Ok(RollingReport {
        variant: cfg.variant,
        k: cfg.k,
        blocks: reports,
        skipped_blocks: skipped,
        seasons: by_season.into_iter().map(|(s, v)| (s, summarize(&v))).collect(),
        overall: summarize(&all_scores),
        game_scores,
        gap_samples,
    })
}

/// Expert-line metrics per season and overall over games with both lines.
pub fn expert_baseline(games: &[GameRecord]) -> (Vec<(i32, MetricsRow)>, MetricsRow) {
    let score = |g: &GameRecord| -> Option<GameScore> {
        let (home, away) = g.expert()?;
        let home_won = g.home_score > g.away_score;
        let sq = (home - g.home_score).powi(2) + (away - g.away_score).powi(2);
        Some(GameScore {
            log_prob: f64::NAN,
            winner_correct: (home >= away) == home_won,
            sq_err: sq,
            expert: Some(crate::predict::ExpertScore {
                winner_correct: (home >= away) == home_won,
                sq_err: sq,
            }),
        })
    };
    let mut by_season: BTreeMap<i32, Vec<GameScore>> = BTreeMap::new();
    let mut all = Vec::new();
    for g in games {
        if let Some(s) = score(g) {
            by_season.entry(g.season).or_default().push(s);
            all.push(s);
        }
    }
    (
        by_season.into_iter().map(|(s, v)| (s, summarize(&v))).collect(),
        summarize(&all),
    )
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn metric_cells(m: &MetricsRow) -> Vec<String> {
    let e = m.expert;
    vec![
        m.n_games.to_string(),
        m.mean_log_prob.to_string(),
        m.winner_error_pct.to_string(),
        m.rmse.to_string(),
        e.map(|e| e.n_games.to_string()).unwrap_or_default(),
        e.map(|e| e.winner_error_pct.to_string()).unwrap_or_default(),
        e.map(|e| e.rmse.to_string()).unwrap_or_default(),
    ]
}

const METRIC_HEADER: [&str; 7] = [
    "n_games",
    "mean_log_prob",
    "winner_error_pct",
    "rmse",
    "expert_n_games",
    "expert_winner_error_pct",
    "expert_rmse",
];

pub fn blocks_csv(reports: &[RollingReport]) -> String {
    let mut rows = vec![[
        "variant",
        "k",
        "season",
        "block",
        "start_date",
        "start_week",
        "end_week",
        "n_train",
        "start",
    ]
    .iter()
    .chain(METRIC_HEADER.iter())
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    for r in reports {
        for b in &r.blocks {
            let mut row = vec![
                r.variant.name().to_string(),
                r.k.to_string(),
                b.season.to_string(),
                b.index_in_season.to_string(),
                b.start_date.to_string(),
                b.block_start_week.to_string(),
                b.block_end_week.to_string(),
                b.n_train.to_string(),
                match b.start {
                    StartKind::Cold => "cold".into(),
                    StartKind::Warm => "warm".into(),
                },
            ];
            row.extend(metric_cells(&b.metrics));
            rows.push(row);
        }
    }
    csv_string(rows)
}

/// One row per (variant, season) plus an `all` row per variant.
pub fn seasons_csv(reports: &[RollingReport]) -> String {
    let mut rows = vec![["variant", "k", "season"]
        .iter()
        .chain(METRIC_HEADER.iter())
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for r in reports {
        for (s, m) in r.seasons.iter().map(|(s, m)| (s.to_string(), m)).chain([("all".to_string(), &r.overall)]) {
            let mut row = vec![r.variant.name().to_string(), r.k.to_string(), s];
            row.extend(metric_cells(m));
            rows.push(row);
        }
    }
    csv_string(rows)
}

/// Text table: one row per model and K, one column per season and `All`,
/// with the expert row under the winner-error and RMSE sections.
pub fn format_table(reports: &[RollingReport]) -> String {
    let mut seasons: Vec<i32> = reports.iter().flat_map(|r| r.seasons.iter().map(|(s, _)| *s)).collect();
    seasons.sort();
    seasons.dedup();
    let expert = reports.iter().find(|r| r.overall.expert.is_some());
    let mut out = String::new();
    let header = |out: &mut String| {
        out.push_str(&format!("{:<10} {:<3}", "", ""));
        for s in &seasons {
            out.push_str(&format!(" {:>8}", s));
        }
        out.push_str(&format!(" {:>8}\n", "All"));
    };
    let section = |out: &mut String, title: &str, cell: &dyn Fn(&MetricsRow) -> String, expert_cell: Option<&dyn Fn(&MetricsRow) -> Option<String>>| {
        out.push_str(title);
        out.push('\n');
        header(out);
        for r in reports {
            out.push_str(&format!("{:<10} {:<3}", r.variant.label(), format!("K{}", r.k)));
            for s in &seasons {
                let c = r.seasons.iter().find(|(x, _)| x == s).map(|(_, m)| cell(m)).unwrap_or_else(|| "-".into());
                out.push_str(&format!(" {:>8}", c));
            }
            out.push_str(&format!(" {:>8}\n", cell(&r.overall)));
        }
        if let (Some(r), Some(ec)) = (expert, expert_cell) {
            out.push_str(&format!("{:<14}", "Expert"));
            for s in &seasons {
                let c = r.seasons.iter().find(|(x, _)| x == s).and_then(|(_, m)| ec(m)).unwrap_or_else(|| "-".into());
                out.push_str(&format!(" {:>8}", c));
            }
            out.push_str(&format!(" {:>8}\n", ec(&r.overall).unwrap_or_else(|| "-".into())));
        }
        out.push('\n');
    };
    section(&mut out, "Mean log probability", &|m| format!("{:.3}", m.mean_log_prob), None);
    section(
        &mut out,
        "Winner prediction error (%)",
        &|m| format!("{:.1}", m.winner_error_pct),
        Some(&|m: &MetricsRow| m.expert.map(|e| format!("{:.1}", e.winner_error_pct))),
    );
    section(
        &mut out,
        "Score RMSE",
        &|m| format!("{:.2}", m.rmse),
        Some(&|m: &MetricsRow| m.expert.map(|e| format!("{:.2}", e.rmse))),
    );
    out
}
