//! Game records, CSV ingestion, rolling evaluation blocks, betting-line
//! predictions and the synthetic generator.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::driver::HyperSet;
use crate::error::{Error, Result};
use crate::kernels::{chol_jitter, gram, KernelSpec, SeasonBoundary, SeasonCalendar, SideInfo};
use crate::likelihood::{sample_score_pair, LikelihoodParams};
use crate::model::{inner_softplus, Matchup, Side};

pub const CSV_HEADER: [&str; 8] = [
    "date",
    "season",
    "home_team",
    "away_team",
    "home_score",
    "away_score",
    "home_spread",
    "over_under",
];

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub date: NaiveDate,
    pub season: i32,
    /// Weeks since the dataset epoch.
    pub week: f64,
    pub home_team: String,
    pub away_team: String,
    pub home_score: f64,
    pub away_score: f64,
    pub home_spread: Option<f64>,
    pub over_under: Option<f64>,
}

impl GameRecord {
    pub fn scores(&self) -> (f64, f64) {
        (self.home_score, self.away_score)
    }

    /// Implied (home, away) score from the betting lines, when both exist.
    pub fn expert(&self) -> Option<(f64, f64)> {
        let (away, home) = expert_prediction(self.home_spread?, self.over_under?);
        Some((home, away))
    }
}

/// Weeks between `epoch` and `date` in exact day arithmetic.
pub fn week_of(date: NaiveDate, epoch: NaiveDate) -> f64 {
    (date - epoch).num_days() as f64 / 7.0
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).map_err(|e| format!("bad date {s:?}: {e}"))
}

fn parse_f64(s: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("bad {what} {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what} must be finite"))
    }
}

fn parse_opt(s: &str, what: &str) -> std::result::Result<Option<f64>, String> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(s, what).map(Some)
    }
}

/// Parse games from CSV text with week 0 at `epoch`, or at the earliest game
/// date when `epoch` is `None`. The result is validated and sorted by date
/// (stable within a date).
pub fn read_games<R: Read>(reader: R, epoch: Option<NaiveDate>) -> Result<Vec<GameRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if header.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut games = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let parsed = (|| -> std::result::Result<GameRecord, String> {
            Ok(GameRecord {
                date: parse_date(&rec[0])?,
                season: rec[1].trim().parse().map_err(|_| format!("bad season {:?}", &rec[1]))?,
                week: 0.0,
                home_team: rec[2].trim().to_string(),
                away_team: rec[3].trim().to_string(),
                home_score: parse_f64(&rec[4], "home_score")?,
                away_score: parse_f64(&rec[5], "away_score")?,
                home_spread: parse_opt(&rec[6], "home_spread")?,
                over_under: parse_opt(&rec[7], "over_under")?,
            })
        })()
        .map_err(|message| Error::Parse { line, message })?;
        validate_record(&parsed, line)?;
        games.push(parsed);
        lines.push(line);
    }
    let mut seen = HashSet::new();
    for (g, line) in games.iter().zip(&lines) {
        let pair = if g.home_team < g.away_team {
            (&g.home_team, &g.away_team)
        } else {
            (&g.away_team, &g.home_team)
        };
        if !seen.insert((g.date, pair)) {
            return Err(Error::Validation(format!(
                "line {line}: duplicate game {} vs {} on {}",
                g.home_team, g.away_team, g.date
            )));
        }
    }
    games.sort_by_key(|g| g.date);
    let epoch = match epoch {
        Some(e) => e,
        None => match games.first() {
            Some(g) => g.date,
            None => return Ok(games),
        },
    };
    for g in &mut games {
        if g.date < epoch {
            return Err(Error::Validation(format!("game on {} precedes the epoch {epoch}", g.date)));
        }
        g.week = week_of(g.date, epoch);
    }
    Ok(games)
}

fn validate_record(g: &GameRecord, line: usize) -> Result<()> {
    if g.home_team.is_empty() || g.away_team.is_empty() {
        return Err(Error::Validation(format!("line {line}: empty team name")));
    }
    if g.home_team == g.away_team {
        return Err(Error::Validation(format!("line {line}: {} plays itself", g.home_team)));
    }
    if g.home_score < 0.0 || g.away_score < 0.0 {
        return Err(Error::Validation(format!("line {line}: negative score")));
    }
    Ok(())
}

pub fn load_games(path: &Path) -> Result<Vec<GameRecord>> {
    read_games(std::fs::File::open(path)?, None)
}

pub fn write_games<W: Write>(writer: W, games: &[GameRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(CSV_HEADER).map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for g in games {
        w.write_record([
            g.date.format(DATE_FORMAT).to_string(),
            g.season.to_string(),
            g.home_team.clone(),
            g.away_team.clone(),
            g.home_score.to_string(),
            g.away_score.to_string(),
            opt(g.home_spread),
            opt(g.over_under),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_games(path: &Path, games: &[GameRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_games(&mut buf, games)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// A game to predict: date and teams only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub date: NaiveDate,
    pub home_team: String,
    pub away_team: String,
}

/// Parse `date,home_team,away_team` rows.
pub fn read_fixtures<R: Read>(reader: R) -> Result<Vec<Fixture>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if header.iter().map(str::trim).ne(["date", "home_team", "away_team"]) {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `date,home_team,away_team`".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let date = parse_date(&rec[0]).map_err(|message| Error::Parse { line, message })?;
        let f = Fixture {
            date,
            home_team: rec[1].trim().to_string(),
            away_team: rec[2].trim().to_string(),
        };
        if f.home_team == f.away_team {
            return Err(Error::Validation(format!("line {line}: {} plays itself", f.home_team)));
        }
        out.push(f);
    }
    Ok(out)
}

/// Season calendar implied by the games: each boundary runs from the last
/// game of one season to the first game of the next.
pub fn calendar_from_games(games: &[GameRecord], true_gap_weeks: f64) -> Result<SeasonCalendar> {
    let mut spans: BTreeMap<i32, (f64, f64)> = BTreeMap::new();
    for g in games {
        let e = spans.entry(g.season).or_insert((g.week, g.week));
        e.0 = e.0.min(g.week);
        e.1 = e.1.max(g.week);
    }
    let spans: Vec<(i32, (f64, f64))> = spans.into_iter().collect();
    let mut boundaries = Vec::new();
    for w in spans.windows(2) {
        let (s0, (_, end)) = w[0];
        let (s1, (start, _)) = w[1];
        if start <= end {
            return Err(Error::Validation(format!("seasons {s0} and {s1} overlap in time")));
        }
        boundaries.push(SeasonBoundary {
            season_end_week: end,
            next_season_start_week: start,
        });
    }
    SeasonCalendar::new(boundaries, true_gap_weeks)
}

/// Width of a rolling test block in weeks.
pub const BLOCK_WEEKS: f64 = 4.0;

/// Training seasons visible to a block: the current one and this many before.
pub const PREVIOUS_SEASONS: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingBlock {
    pub season: i32,
    /// Position of the block within its season, from 0.
    pub index_in_season: usize,
    pub block_start_week: f64,
    pub block_end_week: f64,
    /// Indices into the game list.
    pub test_games: Vec<usize>,
    pub train_games: Vec<usize>,
}

/// Consecutive four-week blocks per season, anchored at each season's first
/// game. A short final block keeps the season's last games. Blocks without
/// test games are dropped.
pub fn make_rolling_blocks(games: &[GameRecord]) -> Result<Vec<RollingBlock>> {
    if games.windows(2).any(|w| w[1].week < w[0].week) {
        return Err(Error::Validation("games must be sorted by date".into()));
    }
    let mut seasons: BTreeMap<i32, (f64, f64)> = BTreeMap::new();
    for g in games {
        let e = seasons.entry(g.season).or_insert((g.week, g.week));
        e.0 = e.0.min(g.week);
        e.1 = e.1.max(g.week);
    }
    let mut blocks = Vec::new();
    for (&season, &(first, last)) in &seasons {
        let n_blocks = ((last - first) / BLOCK_WEEKS).floor() as usize + 1;
        let mut index_in_season = 0;
        for b in 0..n_blocks {
            let start = first + BLOCK_WEEKS * b as f64;
            let end = start + BLOCK_WEEKS;
            let test_games: Vec<usize> = (0..games.len())
                .filter(|&i| games[i].season == season && games[i].week >= start && games[i].week < end)
                .collect();
            if test_games.is_empty() {
                continue;
            }
            let train_games: Vec<usize> = (0..games.len())
                .filter(|&i| {
                    let g = &games[i];
                    g.week < start && g.season <= season && g.season >= season - PREVIOUS_SEASONS
                })
                .collect();
            let block = RollingBlock {
                season,
                index_in_season,
                block_start_week: start,
                block_end_week: end,
                test_games,
                train_games,
            };
            assert_no_leakage(&block, games)?;
            blocks.push(block);
            index_in_season += 1;
        }
    }
    Ok(blocks)
}

/// Every training game strictly precedes the block start.
pub fn assert_no_leakage(block: &RollingBlock, games: &[GameRecord]) -> Result<()> {
    if let Some(&i) = block.train_games.iter().find(|&&i| games[i].week >= block.block_start_week) {
        return Err(Error::Validation(format!(
            "training game on {} is not before the block starting at week {}",
            games[i].date, block.block_start_week
        )));
    }
    Ok(())
}

/// Scores implied by the betting lines, as `(away, home)`:
/// `away + home = over_under` and `away - home = home_spread`.
pub fn expert_prediction(home_spread: f64, over_under: f64) -> (f64, f64) {
    ((over_under + home_spread) / 2.0, (over_under - home_spread) / 2.0)
}

/// Member names and matchups for a set of games. Teams are numbered in
/// sorted name order.
pub fn teams_of(games: &[GameRecord]) -> Vec<String> {
    let mut names: Vec<String> = games
        .iter()
        .flat_map(|g| [g.home_team.clone(), g.away_team.clone()])
        .collect();
    names.sort();
    names.dedup();
    names
}

pub fn matchups(games: &[GameRecord], teams: &[String]) -> Result<Vec<Matchup>> {
    let index: BTreeMap<&str, usize> = teams.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let find = |t: &str| index.get(t).copied().ok_or_else(|| Error::Index(format!("unknown team {t}")));
    games
        .iter()
        .map(|g| Ok(Matchup::at_week(find(&g.home_team)?, find(&g.away_team)?, g.week, g.scores())))
        .collect()
}

/// Settings for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub k: usize,
    pub n_teams: usize,
    pub n_seasons: usize,
    /// Double round-robins played per season.
    pub cycles_per_season: usize,
    /// Days between consecutive rounds.
    pub days_between_rounds: i64,
    /// Calendar off-season length in weeks (whole days are used).
    pub off_season_weeks: f64,
    pub start_date: NaiveDate,
    pub first_season: i32,
    pub kernel: KernelSpec,
    pub hypers: HyperSet,
    /// Lower Cholesky factors of the offense and defense feature covariances.
    pub chol_u: Vec<Vec<f64>>,
    pub chol_v: Vec<Vec<f64>>,
    pub mu_u: Vec<f64>,
    pub mu_v: Vec<f64>,
    pub sigma: f64,
    pub rho: f64,
    /// Emit betting lines derived from the true score means.
    pub with_lines: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Ten teams over three seasons of two double round-robins, `K = 2`,
    /// with offense and defense drifting on a two-month time scale.
    fn default() -> Self {
        use crate::kernels::{HyperParams, HOME_DIM, TIME_DIM};
        let hp = HyperParams {
            length_scales: vec![8.0, 1.0],
            season_gap_weeks: 10.0,
        };
        Self {
            k: 2,
            n_teams: 10,
            n_seasons: 3,
            cycles_per_season: 2,
            days_between_rounds: 3,
            off_season_weeks: SeasonCalendar::DEFAULT_TRUE_GAP_WEEKS,
            start_date: NaiveDate::from_ymd_opt(2010, 11, 1).expect("valid date"),
            first_season: 2010,
            kernel: KernelSpec::ard(&[TIME_DIM, HOME_DIM]),
            hypers: [vec![hp.clone(); 2], vec![hp; 2]],
            chol_u: vec![vec![1.0, 0.0], vec![0.3, 1.0]],
            chol_v: vec![vec![1.0, 0.0], vec![-0.2, 1.0]],
            mu_u: vec![7.0, 7.0],
            mu_v: vec![7.0, 7.0],
            sigma: 10.0,
            rho: 0.3,
            with_lines: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 || self.n_teams < 2 || self.n_seasons == 0 || self.cycles_per_season == 0 {
            return bad("synthetic data needs k ≥ 1, at least 2 teams, 1 season and 1 cycle".into());
        }
        if self.days_between_rounds < 1 || !(self.off_season_weeks > 0.0) {
            return bad("round spacing and off-season length must be positive".into());
        }
        for h in &self.hypers {
            if h.len() != self.k || h.iter().any(|hp| hp.length_scales.len() != self.kernel.n_length_scales()) {
                return bad("hyperparameters do not match k and the kernel".into());
            }
        }
        for (name, l) in [("chol_u", &self.chol_u), ("chol_v", &self.chol_v)] {
            if l.len() != self.k || l.iter().any(|r| r.len() != self.k) {
                return bad(format!("{name} must be {0}×{0}", self.k));
            }
        }
        if self.mu_u.len() != self.k || self.mu_v.len() != self.k {
            return bad("mean vectors must have length k".into());
        }
        LikelihoodParams::new(self.sigma, self.rho)?;
        Ok(())
    }

    fn chol(&self, side: Side) -> DMatrix<f64> {
        let rows = match side {
            Side::U => &self.chol_u,
            Side::V => &self.chol_v,
        };
        DMatrix::from_fn(self.k, self.k, |i, j| if j <= i { rows[i][j] } else { 0.0 })
    }

    fn mu(&self, side: Side) -> &[f64] {
        match side {
            Side::U => &self.mu_u,
            Side::V => &self.mu_v,
        }
    }
}

/// Hidden values behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub teams: Vec<String>,
    pub sites: Vec<TruthSite>,
    /// True (home, away) score means per game, in record order.
    pub score_means: Vec<(f64, f64)>,
}

/// Latent vectors of one team at one game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSite {
    pub team: String,
    pub game: usize,
    pub week: f64,
    pub is_home: bool,
    /// Mixed offense vector, one entry per feature.
    pub u: Vec<f64>,
    /// Mixed defense vector before the softplus.
    pub v_raw: Vec<f64>,
}

/// Pairings of a single round-robin by the circle method; `None` is a bye.
fn round_robin(n: usize) -> Vec<Vec<(usize, usize)>> {
    let m = n + n % 2;
    let mut ring: Vec<usize> = (0..m).collect();
    let mut rounds = Vec::with_capacity(m - 1);
    for r in 0..m - 1 {
        let mut pairs = Vec::new();
        for i in 0..m / 2 {
            let (a, b) = (ring[i], ring[m - 1 - i]);
            if a < n && b < n {
                // alternate venue so each team's home games spread out
                pairs.push(if (r + i) % 2 == 0 { (a, b) } else { (b, a) });
            }
        }
        rounds.push(pairs);
        ring[1..].rotate_right(1);
    }
    rounds
}

/// Draw a dataset from the generative model on a round-robin schedule.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Vec<GameRecord>, SynthTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let teams: Vec<String> = (0..cfg.n_teams).map(|i| format!("T{:02}", i + 1)).collect();
    let single = round_robin(cfg.n_teams);
    let mut season_rounds: Vec<Vec<(usize, usize)>> = Vec::new();
    for _ in 0..cfg.cycles_per_season {
        season_rounds.extend(single.iter().cloned());
        season_rounds.extend(single.iter().map(|r| r.iter().map(|&(h, a)| (a, h)).collect()));
    }
    let off_days = (cfg.off_season_weeks * 7.0).round() as i64;
    let mut schedule: Vec<(NaiveDate, i32, usize, usize)> = Vec::new();
    let mut date = cfg.start_date;
    for s in 0..cfg.n_seasons {
        if s > 0 {
            date += Duration::days(off_days - cfg.days_between_rounds);
        }
        for round in &season_rounds {
            for &(h, a) in round {
                schedule.push((date, cfg.first_season + s as i32, h, a));
            }
            date += Duration::days(cfg.days_between_rounds);
        }
    }
    let epoch = cfg.start_date;
    let mut games: Vec<GameRecord> = schedule
        .iter()
        .map(|&(d, season, h, a)| GameRecord {
            date: d,
            season,
            week: week_of(d, epoch),
            home_team: teams[h].clone(),
            away_team: teams[a].clone(),
            home_score: 0.0,
            away_score: 0.0,
            home_spread: None,
            over_under: None,
        })
        .collect();
    let cal = calendar_from_games(&games, cfg.off_season_weeks)?;

    // each team's sites in game order
    let mut team_sites: Vec<Vec<(usize, SideInfo)>> = vec![Vec::new(); cfg.n_teams];
    for (g, &(_, _, h, a)) in schedule.iter().enumerate() {
        team_sites[h].push((g, SideInfo::new(games[g].week, true)));
        team_sites[a].push((g, SideInfo::new(games[g].week, false)));
    }
    // mixed[side][team] is K × n_sites
    let mut mixed: [Vec<DMatrix<f64>>; 2] = [Vec::new(), Vec::new()];
    for side in Side::BOTH {
        let l_sigma = cfg.chol(side);
        for sites in &team_sites {
            let pts: Vec<SideInfo> = sites.iter().map(|(_, s)| s.clone()).collect();
            let n = pts.len();
            let mut f = DMatrix::<f64>::zeros(cfg.k, n);
            for k in 0..cfg.k {
                let l = chol_jitter(&gram(&pts, &cfg.kernel, &cfg.hypers[side.index()][k], &cal)?)?.l;
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                f.row_mut(k).copy_from(&(l * z).transpose());
            }
            let mut m = &l_sigma * f;
            for (k, mu) in cfg.mu(side).iter().enumerate() {
                m.row_mut(k).add_scalar_mut(*mu);
            }
            mixed[side.index()].push(m);
        }
    }
    let lik = LikelihoodParams::new(cfg.sigma, cfg.rho)?;
    let mut pos = vec![0usize; cfg.n_teams];
    let mut site_cols: Vec<(usize, usize)> = Vec::with_capacity(games.len());
    for &(_, _, h, a) in &schedule {
        site_cols.push((pos[h], pos[a]));
        pos[h] += 1;
        pos[a] += 1;
    }
    let mut means = Vec::with_capacity(games.len());
    for (g, &(_, _, h, a)) in schedule.iter().enumerate() {
        let (ph, pa) = site_cols[g];
        let col = |side: Side, t: usize, p: usize| -> Vec<f64> { mixed[side.index()][t].column(p).iter().copied().collect() };
        let y = (
            inner_softplus(&col(Side::U, h, ph), &col(Side::V, a, pa)),
            inner_softplus(&col(Side::U, a, pa), &col(Side::V, h, ph)),
        );
        let z = sample_score_pair(y, &lik, &mut rng);
        let rec = &mut games[g];
        // scores are non-negative counts; the generator truncates at zero
        rec.home_score = z.0.max(0.0);
        rec.away_score = z.1.max(0.0);
        if cfg.with_lines {
            rec.home_spread = Some(((y.1 - y.0) * 2.0).round() / 2.0);
            rec.over_under = Some(((y.0 + y.1) * 2.0).round() / 2.0);
        }
        means.push(y);
    }
    let mut sites = Vec::new();
    for (t, list) in team_sites.iter().enumerate() {
        for (p, (g, s)) in list.iter().enumerate() {
            sites.push(TruthSite {
                team: teams[t].clone(),
                game: *g,
                week: s.raw_week,
                is_home: s.is_home,
                u: mixed[0][t].column(p).iter().copied().collect(),
                v_raw: mixed[1][t].column(p).iter().copied().collect(),
            });
        }
    }
    Ok((games, SynthTruth { teams, sites, score_means: means }))
}
