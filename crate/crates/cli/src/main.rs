mod meta;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use dpmf::config::{HyperModeSetting, RunConfig, Variant};
use dpmf::data::{self, SynthConfig};
use dpmf::driver::checkpoint::{ChainCheckpoint, Checkpoint, RngPosition, SCHEMA_VERSION};
use dpmf::driver::hyperfile::{format_hypers, parse_hypers};
use dpmf::driver::{median_hypers, run_block, BlockSettings, HyperSet};
use dpmf::evaluation::{self, RollingReport};
use dpmf::model::Matchup;
use dpmf::predict::{self, PredictiveMixture};
use dpmf::{Error, Result};

#[derive(Parser)]
#[command(name = "dpmf", version, about = "Dependent probabilistic matrix factorization for paired scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the generative model.
    Synth(SynthArgs),
    /// Fit chains on a whole dataset and write a checkpoint.
    Fit(FitArgs),
    /// Predictive densities for fixtures from a checkpoint.
    Predict(PredictArgs),
    /// Rolling four-week evaluation with per-block refits.
    EvaluateRolling(EvalArgs),
    /// Metrics of the betting-line predictions.
    ExpertBaseline(ExpertArgs),
}

#[derive(Args)]
struct RunOpts {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// Frozen-hyperparameter file; implies frozen hyperparameters.
    #[arg(long)]
    frozen_hypers: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the hidden latent values.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    run: RunOpts,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the median sampled hyperparameters to this file.
    #[arg(long)]
    burn_hypers: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV with header `date,home_team,away_team`.
    #[arg(long)]
    fixtures: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Predictive draws per stored chain state.
    #[arg(long, default_value_t = 20)]
    draws_per_chain: usize,
    #[arg(long, default_value_t = 60.0)]
    grid_min: f64,
    #[arg(long, default_value_t = 160.0)]
    grid_max: f64,
    #[arg(long, default_value_t = 1.0)]
    grid_step: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunOpts,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Extra variants to evaluate alongside the configured one.
    #[arg(long = "also-variant")]
    also_variant: Vec<String>,
    /// Extra feature counts to evaluate alongside the configured one.
    #[arg(long = "also-k")]
    also_k: Vec<usize>,
}

#[derive(Args)]
struct ExpertArgs {
    #[arg(long)]
    data: PathBuf,
    /// CSV output; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::EvaluateRolling(a) => cmd_evaluate(a),
        Command::ExpertBaseline(a) => cmd_expert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Validation(e.to_string())
}

fn load_config(opts: &RunOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(v) = &opts.variant {
        cfg.variant = v.parse()?;
    }
    if let Some(k) = opts.k {
        cfg.k = k;
    }
    if let Some(p) = &opts.frozen_hypers {
        cfg.hypers.mode = HyperModeSetting::Frozen;
        cfg.hypers.frozen_path = Some(p.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn frozen_for(cfg: &RunConfig) -> Result<Option<HyperSet>> {
    if cfg.hypers.mode != HyperModeSetting::Frozen || cfg.variant == Variant::Pmf {
        return Ok(None);
    }
    let path = cfg.hypers.frozen_path.as_ref().expect("validated");
    let text = std::fs::read_to_string(path)?;
    parse_hypers(&text, &cfg.kernel_spec(), cfg.k).map(Some)
}

fn inputs(pairs: &[(&str, &Path)]) -> Result<BTreeMap<String, String>> {
    pairs
        .iter()
        .map(|(name, p)| Ok((name.to_string(), meta::file_sha256(p)?)))
        .collect()
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str::<SynthConfig>(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (games, truth) = data::synth_generate(&cfg)?;
    data::save_games(&a.out, &games)?;
    if let Some(t) = &a.truth {
        std::fs::write(t, serde_json::to_string_pretty(&truth).map_err(json_err)? + "\n")?;
    }
    let synth_toml = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let m = meta::record(
        "synth",
        None,
        cfg.seed,
        BTreeMap::new(),
        json!({ "synth_config": synth_toml, "n_games": games.len() }),
    );
    meta::write(&meta_path(&a.out), &m)?;
    println!("wrote {} games for {} teams to {}", games.len(), truth.teams.len(), a.out.display());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let cfg = load_config(&a.run)?;
    let frozen = frozen_for(&cfg)?;
    let games = data::load_games(&a.data)?;
    let all: Vec<usize> = (0..games.len()).collect();
    let problem = evaluation::build_problem(&games, &all, &cfg)?;
    let settings = BlockSettings {
        schedule: cfg.schedule,
        hyper_mode: evaluation::hyper_mode_for(&cfg, frozen.as_ref())?,
        slice: cfg.slice,
        share_season_gap: cfg.hypers.share_season_gap,
        seed: cfg.seed,
        block_id: 0,
    };
    let result = run_block(None, &problem, &[], &settings)?;
    let epoch = evaluation::epoch_of(&games).ok_or_else(|| Error::Config("no games to fit".into()))?;
    let cp = Checkpoint {
        schema_version: SCHEMA_VERSION,
        config: serde_json::to_value(&cfg).map_err(json_err)?,
        epoch: epoch.to_string(),
        problem,
        chains: result
            .final_states
            .into_iter()
            .zip(&result.final_rngs)
            .map(|(state, rng)| ChainCheckpoint {
                state,
                rng: RngPosition::of(result.chain_seed, rng),
            })
            .collect(),
    };
    cp.save(&a.out)?;
    let mut extra = json!({ "n_games": games.len(), "n_chains": cp.chains.len() });
    if let Some(path) = &a.burn_hypers {
        let h = median_hypers(&result.bank)?;
        std::fs::write(path, format_hypers(&h, &cfg.kernel_spec()))?;
        extra["burn_hypers"] = Value::String(path.display().to_string());
    }
    let m = meta::record("fit", Some(&cfg), cfg.seed, inputs(&[("data", &a.data)])?, extra);
    meta::write(&meta_path(&a.out), &m)?;
    println!("fit {} chains on {} games; checkpoint {}", cp.chains.len(), games.len(), a.out.display());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    if a.draws_per_chain == 0 {
        return Err(Error::Config("--draws-per-chain must be at least 1".into()));
    }
    let cp = Checkpoint::load(&a.checkpoint)?;
    let fixtures = data::read_fixtures(std::fs::File::open(&a.fixtures)?)?;
    let epoch = NaiveDate::parse_from_str(&cp.epoch, data::DATE_FORMAT)
        .map_err(|e| Error::Checkpoint(format!("bad epoch {:?}: {e}", cp.epoch)))?;
    let problem = &cp.problem;
    let index: HashMap<&str, usize> = problem.index.members.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let member = |t: &str| index.get(t).copied().ok_or_else(|| Error::Index(format!("unknown team {t}")));
    let mut test = Vec::with_capacity(fixtures.len());
    for f in &fixtures {
        if f.date < epoch {
            return Err(Error::Validation(format!("fixture on {} precedes the data epoch {epoch}", f.date)));
        }
        test.push(Matchup::at_week(member(&f.home_team)?, member(&f.away_team)?, data::week_of(f.date, epoch), (0.0, 0.0)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut components: Vec<Vec<((f64, f64), dpmf::likelihood::LikelihoodParams)>> = vec![Vec::new(); test.len()];
    for c in &cp.chains {
        let table = predict::cholesky_table(&c.state, problem)?;
        for _ in 0..a.draws_per_chain {
            let means = predict::draw_predictive_with(&c.state, problem, &table, &test, &mut rng)?;
            for (g, m) in means.into_iter().enumerate() {
                components[g].push((m, c.state.likelihood));
            }
        }
    }
    let nodes = predict::grid_nodes(a.grid_min, a.grid_max, a.grid_step)?;
    let mut out = Vec::with_capacity(test.len());
    for (f, comps) in fixtures.iter().zip(components) {
        let mix = PredictiveMixture::new(comps)?;
        let (mh, ma) = mix.mean();
        out.push(json!({
            "date": f.date.to_string(),
            "home_team": f.home_team,
            "away_team": f.away_team,
            "mixture_mean": { "home": mh, "away": ma },
            "prob_home_win": mix.prob_home_win(),
            "box_mass": predict::box_mass(&mix, (a.grid_min, a.grid_max), (a.grid_min, a.grid_max)),
            "components": mix.components.iter().map(|((h, w), p)| json!({
                "home_mean": h, "away_mean": w, "sigma": p.sigma, "rho": p.rho
            })).collect::<Vec<_>>(),
            "density": predict::density_grid(&mix, &nodes, &nodes),
        }));
    }
    let dump = json!({
        "grid": { "min": a.grid_min, "max": a.grid_max, "step": a.grid_step, "nodes": nodes.len(),
                  "layout": "density[i][j] at home = nodes[i], away = nodes[j]" },
        "fixtures": out,
    });
    std::fs::write(&a.out, serde_json::to_string(&dump).map_err(json_err)? + "\n")?;
    let m = meta::record(
        "predict",
        None,
        a.seed,
        inputs(&[("checkpoint", &a.checkpoint), ("fixtures", &a.fixtures)])?,
        json!({ "draws_per_chain": a.draws_per_chain }),
    );
    meta::write(&meta_path(&a.out), &m)?;
    println!("wrote predictive densities for {} fixtures to {}", fixtures.len(), a.out.display());
    Ok(())
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let base = load_config(&a.run)?;
    let games = data::load_games(&a.data)?;
    let mut variants = vec![base.variant];
    for v in &a.also_variant {
        let v: Variant = v.parse()?;
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    let mut ks = vec![base.k];
    for &k in &a.also_k {
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    let mut reports: Vec<RollingReport> = Vec::new();
    for &variant in &variants {
        for &k in &ks {
            let cfg = RunConfig { variant, k, ..base.clone() };
            cfg.validate()?;
            let frozen = frozen_for(&cfg)?;
            eprintln!("evaluating {} K{k}", variant.label());
            reports.push(evaluation::evaluate_rolling(&games, &cfg, frozen.as_ref())?);
        }
    }
    std::fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    std::fs::write(dir.join("blocks.csv"), evaluation::blocks_csv(&reports))?;
    std::fs::write(dir.join("seasons.csv"), evaluation::seasons_csv(&reports))?;
    let table = evaluation::format_table(&reports);
    std::fs::write(dir.join("table.txt"), &table)?;
    let mut gaps = String::from("variant,k,season_gap_weeks\n");
    for r in &reports {
        for g in &r.gap_samples {
            gaps.push_str(&format!("{},{},{}\n", r.variant.name(), r.k, g));
        }
    }
    std::fs::write(dir.join("gap_samples.csv"), gaps)?;
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| {
            let gap = if r.gap_samples.is_empty() {
                Value::Null
            } else {
                let mut g = r.gap_samples.clone();
                g.sort_by(f64::total_cmp);
                json!({ "mean": dpmf::diagnostics::mean(&g), "median": g[g.len() / 2], "n": g.len() })
            };
            json!({
                "variant": r.variant.name(),
                "k": r.k,
                "skipped_blocks": r.skipped_blocks,
                "overall": r.overall,
                "season_gap_weeks": gap,
            })
        })
        .collect();
    let m = meta::record(
        "evaluate-rolling",
        Some(&base),
        base.seed,
        inputs(&[("data", &a.data)])?,
        json!({ "runs": summary }),
    );
    meta::write(&dir.join("metadata.json"), &m)?;
    print!("{table}");
    Ok(())
}

fn cmd_expert(a: ExpertArgs) -> Result<()> {
    let games = data::load_games(&a.data)?;
    let (seasons, all) = evaluation::expert_baseline(&games);
    if all.n_games == 0 {
        return Err(Error::Validation("no game carries both betting lines".into()));
    }
    let mut csv = String::from("season,n_games,winner_error_pct,rmse\n");
    let mut table = format!("{:<8} {:>7} {:>10} {:>8}\n", "season", "games", "error(%)", "rmse");
    for (s, m) in seasons.iter().map(|(s, m)| (s.to_string(), m)).chain([("all".to_string(), &all)]) {
        csv.push_str(&format!("{s},{},{},{}\n", m.n_games, m.winner_error_pct, m.rmse));
        table.push_str(&format!("{:<8} {:>7} {:>10.1} {:>8.2}\n", s, m.n_games, m.winner_error_pct, m.rmse));
    }
    if let Some(out) = &a.out {
        std::fs::write(out, &csv)?;
        let m = meta::record("expert-baseline", None, a.seed.unwrap_or(0), inputs(&[("data", &a.data)])?, Value::Null);
        meta::write(&meta_path(out), &m)?;
    }
    print!("{table}");
    Ok(())
}
