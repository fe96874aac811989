//! Run metadata written next to every output.

use std::collections::BTreeMap;
use std::path::Path;

use dpmf::config::RunConfig;
use dpmf::Result;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Modelling choices the method leaves open, with the values in force.
pub fn design_decisions(cfg: &RunConfig) -> BTreeMap<&'static str, String> {
    let p = &cfg.priors;
    BTreeMap::from([
        ("prior_box_time_weeks", format!("uniform [{}, {}]", p.time[0], p.time[1])),
        ("prior_box_home", format!("uniform [{}, {}]", p.home[0], p.home[1])),
        ("prior_box_extra", format!("uniform [{}, {}]", p.extra[0], p.extra[1])),
        ("prior_season_gap_weeks", format!("uniform (0, {}]", p.gap_max)),
        ("season_gap_shared", cfg.hypers.share_season_gap.to_string()),
        (
            "time_warp",
            format!("each off-season scaled by gap / {} weeks", cfg.true_gap_weeks),
        ),
        ("season_calendar", "last and first game dates of consecutive seasons".into()),
        (
            "cold_start",
            "nu ~ N(0, 0.1^2); mu at prior centers; Sigma = I; sigma = empirical score sd; rho = 0.2".into(),
        ),
        (
            "mixing_priors",
            "mu ~ N(center, 5^2); log diag(L) ~ N(0, 1.5^2); offdiag(L) ~ N(0, 1); log sigma ~ N(0, 1.5^2); atanh rho ~ N(0, 1.5^2)".into(),
        ),
        ("pmf_baseline", "length scales pinned at the prior box upper corner".into()),
        ("frozen_hypers", "per-coordinate median of retained samples".into()),
        ("winner_rule", "home win iff P(home > away) > 0.5; expert picks home on ties".into()),
        ("rmse", "pooled over both score entries of every game".into()),
        ("rolling_blocks", "4-week blocks from each season's first game; short final block kept".into()),
        ("training_window", "current and two previous seasons, strictly before block start".into()),
        ("predictive_conditioning", "each member's own training sites only".into()),
        ("jitter_ladder", "0, 1e-10, 1e-8, 1e-6".into()),
    ])
}

pub fn record(command: &str, cfg: Option<&RunConfig>, seed: u64, inputs: BTreeMap<String, String>, extra: Value) -> Value {
    let mut m = json!({
        "command": command,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": inputs,
        "extra": extra,
    });
    if let Some(c) = cfg {
        let text = c.to_toml();
        m["config"] = Value::String(text.clone());
        m["config_sha256"] = Value::String(sha256_hex(text.as_bytes()));
        m["design_decisions"] = serde_json::to_value(design_decisions(c)).expect("string map");
    }
    m
}

pub fn write(path: &Path, value: &Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("json value") + "\n")?;
    Ok(())
}
