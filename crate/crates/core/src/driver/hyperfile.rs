//! Plain-text frozen-hyperparameter files, one `name = value` per line:
//! `u.0.time = 31.5`, `v.1.season_gap_weeks = 12`. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;

use crate::driver::HyperSet;
use crate::error::{Error, Result};
use crate::kernels::{HyperParams, KernelSpec};
use crate::model::Side;

pub const GAP_NAME: &str = "season_gap_weeks";

pub fn format_hypers(hypers: &HyperSet, spec: &KernelSpec) -> String {
    let names = spec.slot_names();
    let mut out = String::new();
    for side in Side::BOTH {
        for (k, hp) in hypers[side.index()].iter().enumerate() {
            for (name, l) in names.iter().zip(&hp.length_scales) {
                out.push_str(&format!("{}.{k}.{name} = {l}\n", side.name()));
            }
            out.push_str(&format!("{}.{k}.{GAP_NAME} = {}\n", side.name(), hp.season_gap_weeks));
        }
    }
    out
}

pub fn parse_hypers(text: &str, spec: &KernelSpec, k: usize) -> Result<HyperSet> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let (name, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err("expected `name = value`".into()))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad number {:?}", value.trim())))?;
        if values.insert(name.trim().to_string(), v).is_some() {
            return Err(parse_err(format!("{} given twice", name.trim())));
        }
    }
    let names = spec.slot_names();
    let mut take = |key: String| values.remove(&key).ok_or_else(|| Error::Config(format!("hyperparameter file lacks {key}")));
    let mut out: HyperSet = [Vec::new(), Vec::new()];
    for side in Side::BOTH {
        for kk in 0..k {
            let prefix = format!("{}.{kk}", side.name());
            let ls = names
                .iter()
                .map(|n| take(format!("{prefix}.{n}")))
                .collect::<Result<Vec<_>>>()?;
            let gap = take(format!("{prefix}.{GAP_NAME}"))?;
            out[side.index()].push(HyperParams::new(ls, gap)?);
        }
    }
    if let Some(extra) = values.keys().next() {
        return Err(Error::Config(format!("unknown hyperparameter {extra}")));
    }
    Ok(out)
}
