//! Versioned JSON checkpoints: the problem, every chain's final state and
//! enough rng bookkeeping to resume the streams.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelState, Problem};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngPosition {
    pub seed: u64,
    pub stream: u64,
    /// Word position of the ChaCha block counter, as a decimal string.
    pub word_pos: String,
}

impl RngPosition {
    pub fn of(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCheckpoint {
    pub state: ModelState,
    pub rng: RngPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    /// The run configuration as written by the caller.
    pub config: serde_json::Value,
    /// Date that week 0 refers to, ISO-8601.
    pub epoch: String,
    pub problem: Problem,
    pub chains: Vec<ChainCheckpoint>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(Error::Checkpoint(format!("unsupported schema version {v}"))),
            None => return Err(Error::Checkpoint("missing schema_version".into())),
        }
        let cp: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if cp.chains.is_empty() {
            return Err(Error::Checkpoint("checkpoint holds no chains".into()));
        }
        for c in &cp.chains {
            if c.state.k() != cp.problem.k {
                return Err(Error::Checkpoint("chain state does not match the stored problem".into()));
            }
        }
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
