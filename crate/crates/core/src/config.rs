//! Run configuration: model variant, schedule, prior boxes and sampler
//! settings, read from TOML.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::driver::{ChainSchedule, HyperSet};
use crate::error::{Error, Result};
use crate::kernels::{HyperParams, KernelSpec, SeasonCalendar, HOME_DIM, TIME_DIM};
use crate::model::{Bounds, HyperBox, PriorBoxes};
use crate::samplers::SliceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Length scales pinned at the top of their boxes: static factorization.
    Pmf,
    /// Time only.
    DpmfT,
    /// Home/away indicator only.
    DpmfH,
    /// Time and home/away.
    DpmfTh,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Pmf, Variant::DpmfT, Variant::DpmfH, Variant::DpmfTh];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pmf => "pmf",
            Variant::DpmfT => "dpmf_t",
            Variant::DpmfH => "dpmf_h",
            Variant::DpmfTh => "dpmf_th",
        }
    }

    /// Row label in the results table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Pmf => "PMF",
            Variant::DpmfT => "DPMF(t)",
            Variant::DpmfH => "DPMF(h)",
            Variant::DpmfTh => "DPMF(t,h)",
        }
    }

    pub fn dims(self) -> &'static [usize] {
        match self {
            Variant::DpmfT => &[TIME_DIM],
            Variant::DpmfH => &[HOME_DIM],
            Variant::Pmf | Variant::DpmfTh => &[TIME_DIM, HOME_DIM],
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['(', ')', ',', '-'], "_");
        let norm = norm.trim_end_matches('_');
        match norm {
            "pmf" => Ok(Variant::Pmf),
            "dpmf_t" => Ok(Variant::DpmfT),
            "dpmf_h" => Ok(Variant::DpmfH),
            "dpmf_th" | "dpmf_t_h" => Ok(Variant::DpmfTh),
            _ => Err(Error::Config(format!("unknown variant {s:?} (pmf, dpmf_t, dpmf_h, dpmf_th)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperModeSetting {
    Sample,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperConfig {
    pub mode: HyperModeSetting,
    /// Frozen-hyperparameter file, required when `mode = "frozen"`.
    pub frozen_path: Option<String>,
    pub initial_time: f64,
    pub initial_home: f64,
    pub initial_extra: f64,
    pub initial_gap: f64,
    /// One season gap shared by every kernel.
    pub share_season_gap: bool,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            mode: HyperModeSetting::Sample,
            frozen_path: None,
            initial_time: 20.0,
            initial_home: 1.0,
            initial_extra: 1.0,
            initial_gap: 14.0,
            share_season_gap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub time: [f64; 2],
    pub home: [f64; 2],
    pub extra: [f64; 2],
    /// Season gap prior is uniform on `(0, gap_max]`.
    pub gap_max: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let b = PriorBoxes::default();
        Self {
            time: [b.time.lo, b.time.hi],
            home: [b.home.lo, b.home.hi],
            extra: [b.extra.lo, b.extra.hi],
            gap_max: SeasonCalendar::DEFAULT_TRUE_GAP_WEEKS,
        }
    }
}

impl PriorConfig {
    pub fn boxes(&self) -> Result<PriorBoxes> {
        Ok(PriorBoxes {
            time: Bounds::new(self.time[0], self.time[1])?,
            home: Bounds::new(self.home[0], self.home[1])?,
            extra: Bounds::new(self.extra[0], self.extra[1])?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Multiply a periodic factor over time with this period (weeks).
    pub periodic_period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub k: usize,
    pub variant: Variant,
    pub seed: u64,
    /// Calendar off-season length the time warp measures against.
    pub true_gap_weeks: f64,
    pub schedule: ChainSchedule,
    pub priors: PriorConfig,
    pub hypers: HyperConfig,
    pub kernel: KernelConfig,
    pub slice: SliceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 1,
            variant: Variant::DpmfTh,
            seed: 0,
            true_gap_weeks: SeasonCalendar::DEFAULT_TRUE_GAP_WEEKS,
            schedule: ChainSchedule::default(),
            priors: PriorConfig::default(),
            hypers: HyperConfig::default(),
            kernel: KernelConfig::default(),
            slice: SliceConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.true_gap_weeks > 0.0 && self.true_gap_weeks.is_finite()) {
            return Err(Error::Config("true_gap_weeks must be positive".into()));
        }
        if !(self.priors.gap_max > 0.0 && self.priors.gap_max <= self.true_gap_weeks) {
            return Err(Error::Config("priors.gap_max must lie in (0, true_gap_weeks]".into()));
        }
        self.schedule.validate()?;
        self.slice.validate()?;
        if let Some(p) = self.kernel.periodic_period {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config("kernel.periodic_period must be positive".into()));
            }
            if self.variant == Variant::DpmfH {
                return Err(Error::Config("a periodic time factor needs a time-dependent variant".into()));
            }
        }
        if self.hypers.mode == HyperModeSetting::Frozen && self.hypers.frozen_path.is_none() && self.variant != Variant::Pmf {
            return Err(Error::Config("hypers.mode = \"frozen\" needs hypers.frozen_path".into()));
        }
        let b = self.hyper_box()?;
        let init = self.initial_hyper()?;
        if self.variant != Variant::Pmf && !b.contains(&init) {
            return Err(Error::Config(format!("initial hyperparameters {init:?} lie outside the prior box")));
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        let ard = KernelSpec::ard(self.variant.dims());
        match self.kernel.periodic_period {
            Some(period) => KernelSpec::Product(vec![ard, KernelSpec::Periodic { dim: TIME_DIM, period }]),
            None => ard,
        }
    }

    pub fn hyper_box(&self) -> Result<HyperBox> {
        Ok(HyperBox::for_kernel(&self.kernel_spec(), &self.priors.boxes()?, self.priors.gap_max))
    }

    fn initial_hyper(&self) -> Result<HyperParams> {
        let spec = self.kernel_spec();
        if self.variant == Variant::Pmf {
            return Ok(self.hyper_box()?.upper_corner(self.priors.gap_max));
        }
        let ls = spec
            .slot_dims()
            .into_iter()
            .map(|d| match d {
                TIME_DIM => self.hypers.initial_time,
                HOME_DIM => self.hypers.initial_home,
                _ => self.hypers.initial_extra,
            })
            .collect();
        HyperParams::new(ls, self.hypers.initial_gap.min(self.priors.gap_max))
    }

    /// Starting hyperparameters for every kernel. PMF gets the pinned static
    /// limit.
    pub fn initial_hypers(&self) -> Result<HyperSet> {
        let hp = self.initial_hyper()?;
        Ok([vec![hp.clone(); self.k], vec![hp; self.k]])
    }

    /// Whether chains sample the kernel hyperparameters.
    pub fn samples_hypers(&self) -> bool {
        self.variant != Variant::Pmf && self.hypers.mode == HyperModeSetting::Sample
    }
}
