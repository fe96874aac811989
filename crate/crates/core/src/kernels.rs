//! Correlation functions over side information, the season-gap time warp,
//! and Gram-matrix construction with a fixed jitter ladder for Cholesky.
//!
//! Side information is flattened into a coordinate vector before any kernel
//! is evaluated: coordinate 0 is the (warped) week, coordinate 1 the home
//! indicator, and coordinates 2.. the extra dimensions in order.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate of the warped time dimension.
pub const TIME_DIM: usize = 0;
/// Coordinate of the binary home/away dimension.
pub const HOME_DIM: usize = 1;

/// Jitter values tried, in order, by [`chol_jitter`].
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Side information attached to one participant's view of one game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideInfo {
    /// Weeks since the dataset epoch.
    pub raw_week: f64,
    pub is_home: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<f64>,
}

impl SideInfo {
    pub fn new(raw_week: f64, is_home: bool) -> Self {
        Self {
            raw_week,
            is_home,
            extra: Vec::new(),
        }
    }

    pub fn with_extra(mut self, extra: Vec<f64>) -> Self {
        self.extra = extra;
        self
    }

    pub fn n_dims(&self) -> usize {
        2 + self.extra.len()
    }

    /// Kernel coordinates with the time dimension passed through [`warp_time`].
    pub fn coordinates(&self, gap: f64, cal: &SeasonCalendar) -> Result<Vec<f64>> {
        if !self.raw_week.is_finite() {
            return Err(Error::Domain(format!("non-finite week {}", self.raw_week)));
        }
        let mut coords = Vec::with_capacity(self.n_dims());
        coords.push(warp_time(self.raw_week, gap, cal)?);
        coords.push(if self.is_home { 1.0 } else { 0.0 });
        coords.extend_from_slice(&self.extra);
        Ok(coords)
    }
}

/// End of one regular season and start of the next, in raw weeks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonBoundary {
    pub season_end_week: f64,
    pub next_season_start_week: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonCalendar {
    boundaries: Vec<SeasonBoundary>,
    true_gap_weeks: f64,
}

impl SeasonCalendar {
    pub const DEFAULT_TRUE_GAP_WEEKS: f64 = 28.0;

    pub fn new(boundaries: Vec<SeasonBoundary>, true_gap_weeks: f64) -> Result<Self> {
        if !(true_gap_weeks > 0.0 && true_gap_weeks.is_finite()) {
            return Err(Error::Domain(format!(
                "true gap must be positive, got {true_gap_weeks}"
            )));
        }
        let mut last = f64::NEG_INFINITY;
        for b in &boundaries {
            if !(b.season_end_week > last && b.next_season_start_week > b.season_end_week) {
                return Err(Error::Domain(format!(
                    "season boundaries must be strictly increasing and non-overlapping: {b:?}"
                )));
            }
            last = b.next_season_start_week;
        }
        Ok(Self {
            boundaries,
            true_gap_weeks,
        })
    }

    /// A calendar with no off-seasons.
    pub fn single_season() -> Self {
        Self {
            boundaries: Vec::new(),
            true_gap_weeks: Self::DEFAULT_TRUE_GAP_WEEKS,
        }
    }

    pub fn boundaries(&self) -> &[SeasonBoundary] {
        &self.boundaries
    }

    pub fn true_gap_weeks(&self) -> f64 {
        self.true_gap_weeks
    }
}

/// Map a raw week onto effective time, shrinking every off-season by the
/// factor `gap / true_gap`.
///
/// An off-season whose calendar length equals the true gap therefore
/// contributes exactly `gap` effective weeks, and each completed off-season
/// removes `true_gap - gap` weeks. Inside an off-season time runs at the
/// reduced rate, so the map is strictly increasing.
pub fn warp_time(raw_week: f64, gap: f64, cal: &SeasonCalendar) -> Result<f64> {
    if !(gap > 0.0 && gap <= cal.true_gap_weeks) {
        return Err(Error::Domain(format!(
            "season gap {gap} outside (0, {}]",
            cal.true_gap_weeks
        )));
    }
    if raw_week < 0.0 {
        return Err(Error::Domain(format!("negative week {raw_week}")));
    }
    let shrink = 1.0 - gap / cal.true_gap_weeks;
    if shrink == 0.0 {
        return Ok(raw_week);
    }
    let mut removed = 0.0;
    for b in &cal.boundaries {
        if raw_week >= b.next_season_start_week {
            removed += (b.next_season_start_week - b.season_end_week) * shrink;
        } else {
            if raw_week > b.season_end_week {
                removed += (raw_week - b.season_end_week) * shrink;
            }
            break;
        }
    }
    Ok(raw_week - removed)
}

/// Squared-exponential ARD correlation over paired coordinates.
pub fn corr_ard(x1: &[f64], x2: &[f64], length_scales: &[f64]) -> f64 {
    debug_assert_eq!(x1.len(), length_scales.len());
    debug_assert_eq!(x2.len(), length_scales.len());
    let sq: f64 = x1
        .iter()
        .zip(x2)
        .zip(length_scales)
        .map(|((a, b), l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum();
    (-0.5 * sq).exp()
}

/// Periodic correlation `exp{-2 sin²(π(x1-x2)/period) / ℓ²}`.
pub fn corr_periodic(x1: f64, x2: f64, length_scale: f64, period: f64) -> f64 {
    let s = (PI * (x1 - x2) / period).sin();
    (-2.0 * s * s / (length_scale * length_scale)).exp()
}

/// Which correlation function to apply and over which coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// One length scale per listed coordinate.
    Ard { dims: Vec<usize> },
    /// One length scale; acts on a single coordinate.
    Periodic { dim: usize, period: f64 },
    /// Elementwise product of the factors; length scales are concatenated in
    /// factor order.
    Product(Vec<KernelSpec>),
}

impl KernelSpec {
    /// ARD over the given coordinates.
    pub fn ard(dims: &[usize]) -> Self {
        KernelSpec::Ard {
            dims: dims.to_vec(),
        }
    }

    /// Number of length-scale slots this kernel consumes.
    pub fn n_length_scales(&self) -> usize {
        self.slot_dims().len()
    }

    /// The coordinate each length-scale slot acts on, in slot order.
    pub fn slot_dims(&self) -> Vec<usize> {
        match self {
            KernelSpec::Ard { dims } => dims.clone(),
            KernelSpec::Periodic { dim, .. } => vec![*dim],
            KernelSpec::Product(factors) => factors.iter().flat_map(|f| f.slot_dims()).collect(),
        }
    }

    /// Human-readable slot names, used in parameter files.
    pub fn slot_names(&self) -> Vec<String> {
        fn dim_name(d: usize) -> String {
            match d {
                TIME_DIM => "time".into(),
                HOME_DIM => "home".into(),
                other => format!("extra{}", other - 2),
            }
        }
        match self {
            KernelSpec::Ard { dims } => dims.iter().map(|&d| dim_name(d)).collect(),
            KernelSpec::Periodic { dim, .. } => vec![format!("periodic_{}", dim_name(*dim))],
            KernelSpec::Product(factors) => factors.iter().flat_map(|f| f.slot_names()).collect(),
        }
    }

    pub fn validate(&self, n_dims: usize) -> Result<()> {
        match self {
            KernelSpec::Ard { dims } => {
                if let Some(&d) = dims.iter().find(|&&d| d >= n_dims) {
                    return Err(Error::Config(format!(
                        "kernel references dimension {d} but side information has {n_dims}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Periodic { dim, period } => {
                if *dim >= n_dims {
                    return Err(Error::Config(format!(
                        "kernel references dimension {dim} but side information has {n_dims}"
                    )));
                }
                if !(*period > 0.0 && period.is_finite()) {
                    return Err(Error::Config(format!("period must be positive, got {period}")));
                }
                Ok(())
            }
            KernelSpec::Product(factors) => {
                if factors.is_empty() {
                    return Err(Error::Config("empty product kernel".into()));
                }
                factors.iter().try_for_each(|f| f.validate(n_dims))
            }
        }
    }

    /// Correlation between two coordinate vectors.
    pub fn correlation(&self, x1: &[f64], x2: &[f64], length_scales: &[f64]) -> f64 {
        match self {
            KernelSpec::Ard { dims } => {
                let sq: f64 = dims
                    .iter()
                    .zip(length_scales)
                    .map(|(&d, l)| {
                        let r = (x1[d] - x2[d]) / l;
                        r * r
                    })
                    .sum();
                (-0.5 * sq).exp()
            }
            KernelSpec::Periodic { dim, period } => {
                corr_periodic(x1[*dim], x2[*dim], length_scales[0], *period)
            }
            KernelSpec::Product(factors) => {
                let mut offset = 0;
                let mut value = 1.0;
                for f in factors {
                    let n = f.n_length_scales();
                    value *= f.correlation(x1, x2, &length_scales[offset..offset + n]);
                    offset += n;
                }
                value
            }
        }
    }
}

/// Length scales for one latent feature on one side, plus the effective
/// off-season length used by the time warp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub length_scales: Vec<f64>,
    pub season_gap_weeks: f64,
}

impl HyperParams {
    pub fn new(length_scales: Vec<f64>, season_gap_weeks: f64) -> Result<Self> {
        if let Some(l) = length_scales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Domain(format!("length scale must be positive, got {l}")));
        }
        if !(season_gap_weeks > 0.0 && season_gap_weeks.is_finite()) {
            return Err(Error::Domain(format!(
                "season gap must be positive, got {season_gap_weeks}"
            )));
        }
        Ok(Self {
            length_scales,
            season_gap_weeks,
        })
    }
}

/// Warp and flatten a set of sites.
pub fn site_coordinates(
    points: &[SideInfo],
    gap: f64,
    cal: &SeasonCalendar,
) -> Result<Vec<Vec<f64>>> {
    points.iter().map(|p| p.coordinates(gap, cal)).collect()
}

/// Correlation matrix over pre-warped coordinates. The diagonal is exactly 1.
pub fn gram_from_coords(coords: &[Vec<f64>], spec: &KernelSpec, length_scales: &[f64]) -> DMatrix<f64> {
    let n = coords.len();
    let mut m = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let c = spec.correlation(&coords[i], &coords[j], length_scales);
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    m
}

/// Correlations between every training coordinate and one test coordinate.
pub fn cross_correlations(
    train: &[Vec<f64>],
    test: &[f64],
    spec: &KernelSpec,
    length_scales: &[f64],
) -> DVector<f64> {
    DVector::from_iterator(
        train.len(),
        train.iter().map(|x| spec.correlation(x, test, length_scales)),
    )
}

/// Correlation matrix over side-information points, warping time first.
pub fn gram(
    points: &[SideInfo],
    spec: &KernelSpec,
    hp: &HyperParams,
    cal: &SeasonCalendar,
) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::Domain("gram matrix needs at least one point".into()));
    }
    spec.validate(points[0].n_dims())?;
    if hp.length_scales.len() != spec.n_length_scales() {
        return Err(Error::Domain(format!(
            "kernel needs {} length scales, got {}",
            spec.n_length_scales(),
            hp.length_scales.len()
        )));
    }
    let coords = site_coordinates(points, hp.season_gap_weeks, cal)?;
    Ok(gram_from_coords(&coords, spec, &hp.length_scales))
}

/// Lower Cholesky factor together with the diagonal jitter it needed.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

/// Cholesky factorization walking up [`JITTER_LADDER`] until it succeeds.
pub fn chol_jitter(m: &DMatrix<f64>) -> Result<JitteredCholesky> {
    if !m.is_square() {
        return Err(Error::Domain(format!(
            "cholesky needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    for &jitter in &JITTER_LADDER {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            let l = chol.unpack();
            if l.iter().all(|v| v.is_finite()) {
                return Ok(JitteredCholesky { l, jitter });
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}
