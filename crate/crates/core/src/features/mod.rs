//! Model-ready samples built from raster stacks: temporal and static blocks,
//! their flattened concatenation, and image chips with point-label masks.

mod lft;
mod pipeline;

use chrono::{Days, NaiveDate};
use ndarray::{s, Array2, Array3, Array4, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::curation::ObservationRecord;
use crate::geodata::{GeoError, RasterStack, Window};

pub use lft::{
    read_feature_set, read_feature_set_from, write_feature_set, write_feature_set_to, FeatureSet,
    FeatureSample, SampleKind,
};
pub use pipeline::{
    featurize_chips, featurize_points, ChipStacks, FeatureManifest, Featurized, Normalization,
    PointStacks, Rejection, SplitFile,
};

/// Mask value for pixels that carry no label.
pub const IGNORE: i8 = -1;

pub const HLS_BANDS: [&str; 6] = ["Blue", "Green", "Red", "Narrow NIR", "SWIR 1", "SWIR 2"];

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("window: {0}")]
    Geo(#[from] GeoError),
    #[error("stack does not cover {start}..={end}")]
    InsufficientHistory { start: NaiveDate, end: NaiveDate },
    #[error("period {period} has no valid observation")]
    MissingTemporal { period: usize },
    #[error("static window contains nodata")]
    MissingStatic,
    #[error("no scene in period {period} ({start}..={end})")]
    MissingPeriod {
        period: usize,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("selected scene for period {period} contains nodata pixels")]
    MissingChipPixels { period: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl FeatureError {
    /// Short machine-readable rejection code.
    pub fn reason(&self) -> &'static str {
        match self {
            FeatureError::Geo(GeoError::WindowClipped { .. }) => "window-clipped",
            FeatureError::Geo(GeoError::OutOfBounds { .. }) => "out-of-bounds",
            FeatureError::Geo(_) => "raster",
            FeatureError::InsufficientHistory { .. } => "insufficient-history",
            FeatureError::MissingTemporal { .. } => "missing-temporal",
            FeatureError::MissingStatic => "missing-static",
            FeatureError::MissingPeriod { .. } => "missing-period",
            FeatureError::MissingChipPixels { .. } => "missing-chip-pixels",
            FeatureError::InvalidConfig(_) => "config",
            FeatureError::Format(_) | FeatureError::Io(_) | FeatureError::Json(_) => "io",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Odd window side on the variable grid.
    pub n: usize,
    pub history_days: usize,
    /// Days averaged into one time step.
    pub period_days: usize,
    pub chip_size: usize,
    pub chip_periods: usize,
    pub chip_period_days: usize,
    /// Pixels within this radius of the chip centre carry the record's label.
    pub label_radius: usize,
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n: 7,
            history_days: 90,
            period_days: 3,
            chip_size: 224,
            chip_periods: 3,
            chip_period_days: 30,
            label_radius: 8,
            normalize: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        if self.n % 2 == 0 || self.n == 0 {
            return bad(format!("window side n={} must be odd", self.n));
        }
        if self.period_days == 0 || self.history_days == 0 || self.history_days % self.period_days != 0 {
            return bad(format!(
                "history_days={} must be a positive multiple of {}",
                self.history_days, self.period_days
            ));
        }
        if self.chip_size == 0 || self.chip_size % 2 != 0 {
            return bad(format!("chip_size={} must be even and positive", self.chip_size));
        }
        if self.chip_periods == 0 || self.chip_period_days == 0 {
            return bad("chip periods must be positive".into());
        }
        Ok(())
    }

    pub fn time_steps(&self) -> usize {
        self.history_days / self.period_days
    }
}

/// Means over consecutive `period`-day groups, skipping nodata days.
/// `None` marks a period in which every day is nodata.
pub fn resample_means(series: &[f64], nodata: f64, period: usize) -> Vec<Option<f64>> {
    series
        .chunks(period)
        .map(|c| {
            let (sum, k) = c
                .iter()
                .filter(|&&v| v != nodata)
                .fold((0.0, 0usize), |(s, k), &v| (s + v, k + 1));
            (k > 0).then(|| sum / k as f64)
        })
        .collect()
}

/// Three-day means of a daily series ending at the observation date.
pub fn resample_3day_means(series: &[f64], nodata: f64) -> Result<Vec<f64>, FeatureError> {
    if series.len() % 3 != 0 {
        return Err(FeatureError::InvalidConfig(format!(
            "{} days is not a multiple of 3",
            series.len()
        )));
    }
    resample_means(series, nodata, 3)
        .into_iter()
        .enumerate()
        .map(|(p, v)| v.ok_or(FeatureError::MissingTemporal { period: p }))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalBlock {
    pub id: String,
    pub variables: Vec<String>,
    /// `[T][n][n][v]`
    pub values: Array4<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaticBlock {
    pub id: String,
    pub variables: Vec<String>,
    /// `[n][n][s]`
    pub values: Array3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatVector {
    pub id: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chip {
    pub id: String,
    pub bands: Vec<String>,
    /// `[t][b][H][W]`
    pub values: Array4<f64>,
    /// `[H][W]`: 0/1 labels or [`IGNORE`].
    pub mask: Array2<i8>,
    /// Date of the scene chosen for each period, oldest first.
    pub scene_dates: Vec<NaiveDate>,
}

fn window_for(
    stack: &RasterStack,
    record: &ObservationRecord,
    n: usize,
) -> Result<Window, FeatureError> {
    let (r, c) = stack.transform.world_to_pixel(record.lon, record.lat)?;
    Ok(Window::with_side(r, c, n)?)
}

pub fn build_temporal_block(
    record: &ObservationRecord,
    stack: &RasterStack,
    cfg: &FeatureConfig,
) -> Result<TemporalBlock, FeatureError> {
    cfg.validate()?;
    let end = record.obs_date;
    let start = end - Days::new(cfg.history_days as u64 - 1);
    let covered = match (stack.timestamps.first(), stack.timestamps.last()) {
        (Some(&a), Some(&b)) => a <= start && b >= end,
        _ => false,
    };
    if !covered {
        return Err(FeatureError::InsufficientHistory { start, end });
    }
    let w = window_for(stack, record, cfg.n)?;
    let lo = stack.timestamps.partition_point(|&d| d < start);
    let hi = stack.timestamps.partition_point(|&d| d <= end);
    let win = stack.extract_window(&w, lo..hi)?;
    let (n, nv) = (cfg.n, stack.variables.len());
    let nodata = stack.nodata as f64;

    // day offset within history for each extracted slice
    let day_slot: Vec<usize> = stack.timestamps[lo..hi]
        .iter()
        .map(|&d| (d - start).num_days() as usize)
        .collect();
    let t = cfg.time_steps();
    let mut values = Array4::zeros((t, n, n, nv));
    let mut series = vec![nodata; cfg.history_days];
    for i in 0..n {
        for j in 0..n {
            for v in 0..nv {
                series.fill(nodata);
                for (k, &slot) in day_slot.iter().enumerate() {
                    series[slot] = win[[k, i, j, v]] as f64;
                }
                for (p, m) in resample_means(&series, nodata, cfg.period_days)
                    .into_iter()
                    .enumerate()
                {
                    values[[p, i, j, v]] = m.ok_or(FeatureError::MissingTemporal { period: p })?;
                }
            }
        }
    }
    Ok(TemporalBlock {
        id: record.id.clone(),
        variables: stack.variables.clone(),
        values,
    })
}

pub fn build_static_block(
    record: &ObservationRecord,
    stack: &RasterStack,
    cfg: &FeatureConfig,
) -> Result<StaticBlock, FeatureError> {
    cfg.validate()?;
    let w = window_for(stack, record, cfg.n)?;
    let win = stack.extract_window(&w, 0..1)?;
    if win.iter().any(|&v| stack.is_nodata(v)) {
        return Err(FeatureError::MissingStatic);
    }
    let values = win.index_axis(ndarray::Axis(0), 0).mapv(|v| v as f64);
    Ok(StaticBlock {
        id: record.id.clone(),
        variables: stack.variables.clone(),
        values,
    })
}

/// Row-major flatten of the temporal block followed by the static block.
pub fn flatten_concat(tb: &TemporalBlock, sb: &StaticBlock) -> FlatVector {
    let mut values = Vec::with_capacity(tb.values.len() + sb.values.len());
    values.extend(tb.values.iter());
    values.extend(sb.values.iter());
    FlatVector {
        id: tb.id.clone(),
        values,
    }
}

/// Inverse of [`flatten_concat`] for the given block shapes.
pub fn unflatten(
    flat: &[f64],
    temporal: [usize; 4],
    static_: [usize; 3],
) -> Result<(Array4<f64>, Array3<f64>), FeatureError> {
    let nt: usize = temporal.iter().product();
    let ns: usize = static_.iter().product();
    if flat.len() != nt + ns {
        return Err(FeatureError::Format(format!(
            "flat length {} != {} + {}",
            flat.len(),
            nt,
            ns
        )));
    }
    let t = Array4::from_shape_vec(temporal, flat[..nt].to_vec())
        .map_err(|e| FeatureError::Format(e.to_string()))?;
    let s = Array3::from_shape_vec(static_, flat[nt..].to_vec())
        .map_err(|e| FeatureError::Format(e.to_string()))?;
    Ok((t, s))
}

/// Disk mask of `radius` pixels around the centre `(size/2, size/2)`.
pub fn label_mask(size: usize, radius: usize, label: u8) -> Array2<i8> {
    let c = (size / 2) as i64;
    let r2 = (radius * radius) as i64;
    Array2::from_shape_fn((size, size), |(i, j)| {
        let (di, dj) = (i as i64 - c, j as i64 - c);
        if di * di + dj * dj <= r2 {
            label as i8
        } else {
            IGNORE
        }
    })
}

/// `(start, end)` of each chip period, oldest first; periods are consecutive
/// windows of `chip_period_days` ending at `obs_date`.
pub fn chip_periods(obs_date: NaiveDate, cfg: &FeatureConfig) -> Vec<(NaiveDate, NaiveDate)> {
    let len = cfg.chip_period_days as u64;
    (0..cfg.chip_periods as u64)
        .rev()
        .map(|k| {
            let end = obs_date - Days::new(k * len);
            (end - Days::new(len - 1), end)
        })
        .collect()
}

pub fn build_chip(
    record: &ObservationRecord,
    stack: &RasterStack,
    cfg: &FeatureConfig,
) -> Result<Chip, FeatureError> {
    cfg.validate()?;
    let size = cfg.chip_size;
    let half = size / 2;
    let gt = &stack.transform;
    let (r, c) = gt.world_to_pixel(record.lon, record.lat)?;
    let fits = r >= half && c >= half && r + half <= gt.n_rows && c + half <= gt.n_cols;
    if !fits {
        return Err(GeoError::WindowClipped {
            row: r,
            col: c,
            half_width: half,
            n_rows: gt.n_rows,
            n_cols: gt.n_cols,
        }
        .into());
    }
    let (r0, c0) = (r - half, c - half);
    let nb = stack.variables.len();
    let mut values = Array4::zeros((cfg.chip_periods, nb, size, size));
    let mut scene_dates = Vec::with_capacity(cfg.chip_periods);
    for (p, (start, end)) in chip_periods(record.obs_date, cfg).into_iter().enumerate() {
        let lo = stack.timestamps.partition_point(|&d| d < start);
        let hi = stack.timestamps.partition_point(|&d| d <= end);
        let crop = |t: usize| -> ArrayView4<f32> {
            stack
                .values
                .slice(s![.., t..t + 1, r0..r0 + size, c0..c0 + size])
        };
        // fewest nodata pixels, ties to the latest scene
        let best = (lo..hi)
            .map(|t| (crop(t).iter().filter(|&&v| stack.is_nodata(v)).count(), t))
            .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
            .ok_or(FeatureError::MissingPeriod {
                period: p,
                start,
                end,
            })?;
        if best.0 > 0 {
            return Err(FeatureError::MissingChipPixels { period: p });
        }
        let scene = crop(best.1);
        for b in 0..nb {
            values
                .slice_mut(s![p, b, .., ..])
                .assign(&scene.slice(s![b, 0, .., ..]).mapv(|v| v as f64));
        }
        scene_dates.push(stack.timestamps[best.1]);
    }
    Ok(Chip {
        id: record.id.clone(),
        bands: stack.variables.clone(),
        values,
        mask: label_mask(size, cfg.label_radius, record.label),
        scene_dates,
    })
}
