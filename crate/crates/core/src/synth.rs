//! Synthetic scenes and datasets with known structure, for tests, demos and
//! the `synth` command.

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::{DateRange, ObservationRecord, Provenance, SplitSpec};
use crate::geodata::{GeoError, GeoTransform, RasterStack, DEFAULT_NODATA};
use crate::models::{Example, InputShape};
use crate::num::Scalar;

pub const TEMPORAL_VARIABLES: [&str; 3] = ["soil_moisture", "precipitation", "vegetation_cover"];

fn static_names(s: usize) -> Vec<String> {
    (0..s).map(|i| format!("static_{i:02}")).collect()
}

/// Presence sites on a lattice with a planted moisture pulse of random sign
/// `pulse_days` before each observation. The pulse covers the site's window
/// on the soil moisture layer only; everything else is uniform noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub sites: usize,
    /// Pixels between neighbouring sites.
    pub spacing: usize,
    /// Pixels between the outermost sites and the raster edge.
    pub margin: usize,
    pub history_days: usize,
    /// Observation dates are spread over this many days after the history.
    pub span_days: usize,
    pub static_vars: usize,
    pub noise: f64,
    pub amplitude: f64,
    /// Half-open range of days before the observation carrying the pulse.
    pub pulse_days: (usize, usize),
    /// Side of the square patch carrying the pulse.
    pub pulse_side: usize,
    pub start: NaiveDate,
    pub resolution: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            sites: 120,
            spacing: 10,
            margin: 8,
            history_days: 90,
            span_days: 90,
            static_vars: 17,
            noise: 1.0,
            amplitude: 1.5,
            pulse_days: (30, 60),
            pulse_side: 7,
            start: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            resolution: 0.1,
            origin_lon: 30.0,
            origin_lat: 20.0,
            seed: 0,
        }
    }
}

pub struct PlantedScene {
    pub temporal: RasterStack,
    pub static_: RasterStack,
    pub presences: Vec<ObservationRecord>,
    /// Date ranges splitting the observation span 60/20/20.
    pub splits: SplitSpec,
    /// Sampling box for pseudo-absences that keeps windows inside the raster.
    pub interior: crate::curation::BBox,
}

impl PlantedConfig {
    fn lattice(&self) -> usize {
        (self.sites as f64).sqrt().ceil() as usize
    }

    pub fn grid_side(&self) -> usize {
        2 * self.margin + (self.lattice() - 1) * self.spacing + 1
    }

    pub fn first_obs_date(&self) -> NaiveDate {
        self.start + Days::new(self.history_days as u64)
    }

    pub fn splits(&self) -> SplitSpec {
        let d0 = self.first_obs_date();
        let at = |f: f64| d0 + Days::new((self.span_days as f64 * f).round() as u64);
        let last = d0 + Days::new(self.span_days as u64 - 1);
        let v0 = at(0.6);
        let t0 = at(0.8);
        SplitSpec {
            train: DateRange::new(d0, v0 - Days::new(1)),
            validation: DateRange::new(v0, t0 - Days::new(1)),
            test: DateRange::new(t0, last),
        }
    }
}

fn uniform_noise(rng: &mut ChaCha8Rng, scale: f64) -> f32 {
    // unit variance uniform noise
    (rng.gen_range(-1.0..1.0) * 3f64.sqrt() * scale) as f32
}

pub fn planted_scene(cfg: &PlantedConfig) -> Result<PlantedScene, GeoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let side = cfg.grid_side();
    let gt = GeoTransform::regular(cfg.origin_lon, cfg.origin_lat, cfg.resolution, side, side)?;
    let n_days = cfg.history_days + cfg.span_days;
    let days: Vec<NaiveDate> = (0..n_days).map(|d| cfg.start + Days::new(d as u64)).collect();

    let mut temporal = RasterStack::from_fn(
        gt,
        TEMPORAL_VARIABLES.iter().map(|s| s.to_string()).collect(),
        days,
        DEFAULT_NODATA,
        |_, _, _, _| 0.0,
    )?;
    temporal.values.iter_mut().for_each(|v| *v = uniform_noise(&mut rng, cfg.noise));
    let mut static_ = RasterStack::from_fn(gt, static_names(cfg.static_vars), vec![], DEFAULT_NODATA, |_, _, _, _| 0.0)?;
    static_.values.iter_mut().for_each(|v| *v = uniform_noise(&mut rng, cfg.noise));

    let lattice = cfg.lattice();
    let mut cells: Vec<usize> = (0..lattice * lattice).collect();
    cells.shuffle(&mut rng);
    let half = cfg.pulse_side / 2;
    let mut presences = Vec::with_capacity(cfg.sites);
    for (k, &cell) in cells.iter().take(cfg.sites).enumerate() {
        let row = cfg.margin + (cell / lattice) * cfg.spacing;
        let col = cfg.margin + (cell % lattice) * cfg.spacing;
        let offset = rng.gen_range(0..cfg.span_days);
        let obs = cfg.history_days + offset;
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for back in cfg.pulse_days.0..cfg.pulse_days.1 {
            let t = obs - back;
            for r in row - half..=row + half {
                for c in col - half..=col + half {
                    temporal.values[[0, t, r, c]] += (sign * cfg.amplitude) as f32;
                }
            }
        }
        let (lon, lat) = gt.pixel_to_world(row, col);
        presences.push(ObservationRecord {
            id: format!("site-{k:04}"),
            lon,
            lat,
            obs_date: cfg.start + Days::new(obs as u64),
            label: 1,
            provenance: Provenance::Presence,
            stage: "laying".into(),
            instar: String::new(),
        });
    }
    let (west, north) = gt.pixel_to_world(cfg.margin, cfg.margin);
    let (east, south) = gt.pixel_to_world(side - 1 - cfg.margin, side - 1 - cfg.margin);
    Ok(PlantedScene {
        temporal,
        static_,
        presences,
        splits: cfg.splits(),
        interior: crate::curation::BBox { west, east, south, north },
    })
}

/// Multi-band image scene with a bright disk at every breeding site.
/// Sites sit at random positions inside an interior box where full chips fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChipSceneConfig {
    pub sites: usize,
    pub chip_size: usize,
    /// Scene extent in chips.
    pub tiles_rows: usize,
    pub tiles_cols: usize,
    pub bands: usize,
    pub disk_radius: usize,
    pub amplitude: f64,
    pub noise: f64,
    /// Days between scenes.
    pub revisit_days: usize,
    pub history_days: usize,
    pub span_days: usize,
    pub start: NaiveDate,
    pub resolution: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub seed: u64,
}

impl Default for ChipSceneConfig {
    fn default() -> Self {
        Self {
            sites: 6,
            chip_size: 224,
            tiles_rows: 2,
            tiles_cols: 3,
            bands: 6,
            disk_radius: 8,
            amplitude: 2.0,
            noise: 0.5,
            revisit_days: 10,
            history_days: 90,
            span_days: 30,
            start: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            resolution: 0.0003,
            origin_lon: 30.0,
            origin_lat: 20.0,
            seed: 0,
        }
    }
}

pub struct ChipScene {
    pub image: RasterStack,
    pub presences: Vec<ObservationRecord>,
    pub splits: SplitSpec,
    pub interior: crate::curation::BBox,
}

pub fn chip_scene(cfg: &ChipSceneConfig) -> Result<ChipScene, GeoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = cfg.chip_size;
    let (rows, cols) = (size * cfg.tiles_rows, size * cfg.tiles_cols);
    let gt = GeoTransform::regular(cfg.origin_lon, cfg.origin_lat, cfg.resolution, rows, cols)?;
    let n_days = cfg.history_days + cfg.span_days;
    let dates: Vec<NaiveDate> = (0..n_days.div_ceil(cfg.revisit_days))
        .map(|k| cfg.start + Days::new((k * cfg.revisit_days) as u64))
        .collect();
    let n_scenes = dates.len();
    let names = (0..cfg.bands).map(|b| format!("band_{b}")).collect();
    let mut image = RasterStack::from_fn(gt, names, dates, DEFAULT_NODATA, |_, _, _, _| 0.0)?;
    image.values.iter_mut().for_each(|v| *v = uniform_noise(&mut rng, cfg.noise));

    let half = size / 2;
    let r2 = (cfg.disk_radius * cfg.disk_radius) as isize;
    let rad = cfg.disk_radius as isize;
    let splits = PlantedConfig {
        history_days: cfg.history_days,
        span_days: cfg.span_days,
        start: cfg.start,
        ..PlantedConfig::default()
    }
    .splits();
    let mut presences = Vec::with_capacity(cfg.sites);
    for k in 0..cfg.sites {
        let row = rng.gen_range(half..=rows - half);
        let col = rng.gen_range(half..=cols - half);
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                let (r, c) = (row as isize + dr, col as isize + dc);
                if dr * dr + dc * dc > r2 || r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                    continue;
                }
                for t in 0..n_scenes {
                    for b in 0..cfg.bands {
                        image.values[[b, t, r as usize, c as usize]] += cfg.amplitude as f32;
                    }
                }
            }
        }
        let (lon, lat) = gt.pixel_to_world(row, col);
        let offset = rng.gen_range(0..cfg.span_days);
        presences.push(ObservationRecord {
            id: format!("site-{k:04}"),
            lon,
            lat,
            obs_date: cfg.start + Days::new((cfg.history_days + offset) as u64),
            label: 1,
            provenance: Provenance::Presence,
            stage: "laying".into(),
            instar: String::new(),
        });
    }
    let (west, north) = gt.pixel_to_world(half, half);
    let (east, south) = gt.pixel_to_world(rows - half, cols - half);
    Ok(ChipScene {
        image,
        presences,
        splits,
        interior: crate::curation::BBox { west, east, south, north },
    })
}

/// Balanced point examples whose class shifts the mean of the first temporal
/// variable by `±shift`; uniform unit-variance noise elsewhere.
pub fn class_signal_points<T: Scalar>(input: InputShape, n: usize, shift: f64, seed: u64) -> Vec<Example<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (len, stride) = match input {
        InputShape::Point { v, .. } => (input.len(), v),
        other => (other.len(), 1),
    };
    let temporal = match input {
        InputShape::Point { t, n, v, .. } => t * n * n * v,
        other => other.len(),
    };
    (0..n)
        .map(|i| {
            let label = i % 2;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let x: Vec<T> = (0..len)
                .map(|j| {
                    let base = rng.gen_range(-1.0..1.0) * 3f64.sqrt();
                    let planted = j < temporal && j % stride == 0;
                    T::of(if planted { base + sign * shift } else { base })
                })
                .collect();
            Example::point(format!("s{i:03}"), x, label)
        })
        .collect()
}

/// Balanced chip examples `[t][b][size][size]`. Labelled pixels form a disk
/// of `radius` at the centre; breeding chips carry `+shift` on every band there.
pub fn class_signal_chips<T: Scalar>(
    t: usize,
    b: usize,
    size: usize,
    radius: usize,
    n: usize,
    shift: f64,
    seed: u64,
) -> Vec<Example<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = size as isize / 2;
    let inside = |p: usize| {
        let (r, col) = ((p / size) as isize - c, (p % size) as isize - c);
        r * r + col * col <= (radius * radius) as isize
    };
    (0..n)
        .map(|i| {
            let label = i % 2;
            let x: Vec<T> = (0..t * b * size * size)
                .map(|j| {
                    let noise = rng.gen_range(-0.5..0.5);
                    let bump = if label == 1 && inside(j % (size * size)) { shift } else { 0.0 };
                    T::of(noise + bump)
                })
                .collect();
            let mask = (0..size * size).map(|p| inside(p).then_some(label)).collect();
            Example {
                id: format!("c{i:03}"),
                x: crate::tensorkit::Tensor::from_vec(x),
                label,
                mask: Some(mask),
            }
        })
        .collect()
}
