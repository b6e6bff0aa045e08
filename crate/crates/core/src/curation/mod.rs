//! Presence ingestion, buffered pseudo-absence sampling and chronological splits.

mod io;

use std::collections::HashSet;
use std::fmt;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{
    ingest_presences, ingest_presences_from, read_curated, read_curated_from, write_curated,
    write_curated_to, CuratedRecord, Ingested, RowRejection,
};

/// Kilometres per degree of great-circle arc.
pub const KM_PER_DEGREE: f64 = 111.32;
/// Sphere radius for which one degree of arc is exactly [`KM_PER_DEGREE`].
pub const EARTH_RADIUS_KM: f64 = KM_PER_DEGREE * 180.0 / std::f64::consts::PI;

/// Consecutive rejected draws tolerated before sampling is declared infeasible.
pub const MAX_CONSECUTIVE_REJECTIONS: u64 = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("missing required column '{0}'")]
    MissingColumn(String),
    #[error("duplicate record id '{0}'")]
    DuplicateId(String),
    #[error("no presence records")]
    NoPresences,
    #[error("invalid curation config: {0}")]
    InvalidConfig(String),
    #[error("pseudo-absence sampling gave up after {attempts} consecutive rejections; buffer too large for the sampling box")]
    Feasibility { attempts: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Presence,
    PseudoAbsence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub obs_date: NaiveDate,
    /// 1 = breeding, 0 = non-breeding.
    pub label: u8,
    pub provenance: Provenance,
    /// Report fields carried through from the source CSV; empty for pseudo-absences.
    pub stage: String,
    pub instar: String,
}

/// Closed date interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: DateRange::new(ymd(2020, 1, 1), ymd(2021, 4, 21)),
            validation: DateRange::new(ymd(2021, 4, 22), ymd(2021, 7, 9)),
            test: DateRange::new(ymd(2021, 7, 10), ymd(2023, 7, 30)),
        }
    }
}

impl SplitSpec {
    pub fn range(&self, s: Split) -> DateRange {
        match s {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|d| d.start > d.end) {
            return Err(CurationError::InvalidConfig("split range ends before it starts".into()));
        }
        if r[0].end >= r[1].start || r[1].end >= r[2].start {
            return Err(CurationError::InvalidConfig(
                "split ranges must be disjoint and chronological".into(),
            ));
        }
        Ok(())
    }

    pub fn split_of(&self, d: NaiveDate) -> Option<Split> {
        Split::ALL.into_iter().find(|&s| self.range(s).contains(d))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub west: f64,
    pub east: f64,
    pub south: f64,
    pub north: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    /// Degrees of great-circle arc.
    pub buffer_radius: f64,
    pub sampling_bbox: BBox,
    pub ratio: f64,
    pub rng_seed: u64,
}

impl CurationConfig {
    pub fn new(sampling_bbox: BBox, rng_seed: u64) -> Self {
        Self {
            buffer_radius: 0.2,
            sampling_bbox,
            ratio: 1.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        let b = &self.sampling_bbox;
        if !(self.buffer_radius > 0.0) {
            return Err(CurationError::InvalidConfig("buffer_radius must be > 0".into()));
        }
        if !(self.ratio > 0.0) {
            return Err(CurationError::InvalidConfig("ratio must be > 0".into()));
        }
        let inside = (-180.0..=180.0).contains(&b.west)
            && (-180.0..=180.0).contains(&b.east)
            && (-90.0..=90.0).contains(&b.south)
            && (-90.0..=90.0).contains(&b.north);
        if !(inside && b.west < b.east && b.south < b.north) {
            return Err(CurationError::InvalidConfig(format!("degenerate sampling box {b:?}")));
        }
        Ok(())
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Great-circle distance expressed in degrees of arc.
pub fn distance_degrees(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    haversine_km(lon1, lat1, lon2, lat2) / KM_PER_DEGREE
}

pub fn pseudo_absence_count(n_presences: usize, ratio: f64) -> usize {
    (ratio * n_presences as f64).ceil() as usize
}

/// Samples `ceil(ratio * |presences|)` pseudo-absences uniformly over the box,
/// each farther than `buffer_radius` from every presence. Dates are copied
/// from presences through shuffled passes over the presence list, so every
/// presence date is reused equally often.
pub fn generate_pseudo_absences(
    presences: &[ObservationRecord],
    cfg: &CurationConfig,
) -> Result<Vec<ObservationRecord>, CurationError> {
    cfg.validate()?;
    if presences.is_empty() {
        return Err(CurationError::NoPresences);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let count = pseudo_absence_count(presences.len(), cfg.ratio);
    let taken: HashSet<&str> = presences.iter().map(|p| p.id.as_str()).collect();
    let buffer_km = cfg.buffer_radius * KM_PER_DEGREE;
    let b = cfg.sampling_bbox;

    // Presences sorted by latitude so distant ones are skipped by a band test.
    let mut pts: Vec<(f64, f64)> = presences.iter().map(|p| (p.lat, p.lon)).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    let too_close = |lon: f64, lat: f64| {
        let lo = pts.partition_point(|p| p.0 < lat - cfg.buffer_radius);
        pts[lo..]
            .iter()
            .take_while(|p| p.0 <= lat + cfg.buffer_radius)
            .any(|&(plat, plon)| haversine_km(lon, lat, plon, plat) <= buffer_km)
    };

    let mut order: Vec<usize> = (0..presences.len()).collect();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        if k % presences.len() == 0 {
            order.shuffle(&mut rng);
        }
        let date = presences[order[k % presences.len()]].obs_date;
        let mut rejections = 0u64;
        let (lon, lat) = loop {
            let lon = rng.gen_range(b.west..b.east);
            let lat = rng.gen_range(b.south..b.north);
            if !too_close(lon, lat) {
                break (lon, lat);
            }
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(CurationError::Feasibility {
                    attempts: rejections,
                });
            }
        };
        let id = format!("pa-{k:06}");
        if taken.contains(id.as_str()) {
            return Err(CurationError::DuplicateId(id));
        }
        out.push(ObservationRecord {
            id,
            lon,
            lat,
            obs_date: date,
            label: 0,
            provenance: Provenance::PseudoAbsence,
            stage: String::new(),
            instar: String::new(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitAssignment {
    pub train: Vec<ObservationRecord>,
    pub validation: Vec<ObservationRecord>,
    pub test: Vec<ObservationRecord>,
    /// `(record id, reason)` for records outside every range.
    pub rejected: Vec<(String, String)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub breeding: usize,
    pub non_breeding: usize,
}

impl SplitAssignment {
    pub fn get(&self, s: Split) -> &[ObservationRecord] {
        match s {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn counts(&self, s: Split) -> ClassCounts {
        let recs = self.get(s);
        let breeding = recs.iter().filter(|r| r.label == 1).count();
        ClassCounts {
            breeding,
            non_breeding: recs.len() - breeding,
        }
    }

    /// Records tagged with their split, in train, validation, test order.
    pub fn curated(&self) -> Vec<CuratedRecord> {
        Split::ALL
            .into_iter()
            .flat_map(|s| {
                self.get(s).iter().map(move |r| CuratedRecord {
                    record: r.clone(),
                    split: s,
                })
            })
            .collect()
    }
}

/// Partitions records by date; records outside every range are listed in `rejected`.
pub fn assign_splits(records: &[ObservationRecord], spec: &SplitSpec) -> SplitAssignment {
    let mut out = SplitAssignment::default();
    for r in records {
        match spec.split_of(r.obs_date) {
            Some(Split::Train) => out.train.push(r.clone()),
            Some(Split::Validation) => out.validation.push(r.clone()),
            Some(Split::Test) => out.test.push(r.clone()),
            None => out
                .rejected
                .push((r.id.clone(), format!("date {} outside every split", r.obs_date))),
        }
    }
    out
}

/// One row of the per-split summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub breeding: usize,
    pub non_breeding: usize,
}

pub fn summarize(a: &SplitAssignment, spec: &SplitSpec) -> Vec<SplitSummary> {
    Split::ALL
        .into_iter()
        .map(|s| {
            let c = a.counts(s);
            let r = spec.range(s);
            SplitSummary {
                split: s,
                start: r.start,
                end: r.end,
                breeding: c.breeding,
                non_breeding: c.non_breeding,
            }
        })
        .collect()
}
