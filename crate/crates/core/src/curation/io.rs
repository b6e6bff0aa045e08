use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{CurationError, ObservationRecord, Provenance, Split};

const REQUIRED: [&str; 6] = ["id", "lon", "lat", "date", "stage", "instar"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RowRejection {
    /// 1-based line number in the file, counting the header.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ingested {
    pub presences: Vec<ObservationRecord>,
    /// Rows dropped because they could not be parsed.
    pub rejected: Vec<RowRejection>,
    /// Parsed rows that are not breeding reports.
    pub discarded: usize,
}

fn is_breeding(stage: &str, instar: &str) -> bool {
    stage.trim().eq_ignore_ascii_case("laying") || matches!(instar.trim(), "1" | "2")
}

pub fn ingest_presences_from<R: Read>(r: R) -> Result<Ingested, CurationError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CurationError::MissingColumn(name.to_string()))
    };
    let idx: Vec<usize> = REQUIRED.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let get = |k: usize| row.get(idx[k]).unwrap_or("").trim();
        let id = get(0).to_string();
        if !seen.insert(id.clone()) {
            return Err(CurationError::DuplicateId(id));
        }
        let lon: Option<f64> = get(1).parse().ok().filter(|v: &f64| (-180.0..=180.0).contains(v));
        let lat: Option<f64> = get(2).parse().ok().filter(|v: &f64| (-90.0..=90.0).contains(v));
        let date = NaiveDate::parse_from_str(get(3), "%Y-%m-%d").ok();
        let (Some(lon), Some(lat), Some(obs_date)) = (lon, lat, date) else {
            let reason = if lon.is_none() || lat.is_none() {
                format!("unparseable coordinates ({:?}, {:?})", get(1), get(2))
            } else {
                format!("unparseable date {:?}", get(3))
            };
            out.rejected.push(RowRejection { line, reason });
            continue;
        };
        if !is_breeding(get(4), get(5)) {
            out.discarded += 1;
            continue;
        }
        out.presences.push(ObservationRecord {
            id,
            lon,
            lat,
            obs_date,
            label: 1,
            provenance: Provenance::Presence,
            stage: get(4).to_string(),
            instar: get(5).to_string(),
        });
    }
    Ok(out)
}

pub fn ingest_presences(path: &Path) -> Result<Ingested, CurationError> {
    ingest_presences_from(File::open(path)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CuratedRecord {
    pub record: ObservationRecord,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct Row {
    id: String,
    lon: f64,
    lat: f64,
    date: NaiveDate,
    stage: String,
    instar: String,
    label: u8,
    provenance: Provenance,
    split: Split,
}

pub fn write_curated_to<W: Write>(records: &[CuratedRecord], w: W) -> Result<(), CurationError> {
    let mut wtr = csv::Writer::from_writer(w);
    for c in records {
        let r = &c.record;
        wtr.serialize(Row {
            id: r.id.clone(),
            lon: r.lon,
            lat: r.lat,
            date: r.obs_date,
            stage: r.stage.clone(),
            instar: r.instar.clone(),
            label: r.label,
            provenance: r.provenance,
            split: c.split,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_curated(records: &[CuratedRecord], path: &Path) -> Result<(), CurationError> {
    write_curated_to(records, File::create(path)?)
}

pub fn read_curated_from<R: Read>(r: R) -> Result<Vec<CuratedRecord>, CurationError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        out.push(CuratedRecord {
            record: ObservationRecord {
                id: row.id,
                lon: row.lon,
                lat: row.lat,
                obs_date: row.date,
                label: row.label,
                provenance: row.provenance,
                stage: row.stage,
                instar: row.instar,
            },
            split: row.split,
        });
    }
    Ok(out)
}

pub fn read_curated(path: &Path) -> Result<Vec<CuratedRecord>, CurationError> {
    read_curated_from(File::open(path)?)
}
