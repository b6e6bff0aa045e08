//! LGRS stack files: ASCII `key=value` header, blank line, little-endian
//! `f32` payload in `[variable][time][row][col]` order, then a `u64` FNV-1a
//! checksum of the payload bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use fnv::FnvHasher;
use ndarray::Array4;

use super::{GeoError, GeoTransform, RasterStack};

const MAGIC: &str = "LGRS1";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub(crate) type HeaderMap = BTreeMap<String, String>;

/// Reads the magic line and `key=value` lines up to the blank separator.
pub(crate) fn parse_header<R: BufRead>(r: &mut R, magic: &str) -> Result<HeaderMap, GeoError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end_matches('\n') != magic {
        return Err(GeoError::MalformedHeader(format!(
            "expected magic {magic}, found {:?}",
            line.trim_end()
        )));
    }
    let mut map = HeaderMap::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(GeoError::MalformedHeader("missing blank separator line".into()));
        }
        let l = line.trim_end_matches('\n');
        if l.is_empty() {
            return Ok(map);
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| GeoError::MalformedHeader(format!("line without '=': {l:?}")))?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(GeoError::MalformedHeader(format!("duplicate key {k}")));
        }
    }
}

fn field<'a>(h: &'a HeaderMap, key: &str) -> Result<&'a str, GeoError> {
    h.get(key)
        .map(String::as_str)
        .ok_or_else(|| GeoError::MalformedHeader(format!("missing key {key}")))
}

fn parse<T: std::str::FromStr>(h: &HeaderMap, key: &str) -> Result<T, GeoError> {
    let v = field(h, key)?;
    v.parse()
        .map_err(|_| GeoError::MalformedHeader(format!("bad value for {key}: {v:?}")))
}

fn list(v: &str) -> Vec<&str> {
    if v.is_empty() {
        Vec::new()
    } else {
        v.split(',').collect()
    }
}

pub fn write_stack_to<W: Write>(rs: &RasterStack, w: &mut W) -> Result<(), GeoError> {
    rs.validate()?;
    let t = &rs.transform;
    let stamps: Vec<String> = rs.timestamps.iter().map(|d| d.to_string()).collect();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "origin_lon={}", t.origin_lon)?;
    writeln!(w, "origin_lat={}", t.origin_lat)?;
    writeln!(w, "pixel_size_lon={}", t.pixel_size_lon)?;
    writeln!(w, "pixel_size_lat={}", t.pixel_size_lat)?;
    writeln!(w, "n_rows={}", t.n_rows)?;
    writeln!(w, "n_cols={}", t.n_cols)?;
    writeln!(w, "variables={}", rs.variables.join(","))?;
    writeln!(w, "timestamps={}", stamps.join(","))?;
    writeln!(w, "nodata={}", rs.nodata)?;
    writeln!(w, "elements={}", rs.values.len())?;
    writeln!(w)?;
    let mut payload = Vec::with_capacity(rs.values.len() * 4);
    for v in rs.values.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    w.write_all(&fnv1a64(&payload).to_le_bytes())?;
    Ok(())
}

pub fn write_stack(rs: &RasterStack, path: &Path) -> Result<(), GeoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stack_to(rs, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_stack_from<R: BufRead>(r: &mut R) -> Result<RasterStack, GeoError> {
    let h = parse_header(r, MAGIC)?;
    let transform = GeoTransform {
        origin_lon: parse(&h, "origin_lon")?,
        origin_lat: parse(&h, "origin_lat")?,
        pixel_size_lon: parse(&h, "pixel_size_lon")?,
        pixel_size_lat: parse(&h, "pixel_size_lat")?,
        n_rows: parse(&h, "n_rows")?,
        n_cols: parse(&h, "n_cols")?,
    };
    transform
        .validate()
        .map_err(|e| GeoError::MalformedHeader(e.to_string()))?;
    let variables: Vec<String> = list(field(&h, "variables")?)
        .into_iter()
        .map(String::from)
        .collect();
    let timestamps = list(field(&h, "timestamps")?)
        .into_iter()
        .map(|s| {
            s.parse::<NaiveDate>()
                .map_err(|_| GeoError::MalformedHeader(format!("bad timestamp {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let nodata: f32 = parse(&h, "nodata")?;
    let elements: usize = parse(&h, "elements")?;
    let dims = (
        variables.len(),
        timestamps.len().max(1),
        transform.n_rows,
        transform.n_cols,
    );
    let declared = dims.0 * dims.1 * dims.2 * dims.3;
    if declared != elements {
        return Err(GeoError::ExtentMismatch {
            expected: declared,
            found: elements,
        });
    }

    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() < 8 || (rest.len() - 8) % 4 != 0 || (rest.len() - 8) / 4 != elements {
        return Err(GeoError::ExtentMismatch {
            expected: elements,
            found: rest.len().saturating_sub(8) / 4,
        });
    }
    let (payload, tail) = rest.split_at(rest.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(GeoError::ChecksumMismatch { stored, computed });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let values = Array4::from_shape_vec(dims, data)
        .map_err(|e| GeoError::InvalidStack(e.to_string()))?;
    RasterStack::new(transform, variables, timestamps, values, nodata)
}

pub fn read_stack(path: &Path) -> Result<RasterStack, GeoError> {
    read_stack_from(&mut BufReader::new(File::open(path)?))
}
