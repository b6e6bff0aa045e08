//! `.lft` feature files: `LFT1` header of `key=value` lines and a blank line,
//! an index table (u32 id length, id bytes, u64 value offset, u8 label), the
//! little-endian `f32` payload of every sample (values then mask), and a
//! trailing u64 FNV-1a checksum over index and payload bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::geodata::{fnv1a64, parse_header, HeaderMap};

const MAGIC: &str = "LFT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// Flattened temporal + static blocks.
    Point,
    /// Flattened `[t][b][H][W]` chip plus a per-pixel mask.
    Chip,
}

impl SampleKind {
    fn as_str(self) -> &'static str {
        match self {
            SampleKind::Point => "point",
            SampleKind::Chip => "chip",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSample {
    pub id: String,
    pub label: u8,
    pub values: Vec<f32>,
    /// Empty for point samples; otherwise 0/1 or -1 (ignore) per pixel.
    pub mask: Vec<i8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub kind: SampleKind,
    pub sample_len: usize,
    pub mask_len: usize,
    pub samples: Vec<FeatureSample>,
}

impl FeatureSet {
    pub fn new(kind: SampleKind, sample_len: usize, mask_len: usize) -> Self {
        Self {
            kind,
            sample_len,
            mask_len,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn fmt_err(m: impl Into<String>) -> FeatureError {
    FeatureError::Format(m.into())
}

pub fn write_feature_set_to<W: Write>(fs: &FeatureSet, w: &mut W) -> Result<(), FeatureError> {
    let stride = fs.sample_len + fs.mask_len;
    let mut body = Vec::new();
    for (i, s) in fs.samples.iter().enumerate() {
        if s.values.len() != fs.sample_len || s.mask.len() != fs.mask_len {
            return Err(fmt_err(format!("sample '{}' has the wrong length", s.id)));
        }
        body.extend_from_slice(&(s.id.len() as u32).to_le_bytes());
        body.extend_from_slice(s.id.as_bytes());
        body.extend_from_slice(&((i * stride) as u64).to_le_bytes());
        body.push(s.label);
    }
    for s in &fs.samples {
        for v in &s.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        for &m in &s.mask {
            body.extend_from_slice(&(m as f32).to_le_bytes());
        }
    }
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "kind={}", fs.kind.as_str())?;
    writeln!(w, "sample_len={}", fs.sample_len)?;
    writeln!(w, "mask_len={}", fs.mask_len)?;
    writeln!(w, "count={}", fs.samples.len())?;
    writeln!(w)?;
    w.write_all(&body)?;
    w.write_all(&fnv1a64(&body).to_le_bytes())?;
    Ok(())
}

pub fn write_feature_set(fs: &FeatureSet, path: &Path) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_feature_set_to(fs, &mut w)?;
    w.flush()?;
    Ok(())
}

fn num(h: &HeaderMap, key: &str) -> Result<usize, FeatureError> {
    h.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| fmt_err(format!("missing or bad header key {key}")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FeatureError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| fmt_err("truncated index"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn read_feature_set_from<R: BufRead>(r: &mut R) -> Result<FeatureSet, FeatureError> {
    let h = parse_header(r, MAGIC).map_err(|e| fmt_err(e.to_string()))?;
    let kind = match h.get("kind").map(String::as_str) {
        Some("point") => SampleKind::Point,
        Some("chip") => SampleKind::Chip,
        other => return Err(fmt_err(format!("unknown kind {other:?}"))),
    };
    let (sample_len, mask_len, count) = (num(&h, "sample_len")?, num(&h, "mask_len")?, num(&h, "count")?);
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() < 8 {
        return Err(fmt_err("missing checksum"));
    }
    let (body, tail) = rest.split_at(rest.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if stored != fnv1a64(body) {
        return Err(fmt_err("checksum mismatch"));
    }
    let mut cur = Cursor { buf: body, pos: 0 };
    let mut index = Vec::with_capacity(count);
    for _ in 0..count {
        let n = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
        let id = String::from_utf8(cur.take(n)?.to_vec()).map_err(|_| fmt_err("id is not utf-8"))?;
        let off = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
        let label = cur.take(1)?[0];
        index.push((id, off, label));
    }
    let payload = &body[cur.pos..];
    let stride = sample_len + mask_len;
    if payload.len() != count * stride * 4 {
        return Err(fmt_err(format!(
            "payload holds {} values, expected {}",
            payload.len() / 4,
            count * stride
        )));
    }
    let value = |i: usize| f32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let mut samples = Vec::with_capacity(count);
    for (id, off, label) in index {
        if off + stride > count * stride {
            return Err(fmt_err(format!("offset of '{id}' out of range")));
        }
        samples.push(FeatureSample {
            id,
            label,
            values: (off..off + sample_len).map(value).collect(),
            mask: (off + sample_len..off + stride).map(|i| value(i) as i8).collect(),
        });
    }
    Ok(FeatureSet {
        kind,
        sample_len,
        mask_len,
        samples,
    })
}

pub fn read_feature_set(path: &Path) -> Result<FeatureSet, FeatureError> {
    read_feature_set_from(&mut BufReader::new(File::open(path)?))
}
