//! Tiling a pixel region into chips and stitching per-tile maps back.
//!
//! Rule: where tiles overlap, a pixel takes its value from the tile whose
//! centre is nearest in Euclidean pixel distance; exact ties go to the tile
//! listed first (row-major tile order).

use anyhow::{bail, Result};
use serde::Serialize;

/// Origins of `size`-long tiles covering `[start, start + len)` inside `[0, extent)`.
/// Tiles are spread evenly and overlap when `len` is not a multiple of `size`;
/// a region shorter than one tile gets a single tile centred on it.
pub fn axis_origins(start: usize, len: usize, size: usize, extent: usize) -> Result<Vec<usize>> {
    if size > extent {
        bail!("tile size {size} exceeds raster extent {extent}");
    }
    if len == 0 || start + len > extent {
        bail!("region [{start}, {}) does not fit in raster extent {extent}", start + len);
    }
    if len <= size {
        let centred = (start + len / 2).saturating_sub(size / 2);
        return Ok(vec![centred.min(extent - size)]);
    }
    let k = len.div_ceil(size);
    let span = (len - size) as f64;
    Ok((0..k)
        .map(|i| start + (span * i as f64 / (k - 1) as f64).round() as usize)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Tile {
    /// Centre in pixel-index coordinates.
    pub fn center(&self) -> (f64, f64) {
        let h = (self.size as f64 - 1.0) / 2.0;
        (self.row as f64 + h, self.col as f64 + h)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.size && c >= self.col && c < self.col + self.size
    }
}

/// Row-major tiles covering the region `rows x cols` at `(row0, col0)`.
pub fn tile_region(
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
    size: usize,
    extent: (usize, usize),
) -> Result<Vec<Tile>> {
    let rs = axis_origins(row0, rows, size, extent.0)?;
    let cs = axis_origins(col0, cols, size, extent.1)?;
    Ok(rs
        .iter()
        .flat_map(|&row| cs.iter().map(move |&col| Tile { row, col, size }))
        .collect())
}

/// Index of the tile serving raster pixel `(r, c)`, if any covers it.
pub fn owner(tiles: &[Tile], r: usize, c: usize) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, t) in tiles.iter().enumerate() {
        if !t.contains(r, c) {
            continue;
        }
        let (cr, cc) = t.center();
        let d = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Assembles the region from per-tile maps (`size x size`, row-major).
pub fn stitch(tiles: &[Tile], maps: &[Vec<f32>], row0: usize, col0: usize, rows: usize, cols: usize, nodata: f32) -> Vec<f32> {
    let mut out = vec![nodata; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (gr, gc) = (row0 + r, col0 + c);
            if let Some(i) = owner(tiles, gr, gc) {
                let t = tiles[i];
                out[r * cols + c] = maps[i][(gr - t.row) * t.size + (gc - t.col)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origins_cover_and_stay_inside() {
        assert_eq!(axis_origins(10, 100, 64, 200).unwrap(), vec![10, 46]);
        assert_eq!(axis_origins(0, 128, 64, 128).unwrap(), vec![0, 64]);
        assert_eq!(axis_origins(5, 10, 64, 100).unwrap(), vec![0]);
        assert_eq!(axis_origins(90, 10, 64, 100).unwrap(), vec![36]);
        assert!(axis_origins(0, 10, 64, 32).is_err());
    }

    #[test]
    fn nearest_centre_wins() {
        let tiles = [Tile { row: 0, col: 0, size: 4 }, Tile { row: 0, col: 2, size: 4 }];
        // centres at col 1.5 and 3.5; col 2 is nearer the first, col 3 the second
        assert_eq!(owner(&tiles, 0, 2), Some(0));
        assert_eq!(owner(&tiles, 0, 3), Some(1));
        assert_eq!(owner(&tiles, 0, 5), Some(1));
        assert_eq!(owner(&tiles, 5, 0), None);
    }
}
