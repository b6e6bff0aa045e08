//! Georeferenced raster stacks on a regular lon/lat grid.
//!
//! Rows run north to south: row 0 is the northernmost row and the origin is
//! the north-west corner of cell (0, 0).

mod lgrs;

use std::ops::Range;

use chrono::NaiveDate;
use ndarray::{s, Array4};

pub use lgrs::{fnv1a64, read_stack, read_stack_from, write_stack, write_stack_to};
pub(crate) use lgrs::{parse_header, HeaderMap};

pub const DEFAULT_RESOLUTION: f64 = 0.1;
pub const DEFAULT_NODATA: f32 = -9999.0;

#[derive(Debug, thiserror::Error)]
pub enum GeoError {
    #[error("invalid geotransform: {0}")]
    InvalidTransform(String),
    #[error("coordinate ({lon}, {lat}) is outside the raster footprint")]
    OutOfBounds { lon: f64, lat: f64 },
    #[error("window at row {row}, col {col} with half width {half_width} leaves the {n_rows}x{n_cols} raster")]
    WindowClipped {
        row: usize,
        col: usize,
        half_width: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("time slice {start}..{end} outside {len} timestamps")]
    TimeOutOfRange { start: usize, end: usize, len: usize },
    #[error("invalid raster stack: {0}")]
    InvalidStack(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("extent mismatch: expected {expected} payload values, found {found}")]
    ExtentMismatch { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoTransform {
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub pixel_size_lon: f64,
    /// Applied southward from `origin_lat`.
    pub pixel_size_lat: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl GeoTransform {
    pub fn new(
        origin_lon: f64,
        origin_lat: f64,
        pixel_size_lon: f64,
        pixel_size_lat: f64,
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self, GeoError> {
        let gt = Self {
            origin_lon,
            origin_lat,
            pixel_size_lon,
            pixel_size_lat,
            n_rows,
            n_cols,
        };
        gt.validate()?;
        Ok(gt)
    }

    /// Square cells of `resolution` degrees.
    pub fn regular(
        origin_lon: f64,
        origin_lat: f64,
        resolution: f64,
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self, GeoError> {
        Self::new(origin_lon, origin_lat, resolution, resolution, n_rows, n_cols)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let finite = [
            self.origin_lon,
            self.origin_lat,
            self.pixel_size_lon,
            self.pixel_size_lat,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(GeoError::InvalidTransform("non-finite field".into()));
        }
        if self.pixel_size_lon <= 0.0 || self.pixel_size_lat <= 0.0 {
            return Err(GeoError::InvalidTransform(format!(
                "pixel sizes must be positive, got {} x {}",
                self.pixel_size_lon, self.pixel_size_lat
            )));
        }
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(GeoError::InvalidTransform(format!(
                "empty grid {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        Ok(())
    }

    pub fn world_to_pixel(&self, lon: f64, lat: f64) -> Result<(usize, usize), GeoError> {
        let c = ((lon - self.origin_lon) / self.pixel_size_lon).floor();
        let r = ((self.origin_lat - lat) / self.pixel_size_lat).floor();
        if !(c >= 0.0 && r >= 0.0 && c < self.n_cols as f64 && r < self.n_rows as f64) {
            return Err(GeoError::OutOfBounds { lon, lat });
        }
        Ok((r as usize, c as usize))
    }

    /// Centre of cell `(row, col)` as `(lon, lat)`.
    pub fn pixel_to_world(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_lon + (col as f64 + 0.5) * self.pixel_size_lon,
            self.origin_lat - (row as f64 + 0.5) * self.pixel_size_lat,
        )
    }

    /// Bounds of cell `(row, col)` as `(west, east, south, north)`.
    pub fn cell_bounds(&self, row: usize, col: usize) -> (f64, f64, f64, f64) {
        let west = self.origin_lon + col as f64 * self.pixel_size_lon;
        let north = self.origin_lat - row as f64 * self.pixel_size_lat;
        (
            west,
            west + self.pixel_size_lon,
            north - self.pixel_size_lat,
            north,
        )
    }

    /// Footprint as `(west, east, south, north)`.
    pub fn footprint(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_lon,
            self.origin_lon + self.n_cols as f64 * self.pixel_size_lon,
            self.origin_lat - self.n_rows as f64 * self.pixel_size_lat,
            self.origin_lat,
        )
    }

    /// Transform of the sub-grid starting at `(row, col)`.
    pub fn subgrid(&self, row: usize, col: usize, n_rows: usize, n_cols: usize) -> Self {
        Self {
            origin_lon: self.origin_lon + col as f64 * self.pixel_size_lon,
            origin_lat: self.origin_lat - row as f64 * self.pixel_size_lat,
            n_rows,
            n_cols,
            ..*self
        }
    }
}

/// An odd `n x n` window centred on a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub center_row: usize,
    pub center_col: usize,
    pub half_width: usize,
}

impl Window {
    pub fn new(center_row: usize, center_col: usize, half_width: usize) -> Self {
        Self {
            center_row,
            center_col,
            half_width,
        }
    }

    /// Window of odd side `n`.
    pub fn with_side(center_row: usize, center_col: usize, n: usize) -> Result<Self, GeoError> {
        if n % 2 == 0 {
            return Err(GeoError::InvalidStack(format!("window side {n} is not odd")));
        }
        Ok(Self::new(center_row, center_col, n / 2))
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    /// Top-left cell, or `WindowClipped` if any cell leaves an `n_rows x n_cols` grid.
    pub fn origin_in(&self, n_rows: usize, n_cols: usize) -> Result<(usize, usize), GeoError> {
        let hw = self.half_width;
        let fits = self.center_row >= hw
            && self.center_col >= hw
            && self.center_row + hw < n_rows
            && self.center_col + hw < n_cols;
        if !fits {
            return Err(GeoError::WindowClipped {
                row: self.center_row,
                col: self.center_col,
                half_width: hw,
                n_rows,
                n_cols,
            });
        }
        Ok((self.center_row - hw, self.center_col - hw))
    }
}

/// Variables x time x rows x cols cube on a [`GeoTransform`].
#[derive(Clone, Debug, PartialEq)]
pub struct RasterStack {
    pub transform: GeoTransform,
    pub variables: Vec<String>,
    /// Empty for static stacks, whose time extent is 1.
    pub timestamps: Vec<NaiveDate>,
    pub values: Array4<f32>,
    pub nodata: f32,
}

impl RasterStack {
    pub fn new(
        transform: GeoTransform,
        variables: Vec<String>,
        timestamps: Vec<NaiveDate>,
        values: Array4<f32>,
        nodata: f32,
    ) -> Result<Self, GeoError> {
        let rs = Self {
            transform,
            variables,
            timestamps,
            values,
            nodata,
        };
        rs.validate()?;
        Ok(rs)
    }

    /// Builds a stack by evaluating `f(var, time, row, col)`.
    pub fn from_fn(
        transform: GeoTransform,
        variables: Vec<String>,
        timestamps: Vec<NaiveDate>,
        nodata: f32,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self, GeoError> {
        let nt = timestamps.len().max(1);
        let shape = (variables.len(), nt, transform.n_rows, transform.n_cols);
        let values = Array4::from_shape_fn(shape, |(v, t, r, c)| f(v, t, r, c));
        Self::new(transform, variables, timestamps, values, nodata)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        self.transform.validate()?;
        let expected = (
            self.variables.len(),
            self.n_times(),
            self.transform.n_rows,
            self.transform.n_cols,
        );
        if self.values.dim() != expected {
            return Err(GeoError::InvalidStack(format!(
                "array extents {:?} disagree with declared {:?}",
                self.values.dim(),
                expected
            )));
        }
        if self.variables.is_empty() {
            return Err(GeoError::InvalidStack("no variables".into()));
        }
        if self.timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GeoError::InvalidStack(
                "timestamps are not strictly increasing".into(),
            ));
        }
        if let Some(bad) = self
            .values
            .iter()
            .find(|v| !v.is_finite() && **v != self.nodata)
        {
            return Err(GeoError::InvalidStack(format!("non-finite value {bad}")));
        }
        Ok(())
    }

    pub fn is_static(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Time extent of the value array (1 for static stacks).
    pub fn n_times(&self) -> usize {
        self.timestamps.len().max(1)
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn time_index(&self, date: NaiveDate) -> Option<usize> {
        self.timestamps.binary_search(&date).ok()
    }

    pub fn is_nodata(&self, v: f32) -> bool {
        v == self.nodata
    }

    /// Window values as `[time][n][n][variable]` for the given time indices.
    pub fn extract_window(
        &self,
        w: &Window,
        time_slice: Range<usize>,
    ) -> Result<Array4<f32>, GeoError> {
        let nt = self.n_times();
        if time_slice.start > time_slice.end || time_slice.end > nt {
            return Err(GeoError::TimeOutOfRange {
                start: time_slice.start,
                end: time_slice.end,
                len: nt,
            });
        }
        let (r0, c0) = w.origin_in(self.transform.n_rows, self.transform.n_cols)?;
        let n = w.side();
        let view = self
            .values
            .slice(s![.., time_slice, r0..r0 + n, c0..c0 + n]);
        Ok(view.permuted_axes([1, 2, 3, 0]).as_standard_layout().into_owned())
    }
}
