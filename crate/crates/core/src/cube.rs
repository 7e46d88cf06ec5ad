//! Time-series cubes, label rasters, QA masks, and their on-disk formats.
//!
//! A [`TimeSeriesCube`] stacks per-band, per-date raster planes with the
//! payload ordered `[band][time][row][col]`. Missing observations are quiet
//! NaNs so they propagate through index math and get filled by smoothing.
//! Cubes are immutable once loaded; share them freely across threads.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::wire;

/// Class code for anything that is not corn or soybean.
pub const CLASS_OTHER: u8 = 0;
pub const CLASS_CORN: u8 = 1;
pub const CLASS_SOYBEAN: u8 = 2;
/// Masked / not classifiable.
pub const CLASS_MASKED: u8 = 255;

pub const NUM_CLASSES: usize = 3;

/// Canonical quiet-NaN bit pattern used for missing observations.
pub const MISSING: f32 = f32::from_bits(0x7FC0_0000);

/// The ten classifier input channels, in model order.
pub const MODEL_BANDS: [&str; 10] = [
    "BLUE", "GREEN", "RED", "NIR", "SWIR1", "SWIR2", "NDWI", "LSWI", "VV", "VH",
];

const GSNC_MAGIC: [u8; 4] = *b"GSNC";
const GSNL_MAGIC: [u8; 4] = *b"GSNL";

/// Multi-band, multi-date raster stack with per-date DOYs.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesCube {
    pub bands: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    pub timesteps: usize,
    /// Day of year per timestep, strictly increasing, 1..=366.
    pub doys: Vec<u16>,
    pub year: u16,
    /// `[band][time][row][col]`, quiet NaN = missing.
    pub data: Vec<f32>,
}

impl TimeSeriesCube {
    pub fn new(
        bands: Vec<String>,
        rows: usize,
        cols: usize,
        doys: Vec<u16>,
        year: u16,
        data: Vec<f32>,
    ) -> Result<Self> {
        let cube = Self {
            timesteps: doys.len(),
            bands,
            rows,
            cols,
            doys,
            year,
            data,
        };
        cube.validate()?;
        Ok(cube)
    }

    /// All-`fill` cube with the given geometry.
    pub fn filled(
        bands: Vec<String>,
        rows: usize,
        cols: usize,
        doys: Vec<u16>,
        year: u16,
        fill: f32,
    ) -> Result<Self> {
        let len = bands.len() * doys.len() * rows * cols;
        Self::new(bands, rows, cols, doys, year, vec![fill; len])
    }

    pub fn validate(&self) -> Result<()> {
        if self.doys.len() != self.timesteps {
            return Err(Error::ShapeMismatch(format!(
                "doys length {} != timesteps {}",
                self.doys.len(),
                self.timesteps
            )));
        }
        for (i, w) in self.doys.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::NonIncreasingDoys { position: i + 1 });
            }
        }
        for (i, name) in self.bands.iter().enumerate() {
            if self.bands[..i].iter().any(|b| b == name) {
                return Err(Error::InvalidConfig(format!("duplicate band name {name}")));
            }
        }
        let expected = self.bands.len() * self.timesteps * self.rows * self.cols;
        if self.data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != bands*timesteps*rows*cols = {}",
                self.data.len(),
                expected
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, band: usize, time: usize, row: usize, col: usize) -> usize {
        ((band * self.timesteps + time) * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn value(&self, band: usize, time: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(band, time, row, col)]
    }

    #[inline]
    pub fn set(&mut self, band: usize, time: usize, row: usize, col: usize, v: f32) {
        let i = self.index(band, time, row, col);
        self.data[i] = v;
    }

    pub fn band_index(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b == name)
    }

    pub fn require_band(&self, name: &str) -> Result<usize> {
        self.band_index(name)
            .ok_or_else(|| Error::MissingBand(name.to_string()))
    }

    /// Per-pixel time series of one band, widened to f64 for numerics.
    pub fn series_f64(&self, band: usize, row: usize, col: usize) -> Vec<f64> {
        (0..self.timesteps)
            .map(|t| self.value(band, t, row, col) as f64)
            .collect()
    }

    /// Elementwise equality treating NaNs as equal when their bit patterns match.
    pub fn bit_equal(&self, other: &Self) -> bool {
        self.bands == other.bands
            && self.rows == other.rows
            && self.cols == other.cols
            && self.timesteps == other.timesteps
            && self.doys == other.doys
            && self.year == other.year
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Per-pixel class grid standing in for the CDL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    pub rows: usize,
    pub cols: usize,
    pub year: u16,
    /// 0 = other, 1 = corn, 2 = soybean, 255 = masked.
    pub classes: Vec<u8>,
}

impl LabelRaster {
    pub fn new(rows: usize, cols: usize, year: u16, classes: Vec<u8>) -> Result<Self> {
        let raster = Self {
            rows,
            cols,
            year,
            classes,
        };
        raster.validate()?;
        Ok(raster)
    }

    pub fn filled(rows: usize, cols: usize, year: u16, class: u8) -> Result<Self> {
        Self::new(rows, cols, year, vec![class; rows * cols])
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != self.rows * self.cols {
            return Err(Error::ShapeMismatch(format!(
                "classes length {} != rows*cols = {}",
                self.classes.len(),
                self.rows * self.cols
            )));
        }
        for &v in &self.classes {
            if !matches!(v, CLASS_OTHER | CLASS_CORN | CLASS_SOYBEAN | CLASS_MASKED) {
                return Err(Error::InvalidLabelValue(v));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.classes[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.classes[row * self.cols + col] = v;
    }
}

/// Per-observation validity flags accompanying a cube; `true` = invalid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaMask {
    pub rows: usize,
    pub cols: usize,
    pub timesteps: usize,
    /// `[time][row][col]`.
    pub flags: Vec<bool>,
}

impl QaMask {
    pub fn new(rows: usize, cols: usize, timesteps: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != rows * cols * timesteps {
            return Err(Error::ShapeMismatch(format!(
                "flags length {} != timesteps*rows*cols = {}",
                flags.len(),
                rows * cols * timesteps
            )));
        }
        Ok(Self {
            rows,
            cols,
            timesteps,
            flags,
        })
    }

    pub fn all_clear(rows: usize, cols: usize, timesteps: usize) -> Self {
        Self {
            rows,
            cols,
            timesteps,
            flags: vec![false; rows * cols * timesteps],
        }
    }

    #[inline]
    pub fn index(&self, time: usize, row: usize, col: usize) -> usize {
        (time * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn get(&self, time: usize, row: usize, col: usize) -> bool {
        self.flags[self.index(time, row, col)]
    }

    #[inline]
    pub fn set(&mut self, time: usize, row: usize, col: usize, v: bool) {
        let i = self.index(time, row, col);
        self.flags[i] = v;
    }
}

/// Writes a cube in the GSNC format. Returns the number of bytes emitted.
pub fn write_cube<W: Write>(cube: &TimeSeriesCube, sink: &mut W) -> Result<u64> {
    cube.validate()?;
    let mut count = 0u64;
    let mut w = CountingWriter {
        inner: sink,
        count: &mut count,
    };
    wire::write_header(&mut w, GSNC_MAGIC)?;
    wire::write_u16(&mut w, cube.bands.len() as u16)?;
    wire::write_u32(&mut w, cube.rows as u32)?;
    wire::write_u32(&mut w, cube.cols as u32)?;
    wire::write_u32(&mut w, cube.timesteps as u32)?;
    wire::write_u16(&mut w, cube.year)?;
    for &doy in &cube.doys {
        wire::write_u16(&mut w, doy)?;
    }
    for name in &cube.bands {
        let bytes = name.as_bytes();
        wire::write_u16(&mut w, bytes.len() as u16)?;
        w.write_all(bytes)?;
    }
    wire::write_f32_payload(&mut w, &cube.data)?;
    Ok(count)
}

/// Reads a GSNC cube, validating every invariant.
pub fn read_cube<R: Read>(source: &mut R) -> Result<TimeSeriesCube> {
    wire::read_header(source, GSNC_MAGIC, "GSNC")?;
    let band_count = wire::read_u16(source)? as usize;
    let rows = wire::read_u32(source)? as usize;
    let cols = wire::read_u32(source)? as usize;
    let timesteps = wire::read_u32(source)? as usize;
    let year = wire::read_u16(source)?;
    let mut doys = Vec::with_capacity(timesteps);
    for _ in 0..timesteps {
        doys.push(wire::read_u16(source)?);
    }
    let mut bands = Vec::with_capacity(band_count);
    for _ in 0..band_count {
        let len = wire::read_u16(source)? as usize;
        let mut buf = vec![0u8; len];
        wire::read_exact_or_truncated(source, &mut buf)?;
        let name = String::from_utf8(buf)
            .map_err(|_| Error::InvalidConfig("band name is not valid UTF-8".into()))?;
        bands.push(name);
    }
    let data = wire::read_f32_payload(source, band_count * timesteps * rows * cols)?;
    TimeSeriesCube::new(bands, rows, cols, doys, year, data)
}

/// Writes a label raster in the GSNL format. Returns the byte count.
pub fn write_labels<W: Write>(labels: &LabelRaster, sink: &mut W) -> Result<u64> {
    labels.validate()?;
    let mut count = 0u64;
    let mut w = CountingWriter {
        inner: sink,
        count: &mut count,
    };
    wire::write_header(&mut w, GSNL_MAGIC)?;
    wire::write_u32(&mut w, labels.rows as u32)?;
    wire::write_u32(&mut w, labels.cols as u32)?;
    wire::write_u16(&mut w, labels.year)?;
    w.write_all(&labels.classes)?;
    Ok(count)
}

/// Reads a GSNL label raster, rejecting any value outside {0, 1, 2, 255}.
pub fn read_labels<R: Read>(source: &mut R) -> Result<LabelRaster> {
    wire::read_header(source, GSNL_MAGIC, "GSNL")?;
    let rows = wire::read_u32(source)? as usize;
    let cols = wire::read_u32(source)? as usize;
    let year = wire::read_u16(source)?;
    let mut classes = vec![0u8; rows * cols];
    wire::read_exact_or_truncated(source, &mut classes)?;
    LabelRaster::new(rows, cols, year, classes)
}

struct CountingWriter<'a, W: Write> {
    inner: &'a mut W,
    count: &'a mut u64,
}

impl<W: Write> Write for CountingWriter<'_, W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        *self.count += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}
