//! Growth-stage detection: greenup, peak, senescence, and growing days.
//!
//! Greenup is the left endpoint of the steepest rising NDVI segment within
//! the first half of the series; senescence is the left endpoint of the
//! steepest falling segment after greenup; peak is the NDVI maximum between
//! them. All ties break to the earliest index. Because the rules depend
//! only on slopes and ordering, uniformly shifting every DOY moves the
//! detected DOYs by exactly that shift and leaves the growing-days scalar
//! unchanged — which is what makes the downstream features comparable
//! across seasons with different planting timelines.

use std::io::{Read, Write};

use crate::cube::TimeSeriesCube;
use crate::error::{Error, Result};
use crate::wire;

const GSNP_MAGIC: [u8; 4] = *b"GSNP";

/// Default NDVI amplitude below which a pixel is flagged as having no
/// discernible phenology.
pub const DEFAULT_MIN_AMPLITUDE: f64 = 0.05;

/// Stage indices into a cube's DOY axis for one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageIndices {
    pub greenup: usize,
    pub peak: usize,
    pub senescence: usize,
}

/// Per-pixel growth-stage map for one cube.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhenologyMap {
    pub rows: usize,
    pub cols: usize,
    pub greenup_idx: Vec<u16>,
    pub peak_idx: Vec<u16>,
    pub senescence_idx: Vec<u16>,
    pub greenup_doy: Vec<u16>,
    pub peak_doy: Vec<u16>,
    pub senescence_doy: Vec<u16>,
    /// Growing days, senescence DOY minus greenup DOY.
    pub delta: Vec<u16>,
    /// `false` where stages are best-effort only (flat, unusable, or failed).
    pub valid: Vec<bool>,
}

impl PhenologyMap {
    #[inline]
    fn at(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn stages(&self, row: usize, col: usize) -> StageIndices {
        let i = self.at(row, col);
        StageIndices {
            greenup: self.greenup_idx[i] as usize,
            peak: self.peak_idx[i] as usize,
            senescence: self.senescence_idx[i] as usize,
        }
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.at(row, col)]
    }

    pub fn delta_days(&self, row: usize, col: usize) -> u16 {
        self.delta[self.at(row, col)]
    }

    pub fn greenup_doy_at(&self, row: usize, col: usize) -> u16 {
        self.greenup_doy[self.at(row, col)]
    }

    pub fn peak_doy_at(&self, row: usize, col: usize) -> u16 {
        self.peak_doy[self.at(row, col)]
    }

    pub fn senescence_doy_at(&self, row: usize, col: usize) -> u16 {
        self.senescence_doy[self.at(row, col)]
    }
}

/// Detects (greenup, peak, senescence) indices on one finite NDVI series.
pub fn detect_stages(ndvi: &[f64], doys: &[u16]) -> Result<StageIndices> {
    let t = ndvi.len();
    if t < 4 {
        return Err(Error::TooFewTimesteps(t));
    }
    assert_eq!(t, doys.len(), "ndvi/doys length mismatch");

    let slope = |i: usize| (ndvi[i + 1] - ndvi[i]) / (doys[i + 1] as f64 - doys[i] as f64);

    // greenup: argmax slope over the first half of the index range
    let half = t / 2;
    let mut greenup = 0;
    let mut best = slope(0);
    for i in 1..half {
        let s = slope(i);
        if s > best {
            best = s;
            greenup = i;
        }
    }

    // senescence: argmin slope strictly after greenup
    if greenup + 1 > t - 2 {
        return Err(Error::NoSenescence { greenup });
    }
    let mut senescence = greenup + 1;
    let mut worst = slope(senescence);
    for i in greenup + 2..=t - 2 {
        let s = slope(i);
        if s < worst {
            worst = s;
            senescence = i;
        }
    }

    // peak: argmax NDVI between greenup and senescence
    let mut peak = greenup;
    let mut top = ndvi[greenup];
    for (offset, &v) in ndvi[greenup..=senescence].iter().enumerate() {
        if v > top {
            top = v;
            peak = greenup + offset;
        }
    }

    Ok(StageIndices {
        greenup,
        peak,
        senescence,
    })
}

/// Growing days between greenup and senescence (or peak, in mid-season use).
pub fn growing_days(greenup_doy: u16, senescence_doy: u16) -> Result<u16> {
    if senescence_doy <= greenup_doy {
        return Err(Error::NonPositiveDelta {
            greenup: greenup_doy,
            senescence: senescence_doy,
        });
    }
    Ok(senescence_doy - greenup_doy)
}

/// Runs [`detect_stages`] on every pixel of the cube's NDVI band.
///
/// Pixels that fail detection, contain NaN, or whose NDVI amplitude is
/// below `min_amplitude` are marked invalid but keep best-effort stage
/// indices so every pixel can still be classified.
pub fn detect_cube(cube: &TimeSeriesCube, min_amplitude: f64) -> Result<PhenologyMap> {
    let ndvi_band = cube.require_band("NDVI")?;
    let n = cube.rows * cube.cols;
    let mut map = PhenologyMap {
        rows: cube.rows,
        cols: cube.cols,
        greenup_idx: vec![0; n],
        peak_idx: vec![0; n],
        senescence_idx: vec![0; n],
        greenup_doy: vec![0; n],
        peak_doy: vec![0; n],
        senescence_doy: vec![0; n],
        delta: vec![0; n],
        valid: vec![false; n],
    };
    // fallback for pixels where detection cannot run at all
    let fallback = StageIndices {
        greenup: 0,
        peak: 0,
        senescence: 1.min(cube.timesteps.saturating_sub(1)),
    };
    for r in 0..cube.rows {
        for c in 0..cube.cols {
            let series = cube.series_f64(ndvi_band, r, c);
            let finite = series.iter().all(|v| v.is_finite());
            let (stages, mut valid) = if finite {
                match detect_stages(&series, &cube.doys) {
                    Ok(s) => (s, true),
                    Err(_) => (fallback, false),
                }
            } else {
                (fallback, false)
            };
            if valid {
                let amp = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - series.iter().cloned().fold(f64::INFINITY, f64::min);
                if amp < min_amplitude {
                    valid = false;
                }
            }
            let i = r * cube.cols + c;
            map.greenup_idx[i] = stages.greenup as u16;
            map.peak_idx[i] = stages.peak as u16;
            map.senescence_idx[i] = stages.senescence as u16;
            map.greenup_doy[i] = cube.doys[stages.greenup];
            map.peak_doy[i] = cube.doys[stages.peak];
            map.senescence_doy[i] = cube.doys[stages.senescence];
            map.delta[i] = cube.doys[stages.senescence].saturating_sub(cube.doys[stages.greenup]);
            map.valid[i] = valid;
        }
    }
    Ok(map)
}

/// Writes a phenology map in the GSNP format. Returns the byte count.
pub fn write_phenology<W: Write>(map: &PhenologyMap, sink: &mut W) -> Result<u64> {
    let mut buf = Vec::new();
    wire::write_header(&mut buf, GSNP_MAGIC)?;
    wire::write_u32(&mut buf, map.rows as u32)?;
    wire::write_u32(&mut buf, map.cols as u32)?;
    for i in 0..map.rows * map.cols {
        wire::write_u16(&mut buf, map.greenup_idx[i])?;
        wire::write_u16(&mut buf, map.peak_idx[i])?;
        wire::write_u16(&mut buf, map.senescence_idx[i])?;
        wire::write_u16(&mut buf, map.greenup_doy[i])?;
        wire::write_u16(&mut buf, map.peak_doy[i])?;
        wire::write_u16(&mut buf, map.senescence_doy[i])?;
        wire::write_u16(&mut buf, map.delta[i])?;
        buf.push(u8::from(map.valid[i]));
    }
    sink.write_all(&buf)?;
    Ok(buf.len() as u64)
}

/// Reads a GSNP phenology map.
pub fn read_phenology<R: Read>(source: &mut R) -> Result<PhenologyMap> {
    wire::read_header(source, GSNP_MAGIC, "GSNP")?;
    let rows = wire::read_u32(source)? as usize;
    let cols = wire::read_u32(source)? as usize;
    let n = rows * cols;
    let mut map = PhenologyMap {
        rows,
        cols,
        greenup_idx: Vec::with_capacity(n),
        peak_idx: Vec::with_capacity(n),
        senescence_idx: Vec::with_capacity(n),
        greenup_doy: Vec::with_capacity(n),
        peak_doy: Vec::with_capacity(n),
        senescence_doy: Vec::with_capacity(n),
        delta: Vec::with_capacity(n),
        valid: Vec::with_capacity(n),
    };
    for _ in 0..n {
        map.greenup_idx.push(wire::read_u16(source)?);
        map.peak_idx.push(wire::read_u16(source)?);
        map.senescence_idx.push(wire::read_u16(source)?);
        map.greenup_doy.push(wire::read_u16(source)?);
        map.peak_doy.push(wire::read_u16(source)?);
        map.senescence_doy.push(wire::read_u16(source)?);
        map.delta.push(wire::read_u16(source)?);
        map.valid.push(wire::read_u8(source)? != 0);
    }
    Ok(map)
}
