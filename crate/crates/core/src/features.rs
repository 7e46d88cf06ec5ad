//! Classifier input assembly and label hygiene.
//!
//! Samples pair a per-pixel spectral matrix (M channels x D timesteps) with
//! a 5x5 spatial patch whose per-timestep multispectral slices are stacked
//! along the channel axis, plus the growing-days scalar when the season
//! mode carries one. Timesteps come either from a per-pixel phenology map
//! (growth-stage normalization) or from fixed calendar dates.

use std::io::{Read, Write};

use crate::cube::{LabelRaster, TimeSeriesCube, CLASS_MASKED, MODEL_BANDS};
use crate::error::{Error, Result};
use crate::phenology::PhenologyMap;
use crate::wire;

const GSNS_MAGIC: [u8; 4] = *b"GSNS";

/// Spatial patch side length.
pub const PATCH_SIZE: usize = 5;
/// Patch half-width; pixels closer than this to an edge are not sampled.
pub const PATCH_MARGIN: usize = PATCH_SIZE / 2;

/// How many growth stages feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeasonMode {
    /// Greenup only.
    Early,
    /// Greenup and peak.
    Mid,
    /// Greenup, peak, and senescence.
    Late,
}

impl SeasonMode {
    pub fn stage_count(self) -> usize {
        match self {
            SeasonMode::Early => 1,
            SeasonMode::Mid => 2,
            SeasonMode::Late => 3,
        }
    }

    pub fn code(self) -> u8 {
        self.stage_count() as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(SeasonMode::Early),
            2 => Ok(SeasonMode::Mid),
            3 => Ok(SeasonMode::Late),
            other => Err(Error::InvalidConfig(format!(
                "unknown season mode code {other}"
            ))),
        }
    }

    /// Whether samples in this mode carry the growing-days scalar.
    pub fn has_delta(self) -> bool {
        !matches!(self, SeasonMode::Early)
    }
}

impl std::fmt::Display for SeasonMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SeasonMode::Early => write!(f, "early"),
            SeasonMode::Mid => write!(f, "mid"),
            SeasonMode::Late => write!(f, "late"),
        }
    }
}

/// Where the D timesteps come from.
#[derive(Debug, Clone)]
pub enum DateSelector<'a> {
    /// Per-pixel stages from a phenology map.
    GrowthStage(&'a PhenologyMap),
    /// Explicit DOYs, matched to the nearest native timestep.
    Fixed(Vec<u16>),
}

impl DateSelector<'_> {
    fn check_season(&self, season: SeasonMode) -> Result<()> {
        if let DateSelector::Fixed(doys) = self {
            if doys.len() != season.stage_count() {
                return Err(Error::SelectorMismatch(format!(
                    "fixed selector has {} DOYs but {season} season needs {}",
                    doys.len(),
                    season.stage_count()
                )));
            }
            if doys.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::SelectorMismatch(
                    "fixed DOY list must be strictly ascending".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One classifiable pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[channel][timestep]`, M x D row-major.
    pub x_lstm: Vec<f32>,
    /// `[row][col][timestep * M + channel]`, k x k x (M*D) row-major.
    pub x_cnn: Vec<f32>,
    /// Growing days; absent for early-season and fixed-date samples.
    pub delta_days: Option<f32>,
    pub label: u8,
    pub row: u32,
    pub col: u32,
}

/// A batch of samples sharing one season mode and geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub season: SeasonMode,
    pub channels: usize,
    pub timesteps: usize,
    pub patch: usize,
    pub samples: Vec<Sample>,
}

impl SampleBatch {
    pub fn new(season: SeasonMode) -> Self {
        Self {
            season,
            channels: MODEL_BANDS.len(),
            timesteps: season.stage_count(),
            patch: PATCH_SIZE,
            samples: Vec::new(),
        }
    }
}

/// Maps CDL-style integer codes to the three-class scheme
/// (1 = corn, 5 = soybeans, everything else = other).
///
/// The aggregated soybean code 2 is kept as soybean so that re-aggregating
/// an already-aggregated raster is a no-op.
pub fn aggregate_classes(raw_codes: &[u16], rows: usize, cols: usize, year: u16) -> LabelRaster {
    let classes = raw_codes
        .iter()
        .map(|&code| match code {
            1 => crate::cube::CLASS_CORN,
            2 | 5 => crate::cube::CLASS_SOYBEAN,
            _ => crate::cube::CLASS_OTHER,
        })
        .collect();
    LabelRaster::new(rows, cols, year, classes).expect("aggregated codes are always valid")
}

/// Masks every pixel whose 3x3 neighborhood is not single-class.
/// Border pixels have no complete neighborhood and are masked.
pub fn homogeneity_mask(labels: &LabelRaster) -> Result<LabelRaster> {
    if labels.rows < 3 || labels.cols < 3 {
        return Err(Error::RasterTooSmall {
            rows: labels.rows,
            cols: labels.cols,
            min: 3,
        });
    }
    let mut out = labels.clone();
    for r in 0..labels.rows {
        for c in 0..labels.cols {
            if r == 0 || c == 0 || r == labels.rows - 1 || c == labels.cols - 1 {
                out.set(r, c, CLASS_MASKED);
                continue;
            }
            let center = labels.get(r, c);
            let homogeneous = center != CLASS_MASKED
                && (-1i64..=1)
                    .flat_map(|dr| (-1i64..=1).map(move |dc| (dr, dc)))
                    .all(|(dr, dc)| {
                        labels.get((r as i64 + dr) as usize, (c as i64 + dc) as usize) == center
                    });
            if !homogeneous {
                out.set(r, c, CLASS_MASKED);
            }
        }
    }
    Ok(out)
}

/// Replaces 4-connected components smaller than `min_size` with the label
/// of their largest adjacent component. Masked pixels take no part in
/// connectivity and are never changed.
pub fn sieve(labels: &LabelRaster, min_size: usize) -> LabelRaster {
    assert!(min_size >= 1, "min_size must be >= 1");
    let (rows, cols) = (labels.rows, labels.cols);
    let mut component = vec![usize::MAX; rows * cols];
    let mut sizes: Vec<usize> = Vec::new();
    let mut comp_label: Vec<u8> = Vec::new();

    // flood fill in scan order so component ids are deterministic
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if component[start] != usize::MAX || labels.classes[start] == CLASS_MASKED {
            continue;
        }
        let id = sizes.len();
        let label = labels.classes[start];
        sizes.push(0);
        comp_label.push(label);
        stack.push(start);
        component[start] = id;
        while let Some(i) = stack.pop() {
            sizes[id] += 1;
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if component[j] == usize::MAX && labels.classes[j] == label {
                    component[j] = id;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
    }

    // adjacency census for small components, in one pass over edges
    let num_components = sizes.len();
    let mut neighbor_votes: Vec<std::collections::BTreeMap<usize, ()>> =
        vec![std::collections::BTreeMap::new(); num_components];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if component[i] == usize::MAX {
                continue;
            }
            let mut note = |j: usize| {
                let (a, b) = (component[i], component[j]);
                if b != usize::MAX && a != b {
                    neighbor_votes[a].insert(b, ());
                    neighbor_votes[b].insert(a, ());
                }
            };
            if c + 1 < cols {
                note(i + 1);
            }
            if r + 1 < rows {
                note(i + cols);
            }
        }
    }

    let mut replacement: Vec<Option<u8>> = vec![None; num_components];
    for id in 0..num_components {
        if sizes[id] >= min_size {
            continue;
        }
        // largest adjacent component; ties to the smallest id (scan order)
        let best = neighbor_votes[id]
            .keys()
            .copied()
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)));
        if let Some(winner) = best {
            replacement[id] = Some(comp_label[winner]);
        }
    }

    let mut out = labels.clone();
    for i in 0..rows * cols {
        if component[i] != usize::MAX {
            if let Some(label) = replacement[component[i]] {
                out.classes[i] = label;
            }
        }
    }
    out
}

/// Resolved cube band indices for the ten model channels, in model order.
#[derive(Debug, Clone)]
pub struct BandIndices(pub [usize; MODEL_BANDS.len()]);

impl BandIndices {
    pub fn resolve(cube: &TimeSeriesCube) -> Result<Self> {
        let mut idx = [0usize; MODEL_BANDS.len()];
        for (i, name) in MODEL_BANDS.iter().enumerate() {
            idx[i] = cube.require_band(name)?;
        }
        Ok(Self(idx))
    }
}

/// Picks the D time indices for one pixel.
pub fn select_timesteps(
    selector: &DateSelector,
    pixel: (usize, usize),
    doys: &[u16],
    season: SeasonMode,
) -> Result<Vec<usize>> {
    selector.check_season(season)?;
    match selector {
        DateSelector::GrowthStage(map) => {
            let stages = map.stages(pixel.0, pixel.1);
            let mut indices = vec![stages.greenup];
            if season.stage_count() >= 2 {
                indices.push(stages.peak);
            }
            if season.stage_count() >= 3 {
                indices.push(stages.senescence);
            }
            Ok(indices)
        }
        DateSelector::Fixed(wanted) => Ok(wanted
            .iter()
            .map(|&w| nearest_doy_index(doys, w))
            .collect()),
    }
}

/// Index of the DOY nearest to `wanted`; ties go to the earlier date.
fn nearest_doy_index(doys: &[u16], wanted: u16) -> usize {
    let mut best = 0usize;
    let mut best_dist = u16::MAX;
    for (i, &d) in doys.iter().enumerate() {
        let dist = d.abs_diff(wanted);
        if dist < best_dist {
            best_dist = dist;
            best = i;
        }
    }
    best
}

/// Extracts every input the classifiers need for one pixel.
pub fn extract_sample(
    cube: &TimeSeriesCube,
    labels: &LabelRaster,
    selector: &DateSelector,
    pixel: (usize, usize),
    season: SeasonMode,
) -> Result<Sample> {
    let bands = BandIndices::resolve(cube)?;
    Extractor {
        cube,
        labels,
        selector,
        season,
        bands,
    }
    .extract(pixel)
}

/// Reusable extraction context; resolves band indices once.
pub struct Extractor<'a> {
    pub cube: &'a TimeSeriesCube,
    pub labels: &'a LabelRaster,
    pub selector: &'a DateSelector<'a>,
    pub season: SeasonMode,
    pub bands: BandIndices,
}

impl<'a> Extractor<'a> {
    pub fn new(
        cube: &'a TimeSeriesCube,
        labels: &'a LabelRaster,
        selector: &'a DateSelector<'a>,
        season: SeasonMode,
    ) -> Result<Self> {
        if labels.rows != cube.rows || labels.cols != cube.cols {
            return Err(Error::ShapeMismatch(format!(
                "labels {}x{} do not match cube {}x{}",
                labels.rows, labels.cols, cube.rows, cube.cols
            )));
        }
        Ok(Self {
            cube,
            labels,
            selector,
            season,
            bands: BandIndices::resolve(cube)?,
        })
    }

    pub fn extract(&self, pixel: (usize, usize)) -> Result<Sample> {
        let (row, col) = pixel;
        let label = self.labels.get(row, col);
        if label == CLASS_MASKED {
            return Err(Error::MaskedPixel { row, col });
        }
        if row < PATCH_MARGIN
            || col < PATCH_MARGIN
            || row + PATCH_MARGIN >= self.cube.rows
            || col + PATCH_MARGIN >= self.cube.cols
        {
            return Err(Error::PatchOutOfBounds { row, col });
        }
        let times = select_timesteps(self.selector, pixel, &self.cube.doys, self.season)?;
        let m = MODEL_BANDS.len();
        let d = times.len();

        let mut x_lstm = vec![0f32; m * d];
        for (mi, &band) in self.bands.0.iter().enumerate() {
            for (di, &t) in times.iter().enumerate() {
                let v = self.cube.value(band, t, row, col);
                if !v.is_finite() {
                    return Err(Error::NonFiniteSample { row, col });
                }
                x_lstm[mi * d + di] = v;
            }
        }

        let mut x_cnn = vec![0f32; PATCH_SIZE * PATCH_SIZE * m * d];
        for kr in 0..PATCH_SIZE {
            for kc in 0..PATCH_SIZE {
                let (pr, pc) = (row + kr - PATCH_MARGIN, col + kc - PATCH_MARGIN);
                for (di, &t) in times.iter().enumerate() {
                    for (mi, &band) in self.bands.0.iter().enumerate() {
                        let v = self.cube.value(band, t, pr, pc);
                        if !v.is_finite() {
                            return Err(Error::NonFiniteSample { row, col });
                        }
                        x_cnn[(kr * PATCH_SIZE + kc) * m * d + di * m + mi] = v;
                    }
                }
            }
        }

        let delta_days = match (self.season, self.selector) {
            (SeasonMode::Early, _) | (_, DateSelector::Fixed(_)) => None,
            (SeasonMode::Late, DateSelector::GrowthStage(map)) => {
                Some(map.delta_days(row, col) as f32)
            }
            (SeasonMode::Mid, DateSelector::GrowthStage(map)) => {
                let peak = map.peak_doy_at(row, col);
                let greenup = map.greenup_doy_at(row, col);
                Some((peak - greenup) as f32)
            }
        };

        Ok(Sample {
            x_lstm,
            x_cnn,
            delta_days,
            label,
            row: row as u32,
            col: col as u32,
        })
    }

    /// Extracts every interior, unmasked, finite pixel in scan order,
    /// silently skipping the rest. Returns samples plus the skip count.
    pub fn extract_all(&self) -> (Vec<Sample>, usize) {
        let mut samples = Vec::new();
        let mut skipped = 0usize;
        for row in PATCH_MARGIN..self.cube.rows.saturating_sub(PATCH_MARGIN) {
            for col in PATCH_MARGIN..self.cube.cols.saturating_sub(PATCH_MARGIN) {
                if self.labels.get(row, col) == CLASS_MASKED {
                    continue;
                }
                match self.extract((row, col)) {
                    Ok(s) => samples.push(s),
                    Err(_) => skipped += 1,
                }
            }
        }
        (samples, skipped)
    }
}

/// Writes a sample batch in the GSNS format. Returns the byte count.
pub fn write_samples<W: Write>(batch: &SampleBatch, sink: &mut W) -> Result<u64> {
    let m = batch.channels;
    let d = batch.timesteps;
    let k = batch.patch;
    let mut buf = Vec::new();
    wire::write_header(&mut buf, GSNS_MAGIC)?;
    wire::write_u32(&mut buf, batch.samples.len() as u32)?;
    buf.push(batch.season.code());
    buf.push(m as u8);
    buf.push(d as u8);
    buf.push(k as u8);
    for s in &batch.samples {
        if s.x_lstm.len() != m * d || s.x_cnn.len() != k * k * m * d {
            return Err(Error::ShapeMismatch(format!(
                "sample at ({}, {}) does not match batch geometry",
                s.row, s.col
            )));
        }
        if s.label > 2 {
            return Err(Error::InvalidLabelValue(s.label));
        }
        buf.push(s.label);
        wire::write_u32(&mut buf, s.row)?;
        wire::write_u32(&mut buf, s.col)?;
        wire::write_f32(&mut buf, s.delta_days.unwrap_or(crate::cube::MISSING))?;
        wire::write_f32_payload(&mut buf, &s.x_lstm)?;
        wire::write_f32_payload(&mut buf, &s.x_cnn)?;
    }
    sink.write_all(&buf)?;
    Ok(buf.len() as u64)
}

/// Reads a GSNS sample batch.
pub fn read_samples<R: Read>(source: &mut R) -> Result<SampleBatch> {
    wire::read_header(source, GSNS_MAGIC, "GSNS")?;
    let count = wire::read_u32(source)? as usize;
    let season = SeasonMode::from_code(wire::read_u8(source)?)?;
    let m = wire::read_u8(source)? as usize;
    let d = wire::read_u8(source)? as usize;
    let k = wire::read_u8(source)? as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let label = wire::read_u8(source)?;
        if label > 2 {
            return Err(Error::InvalidLabelValue(label));
        }
        let row = wire::read_u32(source)?;
        let col = wire::read_u32(source)?;
        let delta = wire::read_f32(source)?;
        let x_lstm = wire::read_f32_payload(source, m * d)?;
        let x_cnn = wire::read_f32_payload(source, k * k * m * d)?;
        samples.push(Sample {
            x_lstm,
            x_cnn,
            delta_days: if delta.is_nan() { None } else { Some(delta) },
            label,
            row,
            col,
        });
    }
    Ok(SampleBatch {
        season,
        channels: m,
        timesteps: d,
        patch: k,
        samples,
    })
}
