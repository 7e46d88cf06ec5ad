//! Synthetic season generator.
//!
//! Tiles the raster into rectangular single-class fields and gives every
//! pixel a double-logistic NDVI trajectory (two opposing sigmoid ramps) with
//! class-specific timing and amplitude. Reflectance and SAR bands derive
//! linearly from the trajectory, water indices derive from the generated
//! bands, and a planting shift slides the ramp inflections in time. Corn
//! and soybean differ mainly in growing days; the other class is a
//! low-amplitude grass-like curve that barely responds to the shift.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cube::{
    LabelRaster, TimeSeriesCube, CLASS_CORN, CLASS_OTHER, CLASS_SOYBEAN, MISSING, MODEL_BANDS,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::spectral;

/// The eight physically generated bands (indices into band response arrays);
/// NDWI and LSWI are derived, never drawn.
const PHYSICAL_BANDS: [&str; 8] = ["BLUE", "GREEN", "RED", "NIR", "SWIR1", "SWIR2", "VV", "VH"];

/// Per-class curve and band response parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    /// NDVI floor outside the season.
    pub base: f64,
    /// NDVI rise at full canopy.
    pub amplitude: f64,
    /// Greenup inflection day.
    pub t1: f64,
    /// Senescence inflection day.
    pub t2: f64,
    /// Greenup ramp steepness.
    pub k1: f64,
    /// Senescence ramp steepness.
    pub k2: f64,
    /// Linear band model: value = offset + slope * ndvi, per physical band.
    pub band_offsets: [f64; 8],
    pub band_slopes: [f64; 8],
    /// Fraction of the season shift this class experiences.
    pub shift_sensitivity: f64,
}

impl ClassModel {
    /// The generating NDVI curve before noise.
    pub fn ndvi_curve(&self, t: f64, shift: f64, jitter: f64) -> f64 {
        let offset = shift * self.shift_sensitivity + jitter;
        let s1 = sigmoid(self.k1 * (t - (self.t1 + offset)));
        let s2 = sigmoid(self.k2 * (t - (self.t2 + offset)));
        self.base + self.amplitude * (s1 - s2)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    /// Rectangular field side range, in pixels.
    pub field_min: usize,
    pub field_max: usize,
    /// Class mix fractions; must sum to 1.
    pub mix_corn: f64,
    pub mix_soy: f64,
    pub mix_other: f64,
    pub timesteps: usize,
    pub doy_start: u16,
    pub doy_step: u16,
    pub corn: ClassModel,
    pub soy: ClassModel,
    pub other: ClassModel,
    /// Gaussian noise on the six reflectance bands.
    pub noise_reflectance: f64,
    /// Gaussian noise on VV/VH.
    pub noise_sar: f64,
    /// Per-observation probability of a cloud/NaN dropout.
    pub dropout_prob: f64,
    /// Season-wide planting shift in days.
    pub shift_days: f64,
    /// Per-field planting jitter, uniform in [-jitter_days, jitter_days].
    pub jitter_days: f64,
    /// Relative per-field amplitude jitter.
    pub amp_jitter: f64,
    /// Absolute per-field base jitter.
    pub base_jitter: f64,
    pub seed: u64,
    pub year: u16,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 112,
            cols: 112,
            field_min: 6,
            field_max: 12,
            mix_corn: 0.35,
            mix_soy: 0.35,
            mix_other: 0.30,
            timesteps: 54,
            doy_start: 75,
            doy_step: 5,
            corn: ClassModel {
                base: 0.18,
                amplitude: 0.72,
                t1: 145.0,
                t2: 285.0,
                k1: 0.085,
                k2: 0.095,
                band_offsets: [0.060, 0.085, 0.120, 0.160, 0.280, 0.220, 0.100, 0.035],
                band_slopes: [-0.020, -0.008, -0.085, 0.380, -0.190, -0.150, 0.220, 0.160],
                shift_sensitivity: 1.0,
            },
            soy: ClassModel {
                base: 0.18,
                amplitude: 0.62,
                t1: 157.0,
                t2: 267.0,
                k1: 0.105,
                k2: 0.110,
                band_offsets: [0.060, 0.090, 0.120, 0.160, 0.285, 0.225, 0.095, 0.033],
                band_slopes: [-0.020, -0.004, -0.075, 0.330, -0.155, -0.125, 0.150, 0.100],
                shift_sensitivity: 1.0,
            },
            other: ClassModel {
                base: 0.22,
                amplitude: 0.18,
                t1: 110.0,
                t2: 250.0,
                k1: 0.045,
                k2: 0.050,
                band_offsets: [0.062, 0.090, 0.115, 0.180, 0.270, 0.210, 0.110, 0.040],
                band_slopes: [-0.015, -0.010, -0.060, 0.220, -0.120, -0.100, 0.060, 0.030],
                shift_sensitivity: 0.15,
            },
            noise_reflectance: 0.012,
            noise_sar: 0.018,
            dropout_prob: 0.08,
            shift_days: 0.0,
            jitter_days: 8.0,
            amp_jitter: 0.07,
            base_jitter: 0.015,
            seed: 42,
            year: 2017,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let sum = self.mix_corn + self.mix_soy + self.mix_other;
        if (sum - 1.0).abs() > 1e-9 || self.mix_corn < 0.0 || self.mix_soy < 0.0 || self.mix_other < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "class mix must be nonnegative and sum to 1, got {sum}"
            )));
        }
        for (name, class) in [("corn", &self.corn), ("soy", &self.soy), ("other", &self.other)] {
            if class.t1 >= class.t2 {
                return Err(Error::InvalidConfig(format!(
                    "{name}: t1 {} must be < t2 {}",
                    class.t1, class.t2
                )));
            }
            if class.k1 <= 0.0 || class.k2 <= 0.0 || class.amplitude <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name}: slopes and amplitude must be positive"
                )));
            }
        }
        if self.corn.t2 - self.corn.t1 <= self.soy.t2 - self.soy.t1 {
            return Err(Error::InvalidConfig(
                "corn growing days must exceed soybean growing days".into(),
            ));
        }
        if self.other.amplitude >= self.corn.amplitude.min(self.soy.amplitude) {
            return Err(Error::InvalidConfig(
                "other class must have lower amplitude than the crops".into(),
            ));
        }
        if self.field_min < 1 || self.field_max < self.field_min {
            return Err(Error::InvalidConfig(format!(
                "bad field size range {}..{}",
                self.field_min, self.field_max
            )));
        }
        if self.rows < self.field_min || self.cols < self.field_min {
            return Err(Error::InvalidConfig("raster smaller than one field".into()));
        }
        if self.timesteps < 4 {
            return Err(Error::InvalidConfig("need at least 4 timesteps".into()));
        }
        let last = self.doy_start as usize + (self.timesteps - 1) * self.doy_step as usize;
        if self.doy_start < 1 || self.doy_step < 1 || last > 366 {
            return Err(Error::InvalidConfig(format!(
                "DOY grid runs {}..{last}, must stay within 1..=366",
                self.doy_start
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidConfig("dropout_prob must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn doys(&self) -> Vec<u16> {
        (0..self.timesteps)
            .map(|i| self.doy_start + i as u16 * self.doy_step)
            .collect()
    }

    pub fn class_model(&self, class: u8) -> &ClassModel {
        match class {
            CLASS_CORN => &self.corn,
            CLASS_SOYBEAN => &self.soy,
            _ => &self.other,
        }
    }
}

/// One rectangular single-class field.
#[derive(Debug, Clone, Copy)]
struct Field {
    row0: usize,
    row1: usize,
    col0: usize,
    col1: usize,
    index: u64,
}

fn tile_fields(config: &SynthConfig) -> Vec<Field> {
    let cuts = |total: usize, purpose: &str| -> Vec<(usize, usize)> {
        let mut rng = rng::stream(config.seed, purpose, 0);
        let mut spans = Vec::new();
        let mut at = 0usize;
        while at < total {
            let side = rng.gen_range(config.field_min..=config.field_max);
            let end = (at + side).min(total);
            spans.push((at, end));
            at = end;
        }
        spans
    };
    let row_spans = cuts(config.rows, "field-rows");
    let col_spans = cuts(config.cols, "field-cols");
    let mut fields = Vec::with_capacity(row_spans.len() * col_spans.len());
    let mut index = 0u64;
    for &(row0, row1) in &row_spans {
        for &(col0, col1) in &col_spans {
            fields.push(Field {
                row0,
                row1,
                col0,
                col1,
                index,
            });
            index += 1;
        }
    }
    fields
}

/// Generates one season: a 10-band cube (NDWI/LSWI derived from the
/// generated reflectance) plus its label raster. Deterministic per seed;
/// each field draws from its own stream.
pub fn generate_season(config: &SynthConfig) -> Result<(TimeSeriesCube, LabelRaster)> {
    config.validate()?;
    let doys = config.doys();
    let bands: Vec<String> = MODEL_BANDS.iter().map(|b| b.to_string()).collect();
    let mut cube = TimeSeriesCube::filled(
        bands,
        config.rows,
        config.cols,
        doys.clone(),
        config.year,
        0.0,
    )?;
    let mut labels = LabelRaster::filled(config.rows, config.cols, config.year, CLASS_OTHER)?;

    let band_index: Vec<usize> = PHYSICAL_BANDS
        .iter()
        .map(|name| cube.band_index(name).expect("canonical band"))
        .collect();
    let ndwi_band = cube.band_index("NDWI").expect("canonical band");
    let lswi_band = cube.band_index("LSWI").expect("canonical band");
    let green = cube.band_index("GREEN").expect("canonical band");
    let nir = cube.band_index("NIR").expect("canonical band");
    let swir1 = cube.band_index("SWIR1").expect("canonical band");

    let unit_normal = Normal::new(0.0f64, 1.0).expect("valid normal");

    for field in tile_fields(config) {
        let mut rng = rng::stream(config.seed, "field", field.index);
        let class_u: f64 = rng.gen();
        let class = if class_u < config.mix_corn {
            CLASS_CORN
        } else if class_u < config.mix_corn + config.mix_soy {
            CLASS_SOYBEAN
        } else {
            CLASS_OTHER
        };
        let model = config.class_model(class);
        let jitter = if config.jitter_days > 0.0 {
            rng.gen_range(-config.jitter_days..=config.jitter_days)
        } else {
            0.0
        };
        let amp_factor = if config.amp_jitter > 0.0 {
            rng.gen_range(1.0 - config.amp_jitter..=1.0 + config.amp_jitter)
        } else {
            1.0
        };
        let base_offset = if config.base_jitter > 0.0 {
            rng.gen_range(-config.base_jitter..=config.base_jitter)
        } else {
            0.0
        };

        for r in field.row0..field.row1 {
            for c in field.col0..field.col1 {
                labels.set(r, c, class);
                for (t, &doy) in doys.iter().enumerate() {
                    if config.dropout_prob > 0.0 && rng.gen::<f64>() < config.dropout_prob {
                        for b in 0..MODEL_BANDS.len() {
                            cube.set(b, t, r, c, MISSING);
                        }
                        continue;
                    }
                    let v = base_offset
                        + model.base
                        + amp_factor * (model.ndvi_curve(doy as f64, config.shift_days, jitter)
                            - model.base);
                    for (pb, &b) in band_index.iter().enumerate() {
                        let sigma = if pb < 6 {
                            config.noise_reflectance
                        } else {
                            config.noise_sar
                        };
                        let noise = if sigma > 0.0 {
                            sigma * unit_normal.sample(&mut rng)
                        } else {
                            0.0
                        };
                        let value = model.band_offsets[pb] + model.band_slopes[pb] * v + noise;
                        cube.set(b, t, r, c, value as f32);
                    }
                    let g = cube.value(green, t, r, c);
                    let n = cube.value(nir, t, r, c);
                    let s1 = cube.value(swir1, t, r, c);
                    cube.set(ndwi_band, t, r, c, spectral::ndwi(g, s1));
                    cube.set(lswi_band, t, r, c, spectral::lswi(n, s1));
                }
            }
        }
    }
    Ok((cube, labels))
}

/// One generated season within a campaign.
#[derive(Debug, Clone)]
pub struct Season {
    pub year: u16,
    pub shift_days: f64,
    pub cube: TimeSeriesCube,
    pub labels: LabelRaster,
}

/// Generates one season per (year, shift) entry with per-year derived
/// seeds. At least two seasons; years must be unique.
pub fn generate_campaign(base: &SynthConfig, seasons: &[(u16, f64)]) -> Result<Vec<Season>> {
    if seasons.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "campaign needs at least 2 seasons, got {}",
            seasons.len()
        )));
    }
    for (i, (year, _)) in seasons.iter().enumerate() {
        if seasons[..i].iter().any(|(y, _)| y == year) {
            return Err(Error::InvalidConfig(format!("duplicate year {year}")));
        }
    }
    let mut out = Vec::with_capacity(seasons.len());
    for &(year, shift) in seasons {
        let mut cfg = base.clone();
        cfg.year = year;
        cfg.shift_days = shift;
        cfg.seed = rng::derive_seed(base.seed, "season", year as u64);
        let (cube, labels) = generate_season(&cfg)?;
        out.push(Season {
            year,
            shift_days: shift,
            cube,
            labels,
        });
    }
    Ok(out)
}

// --- flat key=value config files -------------------------------------------

impl SynthConfig {
    /// Serializes to the flat key=value text format.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        let csv = |a: &[f64]| {
            a.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        kv("rows", self.rows.to_string());
        kv("cols", self.cols.to_string());
        kv("field_min", self.field_min.to_string());
        kv("field_max", self.field_max.to_string());
        kv("mix_corn", self.mix_corn.to_string());
        kv("mix_soy", self.mix_soy.to_string());
        kv("mix_other", self.mix_other.to_string());
        kv("timesteps", self.timesteps.to_string());
        kv("doy_start", self.doy_start.to_string());
        kv("doy_step", self.doy_step.to_string());
        for (name, class) in [("corn", &self.corn), ("soy", &self.soy), ("other", &self.other)] {
            kv(&format!("{name}_base"), class.base.to_string());
            kv(&format!("{name}_amp"), class.amplitude.to_string());
            kv(&format!("{name}_t1"), class.t1.to_string());
            kv(&format!("{name}_t2"), class.t2.to_string());
            kv(&format!("{name}_k1"), class.k1.to_string());
            kv(&format!("{name}_k2"), class.k2.to_string());
            kv(&format!("{name}_band_offsets"), csv(&class.band_offsets));
            kv(&format!("{name}_band_slopes"), csv(&class.band_slopes));
            kv(
                &format!("{name}_shift_sensitivity"),
                class.shift_sensitivity.to_string(),
            );
        }
        kv("noise_reflectance", self.noise_reflectance.to_string());
        kv("noise_sar", self.noise_sar.to_string());
        kv("dropout_prob", self.dropout_prob.to_string());
        kv("shift_days", self.shift_days.to_string());
        kv("jitter_days", self.jitter_days.to_string());
        kv("amp_jitter", self.amp_jitter.to_string());
        kv("base_jitter", self.base_jitter.to_string());
        kv("seed", self.seed.to_string());
        kv("year", self.year.to_string());
        s
    }

    /// Parses the flat key=value format; unknown keys are rejected so typos
    /// do not silently fall back to defaults. Missing keys keep defaults.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = SynthConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::InvalidConfig(format!("line {}: bad {what} `{value}`", lineno + 1))
            };
            let parse_f64 = || value.parse::<f64>().map_err(|_| bad("number"));
            let parse_usize = || value.parse::<usize>().map_err(|_| bad("integer"));
            let parse_arr8 = || -> Result<[f64; 8]> {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("comma list"))?;
                parts
                    .try_into()
                    .map_err(|_| Error::InvalidConfig(format!("line {}: need 8 values", lineno + 1)))
            };
            if let Some((class_name, field)) = key.split_once('_') {
                let class = match class_name {
                    "corn" => Some(&mut cfg.corn),
                    "soy" => Some(&mut cfg.soy),
                    "other" => Some(&mut cfg.other),
                    _ => None,
                };
                if let Some(class) = class {
                    match field {
                        "base" => class.base = parse_f64()?,
                        "amp" => class.amplitude = parse_f64()?,
                        "t1" => class.t1 = parse_f64()?,
                        "t2" => class.t2 = parse_f64()?,
                        "k1" => class.k1 = parse_f64()?,
                        "k2" => class.k2 = parse_f64()?,
                        "band_offsets" => class.band_offsets = parse_arr8()?,
                        "band_slopes" => class.band_slopes = parse_arr8()?,
                        "shift_sensitivity" => class.shift_sensitivity = parse_f64()?,
                        _ => {
                            return Err(Error::InvalidConfig(format!(
                                "line {}: unknown key `{key}`",
                                lineno + 1
                            )))
                        }
                    }
                    continue;
                }
            }
            match key {
                "rows" => cfg.rows = parse_usize()?,
                "cols" => cfg.cols = parse_usize()?,
                "field_min" => cfg.field_min = parse_usize()?,
                "field_max" => cfg.field_max = parse_usize()?,
                "mix_corn" => cfg.mix_corn = parse_f64()?,
                "mix_soy" => cfg.mix_soy = parse_f64()?,
                "mix_other" => cfg.mix_other = parse_f64()?,
                "timesteps" => cfg.timesteps = parse_usize()?,
                "doy_start" => cfg.doy_start = parse_usize()? as u16,
                "doy_step" => cfg.doy_step = parse_usize()? as u16,
                "noise_reflectance" => cfg.noise_reflectance = parse_f64()?,
                "noise_sar" => cfg.noise_sar = parse_f64()?,
                "dropout_prob" => cfg.dropout_prob = parse_f64()?,
                "shift_days" => cfg.shift_days = parse_f64()?,
                "jitter_days" => cfg.jitter_days = parse_f64()?,
                "amp_jitter" => cfg.amp_jitter = parse_f64()?,
                "base_jitter" => cfg.base_jitter = parse_f64()?,
                "seed" => cfg.seed = value.parse::<u64>().map_err(|_| bad("seed"))?,
                "year" => cfg.year = parse_usize()? as u16,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key `{key}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
