//! Normalized-difference spectral indices.
//!
//! NDWI and LSWI are classifier inputs; NDVI is carried as an auxiliary
//! band for phenology only. Degenerate denominators yield NaN, which the
//! rest of the pipeline already knows how to handle.

use crate::cube::TimeSeriesCube;
use crate::error::Result;

const DENOM_FLOOR: f32 = 1e-12;

#[inline]
fn normalized_difference(a: f32, b: f32) -> f32 {
    let denom = a + b;
    if denom.abs() < DENOM_FLOOR {
        f32::NAN
    } else {
        (a - b) / denom
    }
}

/// Normalized difference water index, (GREEN - SWIR1) / (GREEN + SWIR1).
#[inline]
pub fn ndwi(green: f32, swir1: f32) -> f32 {
    normalized_difference(green, swir1)
}

/// Land surface water index, (NIR - SWIR1) / (NIR + SWIR1).
#[inline]
pub fn lswi(nir: f32, swir1: f32) -> f32 {
    normalized_difference(nir, swir1)
}

/// Normalized difference vegetation index, (NIR - RED) / (NIR + RED).
#[inline]
pub fn ndvi(nir: f32, red: f32) -> f32 {
    normalized_difference(nir, red)
}

/// Appends NDWI, LSWI, and NDVI bands computed elementwise from GREEN, RED,
/// NIR, and SWIR1. Existing index bands are replaced so recomputation after
/// smoothing is safe.
pub fn add_index_bands(cube: &TimeSeriesCube) -> Result<TimeSeriesCube> {
    let green = cube.require_band("GREEN")?;
    let red = cube.require_band("RED")?;
    let nir = cube.require_band("NIR")?;
    let swir1 = cube.require_band("SWIR1")?;

    let keep: Vec<usize> = (0..cube.bands.len())
        .filter(|&b| !matches!(cube.bands[b].as_str(), "NDWI" | "LSWI" | "NDVI"))
        .collect();

    let plane = cube.timesteps * cube.rows * cube.cols;
    let mut bands: Vec<String> = keep.iter().map(|&b| cube.bands[b].clone()).collect();
    let mut data = Vec::with_capacity((keep.len() + 3) * plane);
    for &b in &keep {
        data.extend_from_slice(&cube.data[b * plane..(b + 1) * plane]);
    }
    bands.extend(["NDWI".to_string(), "LSWI".to_string(), "NDVI".to_string()]);
    for index in 0..3 {
        for t in 0..cube.timesteps {
            for r in 0..cube.rows {
                for c in 0..cube.cols {
                    let v = match index {
                        0 => ndwi(cube.value(green, t, r, c), cube.value(swir1, t, r, c)),
                        1 => lswi(cube.value(nir, t, r, c), cube.value(swir1, t, r, c)),
                        _ => ndvi(cube.value(nir, t, r, c), cube.value(red, t, r, c)),
                    };
                    data.push(v);
                }
            }
        }
    }
    TimeSeriesCube::new(bands, cube.rows, cube.cols, cube.doys.clone(), cube.year, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::TimeSeriesCube;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn ndwi_hand_values() {
        assert_eq!(ndwi(0.2, 0.2), 0.0);
        assert!((ndwi(0.1, 0.3) - (-0.5)).abs() < 1e-7);
        assert!(ndwi(0.0, 0.0).is_nan());
    }

    #[test]
    fn lswi_hand_values() {
        assert_eq!(lswi(0.4, 0.4), 0.0);
        assert!((lswi(0.5, 0.25) - 1.0 / 3.0).abs() < 1e-7);
        assert!(lswi(0.0, 0.0).is_nan());
    }

    #[test]
    fn ndvi_hand_values() {
        assert_eq!(ndvi(0.3, 0.3), 0.0);
        assert!((ndvi(0.6, 0.1) - 5.0 / 7.0).abs() < 1e-7);
        assert!((ndvi(0.05, 0.45) - (-0.8)).abs() < 1e-7);
    }

    fn four_band_cube(values: [f32; 4]) -> TimeSeriesCube {
        let [green, red, nir, swir1] = values;
        TimeSeriesCube::new(
            vec!["GREEN".into(), "RED".into(), "NIR".into(), "SWIR1".into()],
            1,
            1,
            vec![100],
            2017,
            vec![green, red, nir, swir1],
        )
        .unwrap()
    }

    #[test]
    fn add_index_bands_hand_values() {
        let cube = four_band_cube([0.1, 0.1, 0.5, 0.3]);
        let out = add_index_bands(&cube).unwrap();
        let b = |name: &str| out.value(out.band_index(name).unwrap(), 0, 0, 0);
        assert!((b("NDWI") - (-0.5)).abs() < 1e-7);
        assert!((b("LSWI") - 0.25).abs() < 1e-7);
        assert!((b("NDVI") - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(out.bands.len(), 7);
    }

    #[test]
    fn missing_band_is_named() {
        let cube = TimeSeriesCube::new(
            vec!["GREEN".into(), "RED".into(), "NIR".into()],
            1,
            1,
            vec![100],
            2017,
            vec![0.1, 0.1, 0.5],
        )
        .unwrap();
        match add_index_bands(&cube) {
            Err(Error::MissingBand(name)) => assert_eq!(name, "SWIR1"),
            other => panic!("expected MissingBand, got {other:?}"),
        }
    }

    #[test]
    fn nan_nir_propagates_only_where_used() {
        let cube = four_band_cube([0.1, 0.1, f32::NAN, 0.3]);
        let out = add_index_bands(&cube).unwrap();
        let b = |name: &str| out.value(out.band_index(name).unwrap(), 0, 0, 0);
        assert!(b("NDWI").is_finite());
        assert!(b("LSWI").is_nan());
        assert!(b("NDVI").is_nan());
    }

    #[test]
    fn recomputation_replaces_existing_index_bands() {
        let cube = four_band_cube([0.1, 0.1, 0.5, 0.3]);
        let once = add_index_bands(&cube).unwrap();
        let twice = add_index_bands(&once).unwrap();
        assert_eq!(once.bands, twice.bands);
        assert!(once.bit_equal(&twice));
    }

    proptest! {
        #[test]
        fn index_bounded_for_nonnegative_inputs(a in 0.0f32..10.0, b in 0.0f32..10.0) {
            prop_assume!(a + b > 1e-6);
            let v = normalized_difference(a, b);
            prop_assert!((-1.0..=1.0).contains(&v));
        }

        #[test]
        fn index_scale_invariant(a in 0.01f32..10.0, b in 0.01f32..10.0, s in 0.01f32..100.0) {
            let v1 = normalized_difference(a, b);
            let v2 = normalized_difference(a * s, b * s);
            prop_assert!((v1 - v2).abs() < 1e-5);
        }

        #[test]
        fn index_antisymmetric(a in 0.01f32..10.0, b in 0.01f32..10.0) {
            let v1 = normalized_difference(a, b);
            let v2 = normalized_difference(b, a);
            prop_assert!((v1 + v2).abs() < 1e-6);
        }
    }
}
