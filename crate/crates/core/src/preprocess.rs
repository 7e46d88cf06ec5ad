//! QA masking, gap filling, and Savitzky-Golay smoothing.
//!
//! Smoothing runs independently per (band, row, col) series: gaps are filled
//! by linear interpolation in DOY, then a least-squares polynomial of degree
//! `polyorder` is fit over a centered window and evaluated at the center.
//! Boundary windows are truncated one-sided rather than mirrored, so no data
//! is invented beyond the season.

use crate::cube::{QaMask, TimeSeriesCube};
use crate::error::{Error, Result};

/// Index bands are recomputed from smoothed reflectance instead of being
/// smoothed themselves; see [`crate::spectral::add_index_bands`].
const INDEX_BANDS: [&str; 3] = ["NDWI", "LSWI", "NDVI"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothingConfig {
    /// Window length in timesteps; odd, >= 3.
    pub window: usize,
    /// Polynomial degree; < window.
    pub polyorder: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            window: 7,
            polyorder: 2,
        }
    }
}

impl SmoothingConfig {
    pub fn new(window: usize, polyorder: usize) -> Result<Self> {
        let cfg = Self { window, polyorder };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.polyorder >= self.window {
            return Err(Error::InvalidConfig(format!(
                "polyorder {} must be < window {}",
                self.polyorder, self.window
            )));
        }
        Ok(())
    }
}

/// Sets every flagged (time, row, col) observation to NaN in all bands.
pub fn apply_qa_mask(cube: &TimeSeriesCube, mask: &QaMask) -> Result<TimeSeriesCube> {
    if mask.rows != cube.rows || mask.cols != cube.cols || mask.timesteps != cube.timesteps {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{}x{} does not match cube {}x{}x{}",
            mask.timesteps, mask.rows, mask.cols, cube.timesteps, cube.rows, cube.cols
        )));
    }
    let mut out = cube.clone();
    for t in 0..cube.timesteps {
        for r in 0..cube.rows {
            for c in 0..cube.cols {
                if mask.get(t, r, c) {
                    for b in 0..cube.bands.len() {
                        out.set(b, t, r, c, f32::NAN);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Fills NaNs by linear interpolation in DOY between the nearest finite
/// neighbors; leading/trailing NaNs copy the nearest finite value.
pub fn fill_gaps(series: &[f64], doys: &[u16]) -> Result<Vec<f64>> {
    assert_eq!(series.len(), doys.len(), "series/doys length mismatch");
    let finite: Vec<usize> = (0..series.len()).filter(|&i| series[i].is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::AllNan);
    }
    let mut out = series.to_vec();
    let first = finite[0];
    let last = *finite.last().unwrap();
    for i in 0..first {
        out[i] = series[first];
    }
    for i in last + 1..series.len() {
        out[i] = series[last];
    }
    for w in finite.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo > 1 {
            let (d0, d1) = (doys[lo] as f64, doys[hi] as f64);
            let (v0, v1) = (series[lo], series[hi]);
            for i in lo + 1..hi {
                let frac = (doys[i] as f64 - d0) / (d1 - d0);
                out[i] = v0 + frac * (v1 - v0);
            }
        }
    }
    Ok(out)
}

/// Savitzky-Golay smoothing of a finite series on its index grid.
pub fn savgol_smooth(series: &[f64], config: &SmoothingConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = series.len();
    if n < config.window {
        return Err(Error::SeriesTooShort {
            len: n,
            window: config.window,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::AllNan);
    }
    let half = config.window / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let left = i.min(half);
        let right = (n - 1 - i).min(half);
        out.push(fit_at_center(
            &series[i - left..=i + right],
            left,
            config.polyorder,
        ));
    }
    Ok(out)
}

/// Least-squares polynomial fit over `window`, evaluated at offset `center`.
///
/// Offsets are centered at the evaluation point, so the fitted value is just
/// the constant coefficient. Normal equations are fine at these sizes.
fn fit_at_center(window: &[f64], center: usize, degree: usize) -> f64 {
    let m = degree + 1;
    // gram[i][j] = sum_x x^(i+j), rhs[i] = sum_x x^i * y(x)
    let mut gram = vec![vec![0.0f64; m]; m];
    let mut rhs = vec![0.0f64; m];
    for (idx, &y) in window.iter().enumerate() {
        let x = idx as f64 - center as f64;
        let mut pow = 1.0;
        let mut powers = Vec::with_capacity(2 * m - 1);
        for _ in 0..2 * m - 1 {
            powers.push(pow);
            pow *= x;
        }
        for i in 0..m {
            rhs[i] += powers[i] * y;
            for j in 0..m {
                gram[i][j] += powers[i + j];
            }
        }
    }
    let coeffs = solve_symmetric(&mut gram, &mut rhs);
    coeffs[0]
}

/// Gaussian elimination with partial pivoting; sizes here are <= polyorder+1.
fn solve_symmetric(a: &mut [Vec<f64>], b: &mut [f64]) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / diag;
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Smoothed cube plus the per-pixel unusable flags.
#[derive(Debug, Clone)]
pub struct SmoothedCube {
    pub cube: TimeSeriesCube,
    /// `true` where a pixel had an all-NaN series and could not be filled.
    pub unusable: Vec<bool>,
}

impl SmoothedCube {
    #[inline]
    pub fn is_unusable(&self, row: usize, col: usize) -> bool {
        self.unusable[row * self.cube.cols + col]
    }
}

/// Fills and smooths every non-index band of every pixel. Pixels whose
/// series is all NaN stay all NaN and are flagged unusable. Index bands
/// pass through untouched; recompute them from the smoothed reflectance.
pub fn smooth_cube(cube: &TimeSeriesCube, config: &SmoothingConfig) -> Result<SmoothedCube> {
    smooth_cube_threaded(cube, config, 1)
}

/// Like [`smooth_cube`] but splitting bands across up to `threads` workers.
/// The result is identical for any thread count.
pub fn smooth_cube_threaded(
    cube: &TimeSeriesCube,
    config: &SmoothingConfig,
    threads: usize,
) -> Result<SmoothedCube> {
    config.validate()?;
    if cube.timesteps < config.window {
        return Err(Error::SeriesTooShort {
            len: cube.timesteps,
            window: config.window,
        });
    }
    let mut out = cube.clone();
    let band_len = cube.timesteps * cube.rows * cube.cols;
    let smoothable: Vec<usize> = (0..cube.bands.len())
        .filter(|&b| !INDEX_BANDS.contains(&cube.bands[b].as_str()))
        .collect();

    let workers = threads.max(1).min(smoothable.len().max(1));
    let mut band_chunks: Vec<(usize, &mut [f32])> = Vec::new();
    {
        let mut rest = out.data.as_mut_slice();
        let mut offset_band = 0;
        while !rest.is_empty() {
            let (head, tail) = rest.split_at_mut(band_len);
            band_chunks.push((offset_band, head));
            rest = tail;
            offset_band += 1;
        }
    }
    let band_chunks: Vec<(usize, &mut [f32])> = band_chunks
        .into_iter()
        .filter(|(b, _)| smoothable.contains(b))
        .collect();

    let smooth_band = |plane: &mut [f32]| {
        for r in 0..cube.rows {
            for c in 0..cube.cols {
                let mut series = Vec::with_capacity(cube.timesteps);
                for t in 0..cube.timesteps {
                    series.push(plane[(t * cube.rows + r) * cube.cols + c] as f64);
                }
                match fill_gaps(&series, &cube.doys) {
                    Ok(filled) => {
                        let smoothed = savgol_smooth(&filled, config)
                            .expect("filled series is finite and long enough");
                        for (t, v) in smoothed.into_iter().enumerate() {
                            plane[(t * cube.rows + r) * cube.cols + c] = v as f32;
                        }
                    }
                    Err(Error::AllNan) => {} // stays NaN, flagged below
                    Err(e) => unreachable!("fill_gaps only fails on all-NaN: {e}"),
                }
            }
        }
    };

    if workers <= 1 {
        for (_, plane) in band_chunks {
            smooth_band(plane);
        }
    } else {
        let queue: Vec<Vec<&mut [f32]>> = {
            let mut buckets: Vec<Vec<&mut [f32]>> = (0..workers).map(|_| Vec::new()).collect();
            for (i, (_, plane)) in band_chunks.into_iter().enumerate() {
                buckets[i % workers].push(plane);
            }
            buckets
        };
        std::thread::scope(|scope| {
            for bucket in queue {
                scope.spawn(move || {
                    for plane in bucket {
                        smooth_band(plane);
                    }
                });
            }
        });
    }

    // A pixel is unusable when any smoothable band is still all NaN.
    let mut unusable = vec![false; cube.rows * cube.cols];
    for r in 0..cube.rows {
        for c in 0..cube.cols {
            'bands: for &b in &smoothable {
                for t in 0..cube.timesteps {
                    if out.value(b, t, r, c).is_finite() {
                        continue 'bands;
                    }
                }
                unusable[r * cube.cols + c] = true;
                break;
            }
        }
    }
    Ok(SmoothedCube { cube: out, unusable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::TimeSeriesCube;

    fn cube_2band(rows: usize, cols: usize, doys: Vec<u16>, fill: impl Fn(usize) -> f32) -> TimeSeriesCube {
        let t = doys.len();
        let data: Vec<f32> = (0..2 * t * rows * cols).map(fill).collect();
        TimeSeriesCube::new(
            vec!["RED".into(), "NIR".into()],
            rows,
            cols,
            doys,
            2017,
            data,
        )
        .unwrap()
    }

    #[test]
    fn qa_mask_identity_when_clear() {
        let cube = cube_2band(2, 3, vec![10, 20, 30], |i| i as f32 * 0.01);
        let mask = QaMask::all_clear(2, 3, 3);
        let out = apply_qa_mask(&cube, &mask).unwrap();
        assert!(out.bit_equal(&cube));
    }

    #[test]
    fn qa_mask_all_flagged_gives_all_nan() {
        let cube = cube_2band(2, 2, vec![10, 20], |i| i as f32);
        let mask = QaMask::new(2, 2, 2, vec![true; 8]).unwrap();
        let out = apply_qa_mask(&cube, &mask).unwrap();
        assert!(out.data.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn qa_mask_single_cell_hits_every_band_once() {
        let cube = cube_2band(3, 3, vec![10, 20, 30], |i| i as f32 * 0.5);
        let mut mask = QaMask::all_clear(3, 3, 3);
        mask.set(2, 1, 0, true);
        let out = apply_qa_mask(&cube, &mask).unwrap();
        let nan_count = out.data.iter().filter(|v| v.is_nan()).count();
        assert_eq!(nan_count, 2); // one per band
        assert!(out.value(0, 2, 1, 0).is_nan());
        assert!(out.value(1, 2, 1, 0).is_nan());
        // all other entries unchanged
        let changed = out
            .data
            .iter()
            .zip(&cube.data)
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count();
        assert_eq!(changed, 2);
    }

    #[test]
    fn qa_mask_shape_mismatch() {
        let cube = cube_2band(2, 2, vec![10, 20], |i| i as f32);
        let mask = QaMask::all_clear(3, 2, 2);
        assert!(matches!(
            apply_qa_mask(&cube, &mask),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn fill_gaps_midpoint() {
        let out = fill_gaps(&[1.0, f64::NAN, 3.0], &[10, 20, 30]).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn fill_gaps_edge_extension() {
        let out = fill_gaps(&[f64::NAN, f64::NAN, 5.0], &[10, 20, 30]).unwrap();
        assert_eq!(out, vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn fill_gaps_interpolates_in_doy_not_index() {
        // gap spans unequal DOY spacing: 10 -> 40 with sample at 20
        let out = fill_gaps(&[1.0, f64::NAN, 4.0], &[10, 20, 40]).unwrap();
        assert!((out[1] - 2.0).abs() < 1e-12); // (20-10)/(40-10) of the way
    }

    #[test]
    fn fill_gaps_all_nan_errors() {
        assert!(matches!(
            fill_gaps(&[f64::NAN, f64::NAN], &[10, 20]),
            Err(Error::AllNan)
        ));
    }

    /// Brute-force oracle: for each NaN scan outward for the nearest finite
    /// neighbors and interpolate directly.
    fn fill_gaps_oracle(series: &[f64], doys: &[u16]) -> Vec<f64> {
        let n = series.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            if series[i].is_finite() {
                out[i] = series[i];
                continue;
            }
            let left = (0..i).rev().find(|&j| series[j].is_finite());
            let right = (i + 1..n).find(|&j| series[j].is_finite());
            out[i] = match (left, right) {
                (Some(l), Some(r)) => {
                    let frac = (doys[i] as f64 - doys[l] as f64)
                        / (doys[r] as f64 - doys[l] as f64);
                    series[l] + frac * (series[r] - series[l])
                }
                (Some(l), None) => series[l],
                (None, Some(r)) => series[r],
                (None, None) => unreachable!(),
            };
        }
        out
    }

    #[test]
    fn fill_gaps_matches_bruteforce_on_random_patterns() {
        use rand::Rng;
        let mut rng = crate::rng::stream(7, "fillgap-test", 0);
        for _ in 0..200 {
            let n = rng.gen_range(2..20);
            let doys: Vec<u16> = {
                let mut d = 0u16;
                (0..n)
                    .map(|_| {
                        d += rng.gen_range(1..12);
                        d
                    })
                    .collect()
            };
            let mut series: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for v in series.iter_mut() {
                if rng.gen_bool(0.4) {
                    *v = f64::NAN;
                }
            }
            if series.iter().all(|v| v.is_nan()) {
                series[0] = 1.0;
            }
            let got = fill_gaps(&series, &doys).unwrap();
            let want = fill_gaps_oracle(&series, &doys);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
            }
        }
    }

    #[test]
    fn savgol_constant_series_unchanged() {
        let cfg = SmoothingConfig::new(5, 2).unwrap();
        let out = savgol_smooth(&[2.0; 5], &cfg).unwrap();
        for v in out {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn savgol_reproduces_quadratic() {
        let cfg = SmoothingConfig::new(5, 2).unwrap();
        let series: Vec<f64> = (0..12).map(|i| 0.1 * (i * i) as f64 - i as f64 + 3.0).collect();
        let out = savgol_smooth(&series, &cfg).unwrap();
        for (i, (o, s)) in out.iter().zip(&series).enumerate() {
            assert!((o - s).abs() < 1e-6, "i={i}: {o} vs {s}");
        }
    }

    /// Direct least-squares fit per window, solved through an independent
    /// textbook route (explicit 3x3 Cramer solve on the truncated window).
    fn brute_force_window_fit(series: &[f64], i: usize, window: usize, degree: usize) -> f64 {
        let half = window / 2;
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(series.len() - 1);
        let xs: Vec<f64> = (lo..=hi).map(|j| j as f64 - i as f64).collect();
        let ys: Vec<f64> = (lo..=hi).map(|j| series[j]).collect();
        assert!(degree == 2, "oracle written for degree 2");
        let s: Vec<f64> = (0..5)
            .map(|p| xs.iter().map(|x| x.powi(p)).sum())
            .collect();
        let b: Vec<f64> = (0..3)
            .map(|p| {
                xs.iter()
                    .zip(&ys)
                    .map(|(x, y)| x.powi(p as i32) * y)
                    .sum()
            })
            .collect();
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let a = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
        let a0 = [[b[0], s[1], s[2]], [b[1], s[2], s[3]], [b[2], s[3], s[4]]];
        det3(a0) / det3(a)
    }

    #[test]
    fn savgol_spike_matches_bruteforce_and_stays_between() {
        let cfg = SmoothingConfig::new(5, 2).unwrap();
        let series = [0.0, 0.0, 1.0, 0.0, 0.0];
        let out = savgol_smooth(&series, &cfg).unwrap();
        assert!(out[2] > 0.0 && out[2] < 1.0, "spike value {}", out[2]);
        for i in 0..series.len() {
            let want = brute_force_window_fit(&series, i, 5, 2);
            assert!((out[i] - want).abs() < 1e-10, "i={i}: {} vs {want}", out[i]);
        }
    }

    #[test]
    fn savgol_rejects_short_series() {
        let cfg = SmoothingConfig::new(5, 2).unwrap();
        assert!(matches!(
            savgol_smooth(&[1.0, 2.0, 3.0], &cfg),
            Err(Error::SeriesTooShort { len: 3, window: 5 })
        ));
    }

    #[test]
    fn savgol_rejects_bad_config() {
        assert!(SmoothingConfig::new(4, 2).is_err());
        assert!(SmoothingConfig::new(5, 5).is_err());
        assert!(SmoothingConfig::new(1, 0).is_err());
    }

    #[test]
    fn smooth_cube_decomposes_per_pixel() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, "smooth-test", 0);
        let doys: Vec<u16> = (0..9).map(|i| 10 + 10 * i as u16).collect();
        let cube = cube_2band(3, 4, doys.clone(), |_| 0.0);
        let mut cube = cube;
        for v in cube.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let cfg = SmoothingConfig::default();
        let smoothed = smooth_cube(&cube, &cfg).unwrap();
        for b in 0..2 {
            for r in 0..3 {
                for c in 0..4 {
                    let series = cube.series_f64(b, r, c);
                    let filled = fill_gaps(&series, &doys).unwrap();
                    let want = savgol_smooth(&filled, &cfg).unwrap();
                    for t in 0..9 {
                        let got = smoothed.cube.value(b, t, r, c);
                        assert!((got as f64 - want[t]).abs() < 1e-6);
                    }
                }
            }
        }
        assert!(smoothed.unusable.iter().all(|&u| !u));
    }

    #[test]
    fn smooth_cube_flags_all_nan_pixel() {
        let doys: Vec<u16> = (0..7).map(|i| 10 + 10 * i as u16).collect();
        let mut cube = cube_2band(3, 3, doys, |i| i as f32 * 0.01);
        for b in 0..2 {
            for t in 0..7 {
                cube.set(b, t, 1, 1, f32::NAN);
            }
        }
        let smoothed = smooth_cube(&cube, &SmoothingConfig::default()).unwrap();
        assert!(smoothed.is_unusable(1, 1));
        assert!(!smoothed.is_unusable(0, 0));
        for t in 0..7 {
            assert!(smoothed.cube.value(0, t, 1, 1).is_nan());
        }
        // every other value came out finite
        for b in 0..2 {
            for t in 0..7 {
                for r in 0..3 {
                    for c in 0..3 {
                        if (r, c) != (1, 1) {
                            assert!(smoothed.cube.value(b, t, r, c).is_finite());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn smooth_cube_constant_identity() {
        let doys: Vec<u16> = (0..8).map(|i| 10 + 5 * i as u16).collect();
        let cube = cube_2band(2, 2, doys, |_| 0.4);
        let smoothed = smooth_cube(&cube, &SmoothingConfig::default()).unwrap();
        for (a, b) in smoothed.cube.data.iter().zip(&cube.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn smooth_cube_threaded_matches_serial() {
        use rand::Rng;
        let mut rng = crate::rng::stream(13, "smooth-thread", 0);
        let doys: Vec<u16> = (0..10).map(|i| 10 + 9 * i as u16).collect();
        let mut cube = cube_2band(4, 5, doys, |_| 0.0);
        for v in cube.data.iter_mut() {
            *v = if rng.gen_bool(0.1) {
                f32::NAN
            } else {
                rng.gen_range(0.0..1.0)
            };
        }
        let cfg = SmoothingConfig::default();
        let serial = smooth_cube(&cube, &cfg).unwrap();
        let parallel = smooth_cube_threaded(&cube, &cfg, 4).unwrap();
        assert!(serial.cube.bit_equal(&parallel.cube));
        assert_eq!(serial.unusable, parallel.unusable);
    }
}
