//! Confusion-matrix metrics and per-class NDVI histogram diagnostics.
//!
//! Overall accuracy is trace over total; user's accuracy (precision) is the
//! diagonal over the predicted-column sum; producer's accuracy (recall) is
//! the diagonal over the reference-row sum. Classes with an empty column or
//! row report their ratio as undefined rather than zero.

use crate::cube::{LabelRaster, TimeSeriesCube, CLASS_MASKED, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// `confusion[reference][predicted]`.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub overall_accuracy: f64,
    /// Precision per class; `None` when the class was never predicted.
    pub user_accuracy: [Option<f64>; NUM_CLASSES],
    /// Recall per class; `None` when the class has no reference pixels.
    pub producer_accuracy: [Option<f64>; NUM_CLASSES],
    /// Reference pixel count per class.
    pub support: [u64; NUM_CLASSES],
    pub total: u64,
}

/// Tallies predictions against reference labels over unmasked pixels.
pub fn confusion_and_metrics(predicted: &LabelRaster, reference: &LabelRaster) -> Result<Metrics> {
    if predicted.rows != reference.rows || predicted.cols != reference.cols {
        return Err(Error::ShapeMismatch(format!(
            "predicted {}x{} vs reference {}x{}",
            predicted.rows, predicted.cols, reference.rows, reference.cols
        )));
    }
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (p, r) in predicted.classes.iter().zip(&reference.classes) {
        if *p == CLASS_MASKED || *r == CLASS_MASKED {
            continue;
        }
        confusion[*r as usize][*p as usize] += 1;
    }
    metrics_from_confusion(confusion)
}

/// Derives OA/UA/PA from a confusion matrix.
pub fn metrics_from_confusion(confusion: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Result<Metrics> {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::EmptyInput("no unmasked pixels to evaluate".into()));
    }
    let trace: u64 = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
    let mut user = [None; NUM_CLASSES];
    let mut producer = [None; NUM_CLASSES];
    let mut support = [0u64; NUM_CLASSES];
    for class in 0..NUM_CLASSES {
        let col_sum: u64 = (0..NUM_CLASSES).map(|r| confusion[r][class]).sum();
        let row_sum: u64 = confusion[class].iter().sum();
        support[class] = row_sum;
        if col_sum > 0 {
            user[class] = Some(confusion[class][class] as f64 / col_sum as f64);
        }
        if row_sum > 0 {
            producer[class] = Some(confusion[class][class] as f64 / row_sum as f64);
        }
    }
    Ok(Metrics {
        confusion,
        overall_accuracy: trace as f64 / total as f64,
        user_accuracy: user,
        producer_accuracy: producer,
        support,
        total,
    })
}

/// Per-class histogram of one band's values at one date.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHistograms {
    pub doy: u16,
    /// Index of the timestep actually used (nearest DOY).
    pub time_index: usize,
    pub bin_min: f64,
    pub bin_max: f64,
    /// `counts[class][bin]`.
    pub counts: Vec<Vec<u64>>,
    /// Mean value per class; `None` for empty classes.
    pub means: [Option<f64>; NUM_CLASSES],
}

/// Histograms NDVI at (the timestep nearest to) `doy`, split by reference
/// class, over unmasked pixels. Bins are uniform over `[bin_min, bin_max]`;
/// out-of-range values clamp into the end bins, NaNs are skipped.
pub fn class_histograms(
    cube: &TimeSeriesCube,
    labels: &LabelRaster,
    doy: u16,
    bins: usize,
    bin_min: f64,
    bin_max: f64,
) -> Result<ClassHistograms> {
    if labels.rows != cube.rows || labels.cols != cube.cols {
        return Err(Error::ShapeMismatch(format!(
            "labels {}x{} do not match cube {}x{}",
            labels.rows, labels.cols, cube.rows, cube.cols
        )));
    }
    if bins == 0 || !(bin_max > bin_min) {
        return Err(Error::InvalidConfig(format!(
            "need bins >= 1 and bin_max > bin_min, got {bins} over [{bin_min}, {bin_max}]"
        )));
    }
    let band = cube.require_band("NDVI")?;
    let time_index = cube
        .doys
        .iter()
        .enumerate()
        .min_by_key(|(_, &d)| d.abs_diff(doy))
        .map(|(i, _)| i)
        .expect("cube has at least one timestep");

    let width = (bin_max - bin_min) / bins as f64;
    let mut counts = vec![vec![0u64; bins]; NUM_CLASSES];
    let mut sums = [0f64; NUM_CLASSES];
    let mut ns = [0u64; NUM_CLASSES];
    for r in 0..cube.rows {
        for c in 0..cube.cols {
            let class = labels.get(r, c);
            if class == CLASS_MASKED {
                continue;
            }
            let v = cube.value(band, time_index, r, c) as f64;
            if !v.is_finite() {
                continue;
            }
            let bin = (((v - bin_min) / width).floor() as i64).clamp(0, bins as i64 - 1);
            counts[class as usize][bin as usize] += 1;
            sums[class as usize] += v;
            ns[class as usize] += 1;
        }
    }
    let mut means = [None; NUM_CLASSES];
    for class in 0..NUM_CLASSES {
        if ns[class] > 0 {
            means[class] = Some(sums[class] / ns[class] as f64);
        }
    }
    Ok(ClassHistograms {
        doy,
        time_index,
        bin_min,
        bin_max,
        counts,
        means,
    })
}
