//! Whole-raster prediction maps.

use ndarray::NdFloat;

use crate::cube::{LabelRaster, TimeSeriesCube, CLASS_MASKED, CLASS_OTHER};
use crate::error::{Error, Result};
use crate::features::{DateSelector, Extractor, SampleBatch, SeasonMode};
use crate::model::forest::Forest;
use crate::model::net::{self, Dataset};
use crate::model::params::ModelParams;

/// Either classifier family behind one prediction surface.
pub enum Predictor<F> {
    Network(ModelParams<F>),
    Forest(Forest),
}

impl<F: NdFloat> Predictor<F> {
    fn check_season(&self, season: SeasonMode, channels: usize) -> Result<()> {
        match self {
            Predictor::Network(params) => {
                if params.desc.season != season {
                    return Err(Error::ModeMismatch(format!(
                        "model is {} season, requested {season}",
                        params.desc.season
                    )));
                }
                Ok(())
            }
            Predictor::Forest(forest) => {
                let base = channels * season.stage_count();
                let expected = base + usize::from(forest.config.include_delta);
                if forest.feature_len != expected {
                    return Err(Error::ModeMismatch(format!(
                        "forest expects {} features, {season} season provides {expected}",
                        forest.feature_len
                    )));
                }
                Ok(())
            }
        }
    }
}

const PREDICT_CHUNK: usize = 1024;

/// Classifies every unmasked interior pixel; untestable pixels (edges,
/// masked, NaN inputs, missing stages) come back as 255.
pub fn predict_map<F: NdFloat>(
    predictor: &Predictor<F>,
    cube: &TimeSeriesCube,
    mask: Option<&LabelRaster>,
    selector: &DateSelector,
    season: SeasonMode,
) -> Result<LabelRaster> {
    predictor.check_season(season, crate::cube::MODEL_BANDS.len())?;
    if let Some(mask) = mask {
        if mask.rows != cube.rows || mask.cols != cube.cols {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} does not match cube {}x{}",
                mask.rows, mask.cols, cube.rows, cube.cols
            )));
        }
    }
    // extraction needs a label raster; prediction itself ignores the class
    let all_other = LabelRaster::filled(cube.rows, cube.cols, cube.year, CLASS_OTHER)?;
    let labels_for_extract = mask.unwrap_or(&all_other);
    let extractor = Extractor::new(cube, labels_for_extract, selector, season)?;

    let mut out = LabelRaster::filled(cube.rows, cube.cols, cube.year, CLASS_MASKED)?;
    let mut pending: Vec<crate::features::Sample> = Vec::with_capacity(PREDICT_CHUNK);

    let flush = |pending: &mut Vec<crate::features::Sample>,
                 out: &mut LabelRaster|
     -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        match predictor {
            Predictor::Network(params) => {
                let batch = SampleBatch {
                    season,
                    channels: crate::cube::MODEL_BANDS.len(),
                    timesteps: season.stage_count(),
                    patch: crate::features::PATCH_SIZE,
                    samples: std::mem::take(pending),
                };
                let data = Dataset::<F>::from_samples(&batch, &params.desc)?;
                let indices: Vec<usize> = (0..data.len()).collect();
                let probs = net::forward_infer(params, &data.gather(&indices))?;
                for (row, sample) in probs.rows().into_iter().zip(&batch.samples) {
                    out.set(
                        sample.row as usize,
                        sample.col as usize,
                        net::argmax_class(row),
                    );
                }
            }
            Predictor::Forest(forest) => {
                for sample in pending.drain(..) {
                    let mut feats = sample.x_lstm.clone();
                    if forest.config.include_delta {
                        let delta = sample.delta_days.ok_or_else(|| {
                            Error::ModeMismatch("forest expects growing days".into())
                        })?;
                        feats.push(delta);
                    }
                    let (label, _) = forest.predict_one(&feats)?;
                    out.set(sample.row as usize, sample.col as usize, label);
                }
            }
        }
        Ok(())
    };

    for row in 0..cube.rows {
        for col in 0..cube.cols {
            if let Some(mask) = mask {
                if mask.get(row, col) == CLASS_MASKED {
                    continue;
                }
            }
            match extractor.extract((row, col)) {
                Ok(sample) => {
                    pending.push(sample);
                    if pending.len() >= PREDICT_CHUNK {
                        flush(&mut pending, &mut out)?;
                    }
                }
                Err(_) => {
                    // edge, NaN, or missing stages: stays masked
                }
            }
        }
    }
    flush(&mut pending, &mut out)?;
    Ok(out)
}
