//! One-shot domain-shift experiment: synthesize a campaign with two
//! ordinary training seasons and one late-planting test season, train the
//! growth-stage-normalized and fixed-date variants of every classifier,
//! evaluate on the shifted season, and emit a side-by-side comparison.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gsn_core::cube::LabelRaster;
use gsn_core::eval::confusion_and_metrics;
use gsn_core::features::{sieve, DateSelector, SampleBatch, SeasonMode};
use gsn_core::model::{
    self, flatten_samples, forest_train, init_params, ArchDescriptor, Dataset, ForestConfig,
    ModelKind, ModelParams, Predictor, TrainConfig,
};
use gsn_core::phenology::{detect_cube, PhenologyMap, DEFAULT_MIN_AMPLITUDE};
use gsn_core::preprocess::{smooth_cube_threaded, SmoothingConfig};
use gsn_core::rng;
use gsn_core::spectral::add_index_bands;
use gsn_core::synth::{generate_campaign, SynthConfig};

use crate::pipeline::{balanced_samples_variants, SeasonInputs, SplitFilter, Variant};
use crate::tables::{comparison_text, comparison_tsv, render_ppm, ComparisonRow};
use crate::util::{
    write_atomic, write_cube_file, write_labels_file, write_phenology_file, Manifest,
};

/// Fixed-date baselines per year (first, second, third observation).
fn fixed_doys_for_year(year: u16) -> Vec<u16> {
    match year {
        2017 => vec![153, 210, 274],
        2018 => vec![149, 209, 271],
        _ => vec![152, 211, 274],
    }
}

pub struct ReproArgs {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub per_class: usize,
    pub val_per_class: usize,
    pub epochs: usize,
    pub batch: usize,
    pub trees: usize,
    pub shift: f64,
    pub modes: Vec<SeasonMode>,
    pub sieve_size: usize,
    pub threads: usize,
}

struct PreparedSeason {
    year: u16,
    cube: gsn_core::cube::TimeSeriesCube,
    labels: LabelRaster,
    phenology: PhenologyMap,
}

pub fn run(args: &ReproArgs) -> Result<()> {
    let mut manifest = Manifest::new("repro-shift");
    manifest.set("seed", args.seed);
    manifest.set("rows", args.rows);
    manifest.set("cols", args.cols);
    manifest.set("per_class", args.per_class);
    manifest.set("val_per_class", args.val_per_class);
    manifest.set("epochs", args.epochs);
    manifest.set("batch", args.batch);
    manifest.set("trees", args.trees);
    manifest.set("shift_days", args.shift);
    manifest.set(
        "modes",
        args.modes
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );

    // --- synthesize and preprocess the campaign ---
    let base = SynthConfig {
        rows: args.rows,
        cols: args.cols,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let seasons_spec = [(2017u16, 0.0), (2018, 0.0), (2019, args.shift)];
    let campaign = generate_campaign(&base, &seasons_spec)?;
    let smoothing = SmoothingConfig::default();

    let mut prepared = Vec::with_capacity(campaign.len());
    for season in &campaign {
        let year = season.year;
        write_cube_file(
            &args.out_dir.join(format!("cube_{year}.gsnc")),
            &season.cube,
        )?;
        write_labels_file(
            &args.out_dir.join(format!("labels_{year}.gsnl")),
            &season.labels,
        )?;
        let smoothed = smooth_cube_threaded(&season.cube, &smoothing, args.threads)?;
        let indexed = add_index_bands(&smoothed.cube)?;
        write_cube_file(
            &args.out_dir.join(format!("cube_{year}.smooth.gsnc")),
            &indexed,
        )?;
        let phenology = detect_cube(&indexed, DEFAULT_MIN_AMPLITUDE)?;
        write_phenology_file(
            &args.out_dir.join(format!("phenology_{year}.gsnp")),
            &phenology,
        )?;
        prepared.push(PreparedSeason {
            year,
            cube: indexed,
            labels: season.labels.clone(),
            phenology,
        });
    }
    let (train_seasons, test_season) = prepared.split_at(2);
    let test_season = &test_season[0];
    let reference = sieve(&test_season.labels, args.sieve_size);

    // --- per-mode experiments ---
    let mut progression: Vec<(SeasonMode, String, f64)> = Vec::new();
    for &mode in &args.modes {
        let rows = run_mode(args, mode, train_seasons, test_season, &reference)?;
        let best = rows
            .iter()
            .max_by(|a, b| {
                a.metrics
                    .overall_accuracy
                    .total_cmp(&b.metrics.overall_accuracy)
            })
            .expect("at least one model per mode");
        progression.push((
            mode,
            format!("{}/{}", best.model, best.variant),
            best.metrics.overall_accuracy,
        ));
        let tag = mode.to_string();
        write_atomic(
            &args.out_dir.join(format!("metrics_{tag}.tsv")),
            comparison_tsv(&rows).as_bytes(),
        )?;
        write_atomic(
            &args.out_dir.join(format!("metrics_{tag}.txt")),
            comparison_text(&rows).as_bytes(),
        )?;
        println!("{tag}-season comparison:");
        print!("{}", comparison_text(&rows));
    }

    let mut progression_tsv = String::from("mode\tbest_model\tbest_oa\n");
    for (mode, model, oa) in &progression {
        progression_tsv.push_str(&format!("{mode}\t{model}\t{oa:.4}\n"));
    }
    write_atomic(
        &args.out_dir.join("season_progression.tsv"),
        progression_tsv.as_bytes(),
    )?;

    manifest.set_path("out_dir", &args.out_dir);
    manifest.write_next_to(&args.out_dir.join("run"))?;
    Ok(())
}

/// Which (kind, variant) pairs a mode trains.
fn mode_roster(mode: SeasonMode) -> (Vec<(ModelKind, Variant)>, Vec<(Variant, bool)>) {
    match mode {
        SeasonMode::Late => (
            vec![
                (ModelKind::CnnLstmDelta, Variant::GrowthStage),
                (ModelKind::CnnLstm, Variant::GrowthStage),
                (ModelKind::CnnLstm, Variant::Fixed),
                (ModelKind::Cnn, Variant::GrowthStage),
                (ModelKind::Cnn, Variant::Fixed),
                (ModelKind::Lstm, Variant::GrowthStage),
                (ModelKind::Lstm, Variant::Fixed),
            ],
            // (variant, include growing days)
            vec![(Variant::GrowthStage, true), (Variant::Fixed, false)],
        ),
        SeasonMode::Mid => (
            vec![
                (ModelKind::CnnLstmDelta, Variant::GrowthStage),
                (ModelKind::Cnn, Variant::GrowthStage),
            ],
            vec![(Variant::GrowthStage, false)],
        ),
        SeasonMode::Early => (
            vec![(ModelKind::Cnn, Variant::GrowthStage)],
            vec![(Variant::GrowthStage, false)],
        ),
    }
}

fn run_mode(
    args: &ReproArgs,
    mode: SeasonMode,
    train_seasons: &[PreparedSeason],
    test_season: &PreparedSeason,
    reference: &LabelRaster,
) -> Result<Vec<ComparisonRow>> {
    let (nn_roster, forest_roster) = mode_roster(mode);
    let variants: Vec<Variant> = if nn_roster.iter().any(|(_, v)| *v == Variant::Fixed) {
        vec![Variant::GrowthStage, Variant::Fixed]
    } else {
        vec![Variant::GrowthStage]
    };

    let season_inputs: Vec<SeasonInputs> = train_seasons
        .iter()
        .map(|s| SeasonInputs {
            cube: &s.cube,
            labels: &s.labels,
            phenology: Some(&s.phenology),
            fixed_doys: Some(truncate_doys(fixed_doys_for_year(s.year), mode)),
        })
        .collect();

    let mode_index = mode.stage_count() as u64;
    let train_batches = balanced_samples_variants(
        &season_inputs,
        &variants,
        mode,
        SplitFilter::Train,
        args.per_class,
        rng::derive_seed(args.seed, "train-sample", mode_index),
    )?;
    let val_batches = balanced_samples_variants(
        &season_inputs,
        &variants,
        mode,
        SplitFilter::Validation,
        args.val_per_class,
        rng::derive_seed(args.seed, "val-sample", mode_index),
    )?;

    let batch_for = |set: &[(Variant, SampleBatch)], v: Variant| -> SampleBatch {
        set.iter()
            .find(|(bv, _)| *bv == v)
            .map(|(_, b)| b.clone())
            .expect("variant present")
    };

    let train_cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mode_tag = mode.to_string();
    let mut rows = Vec::new();

    for (kind, variant) in nn_roster {
        let desc = ArchDescriptor::new(kind, mode)?;
        // fixed-date inputs carry no growing-days scalar by construction
        let desc = if variant == Variant::Fixed && desc.with_delta {
            bail!("fixed variant cannot feed the growing-days model");
        } else {
            desc
        };
        let train_samples = batch_for(&train_batches, variant);
        let val_samples = batch_for(&val_batches, variant);
        let train_data = Dataset::<f32>::from_samples(&train_samples, &desc)?;
        let val_data = Dataset::<f32>::from_samples(&val_samples, &desc)?;
        let mut params: ModelParams<f32> = init_params(&desc, args.seed)?;
        let history = model::train(&mut params, &train_data, &val_data, &train_cfg)
            .with_context(|| format!("training {} {}", kind.name(), variant.name()))?;

        let stem = format!("{mode_tag}_{}_{}", variant.name(), kind.name());
        let mut weight_bytes = Vec::new();
        model::write_weights(&params, &mut weight_bytes)?;
        write_atomic(
            &args.out_dir.join(format!("model_{stem}.gsnw")),
            &weight_bytes,
        )?;
        write_atomic(
            &args.out_dir.join(format!("history_{stem}.tsv")),
            model::train::history_table(&history).as_bytes(),
        )?;

        let map = predict_for_variant(
            &Predictor::Network(params),
            test_season,
            variant,
            mode,
        )?;
        save_map(&args.out_dir, &stem, &map)?;
        let metrics = confusion_and_metrics(&map, reference)?;
        rows.push(ComparisonRow {
            model: kind.name().to_string(),
            variant: variant.name().to_string(),
            metrics,
        });
    }

    for (variant, include_delta) in forest_roster {
        let train_samples = batch_for(&train_batches, variant);
        let forest_cfg = ForestConfig {
            trees: args.trees,
            seed: args.seed,
            include_delta,
            ..ForestConfig::default()
        };
        let (features, feature_len, labels) = flatten_samples(&train_samples, include_delta)?;
        let forest = forest_train(&features, feature_len, &labels, &forest_cfg)?;
        let stem = format!("{mode_tag}_{}_forest", variant.name());
        let mut forest_bytes = Vec::new();
        model::write_forest(&forest, &mut forest_bytes)?;
        write_atomic(
            &args.out_dir.join(format!("model_{stem}.gsnf")),
            &forest_bytes,
        )?;

        let map = predict_for_variant(
            &Predictor::<f32>::Forest(forest),
            test_season,
            variant,
            mode,
        )?;
        save_map(&args.out_dir, &stem, &map)?;
        let metrics = confusion_and_metrics(&map, reference)?;
        rows.push(ComparisonRow {
            model: "forest".to_string(),
            variant: variant.name().to_string(),
            metrics,
        });
    }
    Ok(rows)
}

fn truncate_doys(mut doys: Vec<u16>, mode: SeasonMode) -> Vec<u16> {
    doys.truncate(mode.stage_count());
    doys
}

fn predict_for_variant(
    predictor: &Predictor<f32>,
    test_season: &PreparedSeason,
    variant: Variant,
    mode: SeasonMode,
) -> Result<LabelRaster> {
    let selector = match variant {
        Variant::GrowthStage => DateSelector::GrowthStage(&test_season.phenology),
        Variant::Fixed => {
            DateSelector::Fixed(truncate_doys(fixed_doys_for_year(test_season.year), mode))
        }
    };
    Ok(model::predict_map(
        predictor,
        &test_season.cube,
        None,
        &selector,
        mode,
    )?)
}

fn save_map(out_dir: &Path, stem: &str, map: &LabelRaster) -> Result<()> {
    write_labels_file(&out_dir.join(format!("map_{stem}.gsnl")), map)?;
    write_atomic(
        &out_dir.join(format!("map_{stem}.ppm")),
        &render_ppm(map),
    )?;
    Ok(())
}
