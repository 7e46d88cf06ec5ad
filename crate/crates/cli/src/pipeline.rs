//! Sample assembly shared by the `features` command and `repro-shift`:
//! homogeneity masking, quadrant selection, extractability filtering, and
//! seeded class balancing.

use anyhow::{bail, Result};
use gsn_core::cube::{LabelRaster, TimeSeriesCube, CLASS_MASKED};
use gsn_core::features::{
    homogeneity_mask, DateSelector, Extractor, SampleBatch, SeasonMode, PATCH_MARGIN,
};
use gsn_core::phenology::PhenologyMap;
use gsn_core::sampling::{balanced_subsample, quadrant_split, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitFilter {
    Train,
    Validation,
    All,
}

impl SplitFilter {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => SplitFilter::Train,
            "val" => SplitFilter::Validation,
            "all" => SplitFilter::All,
            other => bail!("unknown split {other} (expected train|val|all)"),
        })
    }

    fn admits(self, split: Split) -> bool {
        match self {
            SplitFilter::All => true,
            SplitFilter::Train => split == Split::Train,
            SplitFilter::Validation => split == Split::Validation,
        }
    }
}

/// How timesteps are chosen, in an owned form that can build a selector.
#[derive(Debug, Clone)]
pub enum SelectorSpec {
    GrowthStage,
    Fixed(Vec<u16>),
}

impl SelectorSpec {
    pub fn to_selector<'a>(&self, phenology: Option<&'a PhenologyMap>) -> Result<DateSelector<'a>> {
        match self {
            SelectorSpec::GrowthStage => match phenology {
                Some(map) => Ok(DateSelector::GrowthStage(map)),
                None => bail!("growth-stage selector needs a phenology map"),
            },
            SelectorSpec::Fixed(doys) => Ok(DateSelector::Fixed(doys.clone())),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text == "gs" {
            return Ok(SelectorSpec::GrowthStage);
        }
        if let Some(rest) = text.strip_prefix("fixed:") {
            let doys: Vec<u16> = rest
                .split(',')
                .map(|p| p.trim().parse::<u16>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| anyhow::anyhow!("bad fixed DOY list `{rest}`"))?;
            if doys.is_empty() {
                bail!("fixed selector needs at least one DOY");
            }
            return Ok(SelectorSpec::Fixed(doys));
        }
        bail!("unknown selector `{text}` (expected gs or fixed:DOY,DOY,...)")
    }
}

/// One season's inputs for sample assembly.
pub struct SeasonInputs<'a> {
    pub cube: &'a TimeSeriesCube,
    /// Raw (un-homogeneity-filtered) labels.
    pub labels: &'a LabelRaster,
    pub phenology: Option<&'a PhenologyMap>,
    /// Fixed DOYs for this season, when a fixed variant is requested.
    pub fixed_doys: Option<Vec<u16>>,
}

/// Which date selection a variant uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    GrowthStage,
    Fixed,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::GrowthStage => "gs",
            Variant::Fixed => "fixed",
        }
    }
}

/// Collects pixels that extract successfully under every requested
/// variant (pooled across the given seasons and quadrant split), balances
/// them once with the seed, and returns one batch per variant built from
/// the same pixel selection.
pub fn balanced_samples_variants(
    seasons: &[SeasonInputs],
    variants: &[Variant],
    season_mode: SeasonMode,
    split: SplitFilter,
    per_class: usize,
    seed: u64,
) -> Result<Vec<(Variant, SampleBatch)>> {
    if seasons.is_empty() || variants.is_empty() {
        bail!("need at least one season and one variant");
    }
    let masked: Vec<LabelRaster> = seasons
        .iter()
        .map(|s| homogeneity_mask(s.labels).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;

    // selectors per (season, variant), owned so extractors can borrow them
    let mut selectors: Vec<Vec<DateSelector>> = Vec::with_capacity(seasons.len());
    for season in seasons {
        let mut per_variant = Vec::with_capacity(variants.len());
        for variant in variants {
            let selector = match variant {
                Variant::GrowthStage => {
                    SelectorSpec::GrowthStage.to_selector(season.phenology)?
                }
                Variant::Fixed => match &season.fixed_doys {
                    Some(doys) => DateSelector::Fixed(doys.clone()),
                    None => bail!("fixed variant requested without fixed DOYs"),
                },
            };
            per_variant.push(selector);
        }
        selectors.push(per_variant);
    }

    let mut extractors: Vec<Vec<Extractor>> = Vec::with_capacity(seasons.len());
    for (si, season) in seasons.iter().enumerate() {
        let mut per_variant = Vec::with_capacity(variants.len());
        for selector in &selectors[si] {
            per_variant.push(Extractor::new(
                season.cube,
                &masked[si],
                selector,
                season_mode,
            )?);
        }
        extractors.push(per_variant);
    }

    // candidates: (season, row, col) extractable under every variant
    let mut candidates: Vec<((usize, usize, usize), u8)> = Vec::new();
    for (si, season) in seasons.iter().enumerate() {
        let labels = &masked[si];
        let assignment = quadrant_split(labels.rows, labels.cols)?;
        let rows = season.cube.rows;
        let cols = season.cube.cols;
        for row in PATCH_MARGIN..rows.saturating_sub(PATCH_MARGIN) {
            for col in PATCH_MARGIN..cols.saturating_sub(PATCH_MARGIN) {
                let label = labels.get(row, col);
                if label == CLASS_MASKED || !split.admits(assignment.of(row, col)) {
                    continue;
                }
                if extractors[si]
                    .iter()
                    .all(|e| e.extract((row, col)).is_ok())
                {
                    candidates.push(((si, row, col), label));
                }
            }
        }
    }

    let chosen = balanced_subsample(&candidates, per_class, seed)?;
    let mut out = Vec::with_capacity(variants.len());
    for (vi, &variant) in variants.iter().enumerate() {
        let mut batch = SampleBatch::new(season_mode);
        for &((si, row, col), _) in &chosen {
            batch.samples.push(
                extractors[si][vi]
                    .extract((row, col))
                    .expect("candidate extracts under every variant"),
            );
        }
        out.push((variant, batch));
    }
    Ok(out)
}

/// Single-season, single-selector path used by the `features` command.
/// Returns the batch plus how many otherwise-eligible pixels failed
/// extraction.
pub fn balanced_samples_single(
    season: &SeasonInputs,
    spec: &SelectorSpec,
    season_mode: SeasonMode,
    split: SplitFilter,
    per_class: usize,
    seed: u64,
) -> Result<(SampleBatch, usize)> {
    let masked = homogeneity_mask(season.labels)?;
    let assignment = quadrant_split(masked.rows, masked.cols)?;
    let selector = spec.to_selector(season.phenology)?;
    let extractor = Extractor::new(season.cube, &masked, &selector, season_mode)?;

    let mut candidates: Vec<((usize, usize), u8)> = Vec::new();
    let mut skipped = 0usize;
    let rows = season.cube.rows;
    let cols = season.cube.cols;
    for row in PATCH_MARGIN..rows.saturating_sub(PATCH_MARGIN) {
        for col in PATCH_MARGIN..cols.saturating_sub(PATCH_MARGIN) {
            let label = masked.get(row, col);
            if label == CLASS_MASKED || !split.admits(assignment.of(row, col)) {
                continue;
            }
            match extractor.extract((row, col)) {
                Ok(_) => candidates.push(((row, col), label)),
                Err(_) => skipped += 1,
            }
        }
    }
    let chosen = balanced_subsample(&candidates, per_class, seed)?;
    let mut batch = SampleBatch::new(season_mode);
    for ((row, col), _) in chosen {
        batch
            .samples
            .push(extractor.extract((row, col)).expect("candidate extracts"));
    }
    Ok((batch, skipped))
}
