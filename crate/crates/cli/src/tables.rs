//! Text rendering: metrics tables, histograms, and PPM maps.

use gsn_core::cube::{LabelRaster, CLASS_CORN, CLASS_MASKED, CLASS_OTHER, CLASS_SOYBEAN};
use gsn_core::eval::{ClassHistograms, Metrics};

pub const CLASS_NAMES: [&str; 3] = ["other", "corn", "soybean"];

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.4}", v),
        None => "undefined".to_string(),
    }
}

/// Fixed-layout table for one evaluation: per-class UA/PA plus OA footer.
pub fn metrics_text(metrics: &Metrics) -> String {
    let mut out = String::new();
    out.push_str("class\tua_precision\tpa_recall\tsupport\n");
    for class in 0..3 {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            CLASS_NAMES[class],
            fmt_opt(metrics.user_accuracy[class]),
            fmt_opt(metrics.producer_accuracy[class]),
            metrics.support[class]
        ));
    }
    out.push_str(&format!(
        "overall_accuracy\t{:.4}\ttotal\t{}\n",
        metrics.overall_accuracy, metrics.total
    ));
    out
}

/// One comparison row: a named model/variant with its metrics.
pub struct ComparisonRow {
    pub model: String,
    pub variant: String,
    pub metrics: Metrics,
}

/// Machine-readable comparison over models and date-selection variants.
pub fn comparison_tsv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "model\tvariant\toa\tua_other\tua_corn\tua_soybean\tpa_other\tpa_corn\tpa_soybean\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.model,
            row.variant,
            row.metrics.overall_accuracy,
            fmt_opt(row.metrics.user_accuracy[0]),
            fmt_opt(row.metrics.user_accuracy[1]),
            fmt_opt(row.metrics.user_accuracy[2]),
            fmt_opt(row.metrics.producer_accuracy[0]),
            fmt_opt(row.metrics.producer_accuracy[1]),
            fmt_opt(row.metrics.producer_accuracy[2]),
        ));
    }
    out
}

/// Human-readable comparison shaped like the published table: one column
/// per (model, variant), measure rows.
pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let headers: Vec<String> = rows
        .iter()
        .map(|r| format!("{}/{}", r.model, r.variant))
        .collect();
    let width = headers.iter().map(|h| h.len()).max().unwrap_or(8).max(10) + 2;
    let mut out = String::new();
    out.push_str(&format!("{:<22}", "measure"));
    for h in &headers {
        out.push_str(&format!("{h:>width$}"));
    }
    out.push('\n');
    let mut push_metric = |label: String, values: Vec<String>| {
        out.push_str(&format!("{label:<22}"));
        for v in values {
            out.push_str(&format!("{v:>width$}"));
        }
        out.push('\n');
    };
    push_metric(
        "OA".to_string(),
        rows.iter()
            .map(|r| format!("{:.1}", 100.0 * r.metrics.overall_accuracy))
            .collect(),
    );
    for class in [CLASS_CORN, CLASS_SOYBEAN, CLASS_OTHER] {
        push_metric(
            format!("UA {}", CLASS_NAMES[class as usize]),
            rows.iter()
                .map(|r| match r.metrics.user_accuracy[class as usize] {
                    Some(v) => format!("{:.1}", 100.0 * v),
                    None => "undef".into(),
                })
                .collect(),
        );
    }
    for class in [CLASS_CORN, CLASS_SOYBEAN, CLASS_OTHER] {
        push_metric(
            format!("PA {}", CLASS_NAMES[class as usize]),
            rows.iter()
                .map(|r| match r.metrics.producer_accuracy[class as usize] {
                    Some(v) => format!("{:.1}", 100.0 * v),
                    None => "undef".into(),
                })
                .collect(),
        );
    }
    out
}

/// Histogram table: one row per class, one column per bin, plus means.
pub fn histogram_text(hist: &ClassHistograms) -> String {
    let bins = hist.counts[0].len();
    let width = (hist.bin_max - hist.bin_min) / bins as f64;
    let mut out = format!(
        "# NDVI histogram at DOY {} (time index {})\n",
        hist.doy, hist.time_index
    );
    out.push_str("class");
    for b in 0..bins {
        out.push_str(&format!("\t{:.2}", hist.bin_min + width * b as f64));
    }
    out.push_str("\tmean\n");
    for class in 0..3 {
        out.push_str(CLASS_NAMES[class]);
        for b in 0..bins {
            out.push_str(&format!("\t{}", hist.counts[class][b]));
        }
        match hist.means[class] {
            Some(m) => out.push_str(&format!("\t{m:.4}\n")),
            None => out.push_str("\tundefined\n"),
        }
    }
    out
}

/// Plain P6 PPM with the fixed class palette:
/// other gray, corn yellow, soybean green, masked black.
pub fn render_ppm(labels: &LabelRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.rows * labels.cols * 3 + 32);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", labels.cols, labels.rows).as_bytes());
    for &class in &labels.classes {
        let rgb: [u8; 3] = match class {
            CLASS_OTHER => [128, 128, 128],
            CLASS_CORN => [255, 210, 0],
            CLASS_SOYBEAN => [0, 160, 0],
            CLASS_MASKED => [0, 0, 0],
            _ => unreachable!("label rasters are validated"),
        };
        out.extend_from_slice(&rgb);
    }
    out
}
