//! Inter-rater agreement on the bundled annotation sample: percent
//! agreement, nominal Krippendorff's alpha with a bootstrap interval, and
//! label distributions per item.
//!
//!     cargo run -p defquest --example agreement [annotations.jsonl]

use defquest::evalkit::{
    agreement_report, distribution_report, read_annotations_jsonl, AnnotationScheme, BootstrapConfig,
};

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/annotations.jsonl").into());
    let records = read_annotations_jsonl(&std::fs::read_to_string(path)?)?;
    let scheme = AnnotationScheme::default();
    let bootstrap = BootstrapConfig {
        resamples: 200,
        sample_size: 100,
        seed: 1,
        ..BootstrapConfig::default()
    };

    println!("{:<18} {:>6} {:>7} {:>17} {:>5}", "item", "PA", "alpha", "95% CI", "n");
    for row in agreement_report(&records, &scheme, None, Some(&bootstrap))? {
        let ci = row
            .ci
            .map_or_else(|| "-".into(), |(lo, hi)| format!("[{lo:.3}, {hi:.3}]"));
        println!(
            "{:<18} {:>6} {:>7} {:>17} {:>5}",
            row.item,
            fmt(row.percent_agreement),
            fmt(row.alpha),
            ci,
            row.applicable
        );
    }

    println!();
    for item in distribution_report(&records, &scheme) {
        let shares: Vec<String> = item
            .shares
            .iter()
            .map(|s| format!("{} {:.0}%/{:.0}%", s.label, 100.0 * s.relative, 100.0 * s.absolute))
            .collect();
        println!(
            "{:<18} {}/{}  {}",
            item.item,
            item.applicable,
            item.total,
            shares.join("  ")
        );
    }
    Ok(())
}
