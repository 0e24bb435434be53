//! Imports a spreadsheet export of annotations through a column and label
//! mapping, applying the scheme's gating rules, and writes annotation JSONL.
//!
//!     cargo run -p defquest --example import_annotations

use defquest::evalkit::{import_csv, write_annotations_jsonl, AnnotationScheme, ImportMapping};

const SHEET: &str = "\
Question,Annotator,Q1 Understandable,Q6 Answerable,Q7 Info needed,Q8 Central
bio/q01,ann-a,Yes,Yes,Fact,Yes
bio/q01,ann-b,Yes,No,Fact,Yes
bio/q02,ann-a,No,,,
bio/q02,ann-b,Yes,n/a,,
";

const MAPPING: &str = r#"{
    "question_id": "Question",
    "rater_id": "Annotator",
    "items": {
        "understandable": "Q1 Understandable",
        "answerable": "Q6 Answerable",
        "informationNeeded": "Q7 Info needed",
        "central": "Q8 Central"
    },
    "labels": { "fact": "fe" },
    "not_applicable": ["n/a"]
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mapping: ImportMapping = serde_json::from_str(MAPPING)?;
    let records = import_csv(SHEET, &mapping, &AnnotationScheme::default())?;
    print!("{}", write_annotations_jsonl(&records));
    Ok(())
}
