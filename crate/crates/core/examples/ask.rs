//! Runs the full pipeline on the bundled biology chapter with the rule
//! scorer, gold parses and template questions, printing question JSONL.
//!
//!     cargo run -p defquest --example ask [threshold]

use defquest::corpus::{load_index, load_textbook};
use defquest::pipeline::{ask, Backends, ConlluParses, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let book = load_textbook("bio", &std::fs::read_to_string(format!("{dir}/biology_chapter.md"))?)?;
    let index = load_index(&std::fs::read_to_string(format!("{dir}/biology_index.txt"))?)?;
    let parses = ConlluParses::from_conllu(&std::fs::read_to_string(format!("{dir}/biology_gold.conllu"))?)?;

    let mut config = PipelineConfig::offline("fixtures/biology_gold.conllu");
    if let Some(t) = std::env::args().nth(1) {
        config.selection.threshold = t.parse()?;
    }
    let run = ask(&book, &index, &config, &Backends::offline(parses))?;
    print!("{}", run.jsonl());
    eprintln!("{}", serde_json::to_string_pretty(&run.manifest.counts)?);
    Ok(())
}
