//! Answer selection on the gold trees: the chosen clause or direct object
//! per sentence, then pattern coverage.
//!
//!     cargo run -p defquest --example select_answers

use defquest::depgraph::parse_conllu;
use defquest::selection::{answer_select, clause_candidates, coverage_report, default_patterns};

const GOLD: &str = include_str!("../fixtures/biology_gold.conllu");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graphs = parse_conllu(GOLD)?;
    let patterns = default_patterns();
    for g in &graphs {
        let candidates = clause_candidates(g, patterns).len();
        match answer_select(g, patterns) {
            Some(a) => println!(
                "{:<10} {:<4} ({candidates} candidates) {}",
                g.sentence_id(),
                a.pattern_id,
                a.text
            ),
            None => println!("{:<10} -    no answer", g.sentence_id()),
        }
    }
    println!("\n{}", coverage_report(&graphs, patterns));
    Ok(())
}
