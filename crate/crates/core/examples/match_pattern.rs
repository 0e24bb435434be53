//! Runs one dependency pattern over the bundled gold trees and prints every
//! binding. The default pattern finds relative clauses attached to nouns.
//!
//!     cargo run -p defquest --example match_pattern -- '{upos:VERB}=v >nsubj {}=ans'

use defquest::depgraph::parse_conllu;
use defquest::patterns::{compile_pattern, find_matches};

const GOLD: &str = include_str!("../fixtures/biology_gold.conllu");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "{upos:NOUN} >acl:relcl {}=ans".into());
    let pattern = compile_pattern(&text)?;
    println!("pattern: {pattern}");
    let mut total = 0;
    for graph in parse_conllu(GOLD)? {
        for m in find_matches(&graph, &pattern) {
            total += 1;
            let bound: Vec<String> = m
                .bindings
                .iter()
                .map(|(name, &id)| format!("{name}={}", graph.tokens()[id - 1].form))
                .collect();
            let answer = graph.text_of(&graph.subtree_ids(m.extraction())?);
            println!("{:<10} {:<28} {answer}", graph.sentence_id(), bound.join(" "));
        }
    }
    println!("{total} matches");
    Ok(())
}
