//! Context selection: keyword filtering against the concept index, rule
//! scores for definitional wording, and the sentences kept at a threshold.
//!
//!     cargo run -p defquest --example score_sentences [threshold]

use defquest::corpus::{load_index, load_textbook, Sentence};
use defquest::selection::{RuleScorer, ScoredCandidates};

const CHAPTER: &str = include_str!("../fixtures/biology_chapter.md");
const INDEX: &str = include_str!("../fixtures/biology_index.txt");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let threshold: f64 = std::env::args().nth(1).map_or(Ok(0.7), |t| t.parse())?;
    let book = load_textbook("bio", CHAPTER)?;
    let index = load_index(INDEX)?;
    let sentences: Vec<&Sentence> = book.sentences().collect();
    let scored = ScoredCandidates::score(&sentences, &index, &RuleScorer::default())?;
    let kept: Vec<&str> = scored.above(threshold).iter().map(|s| s.id.as_str()).collect();
    for (s, score) in scored.sentences.iter().zip(&scored.scores) {
        let mark = if kept.contains(&s.id.as_str()) { '*' } else { ' ' };
        println!("{mark} {:.2}  {:<10} {}", score.score, s.id, s.text);
    }
    println!(
        "{} sentences, {} mention a concept, {} kept at {threshold}",
        sentences.len(),
        scored.sentences.len(),
        kept.len()
    );
    Ok(())
}
