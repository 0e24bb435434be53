//! ROC curve and AUC for a definition scorer. With no argument, scores the
//! keyword-filtered biology sentences with the rule scorer against a small
//! hand label set; otherwise reads a `score,label` CSV.
//!
//!     cargo run -p defquest --example roc [scores.csv]

use defquest::corpus::{load_index, load_textbook, Sentence};
use defquest::evalkit::{auc, read_labeled_scores, roc_points};
use defquest::selection::{RuleScorer, ScoredCandidates};

/// Keyword-filtered sentences a reader would call definitions.
const DEFINITIONS: &[&str] = &[
    "bio/1/1/2",
    "bio/1/2/1",
    "bio/2/1/1",
    "bio/2/2/1",
    "bio/2/3/1",
    "bio/3/1/1",
    "bio/3/2/1",
    "bio/3/3/1",
    "bio/4/1/1",
    "bio/4/1/2",
    "bio/5/1/1",
    "bio/5/2/1",
    "bio/5/3/1",
    "bio/5/3/2",
];

fn rule_scores() -> Result<Vec<(f64, bool)>, Box<dyn std::error::Error>> {
    let book = load_textbook("bio", include_str!("../fixtures/biology_chapter.md"))?;
    let index = load_index(include_str!("../fixtures/biology_index.txt"))?;
    let sentences: Vec<&Sentence> = book.sentences().collect();
    let scored = ScoredCandidates::score(&sentences, &index, &RuleScorer::default())?;
    Ok(scored
        .sentences
        .iter()
        .zip(&scored.scores)
        .map(|(s, score)| (score.score, DEFINITIONS.contains(&s.id.as_str())))
        .collect())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labeled = match std::env::args().nth(1) {
        Some(path) => read_labeled_scores(&std::fs::read_to_string(path)?)?,
        None => rule_scores()?,
    };
    let points = roc_points(&labeled)?;
    println!("threshold   tpr    fpr");
    for p in &points {
        println!("{:>9.3} {:>6.3} {:>6.3}", p.threshold, p.tpr, p.fpr);
    }
    println!("AUC {:.3}", auc(&points));
    Ok(())
}
