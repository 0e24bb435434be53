//! Questions per section with mean, SD and median, question prefix shares,
//! and a seeded stratified sample per book.
//!
//!     cargo run -p defquest --example corpus_stats [per_book] [seed]

use defquest::corpus::{load_index, load_textbook};
use defquest::pipeline::{
    ask, generation_stats, group_by_book, stratified_sample, Backends, ConlluParses, PipelineConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let per_book: usize = args.next().map_or(Ok(5), |a| a.parse())?;
    let seed: u64 = args.next().map_or(Ok(42), |a| a.parse())?;

    let book = load_textbook("bio", include_str!("../fixtures/biology_chapter.md"))?;
    let index = load_index(include_str!("../fixtures/biology_index.txt"))?;
    let backends = Backends::offline(ConlluParses::from_conllu(include_str!(
        "../fixtures/biology_gold.conllu"
    ))?);
    let mut config = PipelineConfig::offline("fixtures/biology_gold.conllu");
    config.selection.threshold = 0.0;
    let run = ask(&book, &index, &config, &backends)?;

    let stats = generation_stats(&run.records, &[&book])?;
    for s in &stats.books[0].sections {
        println!("{:<6} {}", s.section_id, s.questions);
    }
    print!("{stats}");

    println!("\nsample of {per_book} with seed {seed}:");
    for (book_id, q) in stratified_sample(&group_by_book(run.records), per_book, seed)? {
        println!("{book_id}  {:<14} {}", q.question_id, q.question_text);
    }
    Ok(())
}
