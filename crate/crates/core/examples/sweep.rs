//! Question counts across selection thresholds from a single scoring and
//! parsing pass.
//!
//!     cargo run -p defquest --example sweep

use defquest::corpus::{load_index, load_textbook};
use defquest::pipeline::{threshold_sweep, Backends, ConlluParses};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let book = load_textbook("bio", include_str!("../fixtures/biology_chapter.md"))?;
    let index = load_index(include_str!("../fixtures/biology_index.txt"))?;
    let backends = Backends::offline(ConlluParses::from_conllu(include_str!(
        "../fixtures/biology_gold.conllu"
    ))?);
    let thresholds: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    for (t, n) in threshold_sweep(&book, &index, &backends, &thresholds)? {
        println!("{t:.2}  {n:>3}  {}", "#".repeat(n));
    }
    Ok(())
}
