//! Loads a Markdown textbook and shows its sections, paragraphs and
//! sentence segmentation, with word-count statistics per section.
//!
//!     cargo run -p defquest --example segment [book.md]

use defquest::corpus::{load_textbook, section_statistics};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/biology_chapter.md").into());
    let book = load_textbook("bio", &std::fs::read_to_string(&path)?)?;
    println!("{} ({} sections)", book.title, book.sections.len());
    for section in &book.sections {
        println!("\n{}  {}", section.id, section.heading);
        for paragraph in &section.paragraphs {
            for s in &paragraph.sentences {
                println!("  {:<12} {:?} {}", s.id, s.char_span, s.text);
            }
        }
    }
    println!("\nwords per section\n{}", section_statistics(&book));
    Ok(())
}
