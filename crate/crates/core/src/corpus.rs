//! Textbook hierarchy, sentence segmentation and the concept index.
//!
//! A book file is plain UTF-8 text:
//!
//! ```text
//! # Chapter title
//!
//! ## First section
//!
//! A paragraph. Lines of one block are joined with single spaces.
//!
//! Another paragraph.
//! ```
//!
//! Identifiers are positional and 1-based: `<book>/<section>/<paragraph>` for
//! paragraphs and `<book>/<section>/<paragraph>/<sentence>` for sentences.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::stats::Summary;

const ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: malformed heading marker: {text:?}")]
    MalformedHeading { line: usize, text: String },
    #[error("line {line}: text outside of a section")]
    TextOutsideSection { line: usize },
    #[error("line {line}: section {heading:?} has no paragraphs")]
    EmptySection { line: usize, heading: String },
    #[error("empty book")]
    EmptyBook,
    #[error("no sections")]
    NoSections,
    #[error("empty index")]
    EmptyIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Textbook {
    pub id: String,
    pub title: String,
    pub domain_label: String,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub id: String,
    pub heading: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub id: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    /// Byte offsets into the paragraph text.
    pub char_span: (usize, usize),
    pub paragraph_id: String,
}

impl Textbook {
    pub fn with_domain_label(mut self, label: impl Into<String>) -> Self {
        self.domain_label = label.into();
        self
    }

    pub fn paragraphs(&self) -> impl Iterator<Item = &Paragraph> {
        self.sections.iter().flat_map(|s| s.paragraphs.iter())
    }

    /// All sentences in document order.
    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.paragraphs().flat_map(|p| p.sentences.iter())
    }

    pub fn paragraph(&self, id: &str) -> Option<&Paragraph> {
        self.paragraphs().find(|p| p.id == id)
    }

    pub fn sentence(&self, id: &str) -> Option<&Sentence> {
        self.sentences().find(|s| s.id == id)
    }

    /// The section that owns a paragraph.
    pub fn section_of(&self, paragraph_id: &str) -> Option<&Section> {
        self.sections
            .iter()
            .find(|s| s.paragraphs.iter().any(|p| p.id == paragraph_id))
    }
}

impl Section {
    pub fn word_count(&self) -> usize {
        self.paragraphs.iter().map(|p| p.text.split_whitespace().count()).sum()
    }
}

/// Parses a book file. Paragraph text is the block's lines, each trimmed,
/// joined by single spaces.
pub fn load_textbook(book_id: &str, source: &str) -> Result<Textbook, CorpusError> {
    struct OpenSection {
        heading: String,
        line: usize,
        blocks: Vec<String>,
    }

    let mut title: Option<String> = None;
    let mut sections: Vec<OpenSection> = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let mut saw_content = false;

    fn flush(block: &mut Vec<&str>, sections: &mut [OpenSection]) {
        if block.is_empty() {
            return;
        }
        let text = block.join(" ");
        block.clear();
        if let Some(section) = sections.last_mut() {
            section.blocks.push(text);
        }
    }

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            flush(&mut block, &mut sections);
            continue;
        }
        saw_content = true;
        if line.starts_with('#') {
            flush(&mut block, &mut sections);
            let level = line.chars().take_while(|&c| c == '#').count();
            let rest = &line[level..];
            let heading = rest.trim();
            if !(level == 1 || level == 2) || !rest.starts_with(char::is_whitespace) || heading.is_empty() {
                return Err(CorpusError::MalformedHeading {
                    line: line_no,
                    text: line.to_string(),
                });
            }
            if level == 1 {
                title.get_or_insert_with(|| heading.to_string());
            } else {
                sections.push(OpenSection {
                    heading: heading.to_string(),
                    line: line_no,
                    blocks: Vec::new(),
                });
            }
            continue;
        }
        if sections.is_empty() {
            return Err(CorpusError::TextOutsideSection { line: line_no });
        }
        block.push(line);
    }
    flush(&mut block, &mut sections);

    if !saw_content {
        return Err(CorpusError::EmptyBook);
    }
    if sections.is_empty() {
        return Err(CorpusError::NoSections);
    }

    let mut out = Vec::with_capacity(sections.len());
    for (s_idx, open) in sections.into_iter().enumerate() {
        if open.blocks.is_empty() {
            return Err(CorpusError::EmptySection {
                line: open.line,
                heading: open.heading,
            });
        }
        let section_id = format!("{book_id}/{}", s_idx + 1);
        let paragraphs = open
            .blocks
            .into_iter()
            .enumerate()
            .map(|(p_idx, text)| build_paragraph(&format!("{section_id}/{}", p_idx + 1), text))
            .collect();
        out.push(Section {
            id: section_id,
            heading: open.heading,
            paragraphs,
        });
    }

    Ok(Textbook {
        id: book_id.to_string(),
        title: title.unwrap_or_else(|| book_id.to_string()),
        domain_label: String::new(),
        sections: out,
    })
}

fn build_paragraph(id: &str, text: String) -> Paragraph {
    let sentences = segment_sentences(&text)
        .into_iter()
        .enumerate()
        .map(|(i, (sentence, span))| Sentence {
            id: format!("{id}/{}", i + 1),
            text: sentence.to_string(),
            char_span: span,
            paragraph_id: id.to_string(),
        })
        .collect();
    Paragraph {
        id: id.to_string(),
        text,
        sentences,
    }
}

fn abbreviations() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        ABBREVIATIONS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect()
    })
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// The word directly before `dot`, without leading brackets or quotes.
fn word_before(text: &str, dot: usize) -> &str {
    let head = &text[..dot];
    let start = head
        .rfind(|c: char| c.is_whitespace())
        .map(|i| i + head[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    head[start..].trim_start_matches(['(', '[', '"', '\'', '\u{201c}', '\u{2018}'])
}

/// Splits paragraph text into sentences with byte spans.
///
/// A sentence ends after a run of `.`, `?` or `!` (plus closing quotes or
/// brackets) that is followed by whitespace or the end of the text. A single
/// `.` after a word from the abbreviation list does not end a sentence.
pub fn segment_sentences(text: &str) -> Vec<(&str, (usize, usize))> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = text.char_indices().peekable();

    while let Some((i, c)) = chars.next() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        if !is_terminator(c) {
            continue;
        }
        let mut end = i + c.len_utf8();
        let mut run = 1;
        while let Some(&(j, n)) = chars.peek() {
            if is_terminator(n) {
                run += 1;
            } else if !is_closer(n) {
                break;
            }
            end = j + n.len_utf8();
            chars.next();
        }
        let at_boundary = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
        if !at_boundary {
            continue;
        }
        if c == '.' && run == 1 && abbreviations().contains(&word_before(text, i).to_lowercase()) {
            continue;
        }
        let s = start.take().expect("sentence start set");
        out.push((&text[s..end], (s, end)));
    }

    if let Some(s) = start {
        let end = s + text[s..].trim_end().len();
        out.push((&text[s..end], (s, end)));
    }
    out
}

/// The back-of-the-book concept list.
///
/// Entries are trimmed and de-duplicated case-insensitively; the first
/// spelling seen is kept. Equality ignores order and case.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConceptIndex {
    concepts: Vec<String>,
}

impl ConceptIndex {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut concepts = Vec::new();
        for entry in entries {
            let entry = entry.as_ref().trim();
            if entry.is_empty() {
                continue;
            }
            if seen.insert(entry.to_lowercase()) {
                concepts.push(entry.to_string());
            }
        }
        ConceptIndex { concepts }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn contains(&self, concept: &str) -> bool {
        let needle = concept.trim().to_lowercase();
        self.concepts.iter().any(|c| c.to_lowercase() == needle)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().map(String::as_str)
    }
}

impl PartialEq for ConceptIndex {
    fn eq(&self, other: &Self) -> bool {
        let a: HashSet<String> = self.concepts.iter().map(|c| c.to_lowercase()).collect();
        let b: HashSet<String> = other.concepts.iter().map(|c| c.to_lowercase()).collect();
        a == b
    }
}

impl Eq for ConceptIndex {}

/// Reads an index file: one phrase per line, `#` comment lines ignored.
pub fn load_index(source: &str) -> Result<ConceptIndex, CorpusError> {
    let index = ConceptIndex::new(source.lines().map(str::trim).filter(|l| !l.starts_with('#')));
    if index.is_empty() {
        return Err(CorpusError::EmptyIndex);
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionStatistics {
    /// `(section id, whitespace-separated word count)` in book order.
    pub sections: Vec<(String, usize)>,
    pub summary: Summary,
}

pub fn section_statistics(book: &Textbook) -> SectionStatistics {
    let sections: Vec<(String, usize)> = book.sections.iter().map(|s| (s.id.clone(), s.word_count())).collect();
    let counts: Vec<usize> = sections.iter().map(|(_, c)| *c).collect();
    let summary = Summary::of_counts(&counts).expect("a loaded book has at least one section");
    SectionStatistics { sections, summary }
}

impl fmt::Display for SectionStatistics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, words) in &self.sections {
            writeln!(f, "{id}\t{words}")?;
        }
        write!(
            f,
            "M={:.2} SD={:.2} Mdn={}",
            self.summary.mean, self.summary.sd, self.summary.median
        )
    }
}
