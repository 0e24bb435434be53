//! Random operation sequences against a [`Store`], for replay checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use defquest::evalkit::{AnnotationRecord, AnnotationScheme, Response};
use defquest::generation::QuestionRecord;
use defquest::pipeline::{PipelineConfig, StageCounts};
use defquest_service::store::{BookEntry, CurationDecision, Store, Verdict};
use proptest::prelude::*;

const BOOKS: [(&str, &str); 3] = [
    (
        "alpha",
        "# Alpha\n\n## One\n\nA cell is a unit of life. Cells divide.\n\nA tissue is a group of cells.\n\n## Two\n\nAn organ is made of tissues.\n",
    ),
    (
        "beta",
        "# Beta\n\n## Forces\n\nA force is a push or a pull. Mass resists it.\n",
    ),
    ("gamma", "# Gamma\n\n## Only\n\nA gene is a unit of heredity. Genes mutate. Alleles vary.\n"),
];

#[derive(Debug, Clone)]
pub enum Op {
    AddBook(usize),
    /// Regenerates with the sentences picked by the mask.
    Generate {
        book: usize,
        mask: u8,
    },
    Decide {
        question: usize,
        verdict: Verdict,
        edit: Option<&'static str>,
        force: bool,
    },
    Annotate {
        question: usize,
        rater: usize,
        labels: Vec<Option<usize>>,
    },
    Snapshot,
}

pub fn op_strategy() -> impl Strategy<Value = Op> {
    let verdict = prop::sample::select(vec![Verdict::Accept, Verdict::Reject, Verdict::Edit]);
    let edit = prop::option::of(prop::sample::select(vec!["What is a cell?", "not a question", "Why?"]));
    prop_oneof![
        1 => (0..BOOKS.len()).prop_map(Op::AddBook),
        2 => (0..BOOKS.len(), any::<u8>()).prop_map(|(book, mask)| Op::Generate { book, mask }),
        4 => (0usize..12, verdict, edit, any::<bool>()).prop_map(|(question, verdict, edit, force)| Op::Decide {
            question,
            verdict,
            edit,
            force
        }),
        4 => (0usize..12, 0usize..4, prop::collection::vec(prop::option::of(0usize..5), 9)).prop_map(
            |(question, rater, labels)| Op::Annotate { question, rater, labels }
        ),
        1 => Just(Op::Snapshot),
    ]
}

fn question_ids(store: &Store) -> Vec<String> {
    store.read(|s| s.questions.keys().cloned().collect())
}

/// Applies `op`; rejected operations are expected and leave no trace.
/// Returns whether an event was appended.
pub fn apply(store: &Store, op: &Op) -> bool {
    let ids = question_ids(store);
    let pick = |i: usize| {
        ids.get(i % ids.len().max(1))
            .cloned()
            .unwrap_or_else(|| "missing/q".into())
    };
    let result = match op {
        Op::AddBook(b) => {
            let (id, text) = BOOKS[*b];
            store.add_book(BookEntry {
                book_id: id.into(),
                text: text.into(),
                index: vec!["cell".into(), "gene".into(), "force".into()],
            })
        }
        Op::Generate { book, mask } => {
            let (id, _) = BOOKS[*book];
            let records = store.read(|s| {
                s.books.get(id).map(|b| {
                    b.textbook
                        .sentences()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << (i % 8)) != 0)
                        .map(|(_, s)| QuestionRecord {
                            question_id: format!("{}/q", s.id),
                            book_id: id.into(),
                            paragraph_id: s.paragraph_id.clone(),
                            sentence_id: s.id.clone(),
                            sentence_text: s.text.clone(),
                            answer_text: "a unit".into(),
                            answer_token_ids: vec![3, 4],
                            pattern_id: "A1".into(),
                            question_text: format!("What is {}?", s.id),
                            generator_id: "template".into(),
                            score: (*mask as f64) / 255.0,
                        })
                        .collect::<Vec<_>>()
                })
            });
            let counts = StageCounts {
                questions: records.as_ref().map_or(0, Vec::len),
                ..StageCounts::default()
            };
            let mut config = PipelineConfig::offline("parses.conllu");
            config.seed = *mask as u64;
            store.add_questions(id, config, counts, records.unwrap_or_default())
        }
        Op::Decide {
            question,
            verdict,
            edit,
            force,
        } => store.decide(CurationDecision {
            question_id: pick(*question),
            author_id: "author".into(),
            verdict: *verdict,
            edited_text: edit.map(str::to_string),
            ts: "2024-01-01T00:00:00Z".into(),
            force: *force,
        }),
        Op::Annotate {
            question,
            rater,
            labels,
        } => {
            let scheme = AnnotationScheme::default();
            let responses: BTreeMap<String, Response> = scheme
                .items
                .iter()
                .zip(labels)
                .filter_map(|(item, l)| {
                    l.map(|i| (item.id.clone(), Response::label(&item.choices[i % item.choices.len()])))
                })
                .collect();
            store.annotate(&AnnotationRecord {
                question_id: pick(*question),
                rater_id: format!("r{rater}"),
                responses,
                ts: String::new(),
            })
        }
        Op::Snapshot => store.snapshot().map(|_| 0),
    };
    matches!(op, Op::Snapshot) || result.is_ok()
}
