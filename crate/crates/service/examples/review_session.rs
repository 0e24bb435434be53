//! A curation and annotation session against the event store: register a
//! book, store its generated questions, accept, reject and edit a few,
//! collect two raters' annotations, then reopen the store from disk and
//! report agreement.
//!
//!     cargo run -p defquest-service --example review_session [data_dir]

use std::collections::BTreeMap;

use defquest::corpus::{load_index, load_textbook};
use defquest::evalkit::{agreement_report, AnnotationRecord, Response};
use defquest::pipeline::{ask, Backends, ConlluParses, PipelineConfig};
use defquest_service::store::{BookEntry, CurationDecision, Status, Verdict};
use defquest_service::Store;

const CHAPTER: &str = include_str!("../../core/fixtures/biology_chapter.md");
const INDEX: &str = include_str!("../../core/fixtures/biology_index.txt");
const GOLD: &str = include_str!("../../core/fixtures/biology_gold.conllu");

fn decision(question_id: &str, verdict: Verdict, edited_text: Option<&str>) -> CurationDecision {
    CurationDecision {
        question_id: question_id.into(),
        author_id: "editor".into(),
        verdict,
        edited_text: edited_text.map(String::from),
        ts: String::new(),
        force: false,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| scratch.path().to_path_buf(), Into::into);

    let store = Store::open(&dir)?;
    store.add_book(BookEntry {
        book_id: "bio".into(),
        text: CHAPTER.into(),
        index: INDEX.lines().map(String::from).collect(),
    })?;
    let config = PipelineConfig::offline("fixtures/biology_gold.conllu");
    let run = ask(
        &load_textbook("bio", CHAPTER)?,
        &load_index(INDEX)?,
        &config,
        &Backends::offline(ConlluParses::from_conllu(GOLD)?),
    )?;
    let ids: Vec<String> = run.records.iter().map(|q| q.question_id.clone()).collect();
    store.add_questions("bio", config, run.manifest.counts, run.records)?;

    store.decide(decision(&ids[0], Verdict::Accept, None))?;
    store.decide(decision(&ids[1], Verdict::Reject, None))?;
    store.decide(decision(
        &ids[2],
        Verdict::Edit,
        Some("What is respiration also called?"),
    ))?;
    if let Err(e) = store.decide(decision(&ids[1], Verdict::Accept, None)) {
        println!("second verdict refused: {e}");
    }

    let answers = [("r1", ["yes", "yes", "no"]), ("r2", ["yes", "no", "no"])];
    for (rater, labels) in answers {
        for (question_id, label) in [&ids[0], &ids[2], &ids[3]].into_iter().zip(labels) {
            let responses = BTreeMap::from([
                ("understandable".to_string(), Response::label("yes")),
                ("grammatical".to_string(), Response::label(label)),
            ]);
            store.annotate(&AnnotationRecord {
                question_id: question_id.clone(),
                rater_id: rater.into(),
                responses,
                ts: String::new(),
            })?;
        }
    }
    let seq = store.read(|s| s.seq);
    drop(store);

    let store = Store::open(&dir)?;
    println!("replayed {seq} events from {}", dir.display());
    store.read(|state| {
        for id in &ids[..4] {
            let q = &state.questions[id];
            let status = match q.status {
                Status::Pending => "pending",
                Status::Accepted => "accepted",
                Status::Rejected => "rejected",
            };
            println!("{id:<14} {status:<9} {}", q.text());
        }
    });
    let records = store.read(|s| s.annotation_records());
    for row in agreement_report(&records, store.scheme(), Some("grammatical"), None)? {
        println!("{}: PA {:?}, alpha {:?}", row.item, row.percent_agreement, row.alpha);
    }
    Ok(())
}
