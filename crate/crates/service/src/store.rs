//! Event-sourced persistence for the review service.
//!
//! Every change is one line in `events.jsonl`, numbered from 1 with no gaps.
//! [`State`] is a fold over those entries, so the log alone reconstructs it;
//! `snapshot.json` caches the fold at some sequence number and only speeds up
//! opening. Appends go through a single writer lock, and each line is synced
//! before the in-memory state changes.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use defquest::corpus::{load_textbook, Textbook};
use defquest::evalkit::{apply_gating, AnnotationRecord, AnnotationScheme};
use defquest::generation::QuestionRecord;
use defquest::pipeline::{PipelineConfig, StageCounts};
use serde::{Deserialize, Serialize};

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("event log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
    Edit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub question_id: String,
    pub author_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_text: Option<String>,
    #[serde(default)]
    pub ts: String,
    /// Overrides an earlier accept or reject.
    #[serde(default)]
    pub force: bool,
}

impl CurationDecision {
    pub fn validate(&self) -> Result<(), StoreError> {
        match (self.verdict, &self.edited_text) {
            (Verdict::Edit, Some(text)) => {
                let text = text.trim();
                if text.len() < 2 || !text.ends_with('?') {
                    return Err(StoreError::Invalid(
                        "edited text must be a question ending with '?'".into(),
                    ));
                }
            }
            (Verdict::Edit, None) => return Err(StoreError::Invalid("edit verdict needs edited_text".into())),
            (_, Some(_)) => {
                return Err(StoreError::Invalid(
                    "edited_text is only allowed with the edit verdict".into(),
                ))
            }
            (_, None) => {}
        }
        if self.author_id.trim().is_empty() {
            return Err(StoreError::Invalid("author_id is empty".into()));
        }
        Ok(())
    }

    fn status(&self) -> Status {
        match self.verdict {
            Verdict::Accept | Verdict::Edit => Status::Accepted,
            Verdict::Reject => Status::Rejected,
        }
    }
}

/// What a client uploads: the book text and its concept index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookEntry {
    pub book_id: String,
    pub text: String,
    pub index: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Event {
    BookAdded {
        book: BookEntry,
    },
    /// Replaces the book's question list. Questions whose id survives keep
    /// their curation state.
    QuestionsAdded {
        book_id: String,
        config: PipelineConfig,
        counts: StageCounts,
        questions: Vec<QuestionRecord>,
    },
    Decision {
        decision: CurationDecision,
    },
    Annotation {
        record: AnnotationRecord,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookState {
    pub entry: BookEntry,
    pub textbook: Textbook,
    pub config: Option<PipelineConfig>,
    pub counts: Option<StageCounts>,
    /// Current questions in generation order.
    pub question_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionState {
    pub record: QuestionRecord,
    pub status: Status,
    pub decision: Option<CurationDecision>,
}

impl QuestionState {
    /// The question as curated: the edited text when there is one.
    pub fn text(&self) -> &str {
        self.decision
            .as_ref()
            .and_then(|d| d.edited_text.as_deref())
            .unwrap_or(&self.record.question_text)
    }
}

/// Everything the service knows, as of `seq`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub seq: u64,
    pub books: BTreeMap<String, BookState>,
    pub questions: BTreeMap<String, QuestionState>,
    /// question id, then rater id.
    pub annotations: BTreeMap<String, BTreeMap<String, AnnotationRecord>>,
}

fn valid_book_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl State {
    /// Rejects an event that would not apply cleanly to this state.
    pub fn check(&self, event: &Event, scheme: &AnnotationScheme) -> Result<(), StoreError> {
        match event {
            Event::BookAdded { book } => {
                if !valid_book_id(&book.book_id) {
                    return Err(StoreError::Invalid(format!(
                        "book id {:?} must be non-empty ASCII letters, digits, '-', '_' or '.'",
                        book.book_id
                    )));
                }
                if self.books.contains_key(&book.book_id) {
                    return Err(StoreError::Conflict(format!("book {} already exists", book.book_id)));
                }
                load_textbook(&book.book_id, &book.text).map_err(|e| StoreError::Invalid(e.to_string()))?;
            }
            Event::QuestionsAdded { book_id, questions, .. } => {
                if !self.books.contains_key(book_id) {
                    return Err(StoreError::NotFound(format!("book {book_id}")));
                }
                if let Some(q) = questions.iter().find(|q| &q.book_id != book_id) {
                    return Err(StoreError::Invalid(format!(
                        "question {} belongs to book {}",
                        q.question_id, q.book_id
                    )));
                }
                let mut seen = std::collections::HashSet::new();
                if let Some(q) = questions.iter().find(|q| !seen.insert(&q.question_id)) {
                    return Err(StoreError::Invalid(format!("duplicate question id {}", q.question_id)));
                }
                if let Some(q) = questions.iter().find(|q| {
                    self.questions
                        .get(&q.question_id)
                        .is_some_and(|existing| &existing.record.book_id != book_id)
                }) {
                    return Err(StoreError::Conflict(format!(
                        "question id {} is taken by another book",
                        q.question_id
                    )));
                }
            }
            Event::Decision { decision } => {
                decision.validate()?;
                let q = self
                    .questions
                    .get(&decision.question_id)
                    .ok_or_else(|| StoreError::NotFound(format!("question {}", decision.question_id)))?;
                if q.status != Status::Pending && !decision.force {
                    return Err(StoreError::Conflict(format!(
                        "question {} is already {}; resend with force to override",
                        decision.question_id,
                        serde_json::to_value(q.status)
                            .expect("status serializes")
                            .as_str()
                            .unwrap_or_default()
                    )));
                }
            }
            Event::Annotation { record } => {
                if !self.questions.contains_key(&record.question_id) {
                    return Err(StoreError::NotFound(format!("question {}", record.question_id)));
                }
                if record.rater_id.trim().is_empty() {
                    return Err(StoreError::Invalid("rater_id is empty".into()));
                }
                let gated = apply_gating(scheme, record).map_err(|e| StoreError::Invalid(e.to_string()))?;
                if &gated != record {
                    return Err(StoreError::Invalid("annotation record is not gating-normalized".into()));
                }
            }
        }
        Ok(())
    }

    /// Folds one entry into the state. Sequence numbers must continue
    /// without a gap.
    pub fn apply(&mut self, entry: &LogEntry, scheme: &AnnotationScheme) -> Result<(), StoreError> {
        let corrupt = |message: String| StoreError::Corrupt {
            line: entry.seq as usize,
            message,
        };
        if entry.seq != self.seq + 1 {
            return Err(corrupt(format!(
                "expected sequence number {}, found {}",
                self.seq + 1,
                entry.seq
            )));
        }
        self.check(&entry.event, scheme).map_err(|e| corrupt(e.to_string()))?;
        match &entry.event {
            Event::BookAdded { book } => {
                let textbook = load_textbook(&book.book_id, &book.text).expect("checked above");
                self.books.insert(
                    book.book_id.clone(),
                    BookState {
                        entry: book.clone(),
                        textbook,
                        config: None,
                        counts: None,
                        question_ids: Vec::new(),
                    },
                );
            }
            Event::QuestionsAdded {
                book_id,
                config,
                counts,
                questions,
            } => {
                let book = self.books.get_mut(book_id).expect("checked above");
                for old in std::mem::take(&mut book.question_ids) {
                    if !questions.iter().any(|q| q.question_id == old) {
                        self.questions.remove(&old);
                    }
                }
                for q in questions {
                    book.question_ids.push(q.question_id.clone());
                    self.questions
                        .entry(q.question_id.clone())
                        .and_modify(|s| s.record = q.clone())
                        .or_insert_with(|| QuestionState {
                            record: q.clone(),
                            status: Status::Pending,
                            decision: None,
                        });
                }
                book.config = Some(config.clone());
                book.counts = Some(*counts);
            }
            Event::Decision { decision } => {
                let q = self.questions.get_mut(&decision.question_id).expect("checked above");
                q.status = decision.status();
                q.decision = Some(decision.clone());
            }
            Event::Annotation { record } => {
                self.annotations
                    .entry(record.question_id.clone())
                    .or_default()
                    .insert(record.rater_id.clone(), record.clone());
            }
        }
        self.seq = entry.seq;
        Ok(())
    }

    /// All annotation records, ordered by question then rater.
    pub fn annotation_records(&self) -> Vec<AnnotationRecord> {
        self.annotations
            .values()
            .flat_map(|by_rater| by_rater.values().cloned())
            .collect()
    }
}

/// Reads every complete log entry. A final line without its newline is a
/// write cut short by a crash; it is reported separately as the byte
/// offset where the intact prefix ends.
fn read_log(path: &Path) -> Result<(Vec<LogEntry>, Option<u64>), StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(e.into()),
    };
    let mut entries = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if !line.ends_with('\n') {
            return Ok((entries, Some(offset as u64)));
        }
        if !line.trim().is_empty() {
            let entry = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        offset += line.len();
    }
    Ok((entries, None))
}

/// The state reconstructed from the log alone, ignoring any snapshot.
pub fn replay(dir: &Path, scheme: &AnnotationScheme) -> Result<State, StoreError> {
    let (entries, _) = read_log(&dir.join(LOG_FILE))?;
    let mut state = State::default();
    for entry in &entries {
        state.apply(entry, scheme)?;
    }
    Ok(state)
}

pub fn load_snapshot(dir: &Path) -> Result<Option<State>, StoreError> {
    match fs::read_to_string(dir.join(SNAPSHOT_FILE)) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| StoreError::Corrupt {
            line: 0,
            message: format!("snapshot: {e}"),
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

struct Inner {
    state: State,
    log: File,
    since_snapshot: u64,
}

/// A data directory opened for reading and appending.
pub struct Store {
    dir: PathBuf,
    scheme: AnnotationScheme,
    snapshot_every: u64,
    inner: RwLock<Inner>,
}

impl Store {
    pub const DEFAULT_SNAPSHOT_EVERY: u64 = 100;

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Self::open_with(dir, AnnotationScheme::default(), Self::DEFAULT_SNAPSHOT_EVERY)
    }

    /// Loads the snapshot if present and replays the log entries after it.
    /// A torn final line is cut off. `snapshot_every = 0` disables
    /// automatic snapshots.
    pub fn open_with(
        dir: impl Into<PathBuf>,
        scheme: AnnotationScheme,
        snapshot_every: u64,
    ) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        scheme.validate().map_err(|e| StoreError::Invalid(e.to_string()))?;
        let log_path = dir.join(LOG_FILE);
        let (entries, torn) = read_log(&log_path)?;
        if let Some(len) = torn {
            tracing::warn!(offset = len, "dropping incomplete final event log line");
            OpenOptions::new().write(true).open(&log_path)?.set_len(len)?;
        }
        let mut state = load_snapshot(&dir)?.unwrap_or_default();
        let last = entries.last().map_or(0, |e| e.seq);
        if state.seq > last {
            tracing::warn!(
                snapshot = state.seq,
                log = last,
                "snapshot is ahead of the log; replaying from scratch"
            );
            state = State::default();
        }
        let since = state.seq;
        for entry in entries.iter().filter(|e| e.seq > since) {
            state.apply(entry, &scheme)?;
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Store {
            dir,
            scheme,
            snapshot_every,
            inner: RwLock::new(Inner {
                since_snapshot: state.seq - since,
                state,
                log,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn scheme(&self) -> &AnnotationScheme {
        &self.scheme
    }

    /// Runs `f` against a consistent view of the state.
    pub fn read<R>(&self, f: impl FnOnce(&State) -> R) -> R {
        f(&self.inner.read().unwrap_or_else(|e| e.into_inner()).state)
    }

    /// Validates `event`, appends it and folds it in. Returns its sequence
    /// number.
    pub fn commit(&self, event: Event) -> Result<u64, StoreError> {
        let mut inner = self.inner.write().unwrap_or_else(|e| e.into_inner());
        inner.state.check(&event, &self.scheme)?;
        let entry = LogEntry {
            seq: inner.state.seq + 1,
            event,
        };
        let mut line = serde_json::to_string(&entry).expect("events serialize");
        line.push('\n');
        inner.log.write_all(line.as_bytes())?;
        inner.log.sync_data()?;
        inner.state.apply(&entry, &self.scheme)?;
        inner.since_snapshot += 1;
        if self.snapshot_every > 0 && inner.since_snapshot >= self.snapshot_every {
            write_snapshot(&self.dir, &inner.state)?;
            inner.since_snapshot = 0;
        }
        Ok(entry.seq)
    }

    pub fn snapshot(&self) -> Result<u64, StoreError> {
        let mut inner = self.inner.write().unwrap_or_else(|e| e.into_inner());
        write_snapshot(&self.dir, &inner.state)?;
        inner.since_snapshot = 0;
        Ok(inner.state.seq)
    }

    pub fn add_book(&self, book: BookEntry) -> Result<u64, StoreError> {
        self.commit(Event::BookAdded { book })
    }

    pub fn add_questions(
        &self,
        book_id: &str,
        config: PipelineConfig,
        counts: StageCounts,
        questions: Vec<QuestionRecord>,
    ) -> Result<u64, StoreError> {
        self.commit(Event::QuestionsAdded {
            book_id: book_id.to_string(),
            config,
            counts,
            questions,
        })
    }

    pub fn decide(&self, decision: CurationDecision) -> Result<u64, StoreError> {
        self.commit(Event::Decision { decision })
    }

    /// Stores the gating-normalized form of `record`, replacing any earlier
    /// record by the same rater on the same question.
    pub fn annotate(&self, record: &AnnotationRecord) -> Result<u64, StoreError> {
        let record = apply_gating(&self.scheme, record).map_err(|e| StoreError::Invalid(e.to_string()))?;
        self.commit(Event::Annotation { record })
    }
}

fn write_snapshot(dir: &Path, state: &State) -> Result<(), StoreError> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let mut file = File::create(&tmp)?;
    serde_json::to_writer(&mut file, state).map_err(io::Error::from)?;
    file.sync_all()?;
    fs::rename(tmp, dir.join(SNAPSHOT_FILE))?;
    Ok(())
}
