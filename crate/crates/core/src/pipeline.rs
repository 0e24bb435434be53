//! The end-to-end question pipeline, its run manifest, and corpus-level
//! statistics, sampling and threshold sweeps.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clients::{
    load_label_map, ClientError, LabelMap, RemoteGenerator, RemoteScorer, ServiceClient, ServiceEndpoint,
};
use crate::corpus::{ConceptIndex, Sentence, Textbook};
use crate::depgraph::{parse_conllu, DependencyGraph, GraphError};
use crate::generation::{
    generate_all, FailureMode, GenerationError, GenerationPair, QuestionGenerator, QuestionRecord, QuestionTriplet,
    TemplateGenerator,
};
use crate::patterns::{parse_pattern_file, PatternError, PatternSet};
use crate::rng::{partial_shuffle, seeded_stream};
use crate::selection::{
    answer_select, default_patterns, DefinitionScorer, RuleScorer, ScoredCandidates, ScorerChoice, SelectionConfig,
    SelectionError,
};
use crate::stats::Summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Setup,
    ContextSelection,
    Parsing,
    AnswerSelection,
    Generation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Setup => "setup",
            Stage::ContextSelection => "context selection",
            Stage::Parsing => "parsing",
            Stage::AnswerSelection => "answer selection",
            Stage::Generation => "generation",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("no parse for sentence {0}")]
    MissingParse(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("question {question_id} does not belong to book {book_id}")]
    ForeignQuestion { question_id: String, book_id: String },
    #[error("group {group} has {available} items, fewer than the {k} requested")]
    GroupTooSmall { group: String, available: usize, k: usize },
    #[error("thresholds must be sorted ascending")]
    UnsortedThresholds,
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
}

/// Broad failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Usage,
    Data,
    Service,
}

impl PipelineError {
    fn stage(stage: Stage) -> impl FnOnce(StageError) -> PipelineError {
        move |source| PipelineError::Stage { stage, source }
    }

    pub fn class(&self) -> FailureClass {
        match self {
            PipelineError::Stage { source, .. } => match source {
                StageError::Selection(SelectionError::Scorer { .. })
                | StageError::Generation(GenerationError::Backend { .. } | GenerationError::Item { .. }) => {
                    FailureClass::Service
                }
                StageError::Client(ClientError::Config(_)) => FailureClass::Usage,
                StageError::Client(ClientError::File { .. }) => FailureClass::Data,
                StageError::Client(_) => FailureClass::Service,
                StageError::Selection(SelectionError::Threshold(_)) => FailureClass::Usage,
                _ => FailureClass::Data,
            },
            PipelineError::UnsortedThresholds | PipelineError::Threshold(_) => FailureClass::Usage,
            _ => FailureClass::Data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorChoice {
    Template,
    External { url: String, name: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParserSource {
    ConlluFile { path: PathBuf },
    Remote { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub selection: SelectionConfig,
    pub generator: GeneratorChoice,
    pub parser: ParserSource,
    #[serde(default)]
    pub label_map_path: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub seed: u64,
    #[serde(default)]
    pub failure_mode: FailureMode,
}

impl PipelineConfig {
    pub fn offline(parses: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            selection: SelectionConfig::default(),
            generator: GeneratorChoice::Template,
            parser: ParserSource::ConlluFile { path: parses.into() },
            label_map_path: None,
            output: None,
            seed: 0,
            failure_mode: FailureMode::Fail,
        }
    }

    /// SHA-256 of the configuration's JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Supplies one dependency graph per sentence, in input order, with graph
/// sentence ids equal to the sentence ids.
pub trait ParseSource: Send + Sync {
    fn parse(&self, sentences: &[&Sentence]) -> Result<Vec<DependencyGraph>, StageError>;
}

/// Pre-computed parses looked up by sentence id.
#[derive(Debug, Clone, Default)]
pub struct ConlluParses {
    graphs: HashMap<String, DependencyGraph>,
}

impl ConlluParses {
    pub fn new(graphs: Vec<DependencyGraph>) -> Self {
        ConlluParses {
            graphs: graphs.into_iter().map(|g| (g.sentence_id().to_string(), g)).collect(),
        }
    }

    pub fn from_conllu(text: &str) -> Result<Self, GraphError> {
        Ok(ConlluParses::new(parse_conllu(text)?))
    }
}

impl ParseSource for ConlluParses {
    fn parse(&self, sentences: &[&Sentence]) -> Result<Vec<DependencyGraph>, StageError> {
        sentences
            .iter()
            .map(|s| {
                self.graphs
                    .get(&s.id)
                    .cloned()
                    .ok_or_else(|| StageError::MissingParse(s.id.clone()))
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct RemoteParser {
    client: ServiceClient,
    labels: Option<LabelMap>,
}

impl RemoteParser {
    pub fn new(client: ServiceClient, labels: Option<LabelMap>) -> Self {
        RemoteParser { client, labels }
    }
}

impl ParseSource for RemoteParser {
    fn parse(&self, sentences: &[&Sentence]) -> Result<Vec<DependencyGraph>, StageError> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
        let graphs = crate::clients::remote_parse(&self.client, &texts, self.labels.as_ref())?;
        Ok(graphs
            .into_iter()
            .zip(sentences)
            .map(|(g, s)| g.with_sentence_id(&s.id))
            .collect())
    }
}

/// The concrete components one run uses.
pub struct Backends {
    pub scorer: Box<dyn DefinitionScorer>,
    pub parser: Box<dyn ParseSource>,
    pub generator: Box<dyn QuestionGenerator>,
    pub patterns: PatternSet,
}

impl Backends {
    pub fn offline(parses: ConlluParses) -> Self {
        Backends {
            scorer: Box::new(RuleScorer::default()),
            parser: Box::new(parses),
            generator: Box::new(TemplateGenerator),
            patterns: default_patterns().clone(),
        }
    }

    /// Builds the backends a configuration names. A `pattern_set_id` other
    /// than `default` is read as a pattern file path.
    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        fn setup(e: impl Into<StageError>) -> PipelineError {
            PipelineError::Stage {
                stage: Stage::Setup,
                source: e.into(),
            }
        }
        let read = |path: &Path| {
            std::fs::read_to_string(path).map_err(|e| {
                setup(StageError::File {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            })
        };
        let client = |url: &str| ServiceClient::new(ServiceEndpoint::new(url)).map_err(setup);
        let scorer: Box<dyn DefinitionScorer> = match &config.selection.scorer {
            ScorerChoice::Rule => Box::new(RuleScorer::default()),
            ScorerChoice::External { url } => Box::new(RemoteScorer::new(client(url)?)),
        };
        let parser: Box<dyn ParseSource> = match &config.parser {
            ParserSource::ConlluFile { path } => Box::new(ConlluParses::from_conllu(&read(path)?).map_err(setup)?),
            ParserSource::Remote { url } => {
                let labels = config
                    .label_map_path
                    .as_deref()
                    .map(load_label_map)
                    .transpose()
                    .map_err(setup)?;
                Box::new(RemoteParser::new(client(url)?, labels))
            }
        };
        let generator: Box<dyn QuestionGenerator> = match &config.generator {
            GeneratorChoice::Template => Box::new(TemplateGenerator),
            GeneratorChoice::External { url, name } => Box::new(RemoteGenerator::new(
                client(url)?,
                name.clone().unwrap_or_else(|| "generator".into()),
            )),
        };
        let patterns = match config.selection.pattern_set_id.as_str() {
            "default" => default_patterns().clone(),
            path => parse_pattern_file(&read(Path::new(path))?).map_err(setup)?,
        };
        Ok(Backends {
            scorer,
            parser,
            generator,
            patterns,
        })
    }
}

/// Sentence counts after each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub sentences: usize,
    pub keyword_filtered: usize,
    pub context_selected: usize,
    pub answer_selected: usize,
    pub questions: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub book_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub scorer_id: String,
    pub generator_id: String,
    pub started_at: String,
    pub finished_at: String,
    pub counts: StageCounts,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub triplets: Vec<QuestionTriplet>,
    pub records: Vec<QuestionRecord>,
    pub manifest: RunManifest,
    /// Ids of every sentence that survived each stage, in document order.
    pub keyword_ids: Vec<String>,
    pub context_ids: Vec<String>,
    pub answer_ids: Vec<String>,
}

impl PipelineRun {
    pub fn jsonl(&self) -> String {
        crate::generation::write_question_jsonl(&self.records)
    }

    /// Writes the question JSONL to `path` and the manifest next to it as
    /// `<path>.manifest.json`.
    pub fn write(&self, path: &Path) -> std::io::Result<PathBuf> {
        std::fs::write(path, self.jsonl())?;
        let mut manifest_path = path.as_os_str().to_owned();
        manifest_path.push(".manifest.json");
        let manifest_path = PathBuf::from(manifest_path);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&manifest_path, text + "\n")?;
        Ok(manifest_path)
    }
}

/// `ask`: context selection, answer selection and question generation for
/// one book.
pub fn ask(
    book: &Textbook,
    index: &ConceptIndex,
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<PipelineRun, PipelineError> {
    let started_at = chrono::Utc::now().to_rfc3339();
    config
        .selection
        .validate()
        .map_err(|e| PipelineError::stage(Stage::Setup)(e.into()))?;
    let all: Vec<&Sentence> = book.sentences().collect();

    let scored = ScoredCandidates::score(&all, index, backends.scorer.as_ref())
        .map_err(|e| PipelineError::stage(Stage::ContextSelection)(e.into()))?;
    let score_of: HashMap<&str, f64> = scored
        .scores
        .iter()
        .map(|s| (s.sentence_id.as_str(), s.score))
        .collect();
    let selected = scored.above(config.selection.threshold);

    let graphs = backends
        .parser
        .parse(&selected)
        .map_err(PipelineError::stage(Stage::Parsing))?;
    if graphs.len() != selected.len() {
        return Err(PipelineError::stage(Stage::Parsing)(StageError::MissingParse(
            selected.get(graphs.len()).map_or_else(String::new, |s| s.id.clone()),
        )));
    }

    let pairs: Vec<GenerationPair<'_>> = selected
        .iter()
        .zip(&graphs)
        .filter_map(|(s, g)| answer_select(g, &backends.patterns).map(|a| GenerationPair::new(s, g, a, index)))
        .collect();

    let outcome = generate_all(&pairs, backends.generator.as_ref(), config.failure_mode)
        .map_err(|e| PipelineError::stage(Stage::Generation)(e.into()))?;

    let records = outcome
        .triplets
        .iter()
        .map(|t| QuestionRecord::from_triplet(&book.id, t, score_of[t.sentence.id.as_str()]))
        .collect();
    let ids = |v: &[&Sentence]| v.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
    let counts = StageCounts {
        sentences: all.len(),
        keyword_filtered: scored.sentences.len(),
        context_selected: selected.len(),
        answer_selected: pairs.len(),
        questions: outcome.triplets.len(),
        skipped: outcome.failed.len(),
    };
    Ok(PipelineRun {
        keyword_ids: ids(&scored.sentences),
        context_ids: ids(&selected),
        answer_ids: pairs.iter().map(|p| p.sentence.id.clone()).collect(),
        records,
        triplets: outcome.triplets,
        manifest: RunManifest {
            book_id: book.id.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            scorer_id: backends.scorer.id(),
            generator_id: backends.generator.id(),
            started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
            counts,
        },
    })
}

/// Question count per threshold, from one scoring and one parsing pass.
///
/// A sentence counts at threshold `t` when its score is at least `t` and
/// answer selection finds an answer in it.
pub fn threshold_sweep(
    book: &Textbook,
    index: &ConceptIndex,
    backends: &Backends,
    thresholds: &[f64],
) -> Result<Vec<(f64, usize)>, PipelineError> {
    if let Some(&t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(PipelineError::Threshold(t));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(PipelineError::UnsortedThresholds);
    }
    let Some(&lowest) = thresholds.first() else {
        return Ok(Vec::new());
    };
    let all: Vec<&Sentence> = book.sentences().collect();
    let scored = ScoredCandidates::score(&all, index, backends.scorer.as_ref())
        .map_err(|e| PipelineError::stage(Stage::ContextSelection)(e.into()))?;
    let candidates = scored.above(lowest);
    let graphs = backends
        .parser
        .parse(&candidates)
        .map_err(PipelineError::stage(Stage::Parsing))?;
    let answered: std::collections::HashSet<&str> = candidates
        .iter()
        .zip(&graphs)
        .filter(|(_, g)| answer_select(g, &backends.patterns).is_some())
        .map(|(s, _)| s.id.as_str())
        .collect();
    let answered_scores: Vec<f64> = scored
        .scores
        .iter()
        .filter(|s| answered.contains(s.sentence_id.as_str()))
        .map(|s| s.score)
        .collect();
    Ok(thresholds
        .iter()
        .map(|&t| (t, answered_scores.iter().filter(|&&s| s >= t).count()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionCount {
    pub section_id: String,
    pub heading: String,
    pub questions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookStats {
    pub book_id: String,
    pub sections: Vec<SectionCount>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub books: Vec<BookStats>,
    /// Over all sections of all books.
    pub overall: Option<Summary>,
    /// Share of questions per prefix, largest first; "other" is omitted.
    pub prefixes: Vec<(String, f64)>,
}

const TWO_WORD_PREFIXES: [&str; 3] = ["What is", "What are", "What does"];
const WH_WORDS: [&str; 9] = ["What", "Which", "Who", "Whom", "Whose", "When", "Where", "Why", "How"];

/// `What is`, `What are` or `What does`; otherwise the leading wh-word;
/// otherwise `None` (counted as other).
pub fn question_prefix(question: &str) -> Option<&'static str> {
    let mut words = question
        .split_whitespace()
        .map(|w| w.trim_end_matches(|c: char| c.is_ascii_punctuation()));
    let first = words.next()?;
    let second = words.next().unwrap_or("");
    TWO_WORD_PREFIXES
        .iter()
        .find(|p| {
            let (a, b) = p.split_once(' ').expect("two words");
            a.eq_ignore_ascii_case(first) && b.eq_ignore_ascii_case(second)
        })
        .or_else(|| WH_WORDS.iter().find(|w| w.eq_ignore_ascii_case(first)))
        .copied()
}

/// Per-section question counts (sections without questions count as zero)
/// with summaries per book and overall, plus the prefix distribution.
pub fn generation_stats(questions: &[QuestionRecord], books: &[&Textbook]) -> Result<GenerationStats, PipelineError> {
    let mut per_paragraph: HashMap<(&str, &str), usize> = HashMap::new();
    for q in questions {
        let book = books.iter().find(|b| b.id == q.book_id);
        let known = book.is_some_and(|b| b.paragraph(&q.paragraph_id).is_some());
        if !known {
            return Err(PipelineError::ForeignQuestion {
                question_id: q.question_id.clone(),
                book_id: q.book_id.clone(),
            });
        }
        *per_paragraph.entry((&q.book_id, &q.paragraph_id)).or_default() += 1;
    }
    let mut all_counts = Vec::new();
    let mut book_stats = Vec::new();
    for book in books {
        let sections: Vec<SectionCount> = book
            .sections
            .iter()
            .map(|s| SectionCount {
                section_id: s.id.clone(),
                heading: s.heading.clone(),
                questions: s
                    .paragraphs
                    .iter()
                    .map(|p| {
                        per_paragraph
                            .get(&(book.id.as_str(), p.id.as_str()))
                            .copied()
                            .unwrap_or(0)
                    })
                    .sum(),
            })
            .collect();
        let counts: Vec<usize> = sections.iter().map(|s| s.questions).collect();
        all_counts.extend_from_slice(&counts);
        if let Some(summary) = Summary::of_counts(&counts) {
            book_stats.push(BookStats {
                book_id: book.id.clone(),
                sections,
                summary,
            });
        }
    }
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    for q in questions {
        if let Some(p) = question_prefix(&q.question_text) {
            *tally.entry(p).or_default() += 1;
        }
    }
    let mut prefixes: Vec<(String, f64)> = tally
        .into_iter()
        .map(|(p, c)| (p.to_string(), c as f64 / questions.len() as f64))
        .collect();
    prefixes.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(GenerationStats {
        books: book_stats,
        overall: Summary::of_counts(&all_counts),
        prefixes,
    })
}

impl fmt::Display for GenerationStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = |f: &mut fmt::Formatter<'_>, name: &str, s: &Summary| {
            writeln!(
                f,
                "{name}\tsections={}\tM={:.2}\tSD={:.2}\tMdn={}",
                s.n, s.mean, s.sd, s.median
            )
        };
        for b in &self.books {
            line(f, &b.book_id, &b.summary)?;
        }
        if let Some(s) = &self.overall {
            line(f, "overall", s)?;
        }
        let mut other = 1.0;
        for (p, share) in &self.prefixes {
            writeln!(f, "{p}\t{:.1}%", share * 100.0)?;
            other -= share;
        }
        if !self.prefixes.is_empty() {
            writeln!(f, "other\t{:.1}%", other.max(0.0) * 100.0)?;
        }
        Ok(())
    }
}

/// Draws `k` items uniformly without replacement from every group.
///
/// Group `g` (by position) uses stream `g` of the seeded generator, so a
/// group's draw does not depend on the other groups' sizes. Items come back
/// grouped, in draw order within each group.
pub fn stratified_sample<T: Clone>(
    groups: &[(String, Vec<T>)],
    k: usize,
    seed: u64,
) -> Result<Vec<(String, T)>, PipelineError> {
    if let Some((name, items)) = groups.iter().find(|(_, items)| items.len() < k) {
        return Err(PipelineError::GroupTooSmall {
            group: name.clone(),
            available: items.len(),
            k,
        });
    }
    let mut out = Vec::with_capacity(k * groups.len());
    for (g, (name, items)) in groups.iter().enumerate() {
        let mut rng = seeded_stream(seed, g as u64);
        let mut order: Vec<usize> = (0..items.len()).collect();
        partial_shuffle(&mut rng, &mut order, k);
        out.extend(order[..k].iter().map(|&i| (name.clone(), items[i].clone())));
    }
    Ok(out)
}

/// Groups question records by book id, books in ascending id order.
pub fn group_by_book(records: Vec<QuestionRecord>) -> Vec<(String, Vec<QuestionRecord>)> {
    let mut groups: BTreeMap<String, Vec<QuestionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.book_id.clone()).or_default().push(r);
    }
    groups.into_iter().collect()
}
