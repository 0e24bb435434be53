//! Context selection (concept filter + definition score threshold) and
//! pattern-based answer selection.

use std::cmp::Reverse;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptIndex, Sentence};
use crate::depgraph::DependencyGraph;
use crate::patterns::{find_matches, parse_pattern_file, Pattern, PatternSet, RelationMatcher};

const DEFAULT_PATTERNS: &str = include_str!("../data/patterns.tsv");
const DEFAULT_CUES: &str = include_str!("../data/cues.tsv");

/// Pattern id reported for the direct-object fallback.
pub const OBJECT_FALLBACK_ID: &str = "OBJ";
pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("scorer {scorer} failed on sentence {sentence_id}: {message}")]
    Scorer {
        scorer: String,
        sentence_id: String,
        message: String,
    },
    #[error("score {score} for sentence {sentence_id} outside [0, 1]")]
    ScoreRange { sentence_id: String, score: f64 },
    #[error("cue table line {line}: {message}")]
    CueTable { line: usize, message: String },
    #[error("score cache line {line}: {message}")]
    Cache { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub sentence_id: String,
    pub score: f64,
    pub scorer_id: String,
}

impl ScoredSentence {
    pub fn new(
        sentence_id: impl Into<String>,
        score: f64,
        scorer_id: impl Into<String>,
    ) -> Result<Self, SelectionError> {
        let sentence_id = sentence_id.into();
        if !(0.0..=1.0).contains(&score) {
            return Err(SelectionError::ScoreRange { sentence_id, score });
        }
        Ok(ScoredSentence {
            sentence_id,
            score,
            scorer_id: scorer_id.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerChoice {
    Rule,
    External { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub threshold: f64,
    pub scorer: ScorerChoice,
    pub pattern_set_id: String,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            threshold: DEFAULT_THRESHOLD,
            scorer: ScorerChoice::Rule,
            pattern_set_id: "default".to_string(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SelectionError::Threshold(self.threshold));
        }
        Ok(())
    }
}

/// Case-insensitive whole-phrase matcher over the concept index.
///
/// Words of a multiword concept match across a single whitespace character;
/// regex metacharacters in concepts are literal.
#[derive(Debug, Clone)]
pub struct KeywordFilter {
    regex: Option<Regex>,
}

impl KeywordFilter {
    pub fn new(index: &ConceptIndex) -> Self {
        let alternatives: Vec<String> = index
            .iter()
            .map(|concept| {
                let body = concept
                    .split_whitespace()
                    .map(regex::escape)
                    .collect::<Vec<_>>()
                    .join(r"\s");
                let word_edge = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
                let lead = if word_edge(concept.chars().next()) { r"\b" } else { "" };
                let tail = if word_edge(concept.chars().last()) { r"\b" } else { "" };
                format!("{lead}{body}{tail}")
            })
            .collect();
        let regex = (!alternatives.is_empty())
            .then(|| Regex::new(&format!("(?i)(?:{})", alternatives.join("|"))).expect("escaped concept alternation"));
        KeywordFilter { regex }
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.as_ref().is_some_and(|r| r.is_match(text))
    }
}

/// Sentences that mention at least one index concept, in input order.
pub fn keyword_filter<'a>(sentences: &[&'a Sentence], index: &ConceptIndex) -> Vec<&'a Sentence> {
    let filter = KeywordFilter::new(index);
    sentences.iter().copied().filter(|s| filter.is_match(&s.text)).collect()
}

/// Anything that assigns definition probabilities to sentences.
pub trait DefinitionScorer: Send + Sync {
    fn id(&self) -> String;

    /// One score per input sentence, in input order. Implementations report
    /// failures with the id of the offending sentence.
    fn score_all(&self, sentences: &[&Sentence]) -> Result<Vec<ScoredSentence>, SelectionError>;
}

/// Deterministic cue-phrase scorer.
#[derive(Debug, Clone)]
pub struct RuleScorer {
    default_score: f64,
    cues: Vec<(f64, Regex)>,
}

impl RuleScorer {
    /// Reads a cue table: `score<TAB>regex` lines plus one `default<TAB>score`.
    pub fn from_table(table: &str) -> Result<Self, SelectionError> {
        let mut default_score = None;
        let mut cues = Vec::new();
        for (idx, raw) in table.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let bad = |message: &str| SelectionError::CueTable {
                line,
                message: message.to_string(),
            };
            let (left, right) = raw
                .split_once('\t')
                .ok_or_else(|| bad("expected two tab-separated columns"))?;
            if left == "default" {
                let score: f64 = right.trim().parse().map_err(|_| bad("default score is not a number"))?;
                default_score = Some(score);
                continue;
            }
            let score: f64 = left.trim().parse().map_err(|_| bad("score is not a number"))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(bad("score outside [0, 1]"));
            }
            let regex = Regex::new(&format!("(?i){}", right.trim())).map_err(|e| bad(&e.to_string()))?;
            cues.push((score, regex));
        }
        Ok(RuleScorer {
            default_score: default_score.unwrap_or(0.0),
            cues,
        })
    }

    pub fn score_text(&self, text: &str) -> f64 {
        self.cues
            .iter()
            .filter(|(_, re)| re.is_match(text))
            .map(|(s, _)| *s)
            .fold(self.default_score, f64::max)
    }
}

impl Default for RuleScorer {
    fn default() -> Self {
        static DEFAULT: OnceLock<RuleScorer> = OnceLock::new();
        DEFAULT
            .get_or_init(|| RuleScorer::from_table(DEFAULT_CUES).expect("bundled cue table parses"))
            .clone()
    }
}

impl DefinitionScorer for RuleScorer {
    fn id(&self) -> String {
        "rule".to_string()
    }

    fn score_all(&self, sentences: &[&Sentence]) -> Result<Vec<ScoredSentence>, SelectionError> {
        sentences
            .iter()
            .map(|s| ScoredSentence::new(&s.id, self.score_text(&s.text), "rule"))
            .collect()
    }
}

pub fn rule_score(sentence: &Sentence) -> ScoredSentence {
    let scorer = RuleScorer::default();
    ScoredSentence::new(&sentence.id, scorer.score_text(&sentence.text), "rule").expect("cue scores are validated")
}

/// Serves scores from a cache and delegates misses to another scorer.
pub struct CachedScorer<S> {
    inner: S,
    cache: HashMap<String, f64>,
}

impl<S: DefinitionScorer> CachedScorer<S> {
    pub fn new(inner: S, cached: impl IntoIterator<Item = ScoredSentence>) -> Self {
        let id = inner.id();
        let cache = cached
            .into_iter()
            .filter(|s| s.scorer_id == id)
            .map(|s| (s.sentence_id, s.score))
            .collect();
        CachedScorer { inner, cache }
    }
}

impl<S: DefinitionScorer> DefinitionScorer for CachedScorer<S> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn score_all(&self, sentences: &[&Sentence]) -> Result<Vec<ScoredSentence>, SelectionError> {
        let misses: Vec<&Sentence> = sentences
            .iter()
            .copied()
            .filter(|s| !self.cache.contains_key(&s.id))
            .collect();
        let mut fresh: HashMap<String, f64> = self
            .inner
            .score_all(&misses)?
            .into_iter()
            .map(|s| (s.sentence_id, s.score))
            .collect();
        let id = self.id();
        sentences
            .iter()
            .map(|s| {
                let score = self
                    .cache
                    .get(&s.id)
                    .copied()
                    .or_else(|| fresh.remove(&s.id))
                    .ok_or_else(|| SelectionError::Scorer {
                        scorer: id.clone(),
                        sentence_id: s.id.clone(),
                        message: "no score returned".into(),
                    })?;
                ScoredSentence::new(&s.id, score, &id)
            })
            .collect()
    }
}

/// Reads a JSONL score cache (`{sentence_id, score, scorer_id}` per line).
pub fn read_score_cache(reader: impl BufRead) -> Result<Vec<ScoredSentence>, SelectionError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoredSentence = serde_json::from_str(&line).map_err(|e| SelectionError::Cache {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(ScoredSentence::new(record.sentence_id, record.score, record.scorer_id)?);
    }
    Ok(out)
}

pub fn write_score_cache(mut writer: impl Write, scores: &[ScoredSentence]) -> Result<(), SelectionError> {
    for s in scores {
        let line = serde_json::to_string(s).expect("scored sentence serializes");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// The keyword-filtered sentences with their definition scores.
#[derive(Debug, Clone)]
pub struct ScoredCandidates<'a> {
    pub sentences: Vec<&'a Sentence>,
    pub scores: Vec<ScoredSentence>,
}

impl<'a> ScoredCandidates<'a> {
    pub fn score(
        sentences: &[&'a Sentence],
        index: &ConceptIndex,
        scorer: &dyn DefinitionScorer,
    ) -> Result<Self, SelectionError> {
        let filtered = keyword_filter(sentences, index);
        let scores = scorer.score_all(&filtered)?;
        if scores.len() != filtered.len() {
            let sentence_id = filtered.get(scores.len()).map_or_else(String::new, |s| s.id.clone());
            return Err(SelectionError::Scorer {
                scorer: scorer.id(),
                sentence_id,
                message: format!("expected {} scores, got {}", filtered.len(), scores.len()),
            });
        }
        Ok(ScoredCandidates {
            sentences: filtered,
            scores,
        })
    }

    /// Sentences scoring at or above `threshold`, in input order.
    pub fn above(&self, threshold: f64) -> Vec<&'a Sentence> {
        self.sentences
            .iter()
            .zip(&self.scores)
            .filter(|(_, s)| s.score >= threshold)
            .map(|(s, _)| *s)
            .collect()
    }
}

/// The question-worthy sentences: concept-bearing and scored at or above the
/// configured threshold.
pub fn context_select<'a>(
    sentences: &[&'a Sentence],
    index: &ConceptIndex,
    scorer: &dyn DefinitionScorer,
    config: &SelectionConfig,
) -> Result<Vec<&'a Sentence>, SelectionError> {
    config.validate()?;
    Ok(ScoredCandidates::score(sentences, index, scorer)?.above(config.threshold))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub sentence_id: String,
    pub token_ids: Vec<usize>,
    pub text: String,
    pub pattern_id: String,
}

impl AnswerCandidate {
    fn from_ids(graph: &DependencyGraph, ids: Vec<usize>, pattern_id: &str) -> Option<Self> {
        let ids = trim_punctuation(graph, ids);
        if ids.is_empty() {
            return None;
        }
        Some(AnswerCandidate {
            sentence_id: graph.sentence_id().to_string(),
            text: graph.text_of(&ids),
            token_ids: ids,
            pattern_id: pattern_id.to_string(),
        })
    }

    pub fn start(&self) -> usize {
        self.token_ids[0]
    }
}

fn trim_punctuation(graph: &DependencyGraph, mut ids: Vec<usize>) -> Vec<usize> {
    let is_punct = |id: &usize| graph.token(*id).is_some_and(|t| t.upos == "PUNCT");
    while ids.last().is_some_and(is_punct) {
        ids.pop();
    }
    let lead = ids.iter().take_while(|id| is_punct(id)).count();
    ids.drain(..lead);
    ids
}

pub fn default_patterns() -> &'static PatternSet {
    static SET: OnceLock<PatternSet> = OnceLock::new();
    SET.get_or_init(|| parse_pattern_file(DEFAULT_PATTERNS).expect("bundled patterns compile"))
}

/// Every clause candidate the pattern set produces for `graph`, in pattern
/// order then match order. Candidates drop boundary punctuation.
pub fn clause_candidates<'p>(
    graph: &DependencyGraph,
    patterns: &'p PatternSet,
) -> Vec<(usize, &'p Pattern, AnswerCandidate)> {
    let mut out = Vec::new();
    for (rank, pattern) in patterns.iter().enumerate() {
        for m in find_matches(graph, pattern) {
            let ids = graph.subtree_ids(m.extraction()).expect("match binds existing tokens");
            if let Some(c) = AnswerCandidate::from_ids(graph, ids, pattern.id()) {
                out.push((rank, pattern, c));
            }
        }
    }
    out
}

/// The root's direct object, searching the root's `conj` chain when the
/// root has none.
pub fn direct_object(graph: &DependencyGraph) -> Option<AnswerCandidate> {
    let is_obj = |rel: &str| rel == "obj" || rel.starts_with("obj:");
    let mut queue = vec![graph.root().id];
    let mut next = 0;
    while next < queue.len() {
        let head = queue[next];
        next += 1;
        let children = graph.children(head);
        if let Some(&obj) = children.iter().find(|&&c| is_obj(&graph.tokens()[c - 1].deprel)) {
            let ids = graph.subtree_ids(obj).expect("child exists");
            return AnswerCandidate::from_ids(graph, ids, OBJECT_FALLBACK_ID);
        }
        queue.extend(children.iter().filter(|&&c| graph.tokens()[c - 1].deprel == "conj"));
    }
    None
}

/// Picks one answer phrase for a definitional sentence.
///
/// The clause candidate with the most tokens wins; ties go to the leftmost
/// start, then to the more specific pattern, then to file order. Without a
/// clause candidate the direct object is used. `None` drops the sentence.
pub fn answer_select(graph: &DependencyGraph, patterns: &PatternSet) -> Option<AnswerCandidate> {
    clause_candidates(graph, patterns)
        .into_iter()
        .max_by_key(|(rank, pattern, c)| {
            (
                c.token_ids.len(),
                Reverse(c.start()),
                pattern.specificity(),
                Reverse(*rank),
            )
        })
        .map(|(_, _, c)| c)
        .or_else(|| direct_object(graph))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseCategory {
    Adjectival,
    Adverbial,
}

/// Patterns whose extraction edge is an `advcl` relation are adverbial;
/// all others count as adjectival.
pub fn pattern_category(pattern: &Pattern) -> ClauseCategory {
    match pattern.extraction_relation() {
        Some(RelationMatcher::Value(m)) if m.is_match("advcl") => ClauseCategory::Adverbial,
        Some(RelationMatcher::Prefix(p)) if p == "advcl" => ClauseCategory::Adverbial,
        _ => ClauseCategory::Adjectival,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    pub no_match: usize,
    pub adjectival: usize,
    pub adverbial: usize,
    pub direct_object: usize,
    /// Sentences credited to each clause pattern, in pattern-file order.
    pub per_pattern: Vec<(String, usize)>,
}

impl CoverageReport {
    pub fn share(&self, count: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            count as f64 / self.total as f64
        }
    }

    /// Fraction of sentences with any extracted answer.
    pub fn coverage(&self) -> f64 {
        self.share(self.total - self.no_match)
    }
}

/// Credits each sentence to the first pattern (in file order) that matches
/// it, else to the direct-object fallback, else to no-match.
pub fn coverage_report(graphs: &[DependencyGraph], patterns: &PatternSet) -> CoverageReport {
    let mut report = CoverageReport {
        total: graphs.len(),
        no_match: 0,
        adjectival: 0,
        adverbial: 0,
        direct_object: 0,
        per_pattern: patterns.iter().map(|p| (p.id().to_string(), 0)).collect(),
    };
    for graph in graphs {
        let first = patterns.iter().enumerate().find(|(_, p)| {
            find_matches(graph, p).iter().any(|m| {
                let ids = graph.subtree_ids(m.extraction()).expect("match binds existing tokens");
                !trim_punctuation(graph, ids).is_empty()
            })
        });
        match first {
            Some((i, p)) => {
                report.per_pattern[i].1 += 1;
                match pattern_category(p) {
                    ClauseCategory::Adjectival => report.adjectival += 1,
                    ClauseCategory::Adverbial => report.adverbial += 1,
                }
            }
            None if direct_object(graph).is_some() => report.direct_object += 1,
            None => report.no_match += 1,
        }
    }
    report
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |c: usize| 100.0 * self.share(c);
        writeln!(f, "total\t{}", self.total)?;
        writeln!(f, "no-match\t{}\t{:.0}%", self.no_match, pct(self.no_match))?;
        writeln!(f, "adjectival\t{}\t{:.0}%", self.adjectival, pct(self.adjectival))?;
        writeln!(f, "adverbial\t{}\t{:.0}%", self.adverbial, pct(self.adverbial))?;
        write!(
            f,
            "direct-object\t{}\t{:.0}%",
            self.direct_object,
            pct(self.direct_object)
        )
    }
}
