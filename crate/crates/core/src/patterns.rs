//! A small Semgrex-style query language over dependency trees.
//!
//! ```text
//! chain    := node item*
//! item     := rel node?                 descend: later items attach to the new node
//!           | '(' rel node? item* ')'   branch: later items stay on the current node
//! node     := '{' [attr (';' attr)*] '}' ['=' name]
//! attr     := (form|lemma|upos|xpos|deprel) ':' value
//! rel      := '>' [label] | '>>' [label]
//! label    := value | '^' word          '^acl' matches acl and any acl:subtype
//! value    := '/' regex '/' | word      regexes are anchored; words match literally
//! ```
//!
//! `>rel` requires a direct dependent whose deprel matches `rel`; `>>rel`
//! requires a transitive dependent whose own deprel matches `rel`. A relation
//! without a node stands for `{}`. Every pattern carries exactly one capture
//! named `ans`, the extraction capture.
//!
//! ```
//! use defquest::depgraph::parse_conllu;
//! use defquest::patterns::{compile_pattern, find_matches};
//!
//! let graph = &parse_conllu(
//!     "1\tcats\tcat\tNOUN\tNNS\t_\t2\tnsubj\t_\t_\n2\tsleep\tsleep\tVERB\tVBP\t_\t0\troot\t_\t_\n",
//! )?[0];
//! let pattern = compile_pattern("{upos:VERB} >nsubj {}=ans")?;
//! let matches = find_matches(graph, &pattern);
//! assert_eq!(matches[0].bindings["ans"], 1);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::depgraph::{DependencyGraph, Token};

pub const EXTRACTION_CAPTURE: &str = "ans";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("invalid regex at {pos}: {message}")]
    Regex { pos: usize, message: String },
    #[error("unknown attribute {name:?} at {pos}")]
    UnknownAttribute { pos: usize, name: String },
    #[error("duplicate capture name {0:?}")]
    DuplicateCapture(String),
    #[error("no extraction capture (expected a node named ={EXTRACTION_CAPTURE})")]
    NoExtractionCapture,
    #[error("multiple extraction captures")]
    MultipleExtractionCaptures,
    #[error("pattern file line {line}: {source}")]
    File {
        line: usize,
        #[source]
        source: Box<PatternError>,
    },
    #[error("pattern file line {line}: {message}")]
    FileFormat { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Form,
    Lemma,
    Upos,
    Xpos,
    Deprel,
}

impl Attribute {
    fn parse(name: &str) -> Option<Attribute> {
        Some(match name {
            "form" => Attribute::Form,
            "lemma" => Attribute::Lemma,
            "upos" => Attribute::Upos,
            "xpos" => Attribute::Xpos,
            "deprel" => Attribute::Deprel,
            _ => return None,
        })
    }

    pub fn value<'t>(&self, token: &'t Token) -> &'t str {
        match self {
            Attribute::Form => &token.form,
            Attribute::Lemma => &token.lemma,
            Attribute::Upos => &token.upos,
            Attribute::Xpos => &token.xpos,
            Attribute::Deprel => &token.deprel,
        }
    }
}

/// An anchored regex plus the text it was written as.
#[derive(Debug, Clone)]
pub struct ValueMatcher {
    source: String,
    regex: Regex,
}

impl ValueMatcher {
    fn regex(source: &str, pos: usize) -> Result<Self, PatternError> {
        let regex = Regex::new(&format!("^(?:{source})$")).map_err(|e| PatternError::Regex {
            pos,
            message: e.to_string(),
        })?;
        Ok(ValueMatcher {
            source: format!("/{source}/"),
            regex,
        })
    }

    fn literal(word: &str) -> Self {
        ValueMatcher {
            source: word.to_string(),
            regex: Regex::new(&format!("^{}$", regex::escape(word))).expect("escaped literal"),
        }
    }

    pub fn is_match(&self, value: &str) -> bool {
        self.regex.is_match(value)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

#[derive(Debug, Clone)]
pub enum RelationMatcher {
    Any,
    Value(ValueMatcher),
    /// The label itself or any `label:subtype`.
    Prefix(String),
}

impl RelationMatcher {
    pub fn is_match(&self, deprel: &str) -> bool {
        match self {
            RelationMatcher::Any => true,
            RelationMatcher::Value(m) => m.is_match(deprel),
            RelationMatcher::Prefix(p) => {
                deprel == p
                    || deprel
                        .strip_prefix(p.as_str())
                        .is_some_and(|rest| rest.starts_with(':'))
            }
        }
    }

    pub fn source(&self) -> String {
        match self {
            RelationMatcher::Any => String::new(),
            RelationMatcher::Value(m) => m.source().to_string(),
            RelationMatcher::Prefix(p) => format!("^{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Direct,
    Transitive,
}

#[derive(Debug, Clone, Default)]
pub struct NodeSpec {
    pub constraints: Vec<(Attribute, ValueMatcher)>,
    pub capture: Option<String>,
}

impl NodeSpec {
    pub fn accepts(&self, token: &Token) -> bool {
        self.constraints.iter().all(|(a, m)| m.is_match(a.value(token)))
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub parent: usize,
    pub child: usize,
    pub kind: EdgeKind,
    pub relation: RelationMatcher,
}

/// A compiled pattern. Node 0 is the root; every other node has exactly one
/// incoming edge from a node with a smaller index.
#[derive(Debug, Clone)]
pub struct Pattern {
    id: String,
    source_text: String,
    nodes: Vec<NodeSpec>,
    edges: Vec<Edge>,
    /// Incoming edge index per node (`None` for the root).
    incoming: Vec<Option<usize>>,
    extraction: usize,
}

impl Pattern {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn captures(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter_map(|n| n.capture.as_deref())
    }

    pub fn extraction_node(&self) -> usize {
        self.extraction
    }

    /// The relation on the edge into the extraction node, if it has one.
    pub fn extraction_relation(&self) -> Option<&RelationMatcher> {
        self.incoming[self.extraction].map(|e| &self.edges[e].relation)
    }

    /// Node count plus attribute and relation constraints.
    pub fn specificity(&self) -> usize {
        self.nodes.len()
            + self.nodes.iter().map(|n| n.constraints.len()).sum::<usize>()
            + self
                .edges
                .iter()
                .filter(|e| !matches!(e.relation, RelationMatcher::Any))
                .count()
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source_text)
    }
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
    nodes: Vec<NodeSpec>,
    edges: Vec<Edge>,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, PatternError> {
        Err(PatternError::Syntax {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn word(&mut self) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || matches!(c, '_' | ':' | '-' | '.') {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        &self.text[start..self.pos]
    }

    fn value(&mut self) -> Result<ValueMatcher, PatternError> {
        let start = self.pos;
        if self.eat('/') {
            let mut body = String::new();
            loop {
                match self.peek() {
                    None => return self.err("unterminated regex"),
                    Some('/') => {
                        self.pos += 1;
                        break;
                    }
                    Some('\\') if self.text[self.pos + 1..].starts_with('/') => {
                        body.push('/');
                        self.pos += 2;
                    }
                    Some(c) => {
                        body.push(c);
                        self.pos += c.len_utf8();
                    }
                }
            }
            ValueMatcher::regex(&body, start)
        } else {
            let w = self.word();
            if w.is_empty() {
                return self.err("expected a value");
            }
            Ok(ValueMatcher::literal(w))
        }
    }

    fn node(&mut self) -> Result<usize, PatternError> {
        self.skip_ws();
        if !self.eat('{') {
            return self.err("expected '{'");
        }
        let mut spec = NodeSpec::default();
        self.skip_ws();
        if !self.eat('}') {
            loop {
                self.skip_ws();
                let at = self.pos;
                let name = {
                    let start = self.pos;
                    while self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
                        self.pos += 1;
                    }
                    &self.text[start..self.pos]
                };
                let attr = Attribute::parse(name).ok_or_else(|| PatternError::UnknownAttribute {
                    pos: at,
                    name: name.to_string(),
                })?;
                self.skip_ws();
                if !self.eat(':') {
                    return self.err("expected ':' after attribute name");
                }
                self.skip_ws();
                let value = self.value()?;
                spec.constraints.push((attr, value));
                self.skip_ws();
                if self.eat(';') {
                    continue;
                }
                if self.eat('}') {
                    break;
                }
                return self.err("expected ';' or '}'");
            }
        }
        if self.eat('=') {
            let name = self.word();
            let valid = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                return self.err("expected a capture name after '='");
            }
            spec.capture = Some(name.to_string());
        }
        self.nodes.push(spec);
        Ok(self.nodes.len() - 1)
    }

    fn relation(&mut self) -> Result<(EdgeKind, RelationMatcher), PatternError> {
        if !self.eat('>') {
            return self.err("expected '>'");
        }
        let kind = if self.eat('>') {
            EdgeKind::Transitive
        } else {
            EdgeKind::Direct
        };
        let relation = match self.peek() {
            Some('^') => {
                self.pos += 1;
                let w = self.word();
                if w.is_empty() {
                    return self.err("expected a label after '^'");
                }
                RelationMatcher::Prefix(w.to_string())
            }
            Some('/') => RelationMatcher::Value(self.value()?),
            Some(c) if c.is_alphanumeric() || c == '_' => RelationMatcher::Value(self.value()?),
            _ => RelationMatcher::Any,
        };
        Ok((kind, relation))
    }

    /// One relation and its target node; returns the target.
    fn step(&mut self, from: usize) -> Result<usize, PatternError> {
        let (kind, relation) = self.relation()?;
        self.skip_ws();
        let child = if self.peek() == Some('{') {
            self.node()?
        } else {
            self.nodes.push(NodeSpec::default());
            self.nodes.len() - 1
        };
        self.edges.push(Edge {
            parent: from,
            child,
            kind,
            relation,
        });
        Ok(child)
    }

    fn items(&mut self, mut current: usize, closing: bool) -> Result<(), PatternError> {
        loop {
            self.skip_ws();
            match self.peek() {
                None if closing => return self.err("expected ')'"),
                None => return Ok(()),
                Some(')') if closing => {
                    self.pos += 1;
                    return Ok(());
                }
                Some('>') => current = self.step(current)?,
                Some('(') => {
                    self.pos += 1;
                    self.skip_ws();
                    let child = self.step(current)?;
                    self.items(child, true)?;
                }
                Some(_) => return self.err("expected '>' or '('"),
            }
        }
    }
}

/// Compiles pattern text.
pub fn compile_pattern(text: &str) -> Result<Pattern, PatternError> {
    let mut parser = Parser {
        text,
        pos: 0,
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    let root = parser.node()?;
    parser.items(root, false)?;

    let mut seen = HashSet::new();
    let mut extraction = Vec::new();
    for (i, node) in parser.nodes.iter().enumerate() {
        if let Some(name) = &node.capture {
            if name == EXTRACTION_CAPTURE {
                extraction.push(i);
                if extraction.len() > 1 {
                    return Err(PatternError::MultipleExtractionCaptures);
                }
            } else if !seen.insert(name.clone()) {
                return Err(PatternError::DuplicateCapture(name.clone()));
            }
        }
    }
    let extraction = *extraction.first().ok_or(PatternError::NoExtractionCapture)?;

    let mut incoming = vec![None; parser.nodes.len()];
    for (i, e) in parser.edges.iter().enumerate() {
        incoming[e.child] = Some(i);
    }
    Ok(Pattern {
        id: String::new(),
        source_text: text.trim().to_string(),
        nodes: parser.nodes,
        edges: parser.edges,
        incoming,
        extraction,
    })
}

/// Capture bindings of one match, capture name to token id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub pattern_id: String,
    pub bindings: BTreeMap<String, usize>,
}

impl Match {
    pub fn extraction(&self) -> usize {
        self.bindings[EXTRACTION_CAPTURE]
    }
}

/// All distinct capture bindings of `pattern` in `graph`.
///
/// Pattern nodes bind to distinct tokens. Results are ordered by the
/// extraction capture's token id, then by the other captures in name order.
pub fn find_matches(graph: &DependencyGraph, pattern: &Pattern) -> Vec<Match> {
    let mut assignment = vec![0usize; pattern.nodes.len()];
    let mut found: BTreeSet<(usize, Vec<(String, usize)>)> = BTreeSet::new();
    search(graph, pattern, 0, &mut assignment, &mut found);
    found
        .into_iter()
        .map(|(ans, rest)| {
            let mut bindings: BTreeMap<String, usize> = rest.into_iter().collect();
            bindings.insert(EXTRACTION_CAPTURE.to_string(), ans);
            Match {
                pattern_id: pattern.id.clone(),
                bindings,
            }
        })
        .collect()
}

fn search(
    graph: &DependencyGraph,
    pattern: &Pattern,
    k: usize,
    assignment: &mut [usize],
    found: &mut BTreeSet<(usize, Vec<(String, usize)>)>,
) {
    if k == pattern.nodes.len() {
        let ans = assignment[pattern.extraction];
        let rest = pattern
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.capture {
                Some(name) if i != pattern.extraction => Some((name.clone(), assignment[i])),
                _ => None,
            })
            .collect::<BTreeMap<_, _>>()
            .into_iter()
            .collect();
        found.insert((ans, rest));
        return;
    }
    let spec = &pattern.nodes[k];
    let candidates: Vec<usize> = match pattern.incoming[k] {
        None => (1..=graph.len()).collect(),
        Some(e) => {
            let edge = &pattern.edges[e];
            let from = assignment[edge.parent];
            let pool = match edge.kind {
                EdgeKind::Direct => graph.children(from).to_vec(),
                EdgeKind::Transitive => graph.descendants(from),
            };
            pool.into_iter()
                .filter(|&c| edge.relation.is_match(&graph.tokens()[c - 1].deprel))
                .collect()
        }
    };
    for c in candidates {
        if assignment[..k].contains(&c) || !spec.accepts(&graph.tokens()[c - 1]) {
            continue;
        }
        assignment[k] = c;
        search(graph, pattern, k + 1, assignment, found);
    }
}

/// An ordered, id-addressed list of patterns.
#[derive(Debug, Clone, Default)]
pub struct PatternSet {
    patterns: Vec<Pattern>,
}

impl PatternSet {
    pub fn new(patterns: Vec<Pattern>) -> Self {
        PatternSet { patterns }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pattern> {
        self.patterns.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Pattern> {
        self.patterns.iter().find(|p| p.id == id)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Reads a pattern file: `id<TAB>pattern` per line, `#` comments.
pub fn parse_pattern_file(text: &str) -> Result<PatternSet, PatternError> {
    let mut patterns: Vec<Pattern> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (id, body) = raw.split_once('\t').ok_or_else(|| PatternError::FileFormat {
            line,
            message: "expected id<TAB>pattern".into(),
        })?;
        let id = id.trim();
        if id.is_empty() {
            return Err(PatternError::FileFormat {
                line,
                message: "empty pattern id".into(),
            });
        }
        if patterns.iter().any(|p| p.id == id) {
            return Err(PatternError::FileFormat {
                line,
                message: format!("duplicate pattern id {id:?}"),
            });
        }
        let pattern = compile_pattern(body).map_err(|e| PatternError::File {
            line,
            source: Box::new(e),
        })?;
        patterns.push(pattern.with_id(id));
    }
    Ok(PatternSet { patterns })
}
