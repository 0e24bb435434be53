//! Word-level dependency trees and a CoNLL-U reader/writer.
//!
//! Only basic UD trees are modelled. Multiword-token ranges (`1-2`) and empty
//! nodes (`1.1`) are skipped; the FEATS, DEPS and MISC columns are carried
//! through unchanged.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: expected 10 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: invalid token id {value:?}")]
    BadId { line: usize, value: String },
    #[error("line {line}: non-integer head {value:?}")]
    BadHead { line: usize, value: String },
    #[error("sentence {sentence}: token ids must run 1..n in order")]
    NonSequentialIds { sentence: String },
    #[error("sentence {sentence}: head {head} of token {token} out of range")]
    HeadOutOfRange {
        sentence: String,
        token: usize,
        head: usize,
    },
    #[error("sentence {sentence}: token {token} is its own head")]
    SelfLoop { sentence: String, token: usize },
    #[error("sentence {sentence}: no root token")]
    NoRoot { sentence: String },
    #[error("sentence {sentence}: multiple roots ({roots:?})")]
    MultipleRoots { sentence: String, roots: Vec<usize> },
    #[error("sentence {sentence}: cycle through token {token}")]
    Cycle { sentence: String, token: usize },
    #[error("sentence {sentence}: unknown token id {token}")]
    UnknownNode { sentence: String, token: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    /// 0 marks the root.
    pub head: usize,
    pub deprel: String,
    #[serde(default = "underscore")]
    pub feats: String,
    #[serde(default = "underscore")]
    pub deps: String,
    #[serde(default = "underscore")]
    pub misc: String,
}

fn underscore() -> String {
    "_".to_string()
}

impl Token {
    /// A token with `_` in the opaque columns.
    pub fn new(id: usize, form: &str, lemma: &str, upos: &str, xpos: &str, head: usize, deprel: &str) -> Self {
        Token {
            id,
            form: form.to_string(),
            lemma: lemma.to_string(),
            upos: upos.to_string(),
            xpos: xpos.to_string(),
            head,
            deprel: deprel.to_string(),
            feats: underscore(),
            deps: underscore(),
            misc: underscore(),
        }
    }
}

/// A validated single-rooted dependency tree. Token `i` lives at index `i - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct DependencyGraph {
    sentence_id: String,
    tokens: Vec<Token>,
    children: Vec<Vec<usize>>,
    root: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    sentence_id: String,
    tokens: Vec<Token>,
}

impl TryFrom<RawGraph> for DependencyGraph {
    type Error = GraphError;

    fn try_from(raw: RawGraph) -> Result<Self, Self::Error> {
        DependencyGraph::new(raw.sentence_id, raw.tokens)
    }
}

impl From<DependencyGraph> for RawGraph {
    fn from(g: DependencyGraph) -> Self {
        RawGraph {
            sentence_id: g.sentence_id,
            tokens: g.tokens,
        }
    }
}

impl DependencyGraph {
    /// Validates the tree: ids `1..=n` in order, heads in range, exactly one
    /// root and no cycles.
    pub fn new(sentence_id: impl Into<String>, tokens: Vec<Token>) -> Result<Self, GraphError> {
        let sentence = sentence_id.into();
        let n = tokens.len();
        if tokens.iter().enumerate().any(|(i, t)| t.id != i + 1) {
            return Err(GraphError::NonSequentialIds { sentence });
        }
        let mut roots = Vec::new();
        for t in &tokens {
            if t.head > n {
                return Err(GraphError::HeadOutOfRange {
                    sentence,
                    token: t.id,
                    head: t.head,
                });
            }
            if t.head == t.id {
                return Err(GraphError::SelfLoop { sentence, token: t.id });
            }
            if t.head == 0 {
                roots.push(t.id);
            }
        }
        let root = match roots.as_slice() {
            [] => return Err(GraphError::NoRoot { sentence }),
            [r] => *r,
            _ => return Err(GraphError::MultipleRoots { sentence, roots }),
        };
        // Walk every head chain; with one root and n tokens a chain longer
        // than n means a cycle.
        for t in &tokens {
            let mut cur = t.id;
            let mut steps = 0;
            while cur != 0 {
                cur = tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(GraphError::Cycle { sentence, token: t.id });
                }
            }
        }
        let mut children = vec![Vec::new(); n + 1];
        for t in &tokens {
            children[t.head].push(t.id);
        }
        Ok(DependencyGraph {
            sentence_id: sentence,
            tokens,
            children,
            root,
        })
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn root(&self) -> &Token {
        &self.tokens[self.root - 1]
    }

    pub fn token(&self, id: usize) -> Option<&Token> {
        id.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    /// Direct dependents of `id` in surface order; `0` gives the root.
    pub fn children(&self, id: usize) -> &[usize] {
        self.children.get(id).map_or(&[], Vec::as_slice)
    }

    /// Whether `ancestor` dominates `node` through one or more head links.
    pub fn dominates(&self, ancestor: usize, node: usize) -> bool {
        let mut cur = match self.token(node) {
            Some(t) => t.head,
            None => return false,
        };
        while cur != 0 {
            if cur == ancestor {
                return true;
            }
            cur = self.tokens[cur - 1].head;
        }
        false
    }

    /// All transitive dependents of `id` (excluding `id`), in surface order.
    pub fn descendants(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.children(id).to_vec();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend_from_slice(self.children(n));
        }
        out.sort_unstable();
        out
    }

    /// The node plus all of its transitive dependents, in surface order.
    pub fn subtree_yield(&self, id: usize) -> Result<Vec<&Token>, GraphError> {
        self.subtree_ids(id)
            .map(|ids| ids.into_iter().map(|i| &self.tokens[i - 1]).collect())
    }

    pub fn subtree_ids(&self, id: usize) -> Result<Vec<usize>, GraphError> {
        if self.token(id).is_none() {
            return Err(GraphError::UnknownNode {
                sentence: self.sentence_id.clone(),
                token: id,
            });
        }
        let mut ids = self.descendants(id);
        ids.push(id);
        ids.sort_unstable();
        Ok(ids)
    }

    /// Surface forms of the given tokens joined by single spaces.
    pub fn text_of(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&i| self.token(i))
            .map(|t| t.form.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Rewrites deprel labels through a mapping table, leaving unmapped labels alone.
    pub fn map_labels(&mut self, mapping: &HashMap<String, String>) {
        for t in &mut self.tokens {
            if let Some(to) = mapping.get(&t.deprel) {
                t.deprel = to.clone();
            }
        }
    }

    pub fn with_sentence_id(mut self, id: impl Into<String>) -> Self {
        self.sentence_id = id.into();
        self
    }
}

/// Parses CoNLL-U text into one graph per sentence block.
///
/// The sentence id comes from a `# sent_id = ...` comment, falling back to the
/// 1-based position of the block.
pub fn parse_conllu(input: &str) -> Result<Vec<DependencyGraph>, GraphError> {
    let mut graphs = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut sent_id: Option<String> = None;
    let mut in_block = false;

    let finish = |tokens: &mut Vec<Token>, sent_id: &mut Option<String>, graphs: &mut Vec<DependencyGraph>| {
        let id = sent_id.take().unwrap_or_else(|| (graphs.len() + 1).to_string());
        let graph = DependencyGraph::new(id, std::mem::take(tokens))?;
        graphs.push(graph);
        Ok::<(), GraphError>(())
    };

    for (idx, raw) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if in_block && tokens.is_empty() {
                // comment-only block
                sent_id = None;
            } else if in_block {
                finish(&mut tokens, &mut sent_id, &mut graphs)?;
            }
            in_block = false;
            continue;
        }
        in_block = true;
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(GraphError::ColumnCount {
                line: line_no,
                found: cols.len(),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| GraphError::BadId {
            line: line_no,
            value: cols[0].to_string(),
        })?;
        let head: usize = cols[6].parse().map_err(|_| GraphError::BadHead {
            line: line_no,
            value: cols[6].to_string(),
        })?;
        tokens.push(Token {
            id,
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            xpos: cols[4].to_string(),
            feats: cols[5].to_string(),
            head,
            deprel: cols[7].to_string(),
            deps: cols[8].to_string(),
            misc: cols[9].to_string(),
        });
    }
    if in_block && !tokens.is_empty() {
        finish(&mut tokens, &mut sent_id, &mut graphs)?;
    }
    Ok(graphs)
}

/// Writes graphs back out as CoNLL-U with a `sent_id` comment per block.
pub fn write_conllu(graphs: &[DependencyGraph]) -> String {
    let mut out = String::new();
    for g in graphs {
        let _ = writeln!(out, "# sent_id = {}", g.sentence_id);
        for t in &g.tokens {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.id, t.form, t.lemma, t.upos, t.xpos, t.feats, t.head, t.deprel, t.deps, t.misc
            );
        }
        out.push('\n');
    }
    out
}
