//! Brute-force reference for the pattern engine.
//!
//! Random trees and random pattern trees are generated from a seed. A
//! pattern is rendered to query text for the engine and evaluated here
//! directly: every injective assignment of pattern nodes to tokens is
//! enumerated and checked against all constraints.

#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use defquest::depgraph::{DependencyGraph, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

const FORMS: [&str; 4] = ["cell", "wall", "that", "gives"];
const UPOS: [&str; 4] = ["NOUN", "VERB", "ADJ", "PUNCT"];
const XPOS: [&str; 4] = ["NN", "VBN", "VBG", "JJ"];
const DEPRELS: [&str; 7] = ["nsubj", "obj", "acl", "acl:relcl", "advcl", "conj", "punct"];

thread_local! {
    static COMPILED: RefCell<HashMap<String, Regex>> = RefCell::new(HashMap::new());
}

#[derive(Debug, Clone)]
pub enum Value {
    Literal(String),
    Regex(String),
}

impl Value {
    fn matches(&self, s: &str) -> bool {
        match self {
            Value::Literal(l) => l == s,
            Value::Regex(r) => COMPILED.with_borrow_mut(|cache| {
                cache
                    .entry(r.clone())
                    .or_insert_with(|| Regex::new(&format!("^(?:{r})$")).unwrap())
                    .is_match(s)
            }),
        }
    }

    fn render(&self) -> String {
        match self {
            Value::Literal(l) => l.clone(),
            Value::Regex(r) => format!("/{r}/"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Relation {
    Any,
    Value(Value),
    Prefix(String),
}

impl Relation {
    fn matches(&self, deprel: &str) -> bool {
        match self {
            Relation::Any => true,
            Relation::Value(v) => v.matches(deprel),
            Relation::Prefix(p) => deprel.split(':').next() == Some(p.as_str()) && deprel.starts_with(p.as_str()),
        }
    }

    fn render(&self) -> String {
        match self {
            Relation::Any => String::new(),
            Relation::Value(v) => v.render(),
            Relation::Prefix(p) => format!("^{p}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatternNode {
    pub attrs: Vec<(&'static str, Value)>,
    pub capture: Option<String>,
    pub children: Vec<(bool, Relation, PatternNode)>,
}

impl PatternNode {
    /// Query text: all but the last child as parenthesised branches, the
    /// last one as a plain descent.
    pub fn render(&self) -> String {
        let attrs: Vec<String> = self.attrs.iter().map(|(a, v)| format!("{a}:{}", v.render())).collect();
        let mut out = format!("{{{}}}", attrs.join(";"));
        if let Some(c) = &self.capture {
            out.push('=');
            out.push_str(c);
        }
        for (i, (transitive, rel, child)) in self.children.iter().enumerate() {
            let arrow = if *transitive { ">>" } else { ">" };
            let step = format!("{arrow}{} {}", rel.render(), child.render());
            if i + 1 < self.children.len() {
                out.push_str(&format!(" ({step})"));
            } else {
                out.push(' ');
                out.push_str(&step);
            }
        }
        out
    }

    fn flatten<'a>(&'a self, parent: Option<(usize, bool, &'a Relation)>, out: &mut Vec<FlatNode<'a>>) {
        let me = out.len();
        out.push(FlatNode { node: self, parent });
        for (t, rel, child) in &self.children {
            child.flatten(Some((me, *t, rel)), out);
        }
    }
}

struct FlatNode<'a> {
    node: &'a PatternNode,
    parent: Option<(usize, bool, &'a Relation)>,
}

fn attr<'t>(token: &'t Token, name: &str) -> &'t str {
    match name {
        "form" => &token.form,
        "lemma" => &token.lemma,
        "upos" => &token.upos,
        "xpos" => &token.xpos,
        "deprel" => &token.deprel,
        _ => unreachable!(),
    }
}

fn is_proper_ancestor(graph: &DependencyGraph, ancestor: usize, mut node: usize) -> bool {
    while node != 0 {
        node = graph.tokens()[node - 1].head;
        if node == ancestor {
            return true;
        }
    }
    false
}

/// Every distinct capture binding, by exhaustive enumeration.
pub fn brute_force(graph: &DependencyGraph, pattern: &PatternNode) -> BTreeSet<BTreeMap<String, usize>> {
    let mut flat = Vec::new();
    pattern.flatten(None, &mut flat);
    let mut out = BTreeSet::new();
    let mut assignment = vec![0usize; flat.len()];
    let mut used = vec![false; graph.len() + 1];
    enumerate(graph, &flat, 0, &mut assignment, &mut used, &mut out);
    out
}

/// Tries every injective assignment; constraints are checked only once all
/// nodes are placed.
fn enumerate(
    graph: &DependencyGraph,
    flat: &[FlatNode<'_>],
    k: usize,
    assignment: &mut [usize],
    used: &mut [bool],
    out: &mut BTreeSet<BTreeMap<String, usize>>,
) {
    if k == flat.len() {
        if satisfies(graph, flat, assignment) {
            let bindings = flat
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.node.capture.clone().map(|c| (c, assignment[i])))
                .collect();
            out.insert(bindings);
        }
        return;
    }
    for t in 1..=graph.len() {
        if !used[t] {
            used[t] = true;
            assignment[k] = t;
            enumerate(graph, flat, k + 1, assignment, used, out);
            used[t] = false;
        }
    }
}

fn satisfies(graph: &DependencyGraph, flat: &[FlatNode<'_>], assignment: &[usize]) -> bool {
    flat.iter().enumerate().all(|(i, f)| {
        let tok = &graph.tokens()[assignment[i] - 1];
        let attrs_ok = f.node.attrs.iter().all(|(a, v)| v.matches(attr(tok, a)));
        let edge_ok = match f.parent {
            None => true,
            Some((p, transitive, rel)) => {
                let parent = assignment[p];
                let linked = if transitive {
                    is_proper_ancestor(graph, parent, tok.id)
                } else {
                    tok.head == parent
                };
                linked && rel.matches(&tok.deprel)
            }
        };
        attrs_ok && edge_ok
    })
}

pub fn random_graph(rng: &mut impl Rng, max_tokens: usize) -> DependencyGraph {
    let n = rng.random_range(1..=max_tokens);
    let mut order: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut heads = vec![0usize; n + 1];
    for (pos, &id) in order.iter().enumerate().skip(1) {
        heads[id] = order[rng.random_range(0..pos)];
    }
    let tokens = (1..=n)
        .map(|id| {
            let form = FORMS[rng.random_range(0..FORMS.len())];
            let deprel = if heads[id] == 0 {
                "root"
            } else {
                DEPRELS[rng.random_range(0..DEPRELS.len())]
            };
            Token::new(
                id,
                form,
                form,
                UPOS[rng.random_range(0..UPOS.len())],
                XPOS[rng.random_range(0..XPOS.len())],
                heads[id],
                deprel,
            )
        })
        .collect();
    DependencyGraph::new("g", tokens).expect("generated trees are valid")
}

fn random_value(rng: &mut impl Rng, attr: &str) -> Value {
    let pool: &[&str] = match attr {
        "form" | "lemma" => &FORMS,
        "upos" => &UPOS,
        "xpos" => &XPOS,
        _ => &DEPRELS,
    };
    let a = pool[rng.random_range(0..pool.len())];
    match rng.random_range(0..3) {
        0 => Value::Literal(a.to_string()),
        1 => {
            let b = pool[rng.random_range(0..pool.len())];
            Value::Regex(format!("{a}|{b}"))
        }
        _ => Value::Regex(format!("{}.*", &a[..1])),
    }
}

fn random_relation(rng: &mut impl Rng) -> Relation {
    match rng.random_range(0..4) {
        0 => Relation::Any,
        1 => Relation::Prefix(["acl", "nsubj", "conj"][rng.random_range(0..3)].to_string()),
        _ => Relation::Value(random_value(rng, "deprel")),
    }
}

fn random_node(rng: &mut impl Rng) -> PatternNode {
    let attrs = (0..rng.random_range(0..=2))
        .map(|_| {
            let a = ["form", "lemma", "upos", "xpos", "deprel"][rng.random_range(0..5)];
            (a, random_value(rng, a))
        })
        .collect();
    PatternNode {
        attrs,
        capture: None,
        children: Vec::new(),
    }
}

/// A pattern of 1 to `max_nodes` nodes with an `ans` capture and sometimes
/// one more capture `x`.
pub fn random_pattern(rng: &mut impl Rng, max_nodes: usize) -> PatternNode {
    let count = rng.random_range(1..=max_nodes);
    let mut nodes: Vec<PatternNode> = (0..count).map(|_| random_node(rng)).collect();
    let ans = rng.random_range(0..count);
    nodes[ans].capture = Some("ans".into());
    if count > 1 && rng.random_bool(0.5) {
        let other = (ans + rng.random_range(1..count)) % count;
        nodes[other].capture = Some("x".into());
    }
    let parents: Vec<usize> = (0..count)
        .map(|i| if i == 0 { 0 } else { rng.random_range(0..i) })
        .collect();
    let edges: Vec<(bool, Relation)> = (0..count)
        .map(|_| (rng.random_bool(0.3), random_relation(rng)))
        .collect();
    // Attach children bottom-up so every node is complete before it moves.
    for i in (1..count).rev() {
        let child = std::mem::replace(&mut nodes[i], random_node(rng));
        let (t, rel) = edges[i].clone();
        nodes[parents[i]].children.insert(0, (t, rel, child));
    }
    nodes.swap_remove(0)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
