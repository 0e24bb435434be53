//! Question generation from (sentence, answer) pairs.

use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptIndex, Sentence};
use crate::depgraph::DependencyGraph;
use crate::selection::{AnswerCandidate, OBJECT_FALLBACK_ID};

/// Separator between sentence and answer in generator inputs.
pub const SEP: &str = "[SEP]";
pub const TEMPLATE_ID: &str = "template";
pub const GENERIC_QUESTION: &str = "Which characteristic is described for the concept in this sentence?";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerationError {
    #[error("answer belongs to sentence {answer} but was paired with {sentence}")]
    Mismatch { sentence: String, answer: String },
    #[error("reserved token in answer of sentence {0}")]
    ReservedToken(String),
    #[error("invalid question for sentence {sentence_id}: {message}")]
    InvalidQuestion { sentence_id: String, message: String },
    #[error("generator {generator} failed: {message}")]
    Backend { generator: String, message: String },
    #[error("generator {generator} failed on sentence {sentence_id}: {message}")]
    Item {
        generator: String,
        sentence_id: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub text: String,
    /// `template` or `external:<name>`.
    pub generator_id: String,
    pub sentence_id: String,
    /// Token ids of the answer the question was generated for.
    pub answer_ref: Vec<usize>,
}

impl GeneratedQuestion {
    pub fn new(text: &str, generator_id: &str, answer: &AnswerCandidate) -> Result<Self, GenerationError> {
        let text = text.trim();
        let invalid = |message: &str| GenerationError::InvalidQuestion {
            sentence_id: answer.sentence_id.clone(),
            message: message.to_string(),
        };
        if text.is_empty() {
            return Err(invalid("empty question"));
        }
        if !text.ends_with('?') {
            return Err(invalid("question does not end with '?'"));
        }
        Ok(GeneratedQuestion {
            text: text.to_string(),
            generator_id: generator_id.to_string(),
            sentence_id: answer.sentence_id.clone(),
            answer_ref: answer.token_ids.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTriplet {
    pub sentence: Sentence,
    pub answer: AnswerCandidate,
    pub question: GeneratedQuestion,
    pub paragraph_id: String,
}

/// `<sentence text> [SEP] <answer text>`.
pub fn build_generation_input(sentence: &Sentence, answer: &AnswerCandidate) -> Result<String, GenerationError> {
    if sentence.id != answer.sentence_id {
        return Err(GenerationError::Mismatch {
            sentence: sentence.id.clone(),
            answer: answer.sentence_id.clone(),
        });
    }
    if answer.text.contains(SEP) {
        return Err(GenerationError::ReservedToken(answer.sentence_id.clone()));
    }
    Ok(format!("{} {SEP} {}", sentence.text, answer.text))
}

/// The first index concept in `graph` whose tokens lie outside the answer.
///
/// Multiword concepts match consecutive tokens, case-insensitively. At a
/// shared start position the longer concept wins. The result is spelled as
/// in the sentence, except that a sentence-initial word is lower-cased
/// unless it contains further capitals (as acronyms do).
pub fn find_definiendum(graph: &DependencyGraph, answer: &AnswerCandidate, index: &ConceptIndex) -> Option<String> {
    let forms: Vec<String> = graph.tokens().iter().map(|t| t.form.to_lowercase()).collect();
    let concepts: Vec<Vec<String>> = index
        .iter()
        .map(|c| c.split_whitespace().map(str::to_lowercase).collect())
        .collect();
    for start in 0..forms.len() {
        let best = concepts
            .iter()
            .filter(|words| {
                let end = start + words.len();
                end <= forms.len()
                    && forms[start..end] == words[..]
                    && (start + 1..=end).all(|id| !answer.token_ids.contains(&id))
            })
            .map(Vec::len)
            .max();
        if let Some(len) = best {
            let ids: Vec<usize> = (start + 1..=start + len).collect();
            let mut words: Vec<String> = ids.iter().map(|&id| graph.tokens()[id - 1].form.clone()).collect();
            if start == 0 {
                words[0] = sentence_initial_case(&words[0]);
            }
            return Some(words.join(" "));
        }
    }
    None
}

fn sentence_initial_case(word: &str) -> String {
    if word.chars().skip(1).any(char::is_uppercase) {
        word.to_string()
    } else {
        word.to_lowercase()
    }
}

fn lowercase_initial(graph: &DependencyGraph, ids: &[usize]) -> String {
    ids.iter()
        .map(|&id| {
            let form = &graph.tokens()[id - 1].form;
            if id == 1 {
                sentence_initial_case(form)
            } else {
                form.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deterministic template question.
///
/// Clause answers ask for the definiendum (`What is D?`) or fall back to a
/// generic question. Direct-object answers become `What does S V?` using
/// the governing verb's lemma and its subject.
pub fn template_generate(
    graph: &DependencyGraph,
    answer: &AnswerCandidate,
    definiendum: Option<&str>,
) -> GeneratedQuestion {
    let text = if answer.pattern_id == OBJECT_FALLBACK_ID {
        object_question(graph, answer).unwrap_or_else(|| GENERIC_QUESTION.to_string())
    } else {
        match definiendum {
            Some(d) => format!("What is {d}?"),
            None => GENERIC_QUESTION.to_string(),
        }
    };
    GeneratedQuestion::new(&text, TEMPLATE_ID, answer).expect("templates end with '?'")
}

fn object_question(graph: &DependencyGraph, answer: &AnswerCandidate) -> Option<String> {
    // The answer's head token is the one whose governor lies outside it.
    let head = answer
        .token_ids
        .iter()
        .map(|&id| &graph.tokens()[id - 1])
        .find(|t| !answer.token_ids.contains(&t.head))?;
    let verb = graph.token(head.head)?;
    let subject_of = |id: usize| {
        graph
            .children(id)
            .iter()
            .copied()
            .find(|&c| graph.tokens()[c - 1].deprel == "nsubj")
    };
    // Conjoined verbs share the subject of the first conjunct.
    let subject = subject_of(verb.id).or_else(|| (verb.deprel == "conj").then(|| subject_of(verb.head)).flatten())?;
    let subject_ids = graph.subtree_ids(subject).ok()?;
    Some(format!(
        "What does {} {}?",
        lowercase_initial(graph, &subject_ids),
        verb.lemma.to_lowercase()
    ))
}

/// Everything a backend needs for one question.
#[derive(Debug, Clone)]
pub struct GenerationPair<'a> {
    pub sentence: &'a Sentence,
    pub graph: &'a DependencyGraph,
    pub answer: AnswerCandidate,
    pub definiendum: Option<String>,
}

impl<'a> GenerationPair<'a> {
    pub fn new(
        sentence: &'a Sentence,
        graph: &'a DependencyGraph,
        answer: AnswerCandidate,
        index: &ConceptIndex,
    ) -> Self {
        let definiendum = find_definiendum(graph, &answer, index);
        GenerationPair {
            sentence,
            graph,
            answer,
            definiendum,
        }
    }
}

/// A question generation backend.
pub trait QuestionGenerator: Send + Sync {
    /// `template` or `external:<name>`.
    fn id(&self) -> String;

    /// One question text per pair, in input order.
    fn generate_batch(&self, pairs: &[GenerationPair<'_>]) -> Result<Vec<String>, GenerationError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateGenerator;

impl QuestionGenerator for TemplateGenerator {
    fn id(&self) -> String {
        TEMPLATE_ID.to_string()
    }

    fn generate_batch(&self, pairs: &[GenerationPair<'_>]) -> Result<Vec<String>, GenerationError> {
        Ok(pairs
            .iter()
            .map(|p| template_generate(p.graph, &p.answer, p.definiendum.as_deref()).text)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureMode {
    #[default]
    Fail,
    SkipFailed,
}

#[derive(Debug, Clone, Default)]
pub struct GenerationOutcome {
    pub triplets: Vec<QuestionTriplet>,
    /// Sentence ids of omitted pairs with their errors (skip mode only).
    pub failed: Vec<(String, GenerationError)>,
}

/// Generates one question per pair, preserving order.
///
/// In skip mode a failed batch is retried pair by pair and the pairs that
/// still fail are omitted and reported in `failed`.
pub fn generate_all(
    pairs: &[GenerationPair<'_>],
    backend: &dyn QuestionGenerator,
    mode: FailureMode,
) -> Result<GenerationOutcome, GenerationError> {
    let mut outcome = GenerationOutcome::default();
    if pairs.is_empty() {
        return Ok(outcome);
    }
    for pair in pairs {
        build_generation_input(pair.sentence, &pair.answer)?;
    }
    let generator = backend.id();
    let batch = backend.generate_batch(pairs).and_then(|texts| {
        if texts.len() != pairs.len() {
            return Err(GenerationError::Backend {
                generator: generator.clone(),
                message: format!("expected {} questions, got {}", pairs.len(), texts.len()),
            });
        }
        pairs
            .iter()
            .zip(&texts)
            .map(|(p, t)| GeneratedQuestion::new(t, &generator, &p.answer))
            .collect::<Result<Vec<_>, _>>()
    });
    let results: Vec<Result<GeneratedQuestion, GenerationError>> = match (batch, mode) {
        (Ok(questions), _) => questions.into_iter().map(Ok).collect(),
        (Err(e), FailureMode::Fail) => return Err(e),
        (Err(_), FailureMode::SkipFailed) => pairs
            .iter()
            .map(|p| {
                let texts = backend.generate_batch(std::slice::from_ref(p))?;
                let text = texts.first().ok_or_else(|| GenerationError::Item {
                    generator: generator.clone(),
                    sentence_id: p.sentence.id.clone(),
                    message: "no question returned".into(),
                })?;
                GeneratedQuestion::new(text, &generator, &p.answer)
            })
            .collect(),
    };
    for (pair, result) in pairs.iter().zip(results) {
        match result {
            Ok(question) => outcome.triplets.push(QuestionTriplet {
                sentence: pair.sentence.clone(),
                answer: pair.answer.clone(),
                question,
                paragraph_id: pair.sentence.paragraph_id.clone(),
            }),
            Err(e) => outcome.failed.push((pair.sentence.id.clone(), e)),
        }
    }
    Ok(outcome)
}

/// One line of the question JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub book_id: String,
    pub paragraph_id: String,
    pub sentence_id: String,
    pub sentence_text: String,
    pub answer_text: String,
    pub answer_token_ids: Vec<usize>,
    pub pattern_id: String,
    pub question_text: String,
    pub generator_id: String,
    /// Definition score of the source sentence.
    pub score: f64,
}

impl QuestionRecord {
    pub fn from_triplet(book_id: &str, triplet: &QuestionTriplet, score: f64) -> Self {
        QuestionRecord {
            question_id: format!("{}/q", triplet.sentence.id),
            book_id: book_id.to_string(),
            paragraph_id: triplet.paragraph_id.clone(),
            sentence_id: triplet.sentence.id.clone(),
            sentence_text: triplet.sentence.text.clone(),
            answer_text: triplet.answer.text.clone(),
            answer_token_ids: triplet.answer.token_ids.clone(),
            pattern_id: triplet.answer.pattern_id.clone(),
            question_text: triplet.question.text.clone(),
            generator_id: triplet.question.generator_id.clone(),
            score,
        }
    }
}

pub fn write_question_jsonl(records: &[QuestionRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn read_question_jsonl(text: &str) -> Result<Vec<QuestionRecord>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::parse_conllu;

    fn sentence(id: &str, text: &str) -> Sentence {
        Sentence {
            id: id.into(),
            text: text.into(),
            char_span: (0, text.len()),
            paragraph_id: "b/1/1".into(),
        }
    }

    fn answer(sentence_id: &str, text: &str, ids: Vec<usize>, pattern: &str) -> AnswerCandidate {
        AnswerCandidate {
            sentence_id: sentence_id.into(),
            token_ids: ids,
            text: text.into(),
            pattern_id: pattern.into(),
        }
    }

    const CELL_STORES: &str = "1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_\n2\tcell\tcell\tNOUN\tNN\t_\t3\tnsubj\t_\t_\n3\tstores\tstore\tVERB\tVBZ\t_\t0\troot\t_\t_\n4\tDNA\tDNA\tNOUN\tNN\t_\t3\tobj\t_\t_\n5\t.\t.\tPUNCT\t.\t_\t3\tpunct\t_\t_\n";

    #[test]
    fn input_format() {
        let s = sentence("s", "X is Y.");
        assert_eq!(
            build_generation_input(&s, &answer("s", "Y", vec![3], "A1")).unwrap(),
            "X is Y. [SEP] Y"
        );
        assert_eq!(
            build_generation_input(&s, &answer("s", "a [SEP] b", vec![3], "A1"))
                .unwrap_err()
                .to_string(),
            "reserved token in answer of sentence s"
        );
        assert!(matches!(
            build_generation_input(&s, &answer("t", "Y", vec![3], "A1")),
            Err(GenerationError::Mismatch { .. })
        ));
    }

    #[test]
    fn object_template_uses_lemma() {
        let g = parse_conllu(CELL_STORES).unwrap().remove(0);
        let a = answer("1", "DNA", vec![4], OBJECT_FALLBACK_ID);
        assert_eq!(template_generate(&g, &a, None).text, "What does the cell store?");
    }

    #[test]
    fn clause_templates() {
        let g = parse_conllu(CELL_STORES).unwrap().remove(0);
        let a = answer("1", "DNA", vec![4], "A1");
        assert_eq!(
            template_generate(&g, &a, Some("metabolism")).text,
            "What is metabolism?"
        );
        assert_eq!(template_generate(&g, &a, None).text, GENERIC_QUESTION);
    }

    #[test]
    fn definiendum_outside_answer_and_casing() {
        let g = parse_conllu(CELL_STORES).unwrap().remove(0);
        let index = ConceptIndex::new(["DNA", "cell"]);
        let a = answer("1", "DNA", vec![4], OBJECT_FALLBACK_ID);
        assert_eq!(find_definiendum(&g, &a, &index).as_deref(), Some("cell"));
        let a = answer("1", "cell", vec![1, 2], OBJECT_FALLBACK_ID);
        assert_eq!(find_definiendum(&g, &a, &index).as_deref(), Some("DNA"));
        let a = answer("1", "all", vec![1, 2, 3, 4], OBJECT_FALLBACK_ID);
        assert_eq!(find_definiendum(&g, &a, &index), None);

        let index = ConceptIndex::new(["the cell", "the"]);
        let a = answer("1", "DNA", vec![4], OBJECT_FALLBACK_ID);
        assert_eq!(find_definiendum(&g, &a, &index).as_deref(), Some("the cell"));
    }

    #[test]
    fn question_must_end_with_question_mark() {
        let a = answer("s", "Y", vec![1], "A1");
        assert!(GeneratedQuestion::new("What?", "template", &a).is_ok());
        assert!(GeneratedQuestion::new("What", "template", &a).is_err());
        assert!(GeneratedQuestion::new("  ", "template", &a).is_err());
    }

    struct Flaky;

    impl QuestionGenerator for Flaky {
        fn id(&self) -> String {
            "external:flaky".into()
        }

        fn generate_batch(&self, pairs: &[GenerationPair<'_>]) -> Result<Vec<String>, GenerationError> {
            if pairs.len() > 1 {
                return Err(GenerationError::Backend {
                    generator: self.id(),
                    message: "batch rejected".into(),
                });
            }
            if pairs[0].sentence.id == "bad" {
                return Ok(vec![String::new()]);
            }
            Ok(vec![format!("What about {}?", pairs[0].sentence.id)])
        }
    }

    #[test]
    fn skip_failed_omits_and_counts() {
        let g = parse_conllu(CELL_STORES).unwrap().remove(0);
        let s1 = sentence("ok", "The cell stores DNA.");
        let s2 = sentence("bad", "The cell stores DNA.");
        let pairs = vec![
            GenerationPair::new(&s1, &g, answer("ok", "DNA", vec![4], "OBJ"), &ConceptIndex::default()),
            GenerationPair::new(&s2, &g, answer("bad", "DNA", vec![4], "OBJ"), &ConceptIndex::default()),
        ];
        assert!(generate_all(&pairs, &Flaky, FailureMode::Fail).is_err());
        let out = generate_all(&pairs, &Flaky, FailureMode::SkipFailed).unwrap();
        assert_eq!(out.triplets.len(), 1);
        assert_eq!(out.triplets[0].question.text, "What about ok?");
        assert_eq!(out.failed.len(), 1);
        assert_eq!(out.failed[0].0, "bad");
    }

    #[test]
    fn template_cardinality_and_paragraphs() {
        let g = parse_conllu(CELL_STORES).unwrap().remove(0);
        let sentences: Vec<Sentence> = (0..3)
            .map(|i| sentence(&format!("s{i}"), "The cell stores DNA."))
            .collect();
        let pairs: Vec<_> = sentences
            .iter()
            .map(|s| GenerationPair::new(s, &g, answer(&s.id, "DNA", vec![4], "OBJ"), &ConceptIndex::default()))
            .collect();
        let out = generate_all(&pairs, &TemplateGenerator, FailureMode::Fail).unwrap();
        assert_eq!(out.triplets.len(), 3);
        for (t, s) in out.triplets.iter().zip(&sentences) {
            assert_eq!(t.paragraph_id, s.paragraph_id);
            assert_eq!(t.sentence.id, s.id);
        }
        assert!(generate_all(&[], &TemplateGenerator, FailureMode::Fail)
            .unwrap()
            .triplets
            .is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let r = QuestionRecord {
            question_id: "b/1/1/1/q".into(),
            book_id: "b".into(),
            paragraph_id: "b/1/1".into(),
            sentence_id: "b/1/1/1".into(),
            sentence_text: "X is Y.".into(),
            answer_text: "Y".into(),
            answer_token_ids: vec![3],
            pattern_id: "OBJ".into(),
            question_text: "What is X?".into(),
            generator_id: "template".into(),
            score: 0.9,
        };
        let text = write_question_jsonl(std::slice::from_ref(&r));
        assert_eq!(read_question_jsonl(&text).unwrap(), vec![r]);
    }
}
