//! Annotation scheme with gating, agreement statistics, label distributions
//! and ROC analysis.
//!
//! Percent agreement is the mean over questions of the share of agreeing
//! rater pairs. Krippendorff's α uses the nominal coincidence-matrix form,
//! with "not applicable" as an ordinary category and single-rated questions
//! left out.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rng::{seeded_stream, uniform_below};

const DEFAULT_SCHEME: &str = include_str!("../data/scheme.json");
/// The label a gate item must carry to blank the items after it.
pub const GATE_CLOSED: &str = "no";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid scheme: {0}")]
    Scheme(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("label {label:?} is not a choice of item {item}")]
    UnknownLabel { item: String, label: String },
    #[error("nothing pairable for item {0}")]
    NothingPairable(String),
    #[error("bootstrap for item {item} gave up after {tried} resamples")]
    BootstrapDegenerate { item: String, tried: usize },
    #[error("invalid bootstrap setting: {0}")]
    Bootstrap(String),
    #[error("ROC needs both positive and negative examples")]
    SingleClass,
    #[error("score {0} outside [0, 1]")]
    ScoreRange(f64),
    #[error("line {line}: {message}")]
    Input { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeItem {
    pub id: String,
    pub group: u8,
    pub choices: Vec<String>,
    pub is_gate: bool,
}

/// Ordered annotation items in four groups, each opened by a gate item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationScheme {
    pub items: Vec<SchemeItem>,
}

impl Default for AnnotationScheme {
    fn default() -> Self {
        AnnotationScheme::from_json(DEFAULT_SCHEME).expect("bundled scheme is valid")
    }
}

impl AnnotationScheme {
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let scheme: AnnotationScheme = serde_json::from_str(text).map_err(|e| EvalError::Scheme(e.to_string()))?;
        scheme.validate()?;
        Ok(scheme)
    }

    /// Unique ids, non-decreasing groups, non-empty unique choices, and
    /// exactly one gate per group which must offer the closing label.
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Scheme(m));
        if self.items.is_empty() {
            return bad("no items".into());
        }
        let mut ids = std::collections::HashSet::new();
        let mut gates: BTreeMap<u8, usize> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            if !ids.insert(item.id.as_str()) {
                return bad(format!("duplicate item {}", item.id));
            }
            if i > 0 && item.group < self.items[i - 1].group {
                return bad(format!("item {} breaks group order", item.id));
            }
            let mut choices = item.choices.clone();
            choices.sort();
            choices.dedup();
            if choices.is_empty() || choices.len() != item.choices.len() {
                return bad(format!("item {} needs distinct choices", item.id));
            }
            if item.is_gate {
                if !item.choices.iter().any(|c| c == GATE_CLOSED) {
                    return bad(format!("gate {} has no {GATE_CLOSED:?} choice", item.id));
                }
                *gates.entry(item.group).or_default() += 1;
            }
        }
        for group in self.items.iter().map(|i| i.group) {
            match gates.get(&group) {
                Some(1) => {}
                Some(n) => return bad(format!("group {group} has {n} gates")),
                None => return bad(format!("group {group} has no gate")),
            }
        }
        Ok(())
    }

    pub fn item(&self, id: &str) -> Result<&SchemeItem, EvalError> {
        self.items
            .iter()
            .find(|i| i.id == id)
            .ok_or_else(|| EvalError::UnknownItem(id.to_string()))
    }
}

/// One answer to one item. Serialized as the label, or `"NA"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Response {
    Label(String),
    NotApplicable,
}

impl Response {
    pub fn label(s: &str) -> Self {
        Response::Label(s.to_string())
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Response::Label(l) => f.write_str(l),
            Response::NotApplicable => f.write_str("NA"),
        }
    }
}

impl Serialize for Response {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Response {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "NA" {
            Response::NotApplicable
        } else {
            Response::Label(s)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub question_id: String,
    pub rater_id: String,
    pub responses: BTreeMap<String, Response>,
    #[serde(default)]
    pub ts: String,
}

/// Validates a record and marks every item after a closed gate as not
/// applicable. Labels are matched case-insensitively and stored in the
/// scheme's spelling. Idempotent.
pub fn apply_gating(scheme: &AnnotationScheme, record: &AnnotationRecord) -> Result<AnnotationRecord, EvalError> {
    let mut responses = BTreeMap::new();
    for (id, response) in &record.responses {
        let item = scheme.item(id)?;
        let normalized = match response {
            Response::NotApplicable => Response::NotApplicable,
            Response::Label(l) => Response::Label(
                item.choices
                    .iter()
                    .find(|c| c.eq_ignore_ascii_case(l))
                    .cloned()
                    .ok_or_else(|| EvalError::UnknownLabel {
                        item: id.clone(),
                        label: l.clone(),
                    })?,
            ),
        };
        responses.insert(id.clone(), normalized);
    }
    let closed_at = scheme
        .items
        .iter()
        .position(|item| item.is_gate && responses.get(&item.id) == Some(&Response::Label(GATE_CLOSED.to_string())));
    if let Some(gate) = closed_at {
        for item in &scheme.items[gate + 1..] {
            responses.insert(item.id.clone(), Response::NotApplicable);
        }
    }
    Ok(AnnotationRecord {
        responses,
        ..record.clone()
    })
}

/// Each question's responses for `item`, one per rater who gave one, with
/// questions ordered by id.
fn units<'a>(records: &'a [AnnotationRecord], item: &str) -> Vec<Vec<&'a Response>> {
    let mut by_question: BTreeMap<&str, Vec<&Response>> = BTreeMap::new();
    for r in records {
        if let Some(resp) = r.responses.get(item) {
            by_question.entry(&r.question_id).or_default().push(resp);
        }
    }
    by_question.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentAgreement {
    pub value: f64,
    pub questions: usize,
    /// Questions with fewer than two ratings.
    pub skipped: usize,
}

pub fn percent_agreement(
    records: &[AnnotationRecord],
    scheme: &AnnotationScheme,
    item: &str,
) -> Result<PercentAgreement, EvalError> {
    scheme.item(item)?;
    let mut total = 0.0;
    let mut questions = 0;
    let mut skipped = 0;
    for unit in units(records, item) {
        let m = unit.len();
        if m < 2 {
            skipped += 1;
            continue;
        }
        let mut agreeing = 0usize;
        for i in 0..m {
            for j in i + 1..m {
                agreeing += usize::from(unit[i] == unit[j]);
            }
        }
        total += agreeing as f64 / (m * (m - 1) / 2) as f64;
        questions += 1;
    }
    if questions == 0 {
        return Err(EvalError::NothingPairable(item.to_string()));
    }
    Ok(PercentAgreement {
        value: total / questions as f64,
        questions,
        skipped,
    })
}

/// Per-question coincidence contributions over category indices.
struct Coincidences {
    categories: usize,
    /// For each pairable unit, its (c, k, weight) entries, c and k possibly equal.
    units: Vec<Vec<(usize, usize, f64)>>,
}

impl Coincidences {
    fn new(records: &[AnnotationRecord], item: &str) -> Self {
        let raw = units(records, item);
        let index: BTreeMap<&Response, usize> = raw
            .iter()
            .flatten()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (r, i))
            .collect();
        let units = raw
            .iter()
            .filter(|u| u.len() >= 2)
            .map(|u| {
                let m = u.len();
                let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
                for r in u {
                    *counts.entry(index[r]).or_default() += 1;
                }
                let mut entries = Vec::new();
                for (&c, &nc) in &counts {
                    for (&k, &nk) in &counts {
                        let pairs = if c == k { nc * (nc - 1) } else { nc * nk };
                        if pairs > 0 {
                            entries.push((c, k, pairs as f64 / (m - 1) as f64));
                        }
                    }
                }
                entries
            })
            .collect();
        Coincidences {
            categories: index.len(),
            units,
        }
    }

    /// α over the given unit indices; `None` when nothing is pairable.
    /// Agreement without any disagreement is exactly 1.
    fn alpha(&self, picks: impl Iterator<Item = usize>) -> Option<(f64, usize)> {
        let q = self.categories;
        let mut o = vec![0.0; q * q];
        for u in picks {
            for &(c, k, w) in &self.units[u] {
                o[c * q + k] += w;
            }
        }
        let n_c: Vec<f64> = (0..q).map(|c| (0..q).map(|k| o[c * q + k]).sum()).collect();
        let n: f64 = n_c.iter().sum();
        if n == 0.0 {
            return None;
        }
        let present = n_c.iter().filter(|&&x| x > 0.0).count();
        let mut disagreement = 0.0;
        let mut expected = 0.0;
        for c in 0..q {
            for k in 0..q {
                if c != k {
                    disagreement += o[c * q + k];
                    expected += n_c[c] * n_c[k];
                }
            }
        }
        if disagreement == 0.0 {
            return Some((1.0, present));
        }
        Some((1.0 - (n - 1.0) * disagreement / expected, present))
    }
}

pub fn krippendorff_alpha(
    records: &[AnnotationRecord],
    scheme: &AnnotationScheme,
    item: &str,
) -> Result<f64, EvalError> {
    scheme.item(item)?;
    let co = Coincidences::new(records, item);
    co.alpha(0..co.units.len())
        .map(|(a, _)| a)
        .ok_or_else(|| EvalError::NothingPairable(item.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of resamples.
    pub resamples: usize,
    /// Questions drawn (with replacement) per resample.
    pub sample_size: usize,
    pub alpha_level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            sample_size: 1000,
            alpha_level: 0.05,
            seed: 0,
        }
    }
}

/// Nearest-rank percentile of sorted values: the value at rank ⌈p·n⌉ (at least 1).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Percentile bootstrap interval for α.
///
/// Each resample draws `sample_size` questions with replacement, every
/// draw bringing all of that question's ratings. Resample `s` uses stream
/// `s` of the seeded generator. A resample showing a single category while
/// the data shows several has no defined α; it is discarded and the next
/// stream is used, up to `10 · resamples` extra streams.
pub fn bootstrap_ci(
    records: &[AnnotationRecord],
    scheme: &AnnotationScheme,
    item: &str,
    config: &BootstrapConfig,
) -> Result<(f64, f64), EvalError> {
    scheme.item(item)?;
    if config.resamples == 0 || config.sample_size == 0 {
        return Err(EvalError::Bootstrap(
            "resamples and sample size must be positive".into(),
        ));
    }
    if !(config.alpha_level > 0.0 && config.alpha_level < 1.0) {
        return Err(EvalError::Bootstrap(format!(
            "alpha level {} outside (0, 1)",
            config.alpha_level
        )));
    }
    let co = Coincidences::new(records, item);
    let (_, present) = co
        .alpha(0..co.units.len())
        .ok_or_else(|| EvalError::NothingPairable(item.to_string()))?;
    let units = co.units.len() as u64;
    let resample = |stream: usize| -> Option<f64> {
        let mut rng = seeded_stream(config.seed, stream as u64);
        let picks: Vec<usize> = (0..config.sample_size)
            .map(|_| uniform_below(&mut rng, units) as usize)
            .collect();
        let (a, seen) = co.alpha(picks.into_iter())?;
        (present < 2 || seen >= 2).then_some(a)
    };
    let limit = config.resamples * 11;
    let mut values: Vec<f64> = Vec::with_capacity(config.resamples);
    let mut next = 0;
    while values.len() < config.resamples {
        if next >= limit {
            return Err(EvalError::BootstrapDegenerate {
                item: item.to_string(),
                tried: next,
            });
        }
        let end = (next + config.resamples - values.len()).min(limit);
        let batch: Vec<Option<f64>> = (next..end).into_par_iter().map(resample).collect();
        values.extend(batch.into_iter().flatten().take(config.resamples - values.len()));
        next = end;
    }
    values.sort_by(f64::total_cmp);
    let half = config.alpha_level / 2.0;
    Ok((nearest_rank(&values, half), nearest_rank(&values, 1.0 - half)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemAgreement {
    pub item: String,
    pub percent_agreement: Option<f64>,
    pub alpha: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// Share of the most frequent response over all observations, NA included.
    pub majority_share: f64,
    pub applicable: usize,
}

/// Agreement figures for every scheme item, or only `only` when given.
pub fn agreement_report(
    records: &[AnnotationRecord],
    scheme: &AnnotationScheme,
    only: Option<&str>,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<Vec<ItemAgreement>, EvalError> {
    let items: Vec<&SchemeItem> = match only {
        Some(id) => vec![scheme.item(id)?],
        None => scheme.items.iter().collect(),
    };
    items
        .into_iter()
        .map(|item| {
            let id = item.id.as_str();
            let pairable = |e: &EvalError| matches!(e, EvalError::NothingPairable(_));
            let optional = |r: Result<f64, EvalError>| match r {
                Ok(v) => Ok(Some(v)),
                Err(e) if pairable(&e) => Ok(None),
                Err(e) => Err(e),
            };
            let pa = optional(percent_agreement(records, scheme, id).map(|p| p.value))?;
            let alpha = optional(krippendorff_alpha(records, scheme, id))?;
            let ci = match (bootstrap, alpha) {
                (Some(cfg), Some(_)) => Some(bootstrap_ci(records, scheme, id, cfg)?),
                _ => None,
            };
            let mut tally: HashMap<&Response, usize> = HashMap::new();
            let mut observations = 0;
            for r in records.iter().filter_map(|r| r.responses.get(id)) {
                *tally.entry(r).or_default() += 1;
                observations += 1;
            }
            let top = tally.values().copied().max().unwrap_or(0);
            Ok(ItemAgreement {
                item: id.to_string(),
                percent_agreement: pa,
                alpha,
                ci,
                majority_share: if observations == 0 {
                    0.0
                } else {
                    top as f64 / observations as f64
                },
                applicable: records
                    .iter()
                    .filter(|r| matches!(r.responses.get(id), Some(Response::Label(_))))
                    .count(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub label: String,
    pub count: usize,
    /// Over observations where the item applied.
    pub relative: f64,
    /// Over all observations.
    pub absolute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDistribution {
    pub item: String,
    pub applicable: usize,
    pub total: usize,
    pub shares: Vec<LabelShare>,
}

/// Label shares per item. Every record is one observation; a record with no
/// label for the item counts as not applicable.
pub fn distribution_report(records: &[AnnotationRecord], scheme: &AnnotationScheme) -> Vec<ItemDistribution> {
    let total = records.len();
    scheme
        .items
        .iter()
        .map(|item| {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for r in records {
                if let Some(Response::Label(l)) = r.responses.get(&item.id) {
                    *counts.entry(l.as_str()).or_default() += 1;
                }
            }
            let applicable: usize = counts.values().sum();
            let ratio = |c: usize, d: usize| if d == 0 { 0.0 } else { c as f64 / d as f64 };
            let mut shares: Vec<LabelShare> = item
                .choices
                .iter()
                .map(|c| {
                    let count = counts.remove(c.as_str()).unwrap_or(0);
                    LabelShare {
                        label: c.clone(),
                        count,
                        relative: ratio(count, applicable),
                        absolute: ratio(count, total),
                    }
                })
                .collect();
            // Labels outside the scheme (ungated input) still get reported.
            let mut extra: Vec<(&str, usize)> = counts.into_iter().collect();
            extra.sort();
            shares.extend(extra.into_iter().map(|(l, count)| LabelShare {
                label: l.to_string(),
                count,
                relative: ratio(count, applicable),
                absolute: ratio(count, total),
            }));
            ItemDistribution {
                item: item.id.clone(),
                applicable,
                total,
                shares,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// TPR and FPR when predicting positive iff `score >= threshold`.
pub fn rates_at(labeled: &[(f64, bool)], threshold: f64) -> (f64, f64) {
    let pos = labeled.iter().filter(|(_, l)| *l).count() as f64;
    let neg = labeled.len() as f64 - pos;
    let tp = labeled.iter().filter(|(s, l)| *l && *s >= threshold).count() as f64;
    let fp = labeled.iter().filter(|(s, l)| !*l && *s >= threshold).count() as f64;
    (tp / pos, fp / neg)
}

/// ROC points at every distinct score plus the sentinels 0 and just above
/// max(1, highest score), ordered by threshold descending.
pub fn roc_points(labeled: &[(f64, bool)]) -> Result<Vec<RocPoint>, EvalError> {
    if let Some(&(s, _)) = labeled.iter().find(|(s, _)| !(0.0..=1.0).contains(s)) {
        return Err(EvalError::ScoreRange(s));
    }
    let pos = labeled.iter().filter(|(_, l)| *l).count();
    if pos == 0 || pos == labeled.len() {
        return Err(EvalError::SingleClass);
    }
    let mut thresholds: Vec<f64> = labeled.iter().map(|(s, _)| *s).collect();
    thresholds.push(0.0);
    thresholds.push(1f64.next_up());
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    Ok(thresholds
        .into_iter()
        .map(|t| {
            let (tpr, fpr) = rates_at(labeled, t);
            RocPoint { threshold: t, tpr, fpr }
        })
        .collect())
}

/// Trapezoidal area under ROC points ordered as [`roc_points`] returns them.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

pub fn read_annotations_jsonl(text: &str) -> Result<Vec<AnnotationRecord>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Input {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_annotations_jsonl(records: &[AnnotationRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Labeled scores as CSV rows `score,label` with label `1`/`0` or
/// `true`/`false`; a header row is skipped if present.
pub fn read_labeled_scores(text: &str) -> Result<Vec<(f64, bool)>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 1;
        let bad = |message: String| EvalError::Input { line, message };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let (score, label) = (row.get(0).unwrap_or(""), row.get(1).unwrap_or(""));
        let Ok(score) = score.parse::<f64>() else {
            if line == 1 {
                continue;
            }
            return Err(bad(format!("bad score {score:?}")));
        };
        let label = match label.to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" => true,
            "0" | "false" | "no" => false,
            other => return Err(bad(format!("bad label {other:?}"))),
        };
        out.push((score, label));
    }
    Ok(out)
}

/// How to read an externally produced annotation table.
///
/// `items` maps scheme item ids to column names; `labels` maps raw cell
/// values (compared after trimming and lower-casing) to scheme labels, and
/// cells listed in `not_applicable` become NA. Empty cells are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportMapping {
    pub question_id: String,
    pub rater_id: String,
    pub timestamp: Option<String>,
    pub items: BTreeMap<String, String>,
    pub labels: BTreeMap<String, String>,
    pub not_applicable: Vec<String>,
    pub delimiter: Option<char>,
}

/// Reads an annotation table through `mapping` and gates every record.
pub fn import_csv(
    text: &str,
    mapping: &ImportMapping,
    scheme: &AnnotationScheme,
) -> Result<Vec<AnnotationRecord>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter.unwrap_or(',') as u8)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| EvalError::Input {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| EvalError::Input {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let q_col = column(&mapping.question_id)?;
    let r_col = column(&mapping.rater_id)?;
    let t_col = mapping.timestamp.as_deref().map(column).transpose()?;
    let item_cols = mapping
        .items
        .iter()
        .map(|(item, col)| Ok((item.clone(), column(col)?)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    let labels: HashMap<String, &String> = mapping.labels.iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
    let na: Vec<String> = mapping.not_applicable.iter().map(|s| s.to_lowercase()).collect();
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| EvalError::Input {
            line,
            message: e.to_string(),
        })?;
        let mut responses = BTreeMap::new();
        for (item, col) in &item_cols {
            let raw = row.get(*col).unwrap_or("").to_lowercase();
            if raw.is_empty() {
                continue;
            }
            let response = if na.contains(&raw) {
                Response::NotApplicable
            } else {
                Response::Label(labels.get(&raw).map_or(raw.clone(), |l| (*l).clone()))
            };
            responses.insert(item.clone(), response);
        }
        let record = AnnotationRecord {
            question_id: row.get(q_col).unwrap_or("").to_string(),
            rater_id: row.get(r_col).unwrap_or("").to_string(),
            responses,
            ts: t_col.and_then(|c| row.get(c)).unwrap_or("").to_string(),
        };
        out.push(apply_gating(scheme, &record).map_err(|e| EvalError::Input {
            line,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
