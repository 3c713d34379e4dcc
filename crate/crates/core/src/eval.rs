//! Causal-link and span metrics against gold annotations.
//!
//! * correctness: matched predicted edges over predicted edges;
//! * consistency: edges that respect precedence, lie on no directed cycle and
//!   clear a semantic floor, over predicted edges;
//! * chain score: the mean of the two;
//! * span and pair micro-F1 with case-folded exact matching.
//!
//! Gold files are either native annotations or DiaASQ documents.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::model::{SentimentLabel, Sextuplet};
use crate::text::fold;

/// Gold causal link between two sextuplet ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoldLink {
    pub cause: String,
    pub effect: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldAnnotation {
    pub dialogue_id: String,
    pub sextuplets: Vec<Sextuplet>,
    #[serde(default)]
    pub causal_links: Vec<GoldLink>,
}

impl GoldAnnotation {
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for q in &self.sextuplets {
            if !ids.insert(q.id.as_str()) {
                return Err(Error::Argument(format!(
                    "gold `{}`: duplicate sextuplet id `{}`",
                    self.dialogue_id, q.id
                )));
            }
        }
        for link in &self.causal_links {
            for id in [&link.cause, &link.effect] {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Argument(format!(
                        "gold `{}`: link endpoint `{id}` is not a listed sextuplet",
                        self.dialogue_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Extracted sextuplets of one dialogue, the on-disk extraction format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SextupletSet {
    pub dialogue_id: String,
    pub sextuplets: Vec<Sextuplet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Minimum (normalized) semantic score of a consistent edge.
    pub consistency_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { consistency_floor: 0.5 }
    }
}

/// For each edge of `graph` (same order), the index of the gold link it
/// matches. Edges are considered by descending weight, ties by (cause,
/// effect); each gold link is used at most once. Edges whose endpoints are
/// not among `predicted` match nothing.
pub fn match_links(graph: &CausalGraph, predicted: &[Sextuplet], gold: &GoldAnnotation) -> Vec<Option<usize>> {
    let pred: HashMap<&str, &Sextuplet> = predicted.iter().map(|q| (q.id.as_str(), q)).collect();
    let gold_by_id: HashMap<&str, &Sextuplet> = gold.sextuplets.iter().map(|q| (q.id.as_str(), q)).collect();
    let gold_keys: Vec<Option<_>> = gold
        .causal_links
        .iter()
        .map(|l| {
            let c = gold_by_id.get(l.cause.as_str())?;
            let e = gold_by_id.get(l.effect.as_str())?;
            Some((c.match_key(), e.match_key()))
        })
        .collect();

    let mut order: Vec<usize> = (0..graph.edges.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&graph.edges[a], &graph.edges[b]);
        eb.weight
            .total_cmp(&ea.weight)
            .then_with(|| (&ea.cause_id, &ea.effect_id).cmp(&(&eb.cause_id, &eb.effect_id)))
    });

    let mut used = vec![false; gold_keys.len()];
    let mut out = vec![None; graph.edges.len()];
    for i in order {
        let e = &graph.edges[i];
        let (Some(c), Some(f)) = (pred.get(e.cause_id.as_str()), pred.get(e.effect_id.as_str())) else {
            continue;
        };
        let key = (c.match_key(), f.match_key());
        if let Some(g) = (0..gold_keys.len()).find(|&g| !used[g] && gold_keys[g].as_ref() == Some(&key)) {
            used[g] = true;
            out[i] = Some(g);
        }
    }
    out
}

/// Correct over predicted links; an empty prediction scores 1 only when the
/// gold side is empty too.
pub fn correctness_ratio(correct: usize, predicted: usize, gold_links: usize) -> f64 {
    if predicted == 0 {
        return if gold_links == 0 { 1.0 } else { 0.0 };
    }
    correct as f64 / predicted as f64
}

pub fn causal_correctness(graph: &CausalGraph, predicted: &[Sextuplet], gold: &GoldAnnotation) -> f64 {
    let correct = match_links(graph, predicted, gold).iter().flatten().count();
    correctness_ratio(correct, graph.edges.len(), gold.causal_links.len())
}

/// Per-edge consistency flags, aligned with `graph.edges`.
pub fn consistent_edges(graph: &CausalGraph, floor: f64) -> Vec<bool> {
    let mut g = DiGraph::<(), ()>::new();
    let mut nodes = HashMap::new();
    for e in &graph.edges {
        for id in [&e.cause_id, &e.effect_id] {
            nodes.entry(id.as_str()).or_insert_with(|| g.add_node(()));
        }
    }
    for e in &graph.edges {
        g.add_edge(nodes[e.cause_id.as_str()], nodes[e.effect_id.as_str()], ());
    }
    let mut component = vec![0usize; g.node_count()];
    for (c, scc) in tarjan_scc(&g).iter().enumerate() {
        for n in scc {
            component[n.index()] = c;
        }
    }
    graph
        .edges
        .iter()
        .map(|e| {
            let (a, b) = (nodes[e.cause_id.as_str()], nodes[e.effect_id.as_str()]);
            let on_cycle = a == b || component[a.index()] == component[b.index()];
            e.delta_t >= 0.0 && !on_cycle && e.semantic_score >= floor
        })
        .collect()
}

pub fn consistency_ratio(consistent: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        consistent as f64 / total as f64
    }
}

pub fn causal_consistency(graph: &CausalGraph, floor: f64) -> f64 {
    let flags = consistent_edges(graph, floor);
    consistency_ratio(flags.iter().filter(|f| **f).count(), flags.len())
}

pub fn causal_chain_score(correctness: f64, consistency: f64) -> f64 {
    0.5 * correctness + 0.5 * consistency
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct F1Counts {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl F1Counts {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.gold as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: F1Counts) {
        self.true_positives += other.true_positives;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }
}

pub const SPAN_ELEMENTS: [&str; 6] = ["target", "aspect", "opinion", "holder", "rationale", "sentiment"];
pub const PAIR_ELEMENTS: [&str; 3] = ["T-A", "T-O", "A-O"];

fn element_key(q: &Sextuplet, element: &str) -> Vec<String> {
    match element {
        "target" => vec![fold(&q.target)],
        "aspect" => vec![fold(&q.aspect)],
        "opinion" => vec![fold(&q.opinion)],
        "holder" => vec![fold(&q.holder)],
        "rationale" => vec![fold(&q.rationale)],
        "sentiment" => vec![fold(&q.target), fold(&q.aspect), q.sentiment_label.as_str().into()],
        "T-A" => vec![fold(&q.target), fold(&q.aspect)],
        "T-O" => vec![fold(&q.target), fold(&q.opinion)],
        "A-O" => vec![fold(&q.aspect), fold(&q.opinion)],
        other => unreachable!("unknown element {other}"),
    }
}

/// Multiset exact-match counts for one element or pair.
pub fn element_counts(predicted: &[Sextuplet], gold: &[Sextuplet], element: &str) -> F1Counts {
    let mut bag: HashMap<Vec<String>, usize> = HashMap::new();
    for q in gold {
        *bag.entry(element_key(q, element)).or_default() += 1;
    }
    let mut tp = 0;
    for q in predicted {
        if let Some(n) = bag.get_mut(&element_key(q, element)) {
            if *n > 0 {
                *n -= 1;
                tp += 1;
            }
        }
    }
    F1Counts {
        true_positives: tp,
        predicted: predicted.len(),
        gold: gold.len(),
    }
}

pub fn span_and_pair_f1(predicted: &[Sextuplet], gold: &[Sextuplet]) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let f1 = |names: &[&str]| {
        names
            .iter()
            .map(|n| (n.to_string(), element_counts(predicted, gold, n).f1()))
            .collect()
    };
    (f1(&SPAN_ELEMENTS), f1(&PAIR_ELEMENTS))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounts {
    pub correct_links: usize,
    pub predicted_links: usize,
    pub consistent_links: usize,
    /// Gold links across all evaluated dialogues.
    pub total_links: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub causal_correctness: f64,
    pub causal_consistency: f64,
    pub causal_chain_score: f64,
    pub span_f1: BTreeMap<String, f64>,
    pub pair_f1: BTreeMap<String, f64>,
    pub counts: LinkCounts,
}

/// Counts accumulated across dialogues; metrics are micro-averaged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalAccumulator {
    pub links: LinkCounts,
    pub elements: BTreeMap<String, F1Counts>,
}

impl EvalAccumulator {
    pub fn merge(&mut self, other: &EvalAccumulator) {
        self.links.correct_links += other.links.correct_links;
        self.links.predicted_links += other.links.predicted_links;
        self.links.consistent_links += other.links.consistent_links;
        self.links.total_links += other.links.total_links;
        for (k, c) in &other.elements {
            self.elements.entry(k.clone()).or_default().add(*c);
        }
    }

    fn add_elements(&mut self, predicted: &[Sextuplet], gold: &[Sextuplet]) {
        for name in SPAN_ELEMENTS.iter().chain(PAIR_ELEMENTS.iter()) {
            self.elements
                .entry(name.to_string())
                .or_default()
                .add(element_counts(predicted, gold, name));
        }
    }

    pub fn report(&self) -> EvalReport {
        let l = self.links;
        let correctness = correctness_ratio(l.correct_links, l.predicted_links, l.total_links);
        let consistency = consistency_ratio(l.consistent_links, l.predicted_links);
        let f1 = |names: &[&str]| {
            names
                .iter()
                .map(|n| {
                    let c = self.elements.get(*n).copied().unwrap_or_default();
                    (n.to_string(), c.f1())
                })
                .collect()
        };
        EvalReport {
            causal_correctness: correctness,
            causal_consistency: consistency,
            causal_chain_score: causal_chain_score(correctness, consistency),
            span_f1: f1(&SPAN_ELEMENTS),
            pair_f1: f1(&PAIR_ELEMENTS),
            counts: l,
        }
    }
}

/// Scores a (possibly multi-dialogue) prediction. Edges are attributed to the
/// dialogue owning their endpoints; predicted dialogues without gold count
/// as false positives and gold dialogues without predictions as misses.
pub fn evaluate(
    graph: &CausalGraph,
    predicted: &[SextupletSet],
    gold: &[GoldAnnotation],
    cfg: &EvalConfig,
) -> Result<EvalAccumulator> {
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for set in predicted {
        for q in &set.sextuplets {
            if owner.insert(q.id.as_str(), set.dialogue_id.as_str()).is_some() {
                return Err(Error::Argument(format!("duplicate predicted sextuplet id `{}`", q.id)));
            }
        }
    }
    for e in &graph.edges {
        for id in [&e.cause_id, &e.effect_id] {
            if !owner.contains_key(id.as_str()) {
                return Err(Error::Argument(format!(
                    "graph references sextuplet `{id}` missing from the predictions"
                )));
            }
        }
    }
    let mut gold_by_id: BTreeMap<&str, &GoldAnnotation> = BTreeMap::new();
    for g in gold {
        g.validate()?;
        if gold_by_id.insert(g.dialogue_id.as_str(), g).is_some() {
            return Err(Error::Argument(format!("duplicate gold dialogue `{}`", g.dialogue_id)));
        }
    }
    let pred_by_id: BTreeMap<&str, &SextupletSet> = predicted.iter().map(|s| (s.dialogue_id.as_str(), s)).collect();

    let mut acc = EvalAccumulator::default();
    let flags = consistent_edges(graph, cfg.consistency_floor);
    acc.links.predicted_links = graph.edges.len();
    acc.links.consistent_links = flags.iter().filter(|f| **f).count();
    for (id, g) in &gold_by_id {
        let pred: &[Sextuplet] = pred_by_id.get(id).map_or(&[], |s| &s.sextuplets);
        acc.links.total_links += g.causal_links.len();
        acc.links.correct_links += match_links(graph, pred, g).iter().flatten().count();
        acc.add_elements(pred, &g.sextuplets);
    }
    for (id, set) in &pred_by_id {
        if !gold_by_id.contains_key(id) {
            acc.add_elements(&set.sextuplets, &[]);
        }
    }
    Ok(acc)
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rows: Vec<(String, String)> = vec![
            ("causal_correctness".into(), format!("{:.4}", self.causal_correctness)),
            ("causal_consistency".into(), format!("{:.4}", self.causal_consistency)),
            ("causal_chain_score".into(), format!("{:.4}", self.causal_chain_score)),
        ];
        for (k, v) in &self.span_f1 {
            rows.push((format!("span_f1.{k}"), format!("{v:.4}")));
        }
        for (k, v) in &self.pair_f1 {
            rows.push((format!("pair_f1.{k}"), format!("{v:.4}")));
        }
        let c = &self.counts;
        for (k, v) in [
            ("correct_links", c.correct_links),
            ("predicted_links", c.predicted_links),
            ("consistent_links", c.consistent_links),
            ("total_links", c.total_links),
        ] {
            rows.push((k.into(), v.to_string()));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        writeln!(f, "{:<width$}  {:>8}", "metric", "value")?;
        for (k, v) in rows {
            writeln!(f, "{k:<width$}  {v:>8}")?;
        }
        Ok(())
    }
}

fn json_stream(bytes: &[u8]) -> Result<Vec<Value>> {
    let mut docs = Vec::new();
    for value in serde_json::Deserializer::from_slice(bytes).into_iter::<Value>() {
        match value.map_err(|e| Error::json(&e))? {
            Value::Array(items) => docs.extend(items),
            other => docs.push(other),
        }
    }
    Ok(docs)
}

fn decode<T: serde::de::DeserializeOwned>(doc: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(doc).map_err(|err| Error::Schema {
        path: format!("{prefix}{}", err.path()),
        message: err.inner().to_string(),
    })
}

fn prefix(multi: bool, k: usize) -> String {
    if multi {
        format!("[{k}].")
    } else {
        String::new()
    }
}

/// Reads gold annotations: native documents or DiaASQ documents, as one
/// object, an array or JSON lines.
pub fn parse_gold(bytes: &[u8]) -> Result<Vec<GoldAnnotation>> {
    let docs = json_stream(bytes)?;
    let multi = docs.len() > 1;
    docs.into_iter()
        .enumerate()
        .map(|(k, doc)| {
            let p = prefix(multi, k);
            let is_diaasq = doc.get("triplets").is_some() || doc.get("doc_id").is_some();
            let gold = if is_diaasq {
                diaasq_to_gold(decode(doc, &p)?, &p)?
            } else {
                let g: GoldAnnotation = decode(doc, &p)?;
                for (i, q) in g.sextuplets.iter().enumerate() {
                    if let Some(problem) = q.check() {
                        return Err(Error::Schema {
                            path: format!("{p}sextuplets[{i}]"),
                            message: problem,
                        });
                    }
                }
                g
            };
            gold.validate()?;
            Ok(gold)
        })
        .collect()
}

pub fn parse_sextuplet_sets(bytes: &[u8]) -> Result<Vec<SextupletSet>> {
    let docs = json_stream(bytes)?;
    let multi = docs.len() > 1;
    docs.into_iter()
        .enumerate()
        .map(|(k, doc)| decode(doc, &prefix(multi, k)))
        .collect()
}

/// One DiaASQ conversation. Triplet rows are
/// `[t_start, t_end, a_start, a_end, o_start, o_end, polarity, target, aspect, opinion]`
/// with token offsets over the concatenated sentences, `-1` when absent.
#[derive(Debug, Clone, Deserialize)]
pub struct DiaAsqDocument {
    pub doc_id: String,
    pub sentences: Vec<String>,
    #[serde(default)]
    pub speakers: Vec<i64>,
    #[serde(default)]
    pub triplets: Vec<Vec<Value>>,
}

/// Maps DiaASQ triplets to gold sextuplets: the holder is the speaker of the
/// sentence holding the opinion and the rationale is that sentence. Timing
/// uses the sentence ordinal as a pseudo-clock. DiaASQ has no causal links.
pub fn diaasq_to_gold(doc: DiaAsqDocument, prefix: &str) -> Result<GoldAnnotation> {
    let mut starts = Vec::with_capacity(doc.sentences.len());
    let mut offset = 0i64;
    for s in &doc.sentences {
        starts.push(offset);
        offset += s.split_whitespace().count() as i64;
    }
    let sentence_of = |token: i64| -> Option<usize> {
        if token < 0 || token >= offset {
            return None;
        }
        Some(starts.partition_point(|&s| s <= token) - 1)
    };

    let mut sextuplets = Vec::with_capacity(doc.triplets.len());
    for (k, row) in doc.triplets.iter().enumerate() {
        let path = |i: usize| format!("{prefix}triplets[{k}][{i}]");
        if row.len() < 10 {
            return Err(Error::Schema {
                path: format!("{prefix}triplets[{k}]"),
                message: format!("expected 10 fields, found {}", row.len()),
            });
        }
        let int = |i: usize| {
            row[i].as_i64().ok_or_else(|| Error::Schema {
                path: path(i),
                message: "expected an integer token offset".into(),
            })
        };
        let string = |i: usize| {
            row[i].as_str().map(str::to_string).ok_or_else(|| Error::Schema {
                path: path(i),
                message: "expected a string".into(),
            })
        };
        let label: SentimentLabel = string(6)?.parse().map_err(|e: Error| Error::Schema {
            path: path(6),
            message: e.to_string(),
        })?;
        let anchor = [int(4)?, int(0)?, int(2)?]
            .into_iter()
            .find_map(sentence_of)
            .unwrap_or(0);
        let holder = match doc.speakers.get(anchor) {
            Some(s) => format!("speaker_{s}"),
            None => "speaker_unknown".into(),
        };
        sextuplets.push(Sextuplet {
            id: format!("{}:t{k}", doc.doc_id),
            holder,
            target: string(7)?,
            aspect: string(8)?,
            opinion: string(9)?,
            sentiment_label: label,
            sentiment_score: None,
            rationale: doc.sentences.get(anchor).cloned().unwrap_or_default(),
            window_index: 0,
            t_start: anchor as f64,
            t_end: anchor as f64,
        });
    }
    Ok(GoldAnnotation {
        dialogue_id: doc.doc_id,
        sextuplets,
        causal_links: Vec::new(),
    })
}
