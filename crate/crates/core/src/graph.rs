//! Weighted causal graph over extracted sextuplets.
//!
//! An ordered pair (cause, effect) is a candidate when the effect starts no
//! earlier than the cause ends and within `max_gap` seconds. Each candidate is
//! scored on three components:
//!
//! * semantic: cosine between the cause's opinion and the effect's sentiment
//!   label, both embedded as text;
//! * temporal: `exp(-delta_t / tau)`;
//! * rationale: `ln(1 + P)` where `P` is the probability that the cause's
//!   rationale entails the effect event.
//!
//! The edge weight is `alpha * semantic + beta * temporal + gamma * rationale`
//! and edges at or above `edge_threshold` are kept. With `normalize_scores`
//! the semantic score is mapped through `(s + 1) / 2` and the rationale score
//! divided by `ln 2`, so every component and the weight lie in `[0, 1]`.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::LN_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embed::{embed_texts, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::kb::cosine_similarity;
use crate::model::{ScoringConfig, Sextuplet};
use crate::par::par_try_map;
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEdge {
    #[serde(rename = "cause")]
    pub cause_id: String,
    #[serde(rename = "effect")]
    pub effect_id: String,
    #[serde(rename = "semantic")]
    pub semantic_score: f64,
    #[serde(rename = "temporal")]
    pub temporal_score: f64,
    #[serde(rename = "rationale")]
    pub rationale_score: f64,
    pub weight: f64,
    pub delta_t: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub vertices: Vec<String>,
    pub edges: Vec<CausalEdge>,
}

impl CausalGraph {
    /// Sorts vertices by id and edges by (cause, effect).
    pub fn canonicalize(&mut self) {
        self.vertices.sort();
        self.edges
            .sort_by(|a, b| (&a.cause_id, &a.effect_id).cmp(&(&b.cause_id, &b.effect_id)));
    }

    pub fn validate(&self) -> Result<()> {
        let vertices: BTreeSet<&str> = self.vertices.iter().map(String::as_str).collect();
        if vertices.len() != self.vertices.len() {
            return Err(Error::Argument("duplicate vertex id".into()));
        }
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            if e.cause_id == e.effect_id {
                return Err(Error::Argument(format!("self edge on `{}`", e.cause_id)));
            }
            for id in [&e.cause_id, &e.effect_id] {
                if !vertices.contains(id.as_str()) {
                    return Err(Error::Argument(format!("edge endpoint `{id}` is not a vertex")));
                }
            }
            if !pairs.insert((&e.cause_id, &e.effect_id)) {
                return Err(Error::Argument(format!(
                    "duplicate edge {} -> {}",
                    e.cause_id, e.effect_id
                )));
            }
        }
        Ok(())
    }

    /// Disjoint union of per-dialogue graphs.
    pub fn union(parts: impl IntoIterator<Item = CausalGraph>) -> CausalGraph {
        let mut g = CausalGraph::default();
        for part in parts {
            g.vertices.extend(part.vertices);
            g.edges.extend(part.edges);
        }
        g.canonicalize();
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NliMode {
    MockOverlap,
    Remote,
}

/// Entailment scorer: probability in `[0, 1]` that `premise` supports
/// `hypothesis`.
pub trait NliProvider: Send + Sync {
    fn id(&self) -> &str;

    fn version(&self) -> &str {
        "1"
    }

    fn mode(&self) -> NliMode;

    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64>;
}

/// Token-set Jaccard overlap standing in for an entailment model.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapNli;

impl NliProvider for OverlapNli {
    fn id(&self) -> &str {
        "overlap-jaccard"
    }

    fn mode(&self) -> NliMode {
        NliMode::MockOverlap
    }

    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        Ok(jaccard(premise, hypothesis))
    }
}

pub fn jaccard(a: &str, b: &str) -> f64 {
    let a: BTreeSet<String> = text::tokens(a).into_iter().collect();
    let b: BTreeSet<String> = text::tokens(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Maps a raw cosine in `[-1, 1]` onto `[0, 1]` when normalizing.
pub fn normalize_semantic(raw: f64, normalize: bool) -> f64 {
    if normalize {
        (raw + 1.0) / 2.0
    } else {
        raw
    }
}

pub fn semantic_score(
    opinion: &str,
    sentiment: &str,
    embedder: &dyn EmbeddingProvider,
    normalize: bool,
) -> Result<f64> {
    let embs = embed_texts(embedder, &[opinion, sentiment])?;
    let raw = cosine_similarity(&embs[0].values, &embs[1].values)?;
    Ok(normalize_semantic(raw, normalize))
}

/// Gap between the end of the cause and the start of the effect, seconds.
/// Negative when the effect starts first.
pub fn temporal_gap(cause: &Sextuplet, effect: &Sextuplet) -> f64 {
    effect.t_start - cause.t_end
}

pub fn temporal_score(delta_t: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("tau = {tau} must be > 0")));
    }
    if delta_t < 0.0 {
        return Err(Error::PrecedenceViolation { delta_t });
    }
    Ok((-delta_t / tau).exp())
}

/// `ln(1 + p)`, or `log2(1 + p)` when normalizing.
pub fn rationale_from_probability(p: f64, normalize: bool) -> f64 {
    let raw = p.ln_1p();
    if normalize {
        raw / LN_2
    } else {
        raw
    }
}

pub fn rationale_score(rationale: &str, effect: &Sextuplet, nli: &dyn NliProvider, normalize: bool) -> Result<f64> {
    if rationale.trim().is_empty() {
        return Err(Error::Argument("rationale is empty".into()));
    }
    let p = nli.entailment(rationale, &effect.serialize_event())?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Provider {
            provider: nli.id().to_string(),
            message: format!("entailment probability {p} outside [0, 1]"),
        });
    }
    Ok(rationale_from_probability(p, normalize))
}

pub fn edge_weight(semantic: f64, temporal: f64, rationale: f64, cfg: &ScoringConfig) -> f64 {
    cfg.alpha * semantic + cfg.beta * temporal + cfg.gamma * rationale
}

/// Scores every admissible ordered pair and keeps edges whose weight reaches
/// `cfg.edge_threshold`. Output is canonical regardless of thread count.
pub fn build_graph(
    sextuplets: &[Sextuplet],
    cfg: &ScoringConfig,
    embedder: &dyn EmbeddingProvider,
    nli: &dyn NliProvider,
) -> Result<CausalGraph> {
    cfg.validate()?;
    let mut ids = BTreeSet::new();
    for q in sextuplets {
        if !ids.insert(q.id.as_str()) {
            return Err(Error::Argument(format!("duplicate sextuplet id `{}`", q.id)));
        }
        if let Some(problem) = q.check() {
            return Err(Error::Argument(format!("sextuplet `{}`: {problem}", q.id)));
        }
    }

    // Each distinct opinion or label text is embedded once.
    let texts: BTreeSet<&str> = sextuplets
        .iter()
        .flat_map(|q| [q.opinion.as_str(), q.sentiment_label.as_str()])
        .collect();
    let texts: Vec<&str> = texts.into_iter().collect();
    let embedded = embed_texts(embedder, &texts)?;
    let lookup: HashMap<&str, &[f64]> = texts
        .iter()
        .copied()
        .zip(embedded.iter().map(|e| e.values.as_slice()))
        .collect();

    let max_gap = cfg.max_gap();
    let mut candidates = Vec::new();
    for (j, cause) in sextuplets.iter().enumerate() {
        for (i, effect) in sextuplets.iter().enumerate() {
            let gap = temporal_gap(cause, effect);
            if i != j && gap >= 0.0 && gap <= max_gap {
                candidates.push((j, i, gap));
            }
        }
    }

    let scored = par_try_map!(candidates, |&(j, i, gap): &(usize, usize, f64)| {
        let cause = &sextuplets[j];
        let effect = &sextuplets[i];
        score_pair(cause, effect, gap, cfg, &lookup, nli).map_err(|e| Error::PairScoring {
            cause: cause.id.clone(),
            effect: effect.id.clone(),
            source: Box::new(e),
        })
    })?;

    let mut graph = CausalGraph {
        vertices: sextuplets.iter().map(|q| q.id.clone()).collect(),
        edges: scored.into_iter().filter(|e| e.weight >= cfg.edge_threshold).collect(),
    };
    graph.canonicalize();
    Ok(graph)
}

fn score_pair(
    cause: &Sextuplet,
    effect: &Sextuplet,
    gap: f64,
    cfg: &ScoringConfig,
    lookup: &HashMap<&str, &[f64]>,
    nli: &dyn NliProvider,
) -> Result<CausalEdge> {
    let raw_semantic = cosine_similarity(lookup[cause.opinion.as_str()], lookup[effect.sentiment_label.as_str()])?;
    let semantic = normalize_semantic(raw_semantic, cfg.normalize_scores);
    let temporal = temporal_score(gap, cfg.tau)?;
    let rationale = rationale_score(&cause.rationale, effect, nli, cfg.normalize_scores)?;
    Ok(CausalEdge {
        cause_id: cause.id.clone(),
        effect_id: effect.id.clone(),
        semantic_score: semantic,
        temporal_score: temporal,
        rationale_score: rationale,
        weight: edge_weight(semantic, temporal, rationale, cfg),
        delta_t: gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Json,
}

impl GraphFormat {
    /// Picks the format from a file extension, defaulting to JSON.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("dot" | "gv") => GraphFormat::Dot,
            _ => GraphFormat::Json,
        }
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn export_graph(g: &CausalGraph, format: GraphFormat) -> Vec<u8> {
    let mut g = g.clone();
    g.canonicalize();
    match format {
        GraphFormat::Dot => {
            let mut out = String::from("digraph G {\n");
            for v in &g.vertices {
                let _ = writeln!(out, "  {};", dot_quote(v));
            }
            for e in &g.edges {
                let _ = writeln!(
                    out,
                    "  {} -> {} [label=\"w={:.3}\"];",
                    dot_quote(&e.cause_id),
                    dot_quote(&e.effect_id),
                    e.weight
                );
            }
            out.push_str("}\n");
            out.into_bytes()
        }
        GraphFormat::Json => {
            let mut out = serde_json::to_vec_pretty(&g).expect("graph serializes");
            out.push(b'\n');
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::model::SentimentLabel;

    fn sx(id: &str, t: (f64, f64), opinion: &str, rationale: &str) -> Sextuplet {
        Sextuplet {
            id: id.into(),
            holder: "Ann".into(),
            target: "Bo".into(),
            aspect: "price".into(),
            opinion: opinion.into(),
            sentiment_label: SentimentLabel::Negative,
            sentiment_score: None,
            rationale: rationale.into(),
            window_index: 0,
            t_start: t.0,
            t_end: t.1,
        }
    }

    #[test]
    fn temporal_examples() {
        let cause = sx("a", (0.0, 10.0), "o", "r");
        let effect = sx("b", (15.0, 16.0), "o", "r");
        assert_eq!(temporal_gap(&cause, &effect), 5.0);
        let late = sx("c", (12.0, 15.0), "o", "r");
        let early = sx("d", (10.0, 11.0), "o", "r");
        assert_eq!(temporal_gap(&late, &early), -5.0);
        let touching = sx("e", (15.0, 16.0), "o", "r");
        assert_eq!(temporal_gap(&late, &touching), 0.0);

        assert_eq!(temporal_score(0.0, 30.0).unwrap(), 1.0);
        assert!((temporal_score(30.0, 30.0).unwrap() - 0.367_879_441_17).abs() < 1e-9);
        assert!((temporal_score(60.0, 30.0).unwrap() - 0.135_335_28).abs() < 1e-8);
        assert!(matches!(
            temporal_score(-1.0, 30.0),
            Err(Error::PrecedenceViolation { .. })
        ));
    }

    #[test]
    fn rationale_examples() {
        assert_eq!(rationale_from_probability(0.0, true), 0.0);
        assert!((rationale_from_probability(1.0, false) - 2f64.ln()).abs() < 1e-12);
        assert!((rationale_from_probability(1.0, true) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn overlap_nli_is_jaccard() {
        // effect tokens {ann, bo, price, slams, negative}; premise {ann, bo, price, tax, rise}
        // intersection 3, union 7.
        let effect = sx("b", (0.0, 1.0), "slams", "r");
        let p = OverlapNli
            .entailment("Ann Bo price tax rise", &effect.serialize_event())
            .unwrap();
        assert!((p - 3.0 / 7.0).abs() < 1e-15);
        let s = rationale_score("Ann Bo price tax rise", &effect, &OverlapNli, false).unwrap();
        assert!((s - (1.0f64 + 3.0 / 7.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn edge_weight_examples() {
        let cfg = ScoringConfig::default();
        assert!((edge_weight(1.0, 1.0, 1.0, &cfg) - 1.0).abs() < 1e-15);
        assert_eq!(edge_weight(0.0, 0.0, 0.0, &cfg), 0.0);
        assert!((edge_weight(0.8, 0.5, 0.2, &cfg) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn semantic_identity_and_endpoints() {
        let p = HashEmbedder::new(32, 5);
        assert!((semantic_score("delighted", "delighted", &p, false).unwrap() - 1.0).abs() < 1e-12);
        assert!((semantic_score("delighted", "delighted", &p, true).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(normalize_semantic(-1.0, true), 0.0);
    }

    #[test]
    fn single_vertex_graph() {
        let g = build_graph(
            &[sx("a", (0.0, 1.0), "o", "r")],
            &ScoringConfig::default(),
            &HashEmbedder::new(16, 1),
            &OverlapNli,
        )
        .unwrap();
        assert_eq!(g.vertices, ["a"]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn only_forward_direction_is_a_candidate() {
        let cfg = ScoringConfig {
            edge_threshold: 0.0,
            ..Default::default()
        };
        let a = sx("a", (0.0, 2.0), "slams", "Ann Bo price slams negative");
        let b = sx("b", (5.0, 6.0), "slams", "unrelated words");
        let g = build_graph(&[b, a], &cfg, &HashEmbedder::new(16, 1), &OverlapNli).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(
            (g.edges[0].cause_id.as_str(), g.edges[0].effect_id.as_str()),
            ("a", "b")
        );
        assert_eq!(g.edges[0].delta_t, 3.0);
        g.validate().unwrap();
    }

    #[test]
    fn max_gap_bounds_candidates() {
        let cfg = ScoringConfig {
            edge_threshold: 0.0,
            tau: 1.0,
            ..Default::default()
        };
        let a = sx("a", (0.0, 1.0), "o", "r");
        let b = sx("b", (11.5, 12.0), "o", "r");
        let g = build_graph(&[a, b], &cfg, &HashEmbedder::new(16, 1), &OverlapNli).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = sx("a", (0.0, 1.0), "o", "r");
        let r = build_graph(
            &[a.clone(), a],
            &ScoringConfig::default(),
            &HashEmbedder::new(8, 1),
            &OverlapNli,
        );
        assert!(r.is_err());
    }

    struct FailingNli;

    impl NliProvider for FailingNli {
        fn id(&self) -> &str {
            "failing"
        }
        fn mode(&self) -> NliMode {
            NliMode::Remote
        }
        fn entailment(&self, _: &str, _: &str) -> Result<f64> {
            Err(Error::Transport {
                message: "down".into(),
                retry_after_ms: None,
            })
        }
    }

    #[test]
    fn provider_failure_names_the_pair() {
        let a = sx("a", (0.0, 1.0), "o", "r");
        let b = sx("b", (2.0, 3.0), "o", "r");
        match build_graph(
            &[a, b],
            &ScoringConfig::default(),
            &HashEmbedder::new(8, 1),
            &FailingNli,
        ) {
            Err(Error::PairScoring { cause, effect, .. }) => assert_eq!((cause.as_str(), effect.as_str()), ("a", "b")),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn edge(c: &str, e: &str, w: f64) -> CausalEdge {
        CausalEdge {
            cause_id: c.into(),
            effect_id: e.into(),
            semantic_score: 0.6,
            temporal_score: 0.5,
            rationale_score: 0.25,
            weight: w,
            delta_t: 4.0,
        }
    }

    #[test]
    fn export_empty_dot() {
        assert_eq!(
            export_graph(&CausalGraph::default(), GraphFormat::Dot),
            b"digraph G {\n}\n"
        );
    }

    #[test]
    fn export_dot_and_json() {
        let g = CausalGraph {
            vertices: vec!["b".into(), "a".into()],
            edges: vec![edge("a", "b", 0.51234)],
        };
        let dot = String::from_utf8(export_graph(&g, GraphFormat::Dot)).unwrap();
        assert_eq!(
            dot,
            "digraph G {\n  \"a\";\n  \"b\";\n  \"a\" -> \"b\" [label=\"w=0.512\"];\n}\n"
        );

        let json: serde_json::Value = serde_json::from_slice(&export_graph(&g, GraphFormat::Json)).unwrap();
        let edges = json["edges"].as_array().unwrap();
        assert_eq!(edges.len(), 1);
        for key in [
            "cause",
            "effect",
            "semantic",
            "temporal",
            "rationale",
            "weight",
            "delta_t",
        ] {
            assert!(edges[0].get(key).is_some(), "{key}");
        }
        assert_eq!(export_graph(&g, GraphFormat::Json), export_graph(&g, GraphFormat::Json));
        let back: CausalGraph = serde_json::from_value(json).unwrap();
        assert_eq!(back.edges, g.edges);
    }

    #[test]
    fn validate_catches_bad_graphs() {
        let g = CausalGraph {
            vertices: vec!["a".into()],
            edges: vec![edge("a", "z", 1.0)],
        };
        assert!(g.validate().is_err());
        let g = CausalGraph {
            vertices: vec!["a".into(), "b".into()],
            edges: vec![edge("a", "b", 1.0), edge("a", "b", 0.9)],
        };
        assert!(g.validate().is_err());
    }
}
