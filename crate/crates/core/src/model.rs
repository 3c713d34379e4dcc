//! Shared domain types: dialogues, audio feature records, sextuplets and the
//! scoring configuration, together with dialogue validation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

/// Soft bounds on dialogue length; violations are reported as warnings.
pub const MIN_TURNS: usize = 70;
pub const MAX_TURNS: usize = 300;

/// Tolerance for the emotion distribution summing to one.
pub const EMOTION_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    CustomerService,
    SocialMedia,
    Medical,
    Education,
    TechSupport,
    EmotionalSupport,
    MarketResearch,
    MultiParty,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::CustomerService,
        Scenario::SocialMedia,
        Scenario::Medical,
        Scenario::Education,
        Scenario::TechSupport,
        Scenario::EmotionalSupport,
        Scenario::MarketResearch,
        Scenario::MultiParty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::CustomerService => "customer_service",
            Scenario::SocialMedia => "social_media",
            Scenario::Medical => "medical",
            Scenario::Education => "education",
            Scenario::TechSupport => "tech_support",
            Scenario::EmotionalSupport => "emotional_support",
            Scenario::MarketResearch => "market_research",
            Scenario::MultiParty => "multi_party",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive,
    Negative,
    Neutral,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Positive,
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "positive",
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;

    /// Accepts the canonical names case-insensitively plus the common
    /// `pos`/`neg`/`neu` abbreviations.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "positive" | "pos" => Ok(SentimentLabel::Positive),
            "negative" | "neg" => Ok(SentimentLabel::Negative),
            "neutral" | "neu" | "other" => Ok(SentimentLabel::Neutral),
            other => Err(Error::Argument(format!("unknown sentiment label `{other}`"))),
        }
    }
}

/// One turn of a dialogue. `word_count` is derived from `text` and is not
/// part of the serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "UtteranceRecord", into = "UtteranceRecord")]
pub struct Utterance {
    pub index: usize,
    pub speaker: String,
    pub text: String,
    pub word_count: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl Utterance {
    pub fn new(index: usize, speaker: impl Into<String>, text: impl Into<String>, t_start: f64, t_end: f64) -> Self {
        let text = text.into();
        Utterance {
            index,
            speaker: speaker.into(),
            word_count: text::word_count(&text),
            text,
            t_start,
            t_end,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    index: usize,
    speaker: String,
    text: String,
    t_start: f64,
    t_end: f64,
}

impl From<UtteranceRecord> for Utterance {
    fn from(r: UtteranceRecord) -> Self {
        Utterance::new(r.index, r.speaker, r.text, r.t_start, r.t_end)
    }
}

impl From<Utterance> for UtteranceRecord {
    fn from(u: Utterance) -> Self {
        UtteranceRecord {
            index: u.index,
            speaker: u.speaker,
            text: u.text,
            t_start: u.t_start,
            t_end: u.t_end,
        }
    }
}

/// Per-utterance voice features: a soft emotion distribution, an intensity
/// and a speech rate in words per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioFeatureRecord {
    pub utterance_index: usize,
    pub emotion: Vec<f64>,
    pub intensity: f64,
    pub speech_rate: f64,
}

impl AudioFeatureRecord {
    /// Returns a description of the first violated invariant, if any.
    pub fn check(&self) -> Option<String> {
        if self.emotion.is_empty() {
            return Some("emotion vector is empty".into());
        }
        if let Some(i) = self.emotion.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Some(format!("emotion[{i}] is negative or not finite"));
        }
        let sum: f64 = self.emotion.iter().sum();
        if (sum - 1.0).abs() > EMOTION_SUM_TOLERANCE {
            return Some(format!("emotion components sum to {sum}, expected 1"));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Some(format!("intensity {} outside [0, 1]", self.intensity));
        }
        if !(self.speech_rate.is_finite() && self.speech_rate > 0.0) {
            return Some(format!("speech_rate {} is not positive", self.speech_rate));
        }
        None
    }

    /// Index of the dominant emotion; ties resolve to the lowest index.
    pub fn dominant_emotion(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.emotion.iter().enumerate() {
            if *v > self.emotion[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub scenario: Scenario,
    pub utterances: Vec<Utterance>,
    #[serde(with = "audio_list", default)]
    pub audio: BTreeMap<usize, AudioFeatureRecord>,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// The audio map is serialized as a list ordered by utterance index.
mod audio_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::AudioFeatureRecord;

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, AudioFeatureRecord>, s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<&AudioFeatureRecord> = map.values().collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, AudioFeatureRecord>, D::Error> {
        let list = Vec::<AudioFeatureRecord>::deserialize(d)?;
        let mut map = BTreeMap::new();
        for rec in list {
            let idx = rec.utterance_index;
            if map.insert(idx, rec).is_some() {
                return Err(serde::de::Error::custom(format!(
                    "duplicate audio record for utterance {idx}"
                )));
            }
        }
        Ok(map)
    }
}

/// One emotional-opinion event: who feels what about which facet of whom,
/// and why. Timing is the span of the utterances supporting the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sextuplet {
    pub id: String,
    pub holder: String,
    pub target: String,
    #[serde(default)]
    pub aspect: String,
    pub opinion: String,
    #[serde(rename = "sentiment", alias = "sentiment_label")]
    pub sentiment_label: SentimentLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment_score: Option<f64>,
    pub rationale: String,
    #[serde(default)]
    pub window_index: usize,
    #[serde(default)]
    pub t_start: f64,
    #[serde(default)]
    pub t_end: f64,
}

impl Sextuplet {
    pub fn check(&self) -> Option<String> {
        for (name, value) in [
            ("holder", &self.holder),
            ("target", &self.target),
            ("opinion", &self.opinion),
            ("rationale", &self.rationale),
        ] {
            if value.trim().is_empty() {
                return Some(format!("{name} is empty"));
            }
        }
        if let Some(score) = self.sentiment_score {
            if !(-1.0..=1.0).contains(&score) {
                return Some(format!("sentiment_score {score} outside [-1, 1]"));
            }
        }
        if !(self.t_end >= self.t_start) {
            return Some(format!("t_end {} precedes t_start {}", self.t_end, self.t_start));
        }
        None
    }

    /// Case-folded (holder, target, aspect) used to align predictions with gold.
    pub fn match_key(&self) -> (String, String, String) {
        (
            text::fold(&self.holder),
            text::fold(&self.target),
            text::fold(&self.aspect),
        )
    }

    /// Case-folded (holder, target, aspect, opinion) used to merge duplicates
    /// produced by overlapping windows.
    pub fn dedup_key(&self) -> (String, String, String, String) {
        let (h, t, a) = self.match_key();
        (h, t, a, text::fold(&self.opinion))
    }

    /// Space-joined "holder target aspect opinion sentiment" rendering, used
    /// as the hypothesis when scoring rationale support.
    pub fn serialize_event(&self) -> String {
        [
            self.holder.as_str(),
            self.target.as_str(),
            self.aspect.as_str(),
            self.opinion.as_str(),
            self.sentiment_label.as_str(),
        ]
        .iter()
        .filter(|s| !s.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Temporal decay constant, seconds.
    pub tau: f64,
    pub edge_threshold: f64,
    pub normalize_scores: bool,
    pub top_n: usize,
    pub window_size: usize,
    pub stride: usize,
    /// Largest causal gap considered, seconds. `None` means `10 * tau`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_gap: Option<f64>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
            tau: 30.0,
            edge_threshold: 0.5,
            normalize_scores: true,
            top_n: 3,
            window_size: 10,
            stride: 5,
            max_gap: None,
        }
    }
}

impl ScoringConfig {
    pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

    pub fn max_gap(&self) -> f64 {
        self.max_gap.unwrap_or(10.0 * self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w > 0.0 && w < 1.0) {
                return bad(format!("{name} = {w} must lie in (0, 1)"));
            }
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > Self::WEIGHT_SUM_TOLERANCE {
            return bad(format!("alpha + beta + gamma must equal 1 (got {sum})"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau = {} must be > 0", self.tau));
        }
        if !(0.0..=1.0).contains(&self.edge_threshold) {
            return bad(format!("edge_threshold = {} must lie in [0, 1]", self.edge_threshold));
        }
        if self.top_n < 1 {
            return bad("top_n must be >= 1".into());
        }
        if self.window_size < 2 {
            return bad("window_size must be >= 2".into());
        }
        if self.stride < 1 {
            return bad("stride must be >= 1".into());
        }
        if let Some(g) = self.max_gap {
            if !(g >= 0.0) {
                return bad(format!("max_gap = {g} must be >= 0"));
            }
        }
        Ok(())
    }

    /// Parses a flat key/value document (TOML or JSON) whose keys mirror the
    /// field names. Missing keys take their defaults.
    pub fn from_document(text: &str) -> Result<Self> {
        let cfg: ScoringConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::json(&e))?
        } else {
            toml::from_str(text).map_err(|e| Error::Schema {
                path: "config".into(),
                message: e.to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub message: String,
    pub location: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {} ({})", self.message, self.location)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            message: message.into(),
            location: location.into(),
        });
    }

    fn warning(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Warning,
            message: message.into(),
            location: location.into(),
        });
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return writeln!(f, "ok: no issues");
        }
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

pub fn validate_dialogue(d: &Dialogue) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = d.utterances.len();

    if d.id.trim().is_empty() {
        report.error("id", "dialogue id is empty");
    }
    if n < 2 {
        report.error("utterances", format!("dialogue has {n} utterances, need at least 2"));
    } else if !(MIN_TURNS..=MAX_TURNS).contains(&n) {
        report.warning(
            "utterances",
            format!("turn count {n} outside the expected range {MIN_TURNS}..={MAX_TURNS}"),
        );
    }

    let mut prev_start = f64::NEG_INFINITY;
    for (pos, u) in d.utterances.iter().enumerate() {
        let loc = |field: &str| format!("utterances[{pos}].{field}");
        if u.index != pos {
            report.error(loc("index"), format!("index {} should be {pos}", u.index));
        }
        if u.speaker.trim().is_empty() {
            report.error(loc("speaker"), "speaker is empty");
        }
        if u.word_count < 1 {
            report.error(loc("text"), "utterance has no words");
        }
        if !(u.t_start.is_finite() && u.t_end.is_finite()) {
            report.error(loc("t_start"), "timestamps must be finite");
        } else if !(u.t_end > u.t_start) {
            report.error(
                loc("t_end"),
                format!("t_end {} must exceed t_start {}", u.t_end, u.t_start),
            );
        }
        if u.t_start < prev_start {
            report.error(
                loc("t_start"),
                format!("t_start {} precedes previous utterance start {prev_start}", u.t_start),
            );
        }
        prev_start = prev_start.max(u.t_start);
    }

    let mut emotion_dim: Option<usize> = None;
    for (key, rec) in &d.audio {
        let loc = format!("audio[{key}]");
        if *key >= n {
            report.error(&loc, format!("audio record references missing utterance {key}"));
        }
        if rec.utterance_index != *key {
            report.error(&loc, "utterance_index does not match its key");
        }
        if let Some(problem) = rec.check() {
            report.error(&loc, problem);
        }
        match emotion_dim {
            None => emotion_dim = Some(rec.emotion.len()),
            Some(dim) if dim != rec.emotion.len() => report.error(
                &loc,
                format!("emotion dimension {} differs from {dim}", rec.emotion.len()),
            ),
            _ => {}
        }
    }
    let missing = (0..n).filter(|i| !d.audio.contains_key(i)).count();
    if missing > 0 {
        report.warning("audio", format!("{missing} of {n} utterances lack audio records"));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn uniform_audio(index: usize, dim: usize) -> AudioFeatureRecord {
        AudioFeatureRecord {
            utterance_index: index,
            emotion: vec![1.0 / dim as f64; dim],
            intensity: 0.5,
            speech_rate: 2.0,
        }
    }

    fn dialogue(n: usize) -> Dialogue {
        let utterances = (0..n)
            .map(|i| Utterance::new(i, "spk0", "hello there", i as f64 * 2.0, i as f64 * 2.0 + 1.5))
            .collect();
        let audio = (0..n).map(|i| (i, uniform_audio(i, 8))).collect();
        Dialogue {
            id: "d".into(),
            scenario: Scenario::Medical,
            utterances,
            audio,
        }
    }

    #[test]
    fn clean_dialogue_has_empty_report() {
        let report = validate_dialogue(&dialogue(100));
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn zero_duration_is_error_at_index() {
        let mut d = dialogue(100);
        d.utterances[3].t_end = d.utterances[3].t_start;
        let report = validate_dialogue(&d);
        let errors: Vec<_> = report.errors().collect();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].location, "utterances[3].t_end");
    }

    #[test]
    fn short_dialogue_warns_only() {
        let report = validate_dialogue(&dialogue(12));
        assert_eq!(report.warnings().count(), 1);
        assert_eq!(report.errors().count(), 0);
    }

    #[test]
    fn single_utterance_is_error() {
        assert!(validate_dialogue(&dialogue(1)).has_errors());
    }

    #[test]
    fn audio_key_out_of_range_is_error() {
        let mut d = dialogue(10);
        d.audio.insert(42, uniform_audio(42, 8));
        assert!(validate_dialogue(&d).has_errors());
    }

    #[test]
    fn missing_audio_warns() {
        let mut d = dialogue(80);
        d.audio.remove(&5);
        let report = validate_dialogue(&d);
        assert!(!report.has_errors());
        assert_eq!(report.warnings().count(), 1);
    }

    #[test]
    fn bad_emotion_sum_is_error() {
        let mut d = dialogue(80);
        d.audio.get_mut(&0).unwrap().emotion = vec![0.0; 8];
        assert!(validate_dialogue(&d).has_errors());
    }

    #[test]
    fn non_monotone_start_is_error() {
        let mut d = dialogue(80);
        d.utterances[10].t_start = 0.5;
        d.utterances[10].t_end = 1.0;
        let report = validate_dialogue(&d);
        assert!(report.errors().any(|i| i.location == "utterances[10].t_start"));
    }

    #[test]
    fn validation_is_pure() {
        let mut d = dialogue(20);
        d.utterances[2].t_end = 0.0;
        assert_eq!(validate_dialogue(&d), validate_dialogue(&d));
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = ScoringConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.max_gap(), 300.0);
    }

    #[test]
    fn config_rejects_weights_not_summing_to_one() {
        let cfg = ScoringConfig {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("alpha + beta + gamma must equal 1"), "{err}");
    }

    #[test]
    fn config_document_toml_and_json() {
        let cfg = ScoringConfig::from_document("tau = 12.5\nedge_threshold = 0.4\n").unwrap();
        assert_eq!(cfg.tau, 12.5);
        assert_eq!(cfg.edge_threshold, 0.4);
        assert_eq!(cfg.top_n, 3);
        let cfg = ScoringConfig::from_document(r#"{"stride": 3}"#).unwrap();
        assert_eq!(cfg.stride, 3);
        assert!(ScoringConfig::from_document("unknown_key = 1").is_err());
    }

    #[test]
    fn sextuplet_event_serialization_skips_empty_aspect() {
        let q = Sextuplet {
            id: "q".into(),
            holder: "Ann".into(),
            target: "Bo".into(),
            aspect: String::new(),
            opinion: "praises".into(),
            sentiment_label: SentimentLabel::Positive,
            sentiment_score: None,
            rationale: "r".into(),
            window_index: 0,
            t_start: 0.0,
            t_end: 1.0,
        };
        assert_eq!(q.serialize_event(), "Ann Bo praises positive");
        assert!(q.check().is_none());
    }

    #[test]
    fn dominant_emotion_ties_go_low() {
        let rec = uniform_audio(0, 4);
        assert_eq!(rec.dominant_emotion(), 0);
    }

    #[test]
    fn sentiment_label_parsing() {
        assert_eq!("Positive".parse::<SentimentLabel>().unwrap(), SentimentLabel::Positive);
        assert_eq!("neg".parse::<SentimentLabel>().unwrap(), SentimentLabel::Negative);
        assert!("angry".parse::<SentimentLabel>().is_err());
    }
}
