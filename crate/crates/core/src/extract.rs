//! Retrieval-augmented sextuplet extraction: prompt assembly, provider
//! invocation with bounded retries, tolerant response parsing and
//! cross-window deduplication.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::thread;
use std::time::Duration;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::kb::{retrieve, KnowledgeBase, Query, Retrieved, TimeWindow};
use crate::model::{Dialogue, ScoringConfig, SentimentLabel, Sextuplet};
use crate::par::par_try_map;
use crate::rules::apply_rules;

pub const SYSTEM_INSTRUCTIONS: &str = "You analyse emotional causality in long conversations. \
For the current window, list every emotional-opinion event as a sextuplet: the holder who \
expresses the emotion, the target it is directed at, the aspect of the target being judged \
(empty when implicit), the opinion expression, the sentiment (positive, negative or neutral) \
and the rationale behind the judgement. Voice annotations in square brackets describe how each \
utterance was spoken. Retrieved context windows are provided for reference only; extract events \
from the current window.";

pub const OUTPUT_SCHEMA_INSTRUCTIONS: &str = "Respond with exactly one JSON array. Each element \
is an object with the keys \"holder\", \"target\", \"aspect\", \"opinion\", \"sentiment\", \
\"rationale\" and \"utterances\" (the bracketed indices of the supporting utterances). Respond \
with [] when the window contains no emotional-opinion event.";

pub const NO_CONTEXT_MARKER: &str = "(no prior context)";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextBlock {
    pub dialogue_id: String,
    pub window_index: usize,
    pub text: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionPrompt {
    pub system_instructions: String,
    pub window: TimeWindow,
    /// Most similar first.
    pub retrieved_context: Vec<ContextBlock>,
    pub output_schema_instructions: String,
}

impl ExtractionPrompt {
    pub fn current_window_text(&self) -> &str {
        &self.window.text
    }

    /// The user-facing part of the prompt: context, current window, schema.
    pub fn render_user(&self) -> String {
        let mut out = String::new();
        out.push_str("## Retrieved context\n");
        if self.retrieved_context.is_empty() {
            out.push_str(NO_CONTEXT_MARKER);
            out.push('\n');
        }
        for (rank, block) in self.retrieved_context.iter().enumerate() {
            let _ = writeln!(
                out,
                "### Context {} (dialogue {}, window {}, similarity {:.4})\n{}",
                rank + 1,
                block.dialogue_id,
                block.window_index,
                block.similarity,
                block.text
            );
        }
        let _ = writeln!(
            out,
            "\n## Current window (dialogue {}, window {}, utterances {}-{})\n{}",
            self.window.dialogue_id,
            self.window.window_index,
            self.window.start(),
            self.window.end(),
            self.window.text
        );
        let _ = write!(out, "\n## Output format\n{}\n", self.output_schema_instructions);
        out
    }

    /// Full prompt: instructions, context, current window, schema.
    pub fn render(&self) -> String {
        format!(
            "## Instructions\n{}\n\n{}",
            self.system_instructions,
            self.render_user()
        )
    }
}

pub fn assemble_prompt(window: &TimeWindow, context: &[Retrieved<'_>], cfg: &ScoringConfig) -> ExtractionPrompt {
    let mut retrieved_context: Vec<ContextBlock> = context
        .iter()
        .map(|r| ContextBlock {
            dialogue_id: r.entry.window.dialogue_id.clone(),
            window_index: r.entry.window.window_index,
            text: r.entry.window.text.clone(),
            similarity: r.similarity,
        })
        .collect();
    retrieved_context.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| (&a.dialogue_id, a.window_index).cmp(&(&b.dialogue_id, b.window_index)))
    });
    retrieved_context.truncate(cfg.top_n);
    ExtractionPrompt {
        system_instructions: SYSTEM_INSTRUCTIONS.to_string(),
        window: window.clone(),
        retrieved_context,
        output_schema_instructions: OUTPUT_SCHEMA_INSTRUCTIONS.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorMode {
    Mock,
    Remote,
}

/// Turns a prompt into raw model output. Must tolerate concurrent calls.
pub trait ExtractorProvider: Send + Sync {
    fn id(&self) -> &str;

    fn version(&self) -> &str {
        "1"
    }

    fn mode(&self) -> ExtractorMode;

    fn complete(&self, prompt: &ExtractionPrompt) -> Result<String>;
}

/// Offline extractor applying the surface-pattern rule table to each line of
/// the current window. Retrieved context is ignored.
#[derive(Debug, Clone)]
pub struct MockExtractor {
    seed: u64,
    id: String,
}

impl MockExtractor {
    pub fn new(seed: u64) -> Self {
        MockExtractor {
            seed,
            id: format!("mock-rules-{seed}"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Default for MockExtractor {
    fn default() -> Self {
        MockExtractor::new(0)
    }
}

/// Splits a window line `[idx] speaker: text [voice: ...]` into index and text.
pub fn parse_window_line(line: &str) -> Option<(usize, &str)> {
    let rest = line.strip_prefix('[')?;
    let (idx, rest) = rest.split_once("] ")?;
    let idx = idx.parse().ok()?;
    let (_, text) = rest.split_once(": ")?;
    let text = match text.rfind(" [voice: ") {
        Some(pos) if text.ends_with(']') => &text[..pos],
        _ => text,
    };
    Some((idx, text))
}

impl ExtractorProvider for MockExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn mode(&self) -> ExtractorMode {
        ExtractorMode::Mock
    }

    fn complete(&self, prompt: &ExtractionPrompt) -> Result<String> {
        let mut items = Vec::new();
        for line in prompt.current_window_text().lines() {
            let Some((idx, text)) = parse_window_line(line) else {
                continue;
            };
            for m in apply_rules(text) {
                items.push(serde_json::json!({
                    "holder": m.holder,
                    "target": m.target,
                    "aspect": m.aspect,
                    "opinion": m.opinion,
                    "sentiment": m.label.as_str(),
                    "rationale": m.rationale,
                    "utterances": [idx],
                }));
            }
        }
        Ok(format!(
            "Extracted events:\n{}",
            serde_json::to_string_pretty(&items).expect("json values serialize")
        ))
    }
}

/// One element of a provider response, before provenance is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSextuplet {
    pub holder: String,
    pub target: String,
    pub aspect: String,
    pub opinion: String,
    pub sentiment_label: SentimentLabel,
    pub sentiment_score: Option<f64>,
    pub rationale: String,
    /// Supporting utterance indices, as reported by the provider.
    pub utterances: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedResponse {
    pub sextuplets: Vec<ParsedSextuplet>,
    pub rejected: Vec<Rejection>,
}

/// Extracts the first well-formed JSON array from free-form provider output
/// and validates its elements one by one.
pub fn parse_provider_response(raw: &str) -> Result<ParsedResponse> {
    let array = first_json_array(raw).ok_or_else(|| Error::ProviderResponse {
        message: "no JSON array found".into(),
        raw: raw.to_string(),
    })?;
    let mut out = ParsedResponse::default();
    for (position, item) in array.into_iter().enumerate() {
        match parse_element(item) {
            Ok(s) => out.sextuplets.push(s),
            Err(reason) => out.rejected.push(Rejection { position, reason }),
        }
    }
    Ok(out)
}

fn first_json_array(raw: &str) -> Option<Vec<Value>> {
    raw.match_indices('[').find_map(|(pos, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Array(items))) => Some(items),
            _ => None,
        }
    })
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    obj.iter()
        .find(|(k, _)| {
            let k = k.to_lowercase().replace([' ', '-'], "_");
            names.contains(&k.as_str())
        })
        .map(|(_, v)| v)
        .filter(|v| !v.is_null())
}

fn required_string(obj: &Map<String, Value>, names: &[&str]) -> Result<String, String> {
    match field(obj, names) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(Value::String(_)) => Err(format!("`{}` is empty", names[0])),
        Some(_) => Err(format!("`{}` is not a string", names[0])),
        None => Err(format!("missing `{}`", names[0])),
    }
}

fn parse_element(item: Value) -> Result<ParsedSextuplet, String> {
    let Value::Object(obj) = item else {
        return Err("element is not an object".into());
    };
    let holder = required_string(&obj, &["holder"])?;
    let target = required_string(&obj, &["target"])?;
    let opinion = required_string(&obj, &["opinion"])?;
    let rationale = required_string(&obj, &["rationale", "reason"])?;
    let aspect = match field(&obj, &["aspect"]) {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(_) => return Err("`aspect` is not a string".into()),
        None => String::new(),
    };
    let sentiment_label = required_string(&obj, &["sentiment", "sentiment_label", "polarity"])?
        .parse::<SentimentLabel>()
        .map_err(|e| e.to_string())?;
    let sentiment_score = match field(&obj, &["sentiment_score", "score"]) {
        Some(v) => {
            let s = v.as_f64().ok_or("`sentiment_score` is not a number")?;
            if !(-1.0..=1.0).contains(&s) {
                return Err(format!("sentiment_score {s} outside [-1, 1]"));
            }
            Some(s)
        }
        None => None,
    };
    let utterances = match field(
        &obj,
        &["utterances", "evidence", "utterance_indices", "utterance_index"],
    ) {
        Some(Value::Array(xs)) => xs.iter().filter_map(Value::as_u64).map(|x| x as usize).collect(),
        Some(Value::Number(x)) => x.as_u64().map(|x| vec![x as usize]).unwrap_or_default(),
        _ => Vec::new(),
    };
    Ok(ParsedSextuplet {
        holder,
        target,
        aspect,
        opinion,
        sentiment_label,
        sentiment_score,
        rationale,
        utterances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32, hint_ms: Option<u64>) -> Duration {
        let exp = self
            .base_backoff
            .saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX));
        let hinted = Duration::from_millis(hint_ms.unwrap_or(0));
        exp.max(hinted).min(self.max_backoff)
    }
}

/// Runs `call`, retrying transport failures up to `policy.max_retries` times
/// with exponential backoff. Other errors return immediately.
pub fn retry_transient<T>(policy: &RetryPolicy, mut call: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match call() {
            Ok(v) => return Ok(v),
            Err(Error::Transport { retry_after_ms, .. }) if attempt < policy.max_retries => {
                let wait = policy.delay(attempt, retry_after_ms);
                attempt += 1;
                if !wait.is_zero() {
                    thread::sleep(wait);
                }
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn complete_with_retry(
    provider: &dyn ExtractorProvider,
    prompt: &ExtractionPrompt,
    policy: &RetryPolicy,
) -> Result<String> {
    retry_transient(policy, || provider.complete(prompt))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowExtraction {
    pub window_index: usize,
    pub sextuplets: Vec<Sextuplet>,
    pub rejected: Vec<Rejection>,
}

/// Runs one window through the provider and attaches provenance: ids,
/// `window_index` and timing from the supporting utterances (the whole window
/// when the provider names none inside it).
pub fn extract_sextuplets(
    prompt: &ExtractionPrompt,
    provider: &dyn ExtractorProvider,
    dialogue: &Dialogue,
    policy: &RetryPolicy,
) -> Result<WindowExtraction> {
    let window = &prompt.window;
    if window.dialogue_id != dialogue.id || window.end() >= dialogue.utterances.len() {
        return Err(Error::Argument(format!(
            "window {} does not belong to dialogue `{}`",
            window.window_index, dialogue.id
        )));
    }
    let raw = complete_with_retry(provider, prompt, policy)?;
    let parsed = parse_provider_response(&raw)?;

    let span = |indices: &[usize]| {
        let inside: Vec<usize> = indices.iter().copied().filter(|i| window.contains(*i)).collect();
        let (lo, hi) = if inside.is_empty() {
            (window.start(), window.end())
        } else {
            (
                *inside.iter().min().expect("non-empty"),
                *inside.iter().max().expect("non-empty"),
            )
        };
        (dialogue.utterances[lo].t_start, dialogue.utterances[hi].t_end)
    };

    let mut rejected = parsed.rejected;
    let mut sextuplets = Vec::with_capacity(parsed.sextuplets.len());
    for (k, p) in parsed.sextuplets.into_iter().enumerate() {
        let (t_start, t_end) = span(&p.utterances);
        let q = Sextuplet {
            id: format!("{}:w{}:{}", dialogue.id, window.window_index, k),
            holder: p.holder,
            target: p.target,
            aspect: p.aspect,
            opinion: p.opinion,
            sentiment_label: p.sentiment_label,
            sentiment_score: p.sentiment_score,
            rationale: p.rationale,
            window_index: window.window_index,
            t_start,
            t_end,
        };
        match q.check() {
            None => sextuplets.push(q),
            Some(reason) => rejected.push(Rejection { position: k, reason }),
        }
    }
    Ok(WindowExtraction {
        window_index: window.window_index,
        sextuplets,
        rejected,
    })
}

/// Keeps the first occurrence of each case-folded
/// (holder, target, aspect, opinion), ordering by window index.
pub fn dedup_sextuplets(mut all: Vec<Sextuplet>) -> Vec<Sextuplet> {
    // Stable sort keeps within-window response order.
    all.sort_by_key(|q| q.window_index);
    let mut seen = HashSet::new();
    all.retain(|q| seen.insert(q.dedup_key()));
    all
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DialogueExtraction {
    pub dialogue_id: String,
    pub sextuplets: Vec<Sextuplet>,
    pub rejected: Vec<(usize, Rejection)>,
}

/// Extracts every window of `dialogue` found in `kb`, each with its top-n
/// retrieved context, then deduplicates across windows. Output order does not
/// depend on scheduling.
pub fn extract_dialogue(
    dialogue: &Dialogue,
    kb: &KnowledgeBase,
    provider: &dyn ExtractorProvider,
    cfg: &ScoringConfig,
    policy: &RetryPolicy,
) -> Result<DialogueExtraction> {
    let entries: Vec<_> = kb
        .entries()
        .iter()
        .filter(|e| e.window.dialogue_id == dialogue.id)
        .collect();
    if entries.is_empty() {
        return Err(Error::Argument(format!(
            "knowledge base has no windows for dialogue `{}`",
            dialogue.id
        )));
    }
    let mut per_window = par_try_map!(entries, |entry: &&crate::kb::KbEntry| {
        let context = retrieve(&Query::for_entry(entry), kb, cfg.top_n)?;
        let prompt = assemble_prompt(&entry.window, &context, cfg);
        extract_sextuplets(&prompt, provider, dialogue, policy)
    })?;
    per_window.sort_by_key(|w| w.window_index);

    let mut rejected = Vec::new();
    let mut all = Vec::new();
    for w in per_window {
        rejected.extend(w.rejected.into_iter().map(|r| (w.window_index, r)));
        all.extend(w.sextuplets);
    }
    Ok(DialogueExtraction {
        dialogue_id: dialogue.id.clone(),
        sextuplets: dedup_sextuplets(all),
        rejected,
    })
}
