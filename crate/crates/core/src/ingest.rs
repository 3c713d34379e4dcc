//! Dialogue file ingestion: JSON or JSON-lines documents, speech-rate
//! completion and validation.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{validate_dialogue, AudioFeatureRecord, Dialogue, Scenario, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Reject dialogues whose validation report carries warnings.
    pub strict: bool,
    /// Fill absent `speech_rate` fields from utterance timing.
    pub compute_missing_rates: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            strict: false,
            compute_missing_rates: true,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueRecord {
    id: String,
    scenario: Scenario,
    utterances: Vec<Utterance>,
    #[serde(default)]
    audio: Vec<AudioRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AudioRecord {
    utterance_index: usize,
    emotion: Vec<f64>,
    intensity: f64,
    #[serde(default)]
    speech_rate: Option<f64>,
}

/// Words per second over the utterance's span.
pub fn compute_speech_rate(u: &Utterance) -> Result<f64> {
    let duration = u.t_end - u.t_start;
    if !(duration > 0.0) {
        return Err(Error::DegenerateDuration { index: u.index });
    }
    if u.word_count == 0 {
        return Err(Error::Argument(format!("utterance {} has no words", u.index)));
    }
    Ok(u.word_count as f64 / duration)
}

/// Parses a file that must contain exactly one dialogue.
pub fn parse_dialogue_file(bytes: &[u8], opts: IngestOptions) -> Result<Dialogue> {
    let mut dialogues = parse_corpus(bytes, opts)?;
    match dialogues.len() {
        1 => Ok(dialogues.pop().expect("length checked")),
        n => Err(Error::Schema {
            path: "$".into(),
            message: format!("expected exactly one dialogue, found {n}"),
        }),
    }
}

/// Parses a single JSON document, a JSON array of dialogues, or a
/// line-delimited stream of dialogue objects. Output order follows input.
pub fn parse_corpus(bytes: &[u8], opts: IngestOptions) -> Result<Vec<Dialogue>> {
    if let Err(e) = std::str::from_utf8(bytes) {
        let prefix = &bytes[..e.valid_up_to()];
        let line = 1 + prefix.iter().filter(|b| **b == b'\n').count();
        let column = 1 + prefix.iter().rev().take_while(|b| **b != b'\n').count();
        return Err(Error::Parse {
            line,
            column,
            message: "input is not valid UTF-8".into(),
        });
    }

    let mut documents = Vec::new();
    for value in serde_json::Deserializer::from_slice(bytes).into_iter::<Value>() {
        match value.map_err(|e| Error::json(&e))? {
            Value::Array(items) => documents.extend(items),
            other => documents.push(other),
        }
    }

    let multi = documents.len() > 1;
    documents
        .into_iter()
        .enumerate()
        .map(|(k, doc)| {
            let prefix = if multi { format!("[{k}].") } else { String::new() };
            let record = decode(doc, &prefix)?;
            build(record, &prefix, opts)
        })
        .collect()
}

fn decode(doc: Value, prefix: &str) -> Result<DialogueRecord> {
    serde_path_to_error::deserialize(doc).map_err(|err| {
        let mut path = err.path().to_string();
        let message = err.inner().to_string();
        // Missing fields are reported at the enclosing object; point at the field.
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            path = if path == "." {
                field.to_string()
            } else {
                format!("{path}.{field}")
            };
        }
        Error::Schema {
            path: format!("{prefix}{path}"),
            message,
        }
    })
}

fn build(record: DialogueRecord, prefix: &str, opts: IngestOptions) -> Result<Dialogue> {
    let DialogueRecord {
        id,
        scenario,
        utterances,
        audio: audio_records,
    } = record;
    let mut dialogue = Dialogue {
        id,
        scenario,
        utterances,
        audio: BTreeMap::new(),
    };
    // Utterance-level problems are reported through validation before any
    // speech rate is derived from possibly broken timing.
    let early = validate_dialogue(&dialogue);
    if early.has_errors() {
        return Err(Error::Rejected {
            dialogue_id: dialogue.id,
            issues: early.errors().map(ToString::to_string).collect(),
        });
    }

    let n = dialogue.utterances.len();
    for (pos, rec) in audio_records.into_iter().enumerate() {
        let path = |field: &str| format!("{prefix}audio[{pos}].{field}");
        let Some(utterance) = dialogue.utterances.get(rec.utterance_index) else {
            return Err(Error::Schema {
                path: path("utterance_index"),
                message: format!("utterance {} does not exist (dialogue has {n})", rec.utterance_index),
            });
        };
        let speech_rate = match rec.speech_rate {
            Some(rate) => rate,
            None if opts.compute_missing_rates => compute_speech_rate(utterance)?,
            None => {
                return Err(Error::Schema {
                    path: path("speech_rate"),
                    message: "missing field `speech_rate`".into(),
                })
            }
        };
        let idx = rec.utterance_index;
        let full = AudioFeatureRecord {
            utterance_index: idx,
            emotion: rec.emotion,
            intensity: rec.intensity,
            speech_rate,
        };
        if dialogue.audio.insert(idx, full).is_some() {
            return Err(Error::Schema {
                path: path("utterance_index"),
                message: format!("duplicate audio record for utterance {idx}"),
            });
        }
    }

    let report = validate_dialogue(&dialogue);
    let rejected: Vec<String> = if report.has_errors() {
        report.errors().map(ToString::to_string).collect()
    } else if opts.strict {
        report.warnings().map(ToString::to_string).collect()
    } else {
        Vec::new()
    };
    if !rejected.is_empty() {
        return Err(Error::Rejected {
            dialogue_id: dialogue.id,
            issues: rejected,
        });
    }
    Ok(dialogue)
}
