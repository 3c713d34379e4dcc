//! Sliding windows over dialogues, the window/embedding knowledge base and
//! exact cosine top-n retrieval.

mod store;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embed::{describe_audio_as_text, window_embedding, EmbeddingProvider, EmbeddingVector, FusionConfig};
use crate::error::{Error, Result};
use crate::model::Dialogue;
use crate::par::{par_map, par_try_map};

pub use store::{FORMAT_VERSION, MAGIC};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub window_index: usize,
    pub dialogue_id: String,
    /// First and last utterance index, inclusive.
    pub utterance_range: [usize; 2],
    pub text: String,
}

impl TimeWindow {
    pub fn start(&self) -> usize {
        self.utterance_range[0]
    }

    pub fn end(&self) -> usize {
        self.utterance_range[1]
    }

    pub fn utterance_count(&self) -> usize {
        self.end() - self.start() + 1
    }

    pub fn contains(&self, utterance_index: usize) -> bool {
        (self.start()..=self.end()).contains(&utterance_index)
    }
}

/// Renders one utterance as a window line: `[idx] speaker: text [voice: ...]`.
pub fn render_utterance_line(d: &Dialogue, idx: usize, fusion: &FusionConfig) -> String {
    let u = &d.utterances[idx];
    match d.audio.get(&idx) {
        Some(a) => format!(
            "[{idx}] {}: {} {}",
            u.speaker,
            u.text,
            describe_audio_as_text(a, &fusion.categories)
        ),
        None => format!("[{idx}] {}: {}", u.speaker, u.text),
    }
}

/// Windows of `k` utterances starting every `stride` utterances; the last
/// window may be shorter and no window starts after one has reached the end.
pub fn build_windows(d: &Dialogue, k: usize, stride: usize, fusion: &FusionConfig) -> Result<Vec<TimeWindow>> {
    if k < 2 {
        return Err(Error::Argument(format!("window size {k} must be >= 2")));
    }
    if stride < 1 || stride > k {
        return Err(Error::Argument(format!(
            "stride {stride} must lie in 1..={k} so every utterance is covered"
        )));
    }
    let n = d.utterances.len();
    let mut windows = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + k).min(n) - 1;
        let text = (start..=end)
            .map(|i| render_utterance_line(d, i, fusion))
            .collect::<Vec<_>>()
            .join("\n");
        windows.push(TimeWindow {
            window_index: windows.len(),
            dialogue_id: d.id.clone(),
            utterance_range: [start, end],
            text,
        });
        if end + 1 >= n {
            break;
        }
        start += stride;
    }
    Ok(windows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbMeta {
    pub text_dim: usize,
    pub emotion_dim: usize,
    pub window_size: usize,
    pub stride: usize,
    pub provider_id: String,
    pub provider_version: String,
    pub entry_count: usize,
}

impl KbMeta {
    /// Fused embedding dimension.
    pub fn dim(&self) -> usize {
        self.text_dim + self.emotion_dim + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbEntry {
    pub window: TimeWindow,
    pub embedding: Vec<f64>,
}

/// Immutable window index. Entries are ordered by
/// `(dialogue_id, window_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    meta: KbMeta,
    entries: Vec<KbEntry>,
}

impl KnowledgeBase {
    /// Assembles a knowledge base from prebuilt entries, restoring canonical
    /// order and checking dimensions.
    pub fn from_entries(mut meta: KbMeta, mut entries: Vec<KbEntry>) -> Result<Self> {
        let dim = meta.dim();
        if let Some(bad) = entries.iter().find(|e| e.embedding.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.embedding.len(),
            });
        }
        entries.sort_by(|a, b| {
            (&a.window.dialogue_id, a.window.window_index).cmp(&(&b.window.dialogue_id, b.window.window_index))
        });
        if entries.windows(2).any(|p| {
            p[0].window.dialogue_id == p[1].window.dialogue_id && p[0].window.window_index == p[1].window.window_index
        }) {
            return Err(Error::Argument("duplicate window in knowledge base".into()));
        }
        meta.entry_count = entries.len();
        Ok(KnowledgeBase { meta, entries })
    }

    pub fn meta(&self) -> &KbMeta {
        &self.meta
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.meta.dim()
    }

    pub fn find(&self, dialogue_id: &str, window_index: usize) -> Option<&KbEntry> {
        self.entries
            .binary_search_by(|e| {
                (e.window.dialogue_id.as_str(), e.window.window_index).cmp(&(dialogue_id, window_index))
            })
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Merges several knowledge bases built with the same parameters.
    pub fn merge(parts: Vec<KnowledgeBase>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let Some(first) = iter.next() else {
            return Err(Error::Argument("nothing to merge".into()));
        };
        let meta = first.meta.clone();
        let mut entries = first.entries;
        for kb in iter {
            let same = kb.meta.text_dim == meta.text_dim
                && kb.meta.emotion_dim == meta.emotion_dim
                && kb.meta.window_size == meta.window_size
                && kb.meta.stride == meta.stride
                && kb.meta.provider_id == meta.provider_id;
            if !same {
                return Err(Error::Argument(
                    "cannot merge knowledge bases built with different parameters".into(),
                ));
            }
            entries.extend(kb.entries);
        }
        KnowledgeBase::from_entries(meta, entries)
    }

    pub fn persist(&self) -> Vec<u8> {
        store::encode(self)
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        store::decode(bytes)
    }
}

/// Indexes the windows of one dialogue. Each window's embedding is the mean
/// fused embedding of its utterances; utterances without audio use
/// [`FusionConfig::neutral_audio`].
pub fn index(
    windows: &[TimeWindow],
    d: &Dialogue,
    provider: &dyn EmbeddingProvider,
    fusion: &FusionConfig,
) -> Result<KnowledgeBase> {
    let (window_size, stride) = infer_geometry(windows);
    let meta = KbMeta {
        text_dim: provider.dim(),
        emotion_dim: fusion.emotion_dim(),
        window_size,
        stride,
        provider_id: provider.id().to_string(),
        provider_version: provider.version().to_string(),
        entry_count: 0,
    };
    let entries = par_try_map!(windows, |w: &TimeWindow| {
        embed_window(w, d, provider, fusion).map_err(|e| Error::Indexing {
            window_index: w.window_index,
            source: Box::new(e),
        })
    })?;
    KnowledgeBase::from_entries(meta, entries)
}

fn embed_window(
    w: &TimeWindow,
    d: &Dialogue,
    provider: &dyn EmbeddingProvider,
    fusion: &FusionConfig,
) -> Result<KbEntry> {
    if w.dialogue_id != d.id || w.end() >= d.utterances.len() || w.start() > w.end() {
        return Err(Error::Argument(format!(
            "window {} does not belong to dialogue `{}`",
            w.window_index, d.id
        )));
    }
    let defaults: Vec<_> = (w.start()..=w.end()).map(|i| fusion.neutral_audio(i)).collect();
    let items: Vec<_> = (w.start()..=w.end())
        .map(|i| {
            let audio = d.audio.get(&i).unwrap_or(&defaults[i - w.start()]);
            (&d.utterances[i], audio)
        })
        .collect();
    let emb = window_embedding(&items, provider, fusion)?;
    Ok(KbEntry {
        window: w.clone(),
        embedding: emb.values,
    })
}

fn infer_geometry(windows: &[TimeWindow]) -> (usize, usize) {
    let k = windows.iter().map(TimeWindow::utterance_count).max().unwrap_or(0);
    let stride = match windows {
        [a, b, ..] => b.start() - a.start(),
        _ => k,
    };
    (k, stride)
}

/// Builds windows and indexes every dialogue of a corpus into one base.
pub fn index_corpus(
    dialogues: &[Dialogue],
    window_size: usize,
    stride: usize,
    provider: &dyn EmbeddingProvider,
    fusion: &FusionConfig,
) -> Result<KnowledgeBase> {
    let meta = KbMeta {
        text_dim: provider.dim(),
        emotion_dim: fusion.emotion_dim(),
        window_size,
        stride,
        provider_id: provider.id().to_string(),
        provider_version: provider.version().to_string(),
        entry_count: 0,
    };
    let mut entries = Vec::new();
    for d in dialogues {
        let windows = build_windows(d, window_size, stride, fusion)?;
        entries.extend(index(&windows, d, provider, fusion)?.entries);
    }
    KnowledgeBase::from_entries(meta, entries)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// The window a retrieval is issued for.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub dialogue_id: &'a str,
    pub window_index: usize,
    pub embedding: &'a [f64],
}

impl<'a> Query<'a> {
    pub fn for_entry(entry: &'a KbEntry) -> Self {
        Query {
            dialogue_id: &entry.window.dialogue_id,
            window_index: entry.window.window_index,
            embedding: &entry.embedding,
        }
    }

    pub fn from_embedding(window: &'a TimeWindow, embedding: &'a EmbeddingVector) -> Self {
        Query {
            dialogue_id: &window.dialogue_id,
            window_index: window.window_index,
            embedding: &embedding.values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieved<'a> {
    pub entry: &'a KbEntry,
    pub similarity: f64,
}

/// Exhaustive top-n scan. The query's own window is skipped; results are in
/// descending similarity with ties broken by `(dialogue_id, window_index)`.
pub fn retrieve<'a>(query: &Query<'_>, kb: &'a KnowledgeBase, top_n: usize) -> Result<Vec<Retrieved<'a>>> {
    if top_n < 1 {
        return Err(Error::Argument("top_n must be >= 1".into()));
    }
    if query.embedding.len() != kb.dim() {
        return Err(Error::DimensionMismatch {
            expected: kb.dim(),
            found: query.embedding.len(),
        });
    }
    if query.embedding.iter().all(|v| *v == 0.0) {
        return Err(Error::UndefinedSimilarity);
    }
    let positions: Vec<usize> = (0..kb.entries.len()).collect();
    let scored = par_map!(positions, |&i: &usize| {
        let e = &kb.entries[i];
        if e.window.dialogue_id == query.dialogue_id && e.window.window_index == query.window_index {
            None
        } else {
            Some(cosine_similarity(query.embedding, &e.embedding).map(|s| (i, s)))
        }
    });
    let mut hits = scored.into_iter().flatten().collect::<Result<Vec<(usize, f64)>>>()?;

    // Entry position encodes the (dialogue_id, window_index) tie-break.
    let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering { b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)) };
    if hits.len() > top_n {
        hits.select_nth_unstable_by(top_n - 1, order);
        hits.truncate(top_n);
    }
    hits.sort_by(order);
    Ok(hits
        .into_iter()
        .map(|(i, similarity)| Retrieved {
            entry: &kb.entries[i],
            similarity,
        })
        .collect())
}
