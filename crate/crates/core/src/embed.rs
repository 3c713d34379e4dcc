//! Text embedding providers, multimodal fusion and window-level pooling.
//!
//! A fused vector is laid out as `text (d_t) ++ emotion (d_e) ++ [rate]`, so
//! `d_m = d_t + d_e + 1` and each component is recoverable by offset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{AudioFeatureRecord, Utterance};
use crate::text;

/// Tolerance of the unit-norm contract on text embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_EMOTIONS: [&str; 8] = [
    "happy",
    "sad",
    "angry",
    "fearful",
    "disgusted",
    "surprised",
    "calm",
    "neutral",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Text,
    AudioEmotion,
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub kind: EmbeddingKind,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, kind: EmbeddingKind) -> Self {
        EmbeddingVector { values, kind }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    DeterministicTest,
    Remote,
}

/// A source of text embeddings. Implementations must be deterministic for a
/// given `(id, version)` and safe to call from several threads at once.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;

    fn version(&self) -> &str {
        "1"
    }

    fn dim(&self) -> usize;

    fn mode(&self) -> ProviderMode;

    /// Raw vectors, one per input, not necessarily normalized.
    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

/// Embeds one string, enforcing the dimension and unit-norm contract.
pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector> {
    let mut out = embed_texts(provider, &[text])?;
    Ok(out.pop().expect("one input, one output"))
}

pub fn embed_texts(provider: &dyn EmbeddingProvider, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
    if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::Argument(format!("text #{pos} to embed is empty")));
    }
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let raw = provider.embed_raw(texts)?;
    if raw.len() != texts.len() {
        return Err(Error::Provider {
            provider: provider.id().to_string(),
            message: format!("returned {} embeddings for {} inputs", raw.len(), texts.len()),
        });
    }
    raw.into_iter()
        .map(|values| {
            if values.len() != provider.dim() {
                return Err(Error::DimensionMismatch {
                    expected: provider.dim(),
                    found: values.len(),
                });
            }
            normalize(values).map(|v| EmbeddingVector::new(v, EmbeddingKind::Text))
        })
        .collect()
}

fn normalize(mut values: Vec<f64>) -> Result<Vec<f64>> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::UndefinedSimilarity);
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(values)
}

/// Deterministic offline embedder: every token is hashed to a seed, expanded
/// into a Gaussian vector, the token vectors are summed and the result is
/// normalized by [`embed_text`].
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    id: String,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 384;
    pub const DEFAULT_SEED: u64 = 0x00c4_05e0;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder {
            dim,
            seed,
            id: format!("hash-{dim}-{seed:x}"),
        }
    }

    fn token_vector(&self, token: &str, acc: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.seed, token.as_bytes()));
        for slot in acc.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *slot += z;
        }
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let tokens = text::tokens(text);
        if tokens.is_empty() {
            self.token_vector(text.trim(), &mut acc);
        } else {
            for token in &tokens {
                self.token_vector(token, &mut acc);
            }
        }
        acc
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(Self::DEFAULT_DIM, Self::DEFAULT_SEED)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::DeterministicTest
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// 64-bit FNV-1a over a seed prefix and the payload. Stable across platforms
/// and toolchains, unlike `std::hash`.
fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    seed.to_le_bytes()
        .iter()
        .chain(bytes)
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Ordered emotion categories; `d_e` is their count.
    pub categories: Vec<String>,
    /// Speech rate is divided by this (words/second) before concatenation.
    pub rate_scale: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            categories: DEFAULT_EMOTIONS.iter().map(|s| s.to_string()).collect(),
            rate_scale: 5.0,
        }
    }
}

impl FusionConfig {
    pub fn emotion_dim(&self) -> usize {
        self.categories.len()
    }

    /// Stand-in record for utterances without audio: uniform emotion,
    /// mid intensity, mid-scale rate.
    pub fn neutral_audio(&self, utterance_index: usize) -> AudioFeatureRecord {
        let d_e = self.emotion_dim();
        AudioFeatureRecord {
            utterance_index,
            emotion: vec![1.0 / d_e as f64; d_e],
            intensity: 0.5,
            speech_rate: self.rate_scale * 0.5,
        }
    }
}

/// Component offsets within a fused vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusedLayout {
    pub text_dim: usize,
    pub emotion_dim: usize,
}

impl FusedLayout {
    pub fn dim(&self) -> usize {
        self.text_dim + self.emotion_dim + 1
    }

    pub fn text<'a>(&self, fused: &'a [f64]) -> &'a [f64] {
        &fused[..self.text_dim]
    }

    pub fn emotion<'a>(&self, fused: &'a [f64]) -> &'a [f64] {
        &fused[self.text_dim..self.text_dim + self.emotion_dim]
    }

    pub fn rate(&self, fused: &[f64]) -> f64 {
        fused[self.text_dim + self.emotion_dim]
    }
}

pub fn fuse(text_emb: &EmbeddingVector, audio: &AudioFeatureRecord, cfg: &FusionConfig) -> Result<EmbeddingVector> {
    if text_emb.kind != EmbeddingKind::Text {
        return Err(Error::Fusion(format!(
            "expected a text embedding, got {:?}",
            text_emb.kind
        )));
    }
    if audio.emotion.len() != cfg.emotion_dim() {
        return Err(Error::Fusion(format!(
            "emotion vector has {} components, configured d_e is {}",
            audio.emotion.len(),
            cfg.emotion_dim()
        )));
    }
    if let Some(problem) = audio.check() {
        return Err(Error::Fusion(format!(
            "audio record for utterance {}: {problem}",
            audio.utterance_index
        )));
    }
    if !(cfg.rate_scale > 0.0) {
        return Err(Error::Fusion("rate_scale must be positive".into()));
    }
    let mut values = Vec::with_capacity(text_emb.dim() + audio.emotion.len() + 1);
    values.extend_from_slice(&text_emb.values);
    values.extend_from_slice(&audio.emotion);
    values.push(audio.speech_rate / cfg.rate_scale);
    Ok(EmbeddingVector::new(values, EmbeddingKind::Fused))
}

/// Element-wise mean, accumulated in input order.
pub fn mean_embedding(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Argument("cannot pool an empty window".into()))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        acc.iter_mut().zip(&v.values).for_each(|(a, x)| *a += x);
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(EmbeddingVector::new(acc, first.kind))
}

/// Fused embedding of a window: the mean of its utterances' fused vectors.
pub fn window_embedding(
    window: &[(&Utterance, &AudioFeatureRecord)],
    provider: &dyn EmbeddingProvider,
    cfg: &FusionConfig,
) -> Result<EmbeddingVector> {
    if window.is_empty() {
        return Err(Error::Argument("cannot embed an empty window".into()));
    }
    let texts: Vec<&str> = window.iter().map(|(u, _)| u.text.as_str()).collect();
    let text_embs = embed_texts(provider, &texts)?;
    let fused = text_embs
        .iter()
        .zip(window)
        .map(|(emb, (_, audio))| fuse(emb, audio, cfg))
        .collect::<Result<Vec<_>>>()?;
    mean_embedding(&fused)
}

/// Renders voice features as an inline prompt annotation.
pub fn describe_audio_as_text(audio: &AudioFeatureRecord, categories: &[String]) -> String {
    let idx = audio.dominant_emotion();
    let label = categories.get(idx).cloned().unwrap_or_else(|| format!("emotion{idx}"));
    format!(
        "[voice: {label}, intensity: {:.2}, rate: {:.2} w/s]",
        audio.intensity, audio.speech_rate
    )
}
