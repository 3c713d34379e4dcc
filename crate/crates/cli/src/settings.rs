//! Option resolution: command-line flags, then the config file, then
//! built-in defaults.

use std::path::Path;

use anyhow::{Context, Result};
use causemotion::embed::{EmbeddingProvider, HashEmbedder};
use causemotion::eval::EvalConfig;
use causemotion::extract::{ExtractorProvider, MockExtractor};
use causemotion::graph::{NliProvider, OverlapNli};
use causemotion::model::ScoringConfig;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::Exit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hash,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliKind {
    Overlap,
    Remote,
}

/// Everything a config file may set. Keys mirror the long flag names with
/// underscores; scoring keys mirror `ScoringConfig` fields.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub edge_threshold: Option<f64>,
    pub normalize_scores: Option<bool>,
    pub top_n: Option<usize>,
    pub window_size: Option<usize>,
    pub stride: Option<usize>,
    pub max_gap: Option<f64>,
    pub consistency_floor: Option<f64>,
    pub embedder: Option<EmbedderKind>,
    pub embed_dim: Option<usize>,
    pub embed_seed: Option<u64>,
    pub embed_model: Option<String>,
    pub provider: Option<ExtractorKind>,
    pub mock_seed: Option<u64>,
    pub llm_model: Option<String>,
    pub nli: Option<NliKind>,
    pub nli_model: Option<String>,
}

impl FileConfig {
    /// Reads a TOML or JSON document.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let parsed = if text.trim_start().starts_with('{') {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| Exit::usage(format!("config {}: {e}", path.display())).into())
    }
}

/// Scoring flags. Each maps onto the `ScoringConfig` field of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct ScoringArgs {
    /// Semantic weight (ScoringConfig.alpha); alpha + beta + gamma must equal 1
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Temporal weight (ScoringConfig.beta)
    #[arg(long)]
    pub beta: Option<f64>,
    /// Rationale weight (ScoringConfig.gamma)
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Temporal decay constant in seconds (ScoringConfig.tau)
    #[arg(long)]
    pub tau: Option<f64>,
    /// Minimum edge weight kept in the graph (ScoringConfig.edge_threshold)
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Use unnormalized component scores (ScoringConfig.normalize_scores = false)
    #[arg(long)]
    pub raw_scores: bool,
    /// Largest cause-to-effect gap in seconds (ScoringConfig.max_gap, default 10 * tau)
    #[arg(long)]
    pub max_gap: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct WindowArgs {
    /// Utterances per window (ScoringConfig.window_size)
    #[arg(long)]
    pub window_size: Option<usize>,
    /// Window advance in utterances (ScoringConfig.stride)
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EmbedArgs {
    /// Text embedder; `remote` reads EMBED_ENDPOINT and EMBED_API_KEY
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
    /// Text embedding dimension
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Seed of the hash embedder
    #[arg(long)]
    pub embed_seed: Option<u64>,
    /// Model name sent to the remote embedder
    #[arg(long)]
    pub embed_model: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExtractorArgs {
    /// Extraction provider; `remote` reads LLM_ENDPOINT and LLM_API_KEY
    #[arg(long, value_enum)]
    pub provider: Option<ExtractorKind>,
    /// Seed recorded by the mock extractor
    #[arg(long)]
    pub mock_seed: Option<u64>,
    /// Model name sent to the remote extractor
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Retrieved context windows per prompt (ScoringConfig.top_n)
    #[arg(long)]
    pub top_n: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct NliArgs {
    /// Entailment scorer; `remote` reads NLI_ENDPOINT and NLI_API_KEY
    #[arg(long, value_enum)]
    pub nli: Option<NliKind>,
    /// Model name sent to the remote NLI service
    #[arg(long)]
    pub nli_model: Option<String>,
}

/// Fully resolved options shared by the subcommands.
#[derive(Debug, Clone)]
pub struct Settings {
    pub scoring: ScoringConfig,
    pub eval: EvalConfig,
    pub embedder: EmbedderKind,
    pub embed_dim: usize,
    pub embed_seed: u64,
    #[cfg_attr(not(feature = "remote"), allow(dead_code))]
    pub embed_model: Option<String>,
    pub provider: ExtractorKind,
    pub mock_seed: u64,
    #[cfg_attr(not(feature = "remote"), allow(dead_code))]
    pub llm_model: Option<String>,
    pub nli: NliKind,
    #[cfg_attr(not(feature = "remote"), allow(dead_code))]
    pub nli_model: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides<'a> {
    pub scoring: Option<&'a ScoringArgs>,
    pub window: Option<&'a WindowArgs>,
    pub embed: Option<&'a EmbedArgs>,
    pub extractor: Option<&'a ExtractorArgs>,
    pub nli: Option<&'a NliArgs>,
    pub consistency_floor: Option<f64>,
}

impl Settings {
    pub fn resolve(file: &FileConfig, flags: Overrides<'_>) -> Result<Self> {
        let d = ScoringConfig::default();
        let s = flags.scoring.cloned().unwrap_or_default();
        let w = flags.window.cloned().unwrap_or_default();
        let e = flags.embed.cloned().unwrap_or_default();
        let x = flags.extractor.cloned().unwrap_or_default();
        let n = flags.nli.cloned().unwrap_or_default();

        let scoring = ScoringConfig {
            alpha: s.alpha.or(file.alpha).unwrap_or(d.alpha),
            beta: s.beta.or(file.beta).unwrap_or(d.beta),
            gamma: s.gamma.or(file.gamma).unwrap_or(d.gamma),
            tau: s.tau.or(file.tau).unwrap_or(d.tau),
            edge_threshold: s.threshold.or(file.edge_threshold).unwrap_or(d.edge_threshold),
            normalize_scores: if s.raw_scores {
                false
            } else {
                file.normalize_scores.unwrap_or(d.normalize_scores)
            },
            top_n: x.top_n.or(file.top_n).unwrap_or(d.top_n),
            window_size: w.window_size.or(file.window_size).unwrap_or(d.window_size),
            stride: w.stride.or(file.stride).unwrap_or(d.stride),
            max_gap: s.max_gap.or(file.max_gap).or(d.max_gap),
        };
        scoring.validate().map_err(|err| Exit::usage(err.to_string()))?;

        let eval = EvalConfig {
            consistency_floor: flags
                .consistency_floor
                .or(file.consistency_floor)
                .unwrap_or(EvalConfig::default().consistency_floor),
        };
        Ok(Settings {
            scoring,
            eval,
            embedder: e.embedder.or(file.embedder).unwrap_or(EmbedderKind::Hash),
            embed_dim: e.embed_dim.or(file.embed_dim).unwrap_or(HashEmbedder::DEFAULT_DIM),
            embed_seed: e.embed_seed.or(file.embed_seed).unwrap_or(HashEmbedder::DEFAULT_SEED),
            embed_model: e.embed_model.or(file.embed_model.clone()),
            provider: x.provider.or(file.provider).unwrap_or(ExtractorKind::Mock),
            mock_seed: x.mock_seed.or(file.mock_seed).unwrap_or(0),
            llm_model: x.llm_model.or(file.llm_model.clone()),
            nli: n.nli.or(file.nli).unwrap_or(NliKind::Overlap),
            nli_model: n.nli_model.or(file.nli_model.clone()),
        })
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        if self.embed_dim == 0 {
            return Err(Exit::usage("--embed-dim must be positive").into());
        }
        match self.embedder {
            EmbedderKind::Hash => Ok(Box::new(HashEmbedder::new(self.embed_dim, self.embed_seed))),
            EmbedderKind::Remote => remote::embedder(self),
        }
    }

    pub fn extractor(&self) -> Result<Box<dyn ExtractorProvider>> {
        match self.provider {
            ExtractorKind::Mock => Ok(Box::new(MockExtractor::new(self.mock_seed))),
            ExtractorKind::Remote => remote::extractor(self),
        }
    }

    pub fn nli(&self) -> Result<Box<dyn NliProvider>> {
        match self.nli {
            NliKind::Overlap => Ok(Box::new(OverlapNli)),
            NliKind::Remote => remote::nli(self),
        }
    }
}

#[cfg(feature = "remote")]
mod remote {
    use causemotion::remote::{RemoteConfig, RemoteEmbedder, RemoteExtractor, RemoteNli, EMBED_ENV, LLM_ENV, NLI_ENV};

    use super::*;

    fn config(vars: (&str, &str), model: &Option<String>) -> Result<RemoteConfig> {
        let mut cfg = RemoteConfig::from_env(vars).map_err(|e| Exit::usage(e.to_string()))?;
        if let Some(m) = model {
            cfg.model = m.clone();
        }
        Ok(cfg)
    }

    pub fn embedder(s: &Settings) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(Box::new(RemoteEmbedder::new(
            config(EMBED_ENV, &s.embed_model)?,
            s.embed_dim,
        )))
    }

    pub fn extractor(s: &Settings) -> Result<Box<dyn ExtractorProvider>> {
        Ok(Box::new(RemoteExtractor::new(config(LLM_ENV, &s.llm_model)?)))
    }

    pub fn nli(s: &Settings) -> Result<Box<dyn NliProvider>> {
        Ok(Box::new(RemoteNli::new(config(NLI_ENV, &s.nli_model)?)))
    }
}

#[cfg(not(feature = "remote"))]
mod remote {
    use super::*;

    fn unavailable<T>() -> Result<T> {
        Err(Exit::usage("remote providers are not compiled in (enable the `remote` feature)").into())
    }

    pub fn embedder(_: &Settings) -> Result<Box<dyn EmbeddingProvider>> {
        unavailable()
    }

    pub fn extractor(_: &Settings) -> Result<Box<dyn ExtractorProvider>> {
        unavailable()
    }

    pub fn nli(_: &Settings) -> Result<Box<dyn NliProvider>> {
        unavailable()
    }
}
