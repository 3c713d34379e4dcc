use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use causemotion::eval::{evaluate, parse_gold, parse_sextuplet_sets, EvalReport, GoldAnnotation, SextupletSet};
use causemotion::graph::{export_graph, CausalGraph, GraphFormat};
use causemotion::ingest::{parse_corpus, IngestOptions};
use causemotion::kb::{retrieve, KnowledgeBase, Query};
use causemotion::model::{validate_dialogue, Dialogue, Scenario};
use causemotion::pipeline::{build_kb, extract_all, graph_all, run_pipeline, PipelineConfig, Providers};
use causemotion::synth::{generate, ChainSpec};
use causemotion::Error;
use clap::Args;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::settings::{EmbedArgs, ExtractorArgs, FileConfig, NliArgs, Overrides, ScoringArgs, Settings, WindowArgs};
use crate::Exit;

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn read_dialogues(m: &mut RunManifest, paths: &[PathBuf], strict: bool) -> Result<Vec<Dialogue>> {
    let opts = IngestOptions {
        strict,
        ..Default::default()
    };
    let mut all = Vec::new();
    for p in paths {
        let bytes = m.read(p)?;
        all.extend(parse_corpus(&bytes, opts).with_context(|| format!("ingesting {}", p.display()))?);
    }
    Ok(all)
}

fn pipeline_config(s: &Settings) -> PipelineConfig {
    PipelineConfig {
        scoring: s.scoring.clone(),
        eval: s.eval,
        ..Default::default()
    }
}

fn millis_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Dialogue files (single object, JSON array, or JSON lines)
    #[arg(required = true)]
    pub dialogues: Vec<PathBuf>,
    /// Treat warnings as errors
    #[arg(long)]
    pub strict: bool,
}

pub fn validate(args: &ValidateArgs) -> Result<()> {
    let mut failed = false;
    for path in &args.dialogues {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let opts = IngestOptions {
            strict: args.strict,
            compute_missing_rates: true,
        };
        match parse_corpus(&bytes, opts) {
            Ok(dialogues) => {
                for d in dialogues {
                    print!("{} ({}): {}", path.display(), d.id, validate_dialogue(&d));
                }
            }
            Err(Error::Rejected { dialogue_id, issues }) => {
                failed = true;
                println!("{} ({dialogue_id}): rejected", path.display());
                for issue in issues {
                    println!("  {issue}");
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    if failed {
        return Err(Exit::new(1, "validation failed").into());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Dialogue files to index
    #[arg(required = true)]
    pub dialogues: Vec<PathBuf>,
    /// Knowledge base file to write
    #[arg(long, default_value = "kb.cmkb")]
    pub out: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

pub fn index(file: &FileConfig, args: &IndexArgs) -> Result<()> {
    let s = Settings::resolve(
        file,
        Overrides {
            window: Some(&args.window),
            embed: Some(&args.embed),
            ..Default::default()
        },
    )?;
    let embedder = s.embedder()?;
    let mut m = RunManifest::new("index").with_settings(&s);
    m.provider("embedder", embedder.id(), embedder.version());
    let dialogues = read_dialogues(&mut m, &args.dialogues, false)?;
    let t = Instant::now();
    let kb = build_kb(&dialogues, &pipeline_config(&s), embedder.as_ref())?;
    m.time("index", millis_since(t));
    m.write(&args.out, &kb.persist())?;
    m.save_beside(&args.out)?;
    println!("indexed {} windows into {}", kb.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Knowledge base file
    #[arg(long)]
    pub kb: PathBuf,
    /// Dialogue id, or a dialogue file whose id is used
    #[arg(long)]
    pub dialogue: String,
    /// Window index of the query
    #[arg(long)]
    pub window: usize,
    /// Windows to return (ScoringConfig.top_n)
    #[arg(long)]
    pub top_n: Option<usize>,
}

fn load_kb(m: &mut RunManifest, path: &Path) -> Result<KnowledgeBase> {
    let bytes = m.read(path)?;
    KnowledgeBase::load(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn dialogue_id(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if !path.is_file() {
        return Ok(arg.to_string());
    }
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let d = causemotion::ingest::parse_dialogue_file(&bytes, IngestOptions::default())?;
    Ok(d.id)
}

pub fn retrieve_cmd(file: &FileConfig, args: &RetrieveArgs) -> Result<()> {
    let top_n = args
        .top_n
        .or(file.top_n)
        .unwrap_or(causemotion::model::ScoringConfig::default().top_n);
    let mut m = RunManifest::new("retrieve");
    let kb = load_kb(&mut m, &args.kb)?;
    let id = dialogue_id(&args.dialogue)?;
    let entry = kb.find(&id, args.window).ok_or_else(|| {
        Exit::usage(format!(
            "no window {} for dialogue `{id}` in {}",
            args.window,
            args.kb.display()
        ))
    })?;
    let hits = retrieve(&Query::for_entry(entry), &kb, top_n)?;
    println!("query dialogue={id} window={}", args.window);
    println!(
        "{:<5} {:<24} {:>6} {:>11} {:>10}",
        "rank", "dialogue", "window", "utterances", "similarity"
    );
    for (rank, hit) in hits.iter().enumerate() {
        let w = &hit.entry.window;
        println!(
            "{:<5} {:<24} {:>6} {:>11} {:>10.6}",
            rank + 1,
            w.dialogue_id,
            w.window_index,
            format!("{}-{}", w.start(), w.end()),
            hit.similarity
        );
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Knowledge base built from the same dialogues
    #[arg(long)]
    pub kb: PathBuf,
    /// Dialogue file (one or more dialogues)
    #[arg(long)]
    pub dialogue: PathBuf,
    /// Sextuplet file to write
    #[arg(long, default_value = "sextuplets.json")]
    pub out: PathBuf,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

pub fn extract(file: &FileConfig, args: &ExtractArgs) -> Result<()> {
    let mut m = RunManifest::new("extract");
    let kb = load_kb(&mut m, &args.kb)?;
    let dialogues = read_dialogues(&mut m, std::slice::from_ref(&args.dialogue), false)?;
    // Window geometry is fixed by the index.
    let window = WindowArgs {
        window_size: Some(kb.meta().window_size.max(2)),
        stride: Some(kb.meta().stride.max(1)),
    };
    let s = Settings::resolve(
        file,
        Overrides {
            window: Some(&window),
            extractor: Some(&args.extractor),
            ..Default::default()
        },
    )?;
    let extractor = s.extractor()?;
    let mut m = m.with_settings(&s);
    m.provider("extractor", extractor.id(), extractor.version());
    let t = Instant::now();
    let sets = extract_all(&dialogues, &kb, extractor.as_ref(), &pipeline_config(&s))?;
    m.time("extract", millis_since(t));
    m.write(&args.out, &json_bytes(&sets)?)?;
    m.save_beside(&args.out)?;
    let n: usize = sets.iter().map(|s| s.sextuplets.len()).sum();
    println!(
        "extracted {n} sextuplets from {} dialogues into {}",
        sets.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Sextuplet file from `extract`
    #[arg(long)]
    pub sextuplets: PathBuf,
    /// Output graph; `.dot` writes Graphviz, anything else JSON
    #[arg(long, default_value = "graph.json")]
    pub out: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub nli: NliArgs,
}

pub fn graph(file: &FileConfig, args: &GraphArgs) -> Result<()> {
    let s = Settings::resolve(
        file,
        Overrides {
            scoring: Some(&args.scoring),
            embed: Some(&args.embed),
            nli: Some(&args.nli),
            ..Default::default()
        },
    )?;
    let (embedder, nli) = (s.embedder()?, s.nli()?);
    let mut m = RunManifest::new("graph").with_settings(&s);
    m.provider("embedder", embedder.id(), embedder.version());
    m.provider("nli", nli.id(), nli.version());
    let sets = parse_sextuplet_sets(&m.read(&args.sextuplets)?)?;
    let t = Instant::now();
    let g = graph_all(&sets, &s.scoring, embedder.as_ref(), nli.as_ref())?;
    m.time("graph", millis_since(t));
    m.write(&args.out, &export_graph(&g, GraphFormat::from_path(&args.out)))?;
    m.save_beside(&args.out)?;
    println!(
        "{} vertices, {} edges written to {}",
        g.vertices.len(),
        g.edges.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted graph in JSON; an empty graph when omitted
    #[arg(long)]
    pub predicted: Option<PathBuf>,
    /// Gold annotations (native or DiaASQ format)
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted sextuplets; defaults to sextuplets.json beside the graph
    #[arg(long)]
    pub sextuplets: Option<PathBuf>,
    /// Report file to write
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Minimum semantic score of a consistent edge (EvalConfig.consistency_floor)
    #[arg(long)]
    pub consistency_floor: Option<f64>,
}

fn load_graph(bytes: &[u8]) -> Result<CausalGraph> {
    let g: CausalGraph = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    g.validate()?;
    Ok(g)
}

/// Evaluation errors about the inputs' content are evaluation failures, not
/// usage errors.
fn eval_failure(e: Error) -> anyhow::Error {
    match e {
        Error::Argument(msg) => Exit::new(1, msg).into(),
        other => other.into(),
    }
}

pub fn eval(file: &FileConfig, args: &EvalArgs) -> Result<()> {
    let s = Settings::resolve(
        file,
        Overrides {
            consistency_floor: args.consistency_floor,
            ..Default::default()
        },
    )?;
    let mut m = RunManifest::new("eval").with_settings(&s);
    let graph = match &args.predicted {
        Some(p) => load_graph(&m.read(p)?)?,
        None => CausalGraph::default(),
    };
    let sextuplets_path = args.sextuplets.clone().or_else(|| {
        let sibling = args.predicted.as_ref()?.with_file_name("sextuplets.json");
        sibling.is_file().then_some(sibling)
    });
    let sets: Vec<SextupletSet> = match &sextuplets_path {
        Some(p) => parse_sextuplet_sets(&m.read(p)?)?,
        None => Vec::new(),
    };
    let gold = parse_gold(&m.read(&args.gold)?)?;
    let t = Instant::now();
    let report = evaluate(&graph, &sets, &gold, &s.eval).map_err(eval_failure)?.report();
    m.time("eval", millis_since(t));
    m.write(&args.out, &json_bytes(&report)?)?;
    m.save_beside(&args.out)?;
    print!("{report}");
    Ok(())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        let names: Vec<_> = Scenario::ALL.iter().map(|s| s.as_str()).collect();
        format!("unknown scenario `{s}` (one of {})", names.join(", "))
    })
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Utterances in the dialogue
    #[arg(long, default_value_t = 80)]
    pub turns: usize,
    /// Causal links in the planted chain
    #[arg(long, default_value_t = 4)]
    pub chain_length: usize,
    /// Fraction of filler utterances replaced by near-misses and distractors
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub speakers: usize,
    #[arg(long, value_parser = parse_scenario, default_value = "social_media")]
    pub scenario: Scenario,
    /// Writes PREFIX.dialogue.json and PREFIX.gold.json
    #[arg(long, default_value = "causemotion")]
    pub out_prefix: String,
}

pub fn gen(args: &GenArgs) -> Result<()> {
    let spec = ChainSpec {
        seed: args.seed,
        scenario: args.scenario,
        turns: args.turns,
        chain_length: args.chain_length,
        noise_rate: args.noise,
        speakers: args.speakers,
    };
    let (dialogue, gold) = generate(&spec).map_err(|e| Exit::usage(e.to_string()))?;
    let mut m = RunManifest::new("gen");
    let dialogue_path = PathBuf::from(format!("{}.dialogue.json", args.out_prefix));
    let gold_path = PathBuf::from(format!("{}.gold.json", args.out_prefix));
    m.write(&dialogue_path, &json_bytes(&dialogue)?)?;
    m.write(&gold_path, &json_bytes(&gold)?)?;
    m.save(&PathBuf::from(format!("{}.manifest.json", args.out_prefix)))?;
    println!(
        "wrote {} ({} utterances) and {} ({} sextuplets, {} links)",
        dialogue_path.display(),
        dialogue.utterances.len(),
        gold_path.display(),
        gold.sextuplets.len(),
        gold.causal_links.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dialogue files
    #[arg(long, default_value = "causemotion.dialogue.json")]
    pub dialogue: Vec<PathBuf>,
    /// Gold annotations; defaults to X.gold.json beside X.dialogue.json,
    /// evaluation is skipped when neither exists
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Directory receiving every stage artifact and manifest.json
    #[arg(long, default_value = "causemotion-run")]
    pub out_dir: PathBuf,
    /// Reject dialogues with validation warnings
    #[arg(long)]
    pub strict: bool,
    /// Minimum semantic score of a consistent edge (EvalConfig.consistency_floor)
    #[arg(long)]
    pub consistency_floor: Option<f64>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[command(flatten)]
    pub nli: NliArgs,
}

pub fn run(file: &FileConfig, args: &RunArgs) -> Result<()> {
    let s = Settings::resolve(
        file,
        Overrides {
            scoring: Some(&args.scoring),
            window: Some(&args.window),
            embed: Some(&args.embed),
            extractor: Some(&args.extractor),
            nli: Some(&args.nli),
            consistency_floor: args.consistency_floor,
        },
    )?;
    let (embedder, extractor, nli) = (s.embedder()?, s.extractor()?, s.nli()?);
    let mut m = RunManifest::new("run").with_settings(&s);
    m.provider("embedder", embedder.id(), embedder.version());
    m.provider("extractor", extractor.id(), extractor.version());
    m.provider("nli", nli.id(), nli.version());

    let t = Instant::now();
    let dialogues = read_dialogues(&mut m, &args.dialogue, args.strict)?;
    let gold_path = args.gold.clone().or_else(|| sibling_gold(&args.dialogue));
    let gold: Option<Vec<GoldAnnotation>> = match &gold_path {
        Some(p) => Some(parse_gold(&m.read(p)?)?),
        None => None,
    };
    m.time("ingest", millis_since(t));

    let providers = Providers {
        embedder: embedder.as_ref(),
        extractor: extractor.as_ref(),
        nli: nli.as_ref(),
    };
    let out = run_pipeline(&dialogues, gold.as_deref(), &pipeline_config(&s), providers).map_err(|e| {
        match e {
            // Only evaluation can raise a bare argument error once config is valid.
            Error::Argument(_) if gold.is_some() => eval_failure(e),
            other => other.into(),
        }
    })?;
    for st in &out.timings {
        m.time(st.stage, st.millis);
    }

    let dir = &args.out_dir;
    m.write(&dir.join("kb.cmkb"), &out.kb.persist())?;
    m.write(&dir.join("sextuplets.json"), &json_bytes(&out.sextuplets)?)?;
    m.write(&dir.join("graph.json"), &export_graph(&out.graph, GraphFormat::Json))?;
    m.write(&dir.join("graph.dot"), &export_graph(&out.graph, GraphFormat::Dot))?;
    if let Some(report) = &out.report {
        write_report(&mut m, dir, report)?;
    }
    m.save(&dir.join("manifest.json"))?;

    println!(
        "{} dialogues, {} windows, {} sextuplets, {} edges -> {}",
        dialogues.len(),
        out.kb.len(),
        out.sextuplets.iter().map(|s| s.sextuplets.len()).sum::<usize>(),
        out.graph.edges.len(),
        dir.display()
    );
    if let Some(report) = &out.report {
        print!("{report}");
    }
    Ok(())
}

fn sibling_gold(dialogues: &[PathBuf]) -> Option<PathBuf> {
    let [only] = dialogues else { return None };
    let name = only.file_name()?.to_str()?.strip_suffix(".dialogue.json")?;
    let gold = only.with_file_name(format!("{name}.gold.json"));
    gold.is_file().then_some(gold)
}

fn write_report(m: &mut RunManifest, dir: &Path, report: &EvalReport) -> Result<()> {
    m.write(&dir.join("report.json"), &json_bytes(report)?)?;
    m.write(&dir.join("report.txt"), report.to_string().as_bytes())
}
