//! The `exrw` command line.
//!
//! Every subcommand shares one set of flags. A JSON config file can supply
//! dataset paths, the control configuration, the embedder, the rewriter and
//! the output directory; explicit flags override it with a warning.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coherence::{build_triplets, train_coherence, write_triplets_jsonl, CoherenceModel, CoherenceTrainConfig};
use crate::corpus::{content_hash, load_cluster_dataset, split_sentences, ClusterRecord};
use crate::embedding::{write_embedding_cache, EmbeddingProvider, EmbeddingProviderConfig, ProviderKind};
use crate::metrics::{evaluate_summary, EvaluationReport};
use crate::neural::{load_checkpoint, save_checkpoint};
use crate::pipeline::{summarize, PreparedCluster};
use crate::policy::{ExtractMode, PolicyModels};
use crate::rewrite::{RewriterConfig, RewriterKind};
use crate::trainer::{grid_search, pretrain_policy, train_rl, GridSpec, ReferenceReward, TrainReport};
use crate::{ControlConfig, Error};

pub const ENDPOINT_ENV: &str = "EXRW_ENDPOINT";

#[derive(Parser, Debug)]
#[command(name = "exrw", version, about = "Controllable extract-rewrite-reward summarizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pre-train the coherence scorer on reference-summary triplets.
    TrainCoherence(CommonArgs),
    /// Fit the coverage scorers to per-sentence rewards.
    Pretrain(CommonArgs),
    /// Policy-gradient training of both scorers.
    TrainRl(CommonArgs),
    /// Extract and rewrite one summary per cluster.
    Summarize(CommonArgs),
    /// Summarize and score against reference summaries.
    Evaluate(CommonArgs),
    /// Pick control knobs on the dev split.
    GridSearch(CommonArgs),
    /// Precompute an embedding cache for a dataset.
    EmbedCache(CommonArgs),
}

#[derive(Args, Debug, Default, Clone)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset (JSONL). Training split for training subcommands, input for the rest.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Checkpoint to start from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cl1: Option<f64>,
    #[arg(long)]
    cl2: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_parser = ["cache", "remote", "fallback"])]
    embedder: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Embedding cache file (read by `--embedder cache`, written by `embed-cache`).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_parser = ["identity", "remote"])]
    rewriter: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["greedy", "sample"])]
    mode: Option<String>,
    /// Grid-search candidates as a JSON file with cl1/cl2/k/c/lambda arrays.
    #[arg(long)]
    grid: Option<PathBuf>,
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub control: ControlConfig,
    pub embedder: EmbeddingProviderConfig,
    pub rewriter: RewriterConfig,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs the CLI and returns the process exit code: 0 on success, 1 on a
/// usage error, 2 on a runtime error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::TrainCoherence(a) => cmd_train_coherence(&Session::new(&a)?),
        Command::Pretrain(a) => cmd_pretrain(&Session::new(&a)?),
        Command::TrainRl(a) => cmd_train_rl(&Session::new(&a)?),
        Command::Summarize(a) => cmd_summarize(&Session::new(&a)?),
        Command::Evaluate(a) => cmd_evaluate(&Session::new(&a)?),
        Command::GridSearch(a) => cmd_grid_search(&Session::new(&a)?),
        Command::EmbedCache(a) => cmd_embed_cache(&Session::new(&a)?),
    }
}

fn require_existing(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

/// Resolved configuration for one invocation.
struct Session {
    cfg: CliConfig,
    checkpoint: Option<PathBuf>,
    mode: ExtractMode,
    cache_out: Option<PathBuf>,
    grid: Option<PathBuf>,
}

fn warn_conflict(name: &str, file: impl std::fmt::Display, flag: impl std::fmt::Display) {
    eprintln!("warning: --{name} {flag} overrides config file value {file}");
}

impl Session {
    fn new(args: &CommonArgs) -> CliResult<Self> {
        let (mut cfg, raw) = match &args.config {
            Some(path) => {
                require_existing(path, "config file")?;
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let raw: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| Failure::Usage(format!("config file {}: {e}", path.display())))?;
                let cfg: CliConfig = serde_json::from_value(raw.clone())
                    .map_err(|e| Failure::Usage(format!("config file {}: {e}", path.display())))?;
                (cfg, raw)
            }
            None => (CliConfig::default(), serde_json::Value::Null),
        };
        let in_file = |section: &str, key: &str| raw.get(section).and_then(|s| s.get(key)).is_some();

        let control = &mut cfg.control;
        let knobs: [(&str, Option<f64>, &mut f64); 5] = [
            ("cl1", args.cl1, &mut control.cl1),
            ("cl2", args.cl2, &mut control.cl2),
            ("k", args.k, &mut control.k),
            ("c", args.c, &mut control.c),
            ("lambda", args.lambda, &mut control.lambda),
        ];
        for (name, flag, slot) in knobs {
            if let Some(v) = flag {
                if in_file("control", name) && *slot != v {
                    warn_conflict(name, *slot, v);
                }
                *slot = v;
            }
        }
        if let Some(seed) = args.seed {
            if in_file("control", "seed") && control.seed != seed {
                warn_conflict("seed", control.seed, seed);
            }
            control.seed = seed;
        }
        control.validate().map_err(|e| Failure::Usage(e.to_string()))?;

        let env_endpoint = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty());
        let endpoint = args.endpoint.clone().or(env_endpoint);

        if let Some(kind) = &args.embedder {
            let kind: ProviderKind = kind.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
            if in_file("embedder", "kind") && cfg.embedder.kind != kind {
                warn_conflict("embedder", format!("{:?}", cfg.embedder.kind), format!("{kind:?}"));
            }
            cfg.embedder.kind = kind;
        }
        if let Some(dim) = args.dim {
            cfg.embedder.dim = dim;
        }
        if cfg.embedder.kind == ProviderKind::Cache {
            if let Some(cache) = &args.cache {
                cfg.embedder.cache_path = Some(cache.clone());
            }
        }
        if cfg.embedder.kind == ProviderKind::Remote && (args.endpoint.is_some() || cfg.embedder.endpoint_url.is_none()) {
            cfg.embedder.endpoint_url = endpoint.clone().or(cfg.embedder.endpoint_url.take());
        }
        if let Some(kind) = &args.rewriter {
            let kind: RewriterKind = kind.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
            if in_file("rewriter", "kind") && cfg.rewriter.kind != kind {
                warn_conflict("rewriter", format!("{:?}", cfg.rewriter.kind), format!("{kind:?}"));
            }
            cfg.rewriter.kind = kind;
        }
        if cfg.rewriter.kind == RewriterKind::Remote && (args.endpoint.is_some() || cfg.rewriter.remote.endpoint.is_empty()) {
            if let Some(ep) = endpoint {
                cfg.rewriter.remote.endpoint = ep;
            }
        }
        if let Some(data) = &args.data {
            cfg.train = Some(data.clone());
        }
        if let Some(dev) = &args.dev {
            cfg.dev = Some(dev.clone());
        }
        if let Some(test) = &args.test {
            cfg.test = Some(test.clone());
        }
        if let Some(out) = &args.out {
            cfg.out_dir = Some(out.clone());
        }
        cfg.embedder.validate().map_err(|e| Failure::Usage(e.to_string()))?;

        for (path, what) in [
            (&cfg.train, "dataset"),
            (&cfg.dev, "dev dataset"),
            (&cfg.test, "test dataset"),
            (&args.checkpoint, "checkpoint"),
            (&args.grid, "grid file"),
        ] {
            if let Some(p) = path {
                require_existing(p, what)?;
            }
        }
        if cfg.embedder.kind == ProviderKind::Cache {
            if let Some(p) = &cfg.embedder.cache_path {
                require_existing(p, "embedding cache")?;
            }
        }
        let mode = match &args.mode {
            Some(m) => m.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?,
            None => ExtractMode::Greedy,
        };
        Ok(Session {
            cfg,
            checkpoint: args.checkpoint.clone(),
            mode,
            cache_out: args.cache.clone(),
            grid: args.grid.clone(),
        })
    }

    fn control(&self) -> &ControlConfig {
        &self.cfg.control
    }

    fn dataset(&self, which: Option<&PathBuf>, flag: &str) -> CliResult<Vec<ClusterRecord>> {
        let path = which.ok_or_else(|| Failure::Usage(format!("missing --{flag} <path>")))?;
        Ok(load_cluster_dataset(path)?)
    }

    fn data(&self) -> CliResult<Vec<ClusterRecord>> {
        self.dataset(self.cfg.train.as_ref(), "data")
    }

    fn out_dir(&self) -> CliResult<PathBuf> {
        let dir = self.cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn provider(&self) -> CliResult<Box<dyn EmbeddingProvider>> {
        Ok(self.cfg.embedder.build()?)
    }

    /// Models from `--checkpoint`, or a seeded random initialization.
    fn models(&self) -> CliResult<PolicyModels> {
        let dim = self.cfg.embedder.dim;
        match &self.checkpoint {
            Some(path) => Ok(PolicyModels::from_checkpoint(&load_checkpoint(path, dim)?)?),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.control().seed);
                Ok(PolicyModels::init(dim, &mut rng))
            }
        }
    }

    fn save(&self, models: &PolicyModels, name: &str) -> CliResult<PathBuf> {
        let path = self.out_dir()?.join(name);
        save_checkpoint(&path, &models.to_checkpoint(self.control()))?;
        Ok(path)
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> CliResult<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn finish_training(session: &Session, mut report: TrainReport, models: &PolicyModels, name: &str) -> CliResult<()> {
    let path = session.save(models, name)?;
    report.checkpoint_path = Some(path.display().to_string());
    let lines = report.log_lines();
    for line in &lines {
        println!("{line}");
    }
    let log = session.out_dir()?.join(format!("{}_log.jsonl", name.trim_end_matches(".ckpt.json")));
    write_lines(&log, lines)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}

fn cmd_train_coherence(s: &Session) -> CliResult<()> {
    let provider = s.provider()?;
    let seed = s.control().seed;
    let load = |p: Option<&PathBuf>, flag: &str| s.dataset(p, flag);
    let train = build_triplets(&s.data()?, provider.as_ref(), seed)?;
    let dev = build_triplets(&load(s.cfg.dev.as_ref(), "dev")?, provider.as_ref(), seed.wrapping_add(1))?;
    let test = build_triplets(&load(s.cfg.test.as_ref(), "test")?, provider.as_ref(), seed.wrapping_add(2))?;
    let out = s.out_dir()?;
    write_triplets_jsonl(out.join("triplets_train.jsonl"), &train.texts)?;
    let cfg = CoherenceTrainConfig {
        epochs: s.control().coherence_epochs,
        lr: s.control().lr_coherence,
        margin: s.control().margin,
        seed,
    };
    let (coherence, report) = train_coherence(&train.triplets, &dev.triplets, &test.triplets, &cfg)?;
    let mut models = s.models()?;
    models.coherence = CoherenceModel { params: coherence.params };
    write_json(&out.join("coherence_report.json"), &report)?;
    let path = s.save(&models, "coherence.ckpt.json")?;
    println!(
        "threshold {:.2} dev F {:.4} test P {:.4} R {:.4} F {:.4}",
        report.threshold, report.dev_f1, report.precision, report.recall, report.f1
    );
    println!("checkpoint written to {}", path.display());
    Ok(())
}

fn cmd_pretrain(s: &Session) -> CliResult<()> {
    let provider = s.provider()?;
    let data = PreparedCluster::prepare_all(&s.data()?, provider.as_ref())?;
    let mut models = s.models()?;
    let report = pretrain_policy(&data, &mut models, s.control())?;
    finish_training(s, report, &models, "pretrain.ckpt.json")
}

fn cmd_train_rl(s: &Session) -> CliResult<()> {
    let provider = s.provider()?;
    let rewriter = s.cfg.rewriter.build()?;
    let data = PreparedCluster::prepare_all(&s.data()?, provider.as_ref())?;
    let mut models = s.models()?;
    let reward = ReferenceReward {
        provider: provider.as_ref(),
    };
    let report = train_rl(&data, &mut models, s.control(), rewriter.as_ref(), &reward)?;
    finish_training(s, report, &models, "rl.ckpt.json")
}

/// Summaries for every cluster, in dataset order.
fn run_summaries(s: &Session, clusters: &[ClusterRecord]) -> CliResult<Vec<(PreparedCluster, crate::pipeline::Summary)>> {
    let provider = s.provider()?;
    let rewriter = s.cfg.rewriter.build()?;
    let models = s.models()?;
    let mut out = Vec::with_capacity(clusters.len());
    for cluster in clusters {
        let prepared = PreparedCluster::prepare(cluster, provider.as_ref())?;
        let summary = summarize(&models, s.control(), &prepared, s.mode, s.control().seed, rewriter.as_ref())?;
        out.push((prepared, summary));
    }
    Ok(out)
}

fn cmd_summarize(s: &Session) -> CliResult<()> {
    let results = run_summaries(s, &s.data()?)?;
    let out = s.out_dir()?;
    let mut dumps = Vec::new();
    let mut summaries = Vec::new();
    for (cluster, summary) in &results {
        println!("{}\t{}", cluster.id, summary.rewrite.text);
        dumps.push(serde_json::to_string(&summary.trajectory).map_err(Error::from)?);
        summaries.push(serde_json::json!({"id": cluster.id, "summary": summary.rewrite.text}).to_string());
    }
    write_lines(&out.join("trajectories.jsonl"), dumps)?;
    write_lines(&out.join("summaries.jsonl"), summaries)?;
    Ok(())
}

fn cmd_evaluate(s: &Session) -> CliResult<()> {
    let clusters = s.data()?;
    if let Some(c) = clusters.iter().find(|c| c.reference_summary.is_none()) {
        return Err(Failure::Usage(format!("cluster {} has no reference summary", c.id)));
    }
    let results = run_summaries(s, &clusters)?;
    let provider = s.provider()?;
    let mut rows = Vec::with_capacity(results.len());
    for (cluster, summary) in &results {
        let reference = cluster.reference.as_deref().unwrap_or_default();
        rows.push(evaluate_summary(&cluster.id, &summary.rewrite.text, reference, provider.as_ref())?);
    }
    let report = EvaluationReport::new(rows);
    let out = s.out_dir()?;
    write_json(&out.join("eval_report.json"), &report)?;
    let table = report.table();
    fs::write(out.join("eval_table.txt"), &table).map_err(|e| Error::io(out.join("eval_table.txt"), e))?;
    print!("{table}");
    Ok(())
}

fn default_grid(cfg: &ControlConfig) -> GridSpec {
    GridSpec {
        cl1: vec![0.5, 1.0, 2.0],
        cl2: vec![0.0, 0.5, 1.0, 2.0],
        ..GridSpec::around(cfg)
    }
}

fn cmd_grid_search(s: &Session) -> CliResult<()> {
    let grid = match &s.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("grid file {}: {e}", path.display())))?
        }
        None => default_grid(s.control()),
    };
    let provider = s.provider()?;
    let rewriter = s.cfg.rewriter.build()?;
    let dev_path = s.cfg.dev.as_ref().or(s.cfg.train.as_ref());
    let dev = PreparedCluster::prepare_all(&s.dataset(dev_path, "dev")?, provider.as_ref())?;
    let models = s.models()?;
    let result = grid_search(&dev, &grid, &models, s.control(), rewriter.as_ref())?;
    let out = s.out_dir()?;
    write_json(&out.join("grid_search.json"), &result)?;
    for row in &result.table {
        println!(
            "cl1 {} cl2 {} k {} c {} lambda {} score {:.4}",
            row.cl1, row.cl2, row.k, row.c, row.lambda, row.score
        );
    }
    println!(
        "best cl1 {} cl2 {} k {} c {} lambda {} score {:.4}",
        result.best.cl1, result.best.cl2, result.best.k, result.best.c, result.best.lambda, result.best_score
    );
    Ok(())
}

fn cmd_embed_cache(s: &Session) -> CliResult<()> {
    let clusters = s.data()?;
    let provider = s.provider()?;
    let mut texts: Vec<String> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for cluster in &clusters {
        let reference = cluster.reference_summary.as_deref().map(split_sentences).unwrap_or_default();
        for text in cluster.sentence_texts().into_iter().chain(reference) {
            if seen.insert(content_hash(&text)) {
                texts.push(text);
            }
        }
    }
    let vectors = provider.embed(&texts)?;
    let entries: Vec<_> = texts.iter().map(|t| content_hash(t)).zip(vectors).collect();
    let path = match &s.cache_out {
        Some(p) => p.clone(),
        None => s.out_dir()?.join("embeddings.jsonl"),
    };
    write_embedding_cache(&path, provider.dim(), &entries)?;
    println!("{} vectors written to {}", entries.len(), path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["exrw", "summarize", "--bogus"]), 1);
        assert_eq!(run(["exrw", "frobnicate"]), 1);
    }

    #[test]
    fn missing_dataset_is_usage_error() {
        assert_eq!(run(["exrw", "pretrain", "--data", "/nonexistent/train.jsonl"]), 1);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"control":{"cl1":0.25,"cl2":3.0,"seed":4}}"#).unwrap();
        let args = CommonArgs {
            config: Some(path),
            cl2: Some(0.5),
            ..CommonArgs::default()
        };
        let s = Session::new(&args).unwrap();
        assert_eq!(s.control().cl1, 0.25);
        assert_eq!(s.control().cl2, 0.5);
        assert_eq!(s.control().seed, 4);
    }

    #[test]
    fn bad_config_value_is_usage_error() {
        let args = CommonArgs {
            cl1: Some(-1.0),
            ..CommonArgs::default()
        };
        assert!(matches!(Session::new(&args), Err(Failure::Usage(_))));
    }
}
