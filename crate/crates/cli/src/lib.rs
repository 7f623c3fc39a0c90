//! `tempver` command line: every pipeline stage as a subcommand.

pub mod config;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tempver_core::augment::{self, AfterRule, ClaimRecord};
use tempver_core::corpus::{self, DocumentStore};
use tempver_core::encoder::{EmbeddingProvider, HashStubProvider, HttpEmbeddingProvider};
use tempver_core::evalkit::Prediction;
use tempver_core::events::{self, EventSet, EventSource};
use tempver_core::model::ModelParams;
use tempver_core::pipeline::{self, Context, ScoredEvent};
use tempver_core::training;
use tempver_core::verdict::{HttpLlmClient, Verifier};

pub use config::PipelineConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Read from the working directory when `--config` is absent.
pub const DEFAULT_CONFIG: &str = "tempver.toml";

#[derive(Debug, Parser)]
#[command(name = "tempver", version, about = "Temporal claim verification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a document collection and report its size
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Write the validated documents, sorted by id
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract events for claims and sentences, merging precomputed SRL output
    ExtractEvents {
        #[command(flatten)]
        common: Common,
        /// Semantic-role records to use instead of pattern extraction
        #[arg(long)]
        srl: Option<PathBuf>,
        #[arg(long, default_value = "events.jsonl")]
        out: PathBuf,
    },
    /// Keep temporal claims and synthesize REFUTES/SUPPORTS variants
    Augment {
        #[command(flatten)]
        common: Common,
        /// Comma-separated rule families: ordering, duration
        #[arg(long, value_delimiter = ',')]
        rules: Option<Vec<String>>,
        #[arg(long)]
        support_ratio: Option<f64>,
        /// Use the literal AFTER rule (earliest evidence date plus offset)
        #[arg(long)]
        literal_after: bool,
        #[arg(long, default_value = "augmented.jsonl")]
        out: PathBuf,
    },
    /// Train the date contextualizer and graph attention parameters
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long, default_value = "model.json")]
        model_out: PathBuf,
        #[arg(long, default_value = "loss.csv")]
        loss_csv: PathBuf,
    },
    /// Rank candidate evidence sentences for every claim event
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "scored.jsonl")]
        out: PathBuf,
    },
    /// Label each claim event from its top-k evidence
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "scored.jsonl")]
        scored: PathBuf,
        #[arg(long, default_value = "verdicts.jsonl")]
        out: PathBuf,
        #[arg(long, default_value = "predictions.jsonl")]
        predictions: PathBuf,
    },
    /// Label accuracy, FEVER score and the per-type breakdown
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "predictions.jsonl")]
        predictions: PathBuf,
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
    },
    /// score, verify and evaluate in one run
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also evaluate every evidence budget 1..=N into k_sweep.csv
        #[arg(long)]
        k_sweep: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file [default: ./tempver.toml if present]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "docs.jsonl")]
    docs: PathBuf,
    #[arg(long, default_value = "claims.jsonl")]
    claims: PathBuf,
    /// Precomputed events; missing entries fall back to pattern extraction
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long)]
    jobs: Option<usize>,
    /// Hash-stub embeddings and the rule-based verifier; no network
    #[arg(long)]
    offline: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    embed_endpoint: Option<String>,
    #[arg(long)]
    llm_endpoint: Option<String>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Trained model file; without it the model is initialized from the seed
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Runs one invocation; `argv[0]` is the program name. Returns the exit code.
pub fn run_subcommand<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            EXIT_DATA
        }
    }
}

fn resolve(common: &Common) -> Result<PipelineConfig, Failure> {
    let discovered = Path::new(DEFAULT_CONFIG);
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::from_file(p).map_err(Failure::Usage)?,
        None if discovered.is_file() => PipelineConfig::from_file(discovered).map_err(Failure::Usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.k {
        cfg.k = v;
    }
    if let Some(v) = common.d {
        cfg.d = v;
    }
    if let Some(v) = common.layers {
        cfg.layers = v;
    }
    if let Some(v) = common.heads {
        cfg.heads = v;
    }
    if let Some(v) = &common.embed_endpoint {
        cfg.embed_endpoint = Some(v.clone());
    }
    if let Some(v) = &common.llm_endpoint {
        cfg.llm_endpoint = Some(v.clone());
    }
    cfg.offline |= common.offline;
    cfg.train.seed = cfg.seed;
    cfg.augment.seed = cfg.seed;
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn dispatch(command: Command) -> Outcome {
    let common = match &command {
        Command::Ingest { common, .. }
        | Command::ExtractEvents { common, .. }
        | Command::Augment { common, .. }
        | Command::Train { common, .. }
        | Command::Score { common, .. }
        | Command::Verify { common, .. }
        | Command::Evaluate { common, .. }
        | Command::Pipeline { common, .. } => common,
    };
    let mut cfg = resolve(common)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = common.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build()?;
    match &command {
        Command::Augment { rules, support_ratio, literal_after, .. } => {
            if let Some(rules) = rules {
                for r in rules {
                    if r != "ordering" && r != "duration" {
                        return Err(Failure::Usage(format!("unknown rule family {r:?}")));
                    }
                }
                cfg.augment.ordering = rules.iter().any(|r| r == "ordering");
                cfg.augment.duration = rules.iter().any(|r| r == "duration");
            }
            if let Some(s) = support_ratio {
                if !(0.0..=1.0).contains(s) {
                    return Err(Failure::Usage("--support-ratio must lie in [0, 1]".into()));
                }
                cfg.augment.support_ratio = *s;
            }
            if *literal_after {
                cfg.augment.after_rule = AfterRule::Literal;
            }
        }
        Command::Train { epochs, batch_size, lr, margin, .. } => {
            if let Some(v) = epochs {
                cfg.train.epochs = *v;
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = *v;
            }
            if let Some(v) = lr {
                cfg.train.learning_rate = *v;
            }
            if let Some(v) = margin {
                cfg.train.margin = *v;
            }
        }
        _ => {}
    }
    pool.install(|| run(&command, common, &cfg))
}

fn header(cfg: &PipelineConfig, stage: &str, common: &Common) -> serde_json::Value {
    json!({
        "tool": "tempver",
        "version": env!("CARGO_PKG_VERSION"),
        "stage": stage,
        "config": cfg,
        "inputs": {
            "docs": common.docs,
            "claims": common.claims,
            "events": common.events,
        },
    })
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_store(common: &Common) -> Result<DocumentStore, Failure> {
    Ok(corpus::ingest_documents(open(&common.docs)?)?)
}

fn load_claims(common: &Common) -> Result<Vec<ClaimRecord>, Failure> {
    Ok(augment::read_claims(open(&common.claims)?)?)
}

fn load_events(common: &Common, store: &DocumentStore, claims: &[ClaimRecord]) -> Result<EventSet, Failure> {
    match &common.events {
        Some(p) => {
            let known: HashSet<String> = claims.iter().map(|c| c.claim_id.clone()).collect();
            Ok(EventSet::from_srl(open(p)?, store, &known)?)
        }
        None => Ok(EventSet::default()),
    }
}

fn provider(cfg: &PipelineConfig) -> Result<Box<dyn EmbeddingProvider>, Failure> {
    match (&cfg.embed_endpoint, cfg.offline) {
        (Some(url), false) => Ok(Box::new(HttpEmbeddingProvider::new(
            url,
            cfg.d,
            Duration::from_secs(cfg.timeout_secs),
            cfg.retries,
        )?)),
        _ => Ok(Box::new(HashStubProvider::new(cfg.d, cfg.seed))),
    }
}

fn load_model(cfg: &PipelineConfig, args: Option<&ModelArgs>) -> Result<ModelParams, Failure> {
    match args.and_then(|a| a.model.as_ref()) {
        Some(p) => {
            let m = ModelParams::load(p)?;
            if m.d != cfg.d {
                return Err(Failure::Usage(format!("model has d = {}, configuration has d = {}", m.d, cfg.d)));
            }
            Ok(m)
        }
        None => Ok(ModelParams::init(cfg.d, cfg.layers, cfg.heads, cfg.seed)?),
    }
}

fn with_verifier<R>(cfg: &PipelineConfig, f: impl FnOnce(&Verifier<'_>) -> Result<R, Failure>) -> Result<R, Failure> {
    if cfg.offline {
        return f(&Verifier::Offline);
    }
    let Some(endpoint) = &cfg.llm_endpoint else {
        return Err(Failure::Usage("no llm_endpoint configured; pass --offline or --llm-endpoint".into()));
    };
    let client = HttpLlmClient::from_env(endpoint, Duration::from_secs(cfg.timeout_secs), cfg.retries)?;
    f(&Verifier::Llm(&client))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn run(command: &Command, common: &Common, cfg: &PipelineConfig) -> Outcome {
    match command {
        Command::Ingest { out, .. } => {
            let store = load_store(common)?;
            println!("{} documents, {} sentences", store.doc_count(), store.sentence_count());
            if let Some(out) = out {
                pipeline::write_jsonl(create(out)?, None, store.documents())?;
            }
            Ok(())
        }
        Command::ExtractEvents { srl, out, .. } => {
            let store = load_store(common)?;
            let claims = load_claims(common)?;
            let known: HashSet<String> = claims.iter().map(|c| c.claim_id.clone()).collect();
            let set = match srl {
                Some(p) => EventSet::from_srl(open(p)?, &store, &known)?,
                None => EventSet::default(),
            };
            let mut records = Vec::new();
            for c in &claims {
                let source = EventSource::Claim { claim_id: c.claim_id.clone() };
                records.push(events::to_srl_record(&source, &set.claim_events(&c.claim_id, &c.text)));
            }
            for r in store.sentence_refs() {
                let text = store.sentence(r).expect("own reference");
                records.push(events::to_srl_record(&EventSource::Evidence(r.clone()), &set.sentence_events(r, text)));
            }
            pipeline::write_jsonl(create(out)?, Some(&header(cfg, "extract-events", common)), &records)?;
            println!("{} records", records.len());
            Ok(())
        }
        Command::Augment { out, .. } => {
            let store = load_store(common)?;
            let claims = load_claims(common)?;
            let set = load_events(common, &store, &claims)?;
            let result = augment::augment_claims(&claims, &store, &set, &cfg.augment)?;
            for (id, reason) in &result.skipped {
                log::warn!("{id}: {reason}");
            }
            pipeline::write_jsonl(create(out)?, Some(&header(cfg, "augment", common)), &result.records)?;
            println!("{} records, {} rule applications skipped", result.records.len(), result.skipped.len());
            Ok(())
        }
        Command::Train { model_out, loss_csv, .. } => {
            let store = load_store(common)?;
            let claims = load_claims(common)?;
            let set = load_events(common, &store, &claims)?;
            let provider = provider(cfg)?;
            let examples = pipeline::prepare_training(&claims, &store, &set, provider.as_ref(), cfg.seed)?;
            let mut init = ModelParams::init(cfg.d, cfg.layers, cfg.heads, cfg.seed)?;
            init.config = serde_json::to_value(cfg)?;
            let outcome = training::train(&examples, &cfg.train, init)?;
            outcome.params.save(model_out)?;
            write_text(loss_csv, &training::loss_csv(&outcome.trace))?;
            println!("{} triplets, best epoch {}", examples.len(), outcome.best_epoch);
            Ok(())
        }
        Command::Score { model, out, .. } => {
            let store = load_store(common)?;
            let claims = load_claims(common)?;
            let set = load_events(common, &store, &claims)?;
            let provider = provider(cfg)?;
            let model = load_model(cfg, Some(model))?;
            let ctx = Context { store: &store, events: &set, provider: provider.as_ref(), model: &model };
            let scored = pipeline::score_claims(ctx, &claims, cfg.k, cfg.candidate_docs)?;
            pipeline::write_jsonl(create(out)?, Some(&header(cfg, "score", common)), &scored)?;
            Ok(())
        }
        Command::Verify { scored, out, predictions, .. } => {
            let store = load_store(common)?;
            let claims = load_claims(common)?;
            let set = load_events(common, &store, &claims)?;
            let scored: Vec<ScoredEvent> = pipeline::read_jsonl(open(scored)?)?;
            let (rows, preds) =
                with_verifier(cfg, |v| Ok(pipeline::verify_claims(&store, &set, &claims, &scored, v, cfg.k)?))?;
            let h = header(cfg, "verify", common);
            pipeline::write_jsonl(create(out)?, Some(&h), &rows)?;
            pipeline::write_jsonl(create(predictions)?, Some(&h), &preds)?;
            Ok(())
        }
        Command::Evaluate { predictions, report, .. } => {
            let claims = load_claims(common)?;
            let set = match &common.events {
                Some(_) => load_events(common, &load_store(common)?, &claims)?,
                None => EventSet::default(),
            };
            let preds: Vec<Prediction> = pipeline::read_jsonl(open(predictions)?)?;
            let r = pipeline::evaluate_predictions(&claims, &set, &preds)?;
            let body = json!({ "header": header(cfg, "evaluate", common), "report": r });
            write_text(report, &format!("{}\n", serde_json::to_string_pretty(&body)?))?;
            print!("{}", r.to_table());
            Ok(())
        }
        Command::Pipeline { model, out_dir, k_sweep, .. } => {
            let store = load_store(common)?;
            let claims = load_claims(common)?;
            let set = load_events(common, &store, &claims)?;
            let provider = provider(cfg)?;
            let model = load_model(cfg, Some(model))?;
            let ctx = Context { store: &store, events: &set, provider: provider.as_ref(), model: &model };
            let depth = cfg.k.max(k_sweep.unwrap_or(0));
            let scored = pipeline::score_claims(ctx, &claims, depth, cfg.candidate_docs)?;
            let top: Vec<ScoredEvent> = scored
                .iter()
                .map(|s| ScoredEvent { ranked: s.ranked.iter().take(cfg.k).cloned().collect(), ..s.clone() })
                .collect();
            let h = header(cfg, "pipeline", common);
            pipeline::write_jsonl(create(&out_dir.join("scored.jsonl"))?, Some(&h), &top)?;
            with_verifier(cfg, |v| {
                let (rows, preds) = pipeline::verify_claims(&store, &set, &claims, &top, v, cfg.k)?;
                pipeline::write_jsonl(create(&out_dir.join("verdicts.jsonl"))?, Some(&h), &rows)?;
                pipeline::write_jsonl(create(&out_dir.join("predictions.jsonl"))?, Some(&h), &preds)?;
                let r = pipeline::evaluate_predictions(&claims, &set, &preds)?;
                let body = json!({ "header": h, "report": r });
                write_text(&out_dir.join("report.json"), &format!("{}\n", serde_json::to_string_pretty(&body)?))?;
                write_text(&out_dir.join("report.txt"), &r.to_table())?;
                print!("{}", r.to_table());
                if let Some(n) = k_sweep {
                    let points = pipeline::k_sweep(&store, &set, &claims, &scored, v, *n)?;
                    write_text(&out_dir.join("k_sweep.csv"), &pipeline::sweep_csv(&points))?;
                }
                Ok(())
            })
        }
    }
}
