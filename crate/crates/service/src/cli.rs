//! The `vaxtract` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use tokio::sync::Mutex;

use vaxtract_core::annotation::{AnnotationStore, SystemClock};
use vaxtract_core::corpus::{generate_synthetic, load_notes, NoteFormat, TemplateSet};
use vaxtract_core::eval::{render_name_table, render_presence_table, report, TableRow};
use vaxtract_core::llm::{self, ChatClient, Decoding, ModelEndpoint};
use vaxtract_core::{rules, Dataset, Lexicon, Prediction};

use crate::api::{router, AppState};
use crate::config::ToolkitConfig;
use crate::mock;

#[derive(Debug, Parser)]
#[command(name = "vaxtract", version, about = "Vaccine mention extraction for ED triage notes")]
pub struct Cli {
    /// TOML config file
    #[arg(long, global = true, env = crate::config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Rules,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, clap::Args)]
pub struct EndpointArgs {
    /// Base URL of an OpenAI-compatible server (overrides the config)
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent with each request
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_parallel: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every note in a file
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        format: Option<FormatArg>,
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        /// Predictions JSONL; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Score predictions against gold labels
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Row name used in the printed tables
        #[arg(long, default_value = "model")]
        name: String,
        /// Write the full report JSON here
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the report JSON instead of tables
        #[arg(long)]
        json: bool,
    },
    /// Enqueue engine proposals for human review
    Prelabel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        format: Option<FormatArg>,
        /// Dataset name; defaults to the file stem
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Write reviewed labels as a chat-format fine-tuning set
    Export {
        #[arg(long)]
        out: PathBuf,
        /// Manifest path; defaults to <out>.manifest.json
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Generate a seeded synthetic corpus
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        /// Fraction of vaccine-present notes
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP API
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Lexicon utilities
    Lexicon {
        #[command(subcommand)]
        action: LexiconCommand,
    },
    /// Serve scripted chat completions for offline runs
    MockServe {
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        replies: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8089")]
        listen: SocketAddr,
    },
}

#[derive(Debug, Subcommand)]
pub enum LexiconCommand {
    /// Validate a lexicon file (the configured or built-in one by default)
    Check {
        #[arg(long)]
        path: Option<PathBuf>,
    },
}

/// Parses argv and runs. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn note_format(path: &Path, flag: Option<FormatArg>) -> NoteFormat {
    match flag {
        Some(FormatArg::Csv) => NoteFormat::Csv,
        Some(FormatArg::Jsonl) => NoteFormat::Jsonl,
        None if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => NoteFormat::Csv,
        None => NoteFormat::Jsonl,
    }
}

pub fn read_dataset(
    path: &Path,
    format: Option<FormatArg>,
    name: Option<&str>,
    lexicon: &Lexicon,
) -> anyhow::Result<Dataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let name = name
        .map(str::to_string)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "notes".to_string());
    load_notes(BufReader::new(file), note_format(path, format), &name, lexicon)
        .with_context(|| format!("loading {}", path.display()))
}

fn read_predictions(path: &Path) -> anyhow::Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn write_output(out: Option<&Path>, body: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(body.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn endpoint_for(cfg: &ToolkitConfig, args: &EndpointArgs) -> Option<ModelEndpoint> {
    let mut ep = match (&cfg.endpoint, &args.endpoint) {
        (_, Some(url)) => ModelEndpoint {
            base_url: url.clone(),
            ..cfg.endpoint.clone().unwrap_or_default()
        },
        (Some(e), None) => e.clone(),
        (None, None) => return None,
    };
    if let Some(m) = &args.model {
        ep.model_name = m.clone();
    }
    if let Some(p) = args.max_parallel {
        ep.max_parallel_requests = p;
    }
    Some(ep)
}

fn pick_engine(flag: Option<EngineArg>, endpoint: &Option<ModelEndpoint>) -> EngineArg {
    flag.unwrap_or(if endpoint.is_some() {
        EngineArg::Llm
    } else {
        EngineArg::Rules
    })
}

fn llm_client(endpoint: Option<ModelEndpoint>) -> anyhow::Result<(ChatClient, Decoding)> {
    let Some(ep) = endpoint else {
        bail!("the llm engine needs a model endpoint (config [endpoint] or --endpoint)");
    };
    let decoding = Decoding::for_model(ep.model_name.clone());
    Ok((ChatClient::new(ep)?, decoding))
}

pub async fn predict(
    dataset: &Dataset,
    engine: EngineArg,
    endpoint: Option<ModelEndpoint>,
    cfg: &ToolkitConfig,
    lexicon: &Lexicon,
) -> anyhow::Result<Vec<Prediction>> {
    Ok(match engine {
        EngineArg::Rules => dataset
            .notes
            .iter()
            .map(|n| Prediction {
                id: n.id.clone(),
                result: rules::extract(n, lexicon, &cfg.rules),
            })
            .collect(),
        EngineArg::Llm => {
            let (client, decoding) = llm_client(endpoint)?;
            let parallel = client.endpoint().max_parallel_requests;
            llm::extract_batch(&dataset.notes, &client, lexicon, &decoding, parallel).await
        }
    })
}

fn to_jsonl<T: serde::Serialize>(items: &[T]) -> anyhow::Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

fn open_store(cfg: &ToolkitConfig, flag: Option<PathBuf>) -> anyhow::Result<AnnotationStore> {
    let dir = flag.unwrap_or_else(|| cfg.store_path.clone());
    AnnotationStore::open(&dir, cfg.store.clone(), Arc::new(SystemClock))
        .with_context(|| format!("opening annotation store {}", dir.display()))
}

async fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let cfg = ToolkitConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Lexicon {
            action: LexiconCommand::Check { path },
        } => {
            let lex = match path {
                Some(p) => {
                    let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                    Lexicon::from_reader(f).with_context(|| format!("invalid lexicon {}", p.display()))?
                }
                None => cfg.load_lexicon()?,
            };
            let mut out = format!("lexicon {} ok\n", lex.version());
            for (kind, n) in lex.summary() {
                out.push_str(&format!("  {kind}: {n}\n"));
            }
            write_output(None, &out)
        }
        Command::Synth {
            seed,
            n,
            fraction,
            templates,
            out,
        } => {
            let lex = cfg.load_lexicon()?;
            let templates = match templates {
                Some(p) => TemplateSet::from_json_str(&std::fs::read_to_string(&p)?)?,
                None => TemplateSet::builtin(),
            };
            let ds = generate_synthetic(seed, n, fraction, &templates, &lex)?;
            write_output(out.as_deref(), &ds.to_jsonl())
        }
        Command::Extract {
            input,
            format,
            engine,
            out,
            endpoint,
        } => {
            let lex = cfg.load_lexicon()?;
            let ds = read_dataset(&input, format, None, &lex)?;
            let ep = endpoint_for(&cfg, &endpoint);
            let preds = predict(&ds, pick_engine(engine, &ep), ep, &cfg, &lex).await?;
            let failed = preds.iter().filter(|p| p.result.error.is_some()).count();
            if failed > 0 {
                eprintln!(
                    "warning: {failed} of {} notes failed at the endpoint and were labelled No",
                    preds.len()
                );
            }
            write_output(out.as_deref(), &to_jsonl(&preds)?)
        }
        Command::Eval {
            pred,
            gold,
            name,
            out,
            json,
        } => {
            let lex = cfg.load_lexicon()?;
            let golds = read_dataset(&gold, None, None, &lex)?;
            let preds = read_predictions(&pred)?;
            let r = report(&preds, &golds, &lex)?;
            let report_json = serde_json::to_string_pretty(&r)?;
            if let Some(p) = &out {
                std::fs::write(p, &report_json).with_context(|| format!("writing {}", p.display()))?;
            }
            if json {
                return write_output(None, &format!("{report_json}\n"));
            }
            let m = r.metrics();
            let rows = [TableRow::from_report(name, &r)];
            let mut text = format!(
                "P {} R {} F1 {}\n\n{}\n{}\nexact match {}/{} ({})\n",
                m.precision.rounded(2),
                m.recall.rounded(2),
                m.f1.rounded(2),
                render_presence_table(&rows),
                render_name_table(&rows),
                r.exact_match.correct,
                r.exact_match.total,
                r.exact_match.ratio().percent(1)
            );
            if r.unscored_golds > 0 {
                text.push_str(&format!("{} gold notes had no prediction\n", r.unscored_golds));
            }
            write_output(None, &text)
        }
        Command::Prelabel {
            input,
            format,
            dataset,
            engine,
            store,
            endpoint,
        } => {
            let lex = cfg.load_lexicon()?;
            let ds = read_dataset(&input, format, dataset.as_deref(), &lex)?;
            let mut store = open_store(&cfg, store)?;
            let ep = endpoint_for(&cfg, &endpoint);
            let added = match pick_engine(engine, &ep) {
                EngineArg::Rules => store.prelabel_rules(&ds, &lex, &cfg.rules)?,
                EngineArg::Llm => {
                    let (client, decoding) = llm_client(ep)?;
                    let parallel = client.endpoint().max_parallel_requests;
                    store.prelabel_llm(&ds, &client, &lex, &decoding, parallel).await?
                }
            };
            store.snapshot()?;
            write_output(
                None,
                &format!("enqueued {added} of {} notes from {}\n", ds.len(), ds.name),
            )
        }
        Command::Export { out, manifest, store } => {
            let lex = cfg.load_lexicon()?;
            let store = open_store(&cfg, store)?;
            let export = store.export(lex.version())?;
            std::fs::write(&out, &export.jsonl).with_context(|| format!("writing {}", out.display()))?;
            let manifest_path = manifest.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".manifest.json");
                PathBuf::from(s)
            });
            std::fs::write(&manifest_path, serde_json::to_string_pretty(&export.manifest)?)?;
            write_output(
                None,
                &format!("exported {} examples to {}\n", export.manifest.examples, out.display()),
            )
        }
        Command::Serve { listen } => {
            let mut cfg = cfg;
            if let Some(l) = listen {
                cfg.listen = l;
            }
            serve(cfg).await
        }
        Command::MockServe { notes, replies, listen } => {
            let lex = cfg.load_lexicon()?;
            let ds = read_dataset(&notes, None, None, &lex)?;
            let server = mock::spawn(&ds, mock::load_replies(&replies)?, listen).await?;
            println!("mock endpoint listening on {}", server.base_url());
            tokio::select! {
                _ = shutdown_signal() => {}
                _ = server.wait() => {}
            }
            Ok(())
        }
    }
}

pub fn app_state(cfg: &ToolkitConfig, store: AnnotationStore) -> anyhow::Result<AppState> {
    let lexicon = cfg.load_lexicon()?;
    let (llm, decoding) = match &cfg.endpoint {
        Some(ep) => (
            Some(Arc::new(ChatClient::new(ep.clone())?)),
            Decoding::for_model(ep.model_name.clone()),
        ),
        None => (None, Decoding::default()),
    };
    Ok(AppState {
        lexicon: Arc::new(lexicon),
        rules: cfg.rules.clone(),
        llm,
        decoding,
        store: Arc::new(Mutex::new(store)),
        api_token: cfg.api_token.clone(),
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

pub async fn serve(cfg: ToolkitConfig) -> anyhow::Result<()> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    cfg.validate()?;
    let addr = cfg.listen_addr()?;
    let store = open_store(&cfg, None)?;
    let state = app_state(&cfg, store)?;
    let store_handle = state.store.clone();
    let app = router(state, cfg.ui_assets.as_deref());
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    store_handle.lock().await.snapshot()?;
    tracing::info!("stopped");
    Ok(())
}
