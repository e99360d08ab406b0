//! Command-line verbs and the HTTP review service over `taxo-core`.

pub mod commands;
pub mod data;
pub mod server;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use taxo_core::service::{Clock, PromptSet, DEFAULT_BUDGET_MS};

use commands::*;

#[derive(Debug, Parser)]
#[command(name = "taxo", version, about = "Taxonomy expansion: train, evaluate and serve parent rankers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Every verb takes `--config FILE` (TOML, same keys as the flags).
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic taxonomy and matching node vectors.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: SynthOpts,
    },
    /// Split child-parent pairs into train / validation / test.
    Split {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: SplitOpts,
    },
    /// Train the score function (or the classifier baseline).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// MRR, R@1, MND and MND-I for each method.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: EvalOpts,
    },
    /// In-sample distance check and the high-probability bound.
    Bound {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: BoundOpts,
    },
    /// Top-k parents for a label or free text.
    Rank {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: RankOpts,
    },
    /// Generate a decision-support prompt set.
    Prompts {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: PromptsOpts,
    },
    /// Run the HTTP review service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: ServeOpts,
    },
    /// Embed newly attached nodes and rebuild the distance index.
    Reindex {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: ReindexOpts,
    },
    /// Replay decision logs into session metrics.
    SessionMetrics {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: SessionMetricsOpts,
    },
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeOpts {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub words: Option<PathBuf>,
    /// Prompt-set files; sessions of a condition use the matching set.
    #[arg(long = "prompts")]
    pub prompts: Option<Vec<PathBuf>>,
    /// Directory for per-session decision logs.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Listen address, default 127.0.0.1:8080.
    #[arg(long)]
    pub addr: Option<String>,
    /// Per-session time budget in milliseconds.
    #[arg(long)]
    pub budget_ms: Option<u64>,
    /// Radius advertised in neighborhood handles.
    #[arg(long)]
    pub handle_radius: Option<u32>,
}

impl ServeOpts {
    pub fn resolve(config: Option<&Path>, flags: ServeOpts) -> Result<ServeOpts> {
        let mut o: ServeOpts = read_config(config)?;
        macro_rules! take {
            ($($f:ident),+) => { $(if flags.$f.is_some() { o.$f = flags.$f; })+ };
        }
        take!(graph, embeddings, checkpoint, words, prompts, log_dir, addr, budget_ms, handle_radius);
        Ok(o)
    }
}

/// Load every artifact named in `o` into a ready-to-serve state.
pub fn build_state(o: &ServeOpts, clock: Arc<dyn Clock>) -> Result<server::AppState> {
    let graph = o.graph.as_deref().context("missing `graph`")?;
    let embeddings = o.embeddings.as_deref().context("missing `embeddings`")?;
    let checkpoint = o.checkpoint.as_deref().context("missing `checkpoint`")?;
    let mut ws = open_workspace(graph, embeddings, checkpoint, o.words.as_deref())?;
    if let Some(h) = o.handle_radius {
        ws.handle_radius = h;
    }
    let mut state = server::AppState::new(ws, clock).with_budget_ms(o.budget_ms.unwrap_or(DEFAULT_BUDGET_MS));
    for p in o.prompts.iter().flatten() {
        let set = PromptSet::from_jsonl(&data::read(p)?).with_context(|| format!("loading {}", p.display()))?;
        state = state.with_prompt_set(set);
    }
    if let Some(dir) = &o.log_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        state = state.with_log_dir(dir.clone());
    }
    Ok(state)
}

/// Run a verb other than `serve`, returning what it prints.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Synth { config, opts } => synth(config.as_deref(), opts),
        Command::Split { config, opts } => split(config.as_deref(), opts),
        Command::Train { config, opts } => train(config.as_deref(), opts),
        Command::Eval { config, opts } => eval(config.as_deref(), opts),
        Command::Bound { config, opts } => bound(config.as_deref(), opts),
        Command::Rank { config, opts } => rank(config.as_deref(), opts),
        Command::Prompts { config, opts } => prompts(config.as_deref(), opts),
        Command::Reindex { config, opts } => reindex(config.as_deref(), opts),
        Command::SessionMetrics { config, opts } => session_metrics_cmd(config.as_deref(), opts),
        Command::Serve { .. } => anyhow::bail!("`serve` runs an event loop; use `serve`"),
    }
}

pub async fn serve(o: ServeOpts, clock: Arc<dyn Clock>) -> Result<()> {
    let state = Arc::new(build_state(&o, clock)?);
    let addr = o.addr.unwrap_or_else(|| "127.0.0.1:8080".into());
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "serving");
    axum::serve(listener, server::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
