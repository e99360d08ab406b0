//! The verbs. Each reads an optional TOML file with the same keys as its
//! flags; flags win over the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use taxo_core::baselines::{ffnn_train, FfnnConfig, FfnnRanker, JaccardRanker, RandomGuess};
use taxo_core::checkpoint::{save_mlp, save_score, ModelKind};
use taxo_core::embed::synth_embeddings;
use taxo_core::graph::{split_dataset, SplitConfig};
use taxo_core::metrics::{self, bound_report, render_table, MethodReport, ModelRanker, Ranker};
use taxo_core::optim::OptimizerKind;
use taxo_core::rng::sha256_hex;
use taxo_core::service::{
    generate_model_prompts, generate_prompts, session_metrics, Condition, DecisionLog,
    PromptConfig, PromptSet, Workspace,
};
use taxo_core::training::{self, NegativeTable, RunManifest};
use taxo_core::{synth, DistanceMatrix, EmbeddingStore, NodeId, SplitAssignment, TrainConfig};

use crate::data;

/// Read `path` as TOML, or defaults when absent.
pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&data::read(p)?).with_context(|| format!("parsing {}", p.display())),
    }
}

fn need<T>(v: Option<T>, key: &str) -> Result<T> {
    v.with_context(|| {
        format!(
            "missing `{key}`: set it in the config file or pass --{}",
            key.replace('_', "-")
        )
    })
}

/// Fields set in `$top` replace those in `$base`.
macro_rules! overlay {
    ($base:expr, $top:expr; $($f:ident),+ $(,)?) => {{
        let mut b = $base;
        let t = $top;
        $(if t.$f.is_some() { b.$f = t.$f; })+
        b
    }};
}


// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOpts {
    /// Children per node at each level of a balanced tree, e.g. 4,4,4.
    #[arg(long, value_delimiter = ',')]
    pub branching: Option<Vec<usize>>,
    /// Node count of a random forest (used when no branching is given).
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub roots: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_graph: Option<PathBuf>,
    #[arg(long)]
    pub out_embeddings: Option<PathBuf>,
}

pub fn synth(config: Option<&Path>, flags: SynthOpts) -> Result<String> {
    let o = overlay!(read_config::<SynthOpts>(config)?, flags;
        branching, nodes, roots, dim, noise, seed, out_graph, out_embeddings);
    let seed = o.seed.unwrap_or(0);
    let g = match (&o.branching, o.nodes) {
        (Some(b), _) => synth::balanced_tree(b),
        (None, Some(n)) => synth::random_forest(n, o.roots.unwrap_or(1), seed),
        (None, None) => bail!("set either `branching` or `nodes`"),
    };
    let store = synth_embeddings(&g, o.dim.unwrap_or(64), o.noise.unwrap_or(0.1), seed)?;
    let graph_path = need(o.out_graph, "out_graph")?;
    let emb_path = need(o.out_embeddings, "out_embeddings")?;
    data::write(&graph_path, g.to_edge_list())?;
    data::write(&emb_path, store.to_text(&g))?;
    Ok(format!(
        "wrote {} nodes to {} and {}-dim vectors to {}\n",
        g.len() - 1,
        graph_path.display(),
        store.dim(),
        emb_path.display()
    ))
}

// ---------------------------------------------------------------- split

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOpts {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn split(config: Option<&Path>, flags: SplitOpts) -> Result<String> {
    let o = overlay!(read_config::<SplitOpts>(config)?, flags;
        graph, test_frac, train_frac, seed, out);
    let g = data::load_graph(&need(o.graph, "graph")?)?;
    let d = SplitConfig::default();
    let cfg = SplitConfig {
        test_frac: o.test_frac.unwrap_or(d.test_frac),
        train_frac: o.train_frac.unwrap_or(d.train_frac),
        seed: o.seed.unwrap_or(d.seed),
    };
    let s = split_dataset(&g, &cfg)?;
    let out = need(o.out, "out")?;
    data::write(&out, s.to_text(&g))?;
    Ok(format!(
        "train {} / validation {} / test {} -> {}\n",
        s.train.len(),
        s.validation.len(),
        s.test.len(),
        out.display()
    ))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// The graph-aware score function.
    #[default]
    Proposed,
    /// Feedforward binary classifier baseline.
    Ffnn,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOpts {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run manifest to write (default: checkpoint path + `.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long, value_delimiter = ',')]
    pub hidden_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub negatives_per_child: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub resample_negatives: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub include_validation_negatives: Option<bool>,
}

impl TrainOpts {
    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            k: self.k.unwrap_or(d.k),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            optimizer: self.optimizer.unwrap_or(d.optimizer),
            hidden_sizes: self.hidden_sizes.clone().unwrap_or(d.hidden_sizes),
            negatives_per_child: self.negatives_per_child.unwrap_or(d.negatives_per_child),
            patience: self.patience.unwrap_or(d.patience),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            seed: self.seed.unwrap_or(d.seed),
            resample_negatives: self.resample_negatives.unwrap_or(d.resample_negatives),
            include_validation_negatives: self
                .include_validation_negatives
                .unwrap_or(d.include_validation_negatives),
        }
    }

    /// The baseline keeps its own defaults for fields left unset.
    pub fn ffnn_config(&self) -> FfnnConfig {
        let d = FfnnConfig::default();
        FfnnConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            optimizer: self.optimizer.unwrap_or(d.optimizer),
            hidden_sizes: self.hidden_sizes.clone().unwrap_or(d.hidden_sizes),
            patience: self.patience.unwrap_or(d.patience),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Serialize)]
struct FfnnManifest<'a> {
    method: Method,
    config: &'a FfnnConfig,
    negatives: &'a TrainConfig,
    prng: &'static str,
    digests: BTreeMap<String, String>,
    epochs: &'a [training::EpochRecord],
    best_epoch: usize,
    best_validation_mrr: Option<f64>,
}

pub fn train(config: Option<&Path>, flags: TrainOpts) -> Result<String> {
    let o = overlay!(read_config::<TrainOpts>(config)?, flags;
        graph, embeddings, split, out, manifest, method, k, batch_size, learning_rate,
        weight_decay, optimizer, hidden_sizes, negatives_per_child, patience, max_epochs,
        seed, resample_negatives, include_validation_negatives);
    let graph_path = need(o.graph.clone(), "graph")?;
    let emb_path = need(o.embeddings.clone(), "embeddings")?;
    let split_path = need(o.split.clone(), "split")?;
    let out = need(o.out.clone(), "out")?;
    let manifest_path = o.manifest.clone().unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".manifest.json");
        PathBuf::from(p)
    });

    let g = data::load_graph(&graph_path)?;
    let store = data::load_embeddings(&emb_path, &g)?;
    let split = data::load_split(&split_path, &g)?;
    let dm = DistanceMatrix::compute(&g)?;
    let cfg = o.train_config();

    let mut digests = BTreeMap::new();
    for (name, path) in [("graph", &graph_path), ("embeddings", &emb_path), ("split", &split_path)] {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        digests.insert(name.to_string(), sha256_hex(&bytes));
    }

    let (bytes, manifest, summary) = match o.method.unwrap_or_default() {
        Method::Proposed => {
            let state = training::train(&g, &split, &store, &dm, &cfg)?;
            let bytes = save_score(&state.params, Some((&g, &state.store)), Some(&state.optimizer))
                .to_bytes();
            digests.insert("checkpoint".into(), sha256_hex(&bytes));
            let summary = format!(
                "{} epochs, best epoch {} (validation MRR {})",
                state.epoch,
                state.best_epoch,
                fmt_opt(state.best_validation_mrr)
            );
            (bytes, RunManifest::new(&cfg, &state, digests).to_json(), summary)
        }
        Method::Ffnn => {
            let fcfg = o.ffnn_config();
            let negatives = NegativeTable::for_run(&g, &split, &cfg, 0)?;
            let state = ffnn_train(&g, &split, &store, &dm, &negatives, &fcfg)?;
            let bytes = save_mlp(
                ModelKind::Ffnn,
                store.dim(),
                fcfg.seed,
                &state.params.net,
                Some(&state.optimizer),
            )
            .to_bytes();
            digests.insert("checkpoint".into(), sha256_hex(&bytes));
            let m = FfnnManifest {
                method: Method::Ffnn,
                config: &fcfg,
                negatives: &cfg,
                prng: taxo_core::rng::PRNG_NAME,
                digests,
                epochs: &state.history,
                best_epoch: state.best_epoch,
                best_validation_mrr: state.best_validation_mrr,
            };
            let summary = format!(
                "{} epochs, best epoch {} (validation MRR {})",
                state.epoch,
                state.best_epoch,
                fmt_opt(state.best_validation_mrr)
            );
            (bytes, serde_json::to_string_pretty(&m)? + "\n", summary)
        }
    };
    data::write(&out, bytes)?;
    data::write(&manifest_path, manifest)?;
    Ok(format!(
        "{summary}; checkpoint {} manifest {}\n",
        out.display(),
        manifest_path.display()
    ))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalSet {
    #[default]
    Test,
    Validation,
    Train,
}

impl EvalSet {
    fn pairs(self, s: &SplitAssignment) -> &[(NodeId, NodeId)] {
        match self {
            EvalSet::Test => &s.test,
            EvalSet::Validation => &s.validation,
            EvalSet::Train => &s.train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Proposed,
    Random,
    Jaccard,
    Ffnn,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOpts {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Score-function checkpoint (needed for `proposed`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Classifier checkpoint (needed for `ffnn`).
    #[arg(long)]
    pub ffnn_checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub set: Option<EvalSet>,
    /// Methods to report; defaults to every method whose inputs are present.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<Baseline>>,
    /// Seed of the random baseline.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub json: Option<bool>,
}

pub fn eval(config: Option<&Path>, flags: EvalOpts) -> Result<String> {
    let o = overlay!(read_config::<EvalOpts>(config)?, flags;
        graph, embeddings, split, checkpoint, ffnn_checkpoint, set, methods, seed, json);
    let g = data::load_graph(&need(o.graph, "graph")?)?;
    let split = data::load_split(&need(o.split, "split")?, &g)?;
    let dm = DistanceMatrix::compute(&g)?;
    let pairs = o.set.unwrap_or_default().pairs(&split);
    let candidates = split.candidates(&g);
    let methods = o.methods.unwrap_or_else(|| {
        let mut m = Vec::new();
        if o.checkpoint.is_some() {
            m.push(Baseline::Proposed);
        }
        if o.ffnn_checkpoint.is_some() {
            m.push(Baseline::Ffnn);
        }
        m.extend([Baseline::Jaccard, Baseline::Random]);
        m
    });
    let needs_store = methods
        .iter()
        .any(|m| matches!(m, Baseline::Proposed | Baseline::Ffnn));
    let raw_store = match (needs_store, &o.embeddings) {
        (false, _) => None,
        (true, Some(p)) => Some(data::load_embeddings(p, &g)?),
        (true, None) => bail!("missing `embeddings`: needed by the proposed and ffnn methods"),
    };

    let mut rows = Vec::new();
    for m in methods {
        let report = match m {
            Baseline::Proposed => {
                let mut store = raw_store.clone().expect("loaded above");
                let ck = need(o.checkpoint.clone(), "checkpoint")?;
                let params = data::load_score(&ck, &g, &mut store)?;
                let ranker = ModelRanker::new(&params, &store)?;
                metrics::evaluate(&ranker, pairs, &candidates, &dm)?
            }
            Baseline::Ffnn => {
                let store = raw_store.as_ref().expect("loaded above");
                let params = data::load_ffnn(&need(o.ffnn_checkpoint.clone(), "ffnn_checkpoint")?)?;
                let ranker = FfnnRanker {
                    params: &params,
                    store,
                };
                metrics::evaluate(&ranker, pairs, &candidates, &dm)?
            }
            Baseline::Jaccard => metrics::evaluate(&JaccardRanker { graph: &g }, pairs, &candidates, &dm)?,
            Baseline::Random => {
                let ranker = RandomGuess {
                    seed: o.seed.unwrap_or(0),
                };
                metrics::evaluate(&ranker, pairs, &candidates, &dm)?
            }
        };
        rows.push(MethodReport {
            method: method_name(m).into(),
            report,
        });
    }
    if o.json.unwrap_or(false) {
        Ok(serde_json::to_string_pretty(&rows)? + "\n")
    } else {
        Ok(render_table(&rows))
    }
}

fn method_name(m: Baseline) -> &'static str {
    match m {
        Baseline::Proposed => "Proposed",
        Baseline::Random => "Random Guess",
        Baseline::Jaccard => "Jaccard",
        Baseline::Ffnn => "FFNN",
    }
}

// ---------------------------------------------------------------- bound

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundOpts {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Failure probability of the high-probability bound.
    #[arg(long)]
    pub delta: Option<f64>,
}

pub fn bound(config: Option<&Path>, flags: BoundOpts) -> Result<String> {
    let o = overlay!(read_config::<BoundOpts>(config)?, flags;
        graph, embeddings, split, checkpoint, delta);
    let g = data::load_graph(&need(o.graph, "graph")?)?;
    let mut store = data::load_embeddings(&need(o.embeddings, "embeddings")?, &g)?;
    let split = data::load_split(&need(o.split, "split")?, &g)?;
    let params = data::load_score(&need(o.checkpoint, "checkpoint")?, &g, &mut store)?;
    let dm = DistanceMatrix::compute(&g)?;
    let report = bound_report(&g, &split.train, &params, &store, &dm, o.delta.unwrap_or(0.05))?;
    Ok(serde_json::to_string_pretty(&report)? + "\n")
}

// ---------------------------------------------------------------- rank

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankOpts {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Word vectors for free-text queries.
    #[arg(long)]
    pub words: Option<PathBuf>,
    /// A node label or free text.
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
}

pub fn rank(config: Option<&Path>, flags: RankOpts) -> Result<String> {
    let o = overlay!(read_config::<RankOpts>(config)?, flags;
        graph, embeddings, checkpoint, words, query, k);
    let ws = open_workspace(
        &need(o.graph, "graph")?,
        &need(o.embeddings, "embeddings")?,
        &need(o.checkpoint, "checkpoint")?,
        o.words.as_deref(),
    )?;
    let p = ws.predict(&need(o.query, "query")?, o.k.unwrap_or(5))?;
    let mut out = String::new();
    for c in &p.candidates {
        out.push_str(&format!("{}\t{}\t{:.6}\n", c.rank, c.label, c.score));
    }
    Ok(out)
}

/// A workspace over the given artifacts, with trained parent copies applied.
pub fn open_workspace(
    graph: &Path,
    embeddings: &Path,
    checkpoint: &Path,
    words: Option<&Path>,
) -> Result<Workspace> {
    let g = data::load_graph(graph)?;
    let mut store = data::load_embeddings(embeddings, &g)?;
    let params = data::load_score(checkpoint, &g, &mut store)?;
    let words = data::load_words(words, store.dim())?;
    Ok(Workspace::new(graph, g, store, params, words)?)
}

// ---------------------------------------------------------------- prompts

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsOpts {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Which split supplies the queries.
    #[arg(long, value_enum)]
    pub set: Option<EvalSet>,
    /// HF, NHF or MODEL.
    #[arg(long)]
    pub condition: Option<Condition>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frac_correct: Option<f64>,
    /// Overrides the condition's error distance.
    #[arg(long)]
    pub error_distance: Option<u32>,
    /// Keep only the first N queries of the set (after sorting by id).
    #[arg(long)]
    pub limit: Option<usize>,
    /// MODEL condition only.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// MODEL condition only.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn prompts(config: Option<&Path>, flags: PromptsOpts) -> Result<String> {
    let o = overlay!(read_config::<PromptsOpts>(config)?, flags;
        graph, split, set, condition, seed, frac_correct, error_distance, limit, embeddings,
        checkpoint, out);
    let g = data::load_graph(&need(o.graph, "graph")?)?;
    let split = data::load_split(&need(o.split, "split")?, &g)?;
    let mut pairs = o.set.unwrap_or_default().pairs(&split).to_vec();
    if let Some(n) = o.limit {
        pairs.truncate(n);
    }
    let condition = need(o.condition, "condition")?;
    let seed = o.seed.unwrap_or(0);
    let cfg = PromptConfig {
        condition,
        frac_correct: o.frac_correct.unwrap_or(0.5),
        seed,
        error_distance: o.error_distance,
    };
    let prompts = match condition {
        Condition::Model => {
            let mut store = data::load_embeddings(&need(o.embeddings, "embeddings")?, &g)?;
            let params = data::load_score(&need(o.checkpoint, "checkpoint")?, &g, &mut store)?;
            let ranker = ModelRanker::new(&params, &store)?;
            generate_model_prompts(&g, &pairs, &ranker as &dyn Ranker, &split.candidates(&g), seed)?
        }
        _ => generate_prompts(&g, &pairs, &cfg)?,
    };
    let set = PromptSet::new(&cfg, prompts);
    let out = need(o.out, "out")?;
    data::write(&out, set.to_jsonl())?;
    let correct = set.prompts.iter().filter(|p| p.support_correct).count();
    Ok(format!(
        "{} prompts ({correct} with the true parent preselected) -> {}\n",
        set.prompts.len(),
        out.display()
    ))
}

// ---------------------------------------------------------------- reindex

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReindexOpts {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub words: Option<PathBuf>,
    /// Where to write the completed embedding file (default: in place).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct ReindexReport {
    pub nodes: usize,
    pub embedded: Vec<String>,
    pub diameter: u32,
    pub mean_distance: f64,
}

/// Embed nodes that joined the edge list after the embedding file was
/// written, rebuild the distance index and write the completed vectors.
pub fn reindex(config: Option<&Path>, flags: ReindexOpts) -> Result<String> {
    let o = overlay!(read_config::<ReindexOpts>(config)?, flags; graph, embeddings, words, out);
    let g = data::load_graph(&need(o.graph, "graph")?)?;
    let emb_path = need(o.embeddings, "embeddings")?;
    let text = data::read(&emb_path)?;
    let dim = data::vector_dim(&text).context("embedding file has no vectors")?;
    let words = data::load_words(o.words.as_deref(), dim)?;
    let (store, filled) = EmbeddingStore::load_or_embed(&text, &g, dim, &words)?;
    let dm = DistanceMatrix::compute(&g)?;
    let out = o.out.unwrap_or(emb_path);
    let tmp = out.with_extension("tmp");
    data::write(&tmp, store.to_text(&g))?;
    std::fs::rename(&tmp, &out).with_context(|| format!("replacing {}", out.display()))?;
    let report = ReindexReport {
        nodes: g.len() - 1,
        embedded: filled.iter().map(|&n| g.label(n).to_string()).collect(),
        diameter: dm.diameter(),
        mean_distance: dm.mean_distance(g.dummy_root()),
    };
    Ok(serde_json::to_string_pretty(&report)? + "\n")
}

// ---------------------------------------------------------------- session-metrics

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionMetricsOpts {
    /// Decision-log files or directories of them.
    #[arg(long = "log")]
    pub logs: Option<Vec<PathBuf>>,
}

#[derive(Debug, Serialize)]
struct SessionExport {
    session_id: String,
    metrics: taxo_core::service::SessionMetrics,
}

pub fn session_metrics_cmd(config: Option<&Path>, flags: SessionMetricsOpts) -> Result<String> {
    let o = overlay!(read_config::<SessionMetricsOpts>(config)?, flags; logs);
    let mut files = Vec::new();
    for p in need(o.logs, "log")? {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(&p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p);
        }
    }
    let mut out = Vec::new();
    for f in files {
        let records = DecisionLog::replay(&f)?;
        let metrics = session_metrics(&records).with_context(|| format!("{}", f.display()))?;
        out.push(SessionExport {
            session_id: records[0].session_id.clone(),
            metrics,
        });
    }
    Ok(serde_json::to_string_pretty(&out)? + "\n")
}
