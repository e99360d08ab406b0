//! Loading the on-disk artifacts the verbs share.

use std::path::Path;

use anyhow::{bail, Context, Result};

use taxo_core::baselines::FfnnParams;
use taxo_core::checkpoint::{self, Checkpoint, ModelKind};
use taxo_core::{EmbeddingStore, KnowledgeGraph, ScoreParams, SplitAssignment, WordVectorTable};

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Edge list plus the dummy root.
pub fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    let g = KnowledgeGraph::parse(&read(path)?)
        .and_then(KnowledgeGraph::add_dummy_root)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(g)
}

/// Number of values on the first data line of a vector file.
pub fn vector_dim(text: &str) -> Option<usize> {
    text.lines()
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .and_then(|l| l.split_once('\t'))
        .map(|(_, v)| v.split_whitespace().count())
}

pub fn load_embeddings(path: &Path, g: &KnowledgeGraph) -> Result<EmbeddingStore<f32>> {
    let text = read(path)?;
    let dim = vector_dim(&text).with_context(|| format!("{} has no vectors", path.display()))?;
    EmbeddingStore::load(&text, g, dim).with_context(|| format!("loading {}", path.display()))
}

/// Word vectors for free-text queries; without a file every token falls
/// back to its hashed vector.
pub fn load_words(path: Option<&Path>, dim: usize) -> Result<WordVectorTable> {
    match path {
        None => Ok(WordVectorTable::new(dim)),
        Some(p) => WordVectorTable::load(&read(p)?, dim)
            .with_context(|| format!("loading {}", p.display())),
    }
}

pub fn load_split(path: &Path, g: &KnowledgeGraph) -> Result<SplitAssignment> {
    SplitAssignment::from_text(&read(path)?, g)
        .with_context(|| format!("loading {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

/// Score parameters; trained parent copies, when the checkpoint has them,
/// overwrite the matching rows of `store`.
pub fn load_score(
    path: &Path,
    g: &KnowledgeGraph,
    store: &mut EmbeddingStore<f32>,
) -> Result<ScoreParams<f32>> {
    let (params, parents) = checkpoint::load_score(&load_checkpoint(path)?)?;
    if params.dim != store.dim() {
        bail!(
            "checkpoint dimension {} does not match embeddings ({})",
            params.dim,
            store.dim()
        );
    }
    if let Some(table) = parents {
        table.apply(g, store)?;
    }
    Ok(params)
}

pub fn load_ffnn(path: &Path) -> Result<FfnnParams> {
    let ck = load_checkpoint(path)?;
    let net = checkpoint::load_mlp(&ck, ModelKind::Ffnn)?;
    Ok(FfnnParams {
        dim: ck.header.dim,
        net,
        seed: ck.header.seed,
    })
}
