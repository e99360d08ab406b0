use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{phrase_embedding, EmbeddingStore, WordVectorTable};
use crate::error::{Error, Result};
use crate::graph::{DistanceMatrix, KnowledgeGraph, NodeId};
use crate::metrics::order_by_scores;
use crate::scoring::{ScoreParams, Scorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodHandle {
    pub center: NodeId,
    pub h: u32,
    /// Relative URL of the neighborhood endpoint.
    pub href: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub rank: usize,
    pub id: NodeId,
    pub label: String,
    pub score: f64,
    pub neighborhood: NeighborhoodHandle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub label: String,
    /// Number of children, whether or not they are expanded below.
    pub child_count: usize,
    pub children: Vec<TreeNode>,
}

/// A served taxonomy: graph file, embeddings, trained score function and
/// the distance index. Attached nodes become candidates and gain distance
/// rows only after [`Workspace::reindex`].
pub struct Workspace {
    graph_path: PathBuf,
    graph: KnowledgeGraph,
    dm: DistanceMatrix,
    store: EmbeddingStore<f32>,
    params: ScoreParams<f32>,
    words: WordVectorTable,
    candidates: Vec<NodeId>,
    pending: Vec<NodeId>,
    /// Radius advertised in neighborhood handles.
    pub handle_radius: u32,
}

impl Workspace {
    /// `graph` must carry its dummy root and match `store` row for row.
    pub fn new(
        graph_path: &Path,
        graph: KnowledgeGraph,
        store: EmbeddingStore<f32>,
        params: ScoreParams<f32>,
        words: WordVectorTable,
    ) -> Result<Self> {
        if store.len() != graph.len() {
            return Err(Error::Shape(format!(
                "graph has {} nodes but {} embeddings",
                graph.len(),
                store.len()
            )));
        }
        if store.dim() != params.dim || words.dim() != params.dim {
            return Err(Error::Shape("embedding and model dimensions differ".into()));
        }
        let dm = DistanceMatrix::compute(&graph)?;
        let candidates = graph.real_nodes().collect();
        Ok(Workspace {
            graph_path: graph_path.to_path_buf(),
            graph,
            dm,
            store,
            params,
            words,
            candidates,
            pending: Vec::new(),
            handle_radius: 2,
        })
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.dm
    }

    pub fn candidates(&self) -> &[NodeId] {
        &self.candidates
    }

    pub fn pending(&self) -> &[NodeId] {
        &self.pending
    }

    pub fn store(&self) -> &EmbeddingStore<f32> {
        &self.store
    }

    pub fn params(&self) -> &ScoreParams<f32> {
        &self.params
    }

    /// A known label maps to its stored child vector; other text is
    /// mean-pooled from word vectors.
    fn embed_query(&self, text: &str) -> Result<(Vec<f32>, Option<NodeId>)> {
        match self.graph.id(text.trim()) {
            Some(id) if !self.graph.is_dummy(id) => Ok((self.store.child(id).to_vec(), Some(id))),
            _ => Ok((phrase_embedding(text, &self.words)?, None)),
        }
    }

    /// Top-`k` parents for free text.
    pub fn predict(&self, text: &str, k: usize) -> Result<Prediction> {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let (vec, known) = self.embed_query(text)?;
        let cands: Vec<NodeId> = self
            .candidates
            .iter()
            .copied()
            .filter(|&c| Some(c) != known)
            .collect();
        let scorer = Scorer::new(&self.params, &self.store)?;
        let scores = scorer.scores_for_vector(&vec, &cands)?;
        let order = order_by_scores(&cands, &scores)?;
        let score_of = |id: NodeId| scores[cands.binary_search(&id).expect("candidate")];
        let h = self.handle_radius;
        Ok(Prediction {
            query: text.to_string(),
            candidates: order
                .into_iter()
                .take(k)
                .enumerate()
                .map(|(i, id)| Candidate {
                    rank: i + 1,
                    id,
                    label: self.graph.label(id).to_string(),
                    score: score_of(id),
                    neighborhood: NeighborhoodHandle {
                        center: id,
                        h,
                        href: format!("/node/{}/neighborhood?h={h}", id.0),
                    },
                })
                .collect(),
        })
    }

    /// Add `label` under `parent`: the edge-list file is rewritten
    /// atomically, then the graph and embeddings grow in memory. The new
    /// node stays out of the candidate set until the next re-index.
    pub fn attach(&mut self, label: &str, parent: NodeId) -> Result<NodeId> {
        let label = label.trim();
        self.graph.check_node(parent)?;
        if self.graph.is_dummy(parent) {
            return Err(Error::invalid("cannot attach to the dummy root"));
        }
        if let Some(id) = self.graph.id(label) {
            return Err(Error::DuplicateLabel {
                label: label.to_string(),
                id: id.0,
            });
        }
        let vec = phrase_embedding(label, &self.words)?;
        let mut next = self.graph.clone();
        let id = next.add_leaf(label, parent)?;
        append_line_atomically(
            &self.graph_path,
            &format!("{label}\t{}\n", self.graph.label(parent)),
        )?;
        // the new node takes the dummy root's id; every candidate id is lower
        self.store.insert(id, &vec)?;
        self.graph = next;
        self.pending.push(id);
        Ok(id)
    }

    /// Recompute distances and admit pending nodes as candidates.
    pub fn reindex(&mut self) -> Result<usize> {
        self.dm = DistanceMatrix::compute(&self.graph)?;
        self.candidates = self.graph.real_nodes().collect();
        Ok(std::mem::take(&mut self.pending).len())
    }

    pub fn neighborhood(&self, center: NodeId, h: u32) -> Result<Vec<NodeId>> {
        self.graph.neighborhood(center, h)
    }

    /// Subtree under `root` (the dummy root when `None`) to `depth` levels.
    pub fn tree(&self, root: Option<NodeId>, depth: u32) -> Result<TreeNode> {
        let root = match root {
            Some(r) => {
                self.graph.check_node(r)?;
                r
            }
            None => self.graph.dummy_root().ok_or(Error::DummyRootMissing)?,
        };
        Ok(self.subtree(root, depth))
    }

    fn subtree(&self, id: NodeId, depth: u32) -> TreeNode {
        let kids = self.graph.children(id);
        TreeNode {
            id,
            label: self.graph.label(id).to_string(),
            child_count: kids.len(),
            children: if depth == 0 {
                Vec::new()
            } else {
                kids.iter().map(|&c| self.subtree(c, depth - 1)).collect()
            },
        }
    }
}

/// Write `path + line` to a sibling temp file, sync it, then rename over
/// the original so readers never see a partial file.
fn append_line_atomically(path: &Path, line: &str) -> Result<()> {
    let mut content = match std::fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    if !content.is_empty() && !content.ends_with('\n') {
        content.push('\n');
    }
    content.push_str(line);
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
