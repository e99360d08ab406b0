//! Fixtures shared by the benchmarks.

use taxo_core::embed::synth_embeddings;
use taxo_core::graph::{split_dataset, SplitConfig};
use taxo_core::scoring::init_params;
use taxo_core::synth::random_forest;
use taxo_core::{DistanceMatrix, EmbeddingStore, KnowledgeGraph, ScoreParams, SplitAssignment};

pub struct Fixture {
    pub graph: KnowledgeGraph,
    pub dm: DistanceMatrix,
    pub store: EmbeddingStore<f32>,
    pub params: ScoreParams<f32>,
    pub split: SplitAssignment,
}

/// Random forest with `nodes` nodes and `roots` roots, synthetic embeddings
/// of width `dim` and a freshly initialized score function with `k`
/// transforms.
pub fn fixture(nodes: usize, roots: usize, dim: usize, k: usize) -> Fixture {
    let graph = random_forest(nodes, roots, 1);
    let dm = DistanceMatrix::compute(&graph).expect("connected");
    let store = synth_embeddings(&graph, dim, 0.1, 2).expect("embeddings");
    let params = init_params(dim, k, &[64, 64], 3).expect("params");
    let split = split_dataset(&graph, &SplitConfig { seed: 4, ..Default::default() }).expect("split");
    Fixture {
        graph,
        dm,
        store,
        params,
        split,
    }
}
