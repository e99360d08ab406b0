//! Synthetic taxonomies for tests, benches and demos. Every generator
//! returns a graph that already carries its dummy root.

use rand::Rng as _;

use crate::graph::{KnowledgeGraph, NodeId};
use crate::rng;

fn build(edges: &[(String, String)]) -> KnowledgeGraph {
    let mut text = String::new();
    for (c, p) in edges {
        text.push_str(c);
        text.push('\t');
        text.push_str(p);
        text.push('\n');
    }
    KnowledgeGraph::parse(&text)
        .and_then(KnowledgeGraph::add_dummy_root)
        .expect("generated graphs are valid")
}

/// One subgraph root with `branching[i]` children per node at level `i`.
/// Labels encode the path from the root (`t`, `t.0`, `t.0.3`, ...).
pub fn balanced_tree(branching: &[usize]) -> KnowledgeGraph {
    balanced_forest(1, branching)
}

/// `roots` disjoint balanced trees.
pub fn balanced_forest(roots: usize, branching: &[usize]) -> KnowledgeGraph {
    let mut edges = Vec::new();
    let mut frontier: Vec<String> = (0..roots)
        .map(|r| if roots == 1 { "t".to_string() } else { format!("t{r}") })
        .collect();
    for &b in branching {
        let mut next = Vec::with_capacity(frontier.len() * b);
        for parent in &frontier {
            for i in 0..b {
                let child = format!("{parent}.{i}");
                edges.push((child.clone(), parent.clone()));
                next.push(child);
            }
        }
        frontier = next;
    }
    build(&edges)
}

/// Random recursive forest: node `i >= roots` picks a parent uniformly
/// among nodes `0..i`.
pub fn random_forest(nodes: usize, roots: usize, seed: u64) -> KnowledgeGraph {
    assert!(roots >= 1 && roots <= nodes);
    let mut rng = rng::stream(seed, "random-forest", 0);
    let edges: Vec<_> = (roots..nodes)
        .map(|i| (format!("n{i}"), format!("n{}", rng.random_range(0..i))))
        .collect();
    build(&edges)
}

/// Forest with exactly `nodes` nodes, `leaves` childless non-root nodes and
/// `roots` subgraph roots.
pub fn forest_with_counts(nodes: usize, leaves: usize, roots: usize, seed: u64) -> KnowledgeGraph {
    assert!(roots >= 1 && leaves + roots <= nodes);
    let internal = nodes - leaves - roots;
    assert!(leaves >= internal, "every internal node needs a leaf");
    let mut rng = rng::stream(seed, "forest-counts", 0);
    // ids 0..roots are roots, then internal nodes, then leaves
    let mut parent = vec![None; nodes];
    let mut has_child = vec![false; nodes];
    for i in roots..roots + internal {
        let p = rng.random_range(0..i);
        parent[i] = Some(p);
        has_child[p] = true;
    }
    let mut next_leaf = roots + internal;
    for i in roots..roots + internal {
        if !has_child[i] {
            parent[next_leaf] = Some(i);
            has_child[i] = true;
            next_leaf += 1;
        }
    }
    for slot in parent.iter_mut().skip(next_leaf) {
        *slot = Some(rng.random_range(0..roots + internal));
    }
    let edges: Vec<_> = parent
        .iter()
        .enumerate()
        .filter_map(|(c, p)| p.map(|p| (format!("n{c}"), format!("n{p}"))))
        .collect();
    let g = build(&edges);
    debug_assert_eq!(g.len(), nodes + 1);
    g
}

/// Path of `len` nodes hanging off a single root: `p0 <- p1 <- ...`.
pub fn path(len: usize) -> KnowledgeGraph {
    let edges: Vec<_> = (1..len)
        .map(|i| (format!("p{i}"), format!("p{}", i - 1)))
        .collect();
    build(&edges)
}

pub fn ids(g: &KnowledgeGraph, labels: &[&str]) -> Vec<NodeId> {
    labels.iter().map(|l| g.require(l).unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_tree_counts() {
        let g = balanced_tree(&[4, 4, 4]);
        assert_eq!(g.len(), 1 + 4 + 16 + 64 + 1);
        assert_eq!(g.leaves().len(), 64);
        assert_eq!(g.subgraph_roots().len(), 1);
    }

    #[test]
    fn forest_with_table_one_counts() {
        let g = forest_with_counts(10_791, 9_576, 24, 3);
        assert_eq!(g.len(), 10_792);
        assert_eq!(g.leaves().len(), 9_576);
        assert_eq!(g.subgraph_roots().len(), 24);
        assert_eq!(g.edges().len(), 10_791 - 24);
    }

    #[test]
    fn random_forest_is_deterministic() {
        assert_eq!(random_forest(40, 3, 9), random_forest(40, 3, 9));
        assert_eq!(random_forest(40, 3, 9).subgraph_roots().len(), 3);
    }
}
