use std::collections::VecDeque;

use rayon::prelude::*;

use super::{KnowledgeGraph, NodeId};
use crate::error::{Error, Result};

/// All-pairs undirected hop counts. Stored as `u16`, which bounds the
/// diameter of supported graphs at 65,534.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    dist: Vec<u16>,
    diameter: u32,
}

const UNREACHED: u16 = u16::MAX;

impl DistanceMatrix {
    /// Breadth-first search from every node, one source per task.
    pub fn compute(g: &KnowledgeGraph) -> Result<Self> {
        if g.dummy_root().is_none() && g.subgraph_roots().len() > 1 {
            return Err(Error::DummyRootMissing);
        }
        let n = g.len();
        let mut dist = vec![UNREACHED; n * n];
        dist.par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(src, row)| bfs_row(g, NodeId(src as u32), row));
        if let Some(pos) = dist.iter().position(|&d| d == UNREACHED) {
            let (a, b) = (pos / n, pos % n);
            return Err(Error::Disconnected(
                g.label(NodeId(a as u32)).to_string(),
                g.label(NodeId(b as u32)).to_string(),
            ));
        }
        let diameter = dist.iter().copied().max().unwrap_or(0) as u32;
        Ok(DistanceMatrix { n, dist, diameter })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> u32 {
        self.dist[a.index() * self.n + b.index()] as u32
    }

    pub fn row(&self, a: NodeId) -> &[u16] {
        &self.dist[a.index() * self.n..(a.index() + 1) * self.n]
    }

    pub fn diameter(&self) -> u32 {
        self.diameter
    }

    /// Mean over unordered pairs of distinct nodes, optionally skipping one
    /// node (typically the dummy root).
    pub fn mean_distance(&self, skip: Option<NodeId>) -> f64 {
        let mut sum = 0u64;
        let mut count = 0u64;
        for a in 0..self.n {
            for b in a + 1..self.n {
                if skip.is_some_and(|s| s.index() == a || s.index() == b) {
                    continue;
                }
                sum += self.dist[a * self.n + b] as u64;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum as f64 / count as f64
        }
    }
}

fn bfs_row(g: &KnowledgeGraph, src: NodeId, row: &mut [u16]) {
    row[src.index()] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(n) = queue.pop_front() {
        let d = row[n.index()];
        for m in g.undirected_neighbors(n) {
            if row[m.index()] == UNREACHED {
                row[m.index()] = d + 1;
                queue.push_back(m);
            }
        }
    }
}
