//! Single-parent taxonomies: parsing, augmentation and neighborhood queries.

mod distance;
mod split;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use distance::DistanceMatrix;
pub use split::{split_dataset, SplitAssignment, SplitConfig};

#[cfg(test)]
pub(crate) use tests::toy;

/// Label given to the synthetic node that joins all subgraph roots.
pub const DUMMY_ROOT_LABEL: &str = "<root>";

/// Dense node index. Ids are contiguous from zero in first-seen order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Directed acyclic child -> parent taxonomy where every node has at most
/// one parent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    labels: Vec<String>,
    index: HashMap<String, NodeId>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    dummy_root: Option<NodeId>,
}

impl KnowledgeGraph {
    /// Parse a `child<TAB>parent` edge list. Blank lines and `#` comments
    /// are skipped; labels are trimmed and case-preserved.
    pub fn parse(text: &str) -> Result<Self> {
        let mut g = KnowledgeGraph::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (child, parent) = match (parts.next(), parts.next(), parts.next()) {
                (Some(c), Some(p), None) => (c.trim(), p.trim()),
                _ => return Err(Error::parse(line_no, "expected `child<TAB>parent`")),
            };
            if child.is_empty() || parent.is_empty() {
                return Err(Error::parse(line_no, "empty label"));
            }
            if child == DUMMY_ROOT_LABEL || parent == DUMMY_ROOT_LABEL {
                return Err(Error::parse(
                    line_no,
                    format!("label `{DUMMY_ROOT_LABEL}` is reserved"),
                ));
            }
            if child == parent {
                return Err(Error::Cycle(vec![child.to_string(), child.to_string()]));
            }
            if !seen.insert((child.to_string(), parent.to_string())) {
                return Err(Error::DuplicateEdge {
                    child: child.into(),
                    parent: parent.into(),
                    line: line_no,
                });
            }
            let c = g.intern(child);
            let p = g.intern(parent);
            if let Some(existing) = g.parent[c.index()] {
                return Err(Error::MultipleParents {
                    child: child.into(),
                    first: g.labels[existing.index()].clone(),
                    second: parent.into(),
                    line: line_no,
                });
            }
            g.parent[c.index()] = Some(p);
            g.children[p.index()].push(c);
        }
        g.check_acyclic()?;
        Ok(g)
    }

    fn intern(&mut self, label: &str) -> NodeId {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = NodeId(self.labels.len() as u32);
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        self.parent.push(None);
        self.children.push(Vec::new());
        id
    }

    fn check_acyclic(&self) -> Result<()> {
        // 0 = unvisited, 1 = on current chain, 2 = known to reach a root
        let mut state = vec![0u8; self.len()];
        for start in 0..self.len() {
            if state[start] != 0 {
                continue;
            }
            let mut chain: Vec<usize> = Vec::new();
            let mut cur = start;
            loop {
                match state[cur] {
                    2 => break,
                    1 => {
                        let pos = chain.iter().position(|&n| n == cur).unwrap();
                        let mut cycle: Vec<String> =
                            chain[pos..].iter().map(|&n| self.labels[n].clone()).collect();
                        cycle.push(self.labels[cur].clone());
                        return Err(Error::Cycle(cycle));
                    }
                    _ => {}
                }
                state[cur] = 1;
                chain.push(cur);
                match self.parent[cur] {
                    Some(p) => cur = p.index(),
                    None => break,
                }
            }
            for n in chain {
                state[n] = 2;
            }
        }
        Ok(())
    }

    /// Add a node labelled [`DUMMY_ROOT_LABEL`] as the parent of every
    /// subgraph root, making the undirected view connected.
    pub fn add_dummy_root(mut self) -> Result<Self> {
        if self.dummy_root.is_some() {
            return Err(Error::DummyRootPresent);
        }
        let roots = self.subgraph_roots();
        let dummy = self.intern(DUMMY_ROOT_LABEL);
        for r in roots {
            self.parent[r.index()] = Some(dummy);
            self.children[dummy.index()].push(r);
        }
        self.dummy_root = Some(dummy);
        Ok(self)
    }

    /// Append a new leaf under `parent`. Used when re-indexing attached nodes.
    pub fn add_leaf(&mut self, label: &str, parent: NodeId) -> Result<NodeId> {
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::invalid("empty label"));
        }
        if let Some(&id) = self.index.get(label) {
            return Err(Error::DuplicateLabel {
                label: label.into(),
                id: id.0,
            });
        }
        self.check_node(parent)?;
        if Some(parent) == self.dummy_root {
            return Err(Error::invalid("cannot attach to the dummy root"));
        }
        // keep the dummy root as the last id so trained tables stay aligned
        if self.dummy_root.is_some() {
            let mut rebuilt = self.without_dummy_root();
            let id = rebuilt.intern(label);
            rebuilt.parent[id.index()] = Some(parent);
            rebuilt.children[parent.index()].push(id);
            *self = rebuilt.add_dummy_root()?;
            return Ok(id);
        }
        let id = self.intern(label);
        self.parent[id.index()] = Some(parent);
        self.children[parent.index()].push(id);
        Ok(id)
    }

    fn without_dummy_root(&self) -> KnowledgeGraph {
        let Some(dummy) = self.dummy_root else {
            return self.clone();
        };
        let mut g = KnowledgeGraph::default();
        for (i, label) in self.labels.iter().enumerate() {
            if i != dummy.index() {
                g.intern(label);
            }
        }
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = p.filter(|&p| p != dummy) {
                g.parent[i] = Some(p);
                g.children[p.index()].push(NodeId(i as u32));
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len() as u32).map(NodeId)
    }

    /// Nodes other than the dummy root.
    pub fn real_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(move |&n| Some(n) != self.dummy_root)
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.labels[id.index()]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<NodeId> {
        self.index.get(label).copied()
    }

    pub fn require(&self, label: &str) -> Result<NodeId> {
        self.id(label)
            .ok_or_else(|| Error::UnknownNode(label.to_string()))
    }

    pub fn check_node(&self, id: NodeId) -> Result<()> {
        if id.index() < self.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(id.to_string()))
        }
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent[id.index()]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.index()]
    }

    pub fn dummy_root(&self) -> Option<NodeId> {
        self.dummy_root
    }

    pub fn is_dummy(&self, id: NodeId) -> bool {
        Some(id) == self.dummy_root
    }

    /// Nodes that are nobody's child in the input (children of the dummy
    /// root once it is added), in ascending id order.
    pub fn subgraph_roots(&self) -> Vec<NodeId> {
        match self.dummy_root {
            Some(d) => {
                let mut roots = self.children[d.index()].clone();
                roots.sort();
                roots
            }
            None => self.nodes().filter(|&n| self.parent(n).is_none()).collect(),
        }
    }

    pub fn is_subgraph_root(&self, id: NodeId) -> bool {
        match self.dummy_root {
            Some(d) => self.parent(id) == Some(d),
            None => self.parent(id).is_none(),
        }
    }

    /// Childless nodes that can act as children (not roots, not the dummy).
    pub fn leaves(&self) -> Vec<NodeId> {
        self.real_nodes()
            .filter(|&n| self.children(n).is_empty() && !self.is_subgraph_root(n))
            .collect()
    }

    /// `(child, parent)` pairs in ascending child order, excluding edges
    /// into the dummy root.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.nodes()
            .filter_map(|c| self.parent(c).map(|p| (c, p)))
            .filter(|&(_, p)| !self.is_dummy(p))
            .collect()
    }

    /// Number of edges including those into the dummy root.
    pub fn edge_count(&self) -> usize {
        self.parent.iter().filter(|p| p.is_some()).count()
    }

    /// Undirected adjacency lists (children then parent).
    pub fn undirected_neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.children[id.index()]
            .iter()
            .copied()
            .chain(self.parent[id.index()])
    }

    /// Serialize back to edge-list text, excluding dummy-root edges.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (c, p) in self.edges() {
            out.push_str(self.label(c));
            out.push('\t');
            out.push_str(self.label(p));
            out.push('\n');
        }
        out
    }

    /// Depth of every node counted from its subgraph root (the dummy root,
    /// when present, sits at depth 0 and subgraph roots at 1).
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.len()];
        for n in self.nodes() {
            let mut chain = vec![n];
            let mut cur = n;
            while depth[cur.index()] == usize::MAX {
                match self.parent(cur) {
                    Some(p) => {
                        chain.push(p);
                        cur = p;
                    }
                    None => {
                        depth[cur.index()] = 0;
                        break;
                    }
                }
            }
            let mut d = depth[chain.last().unwrap().index()];
            for &c in chain.iter().rev().skip(1) {
                d += 1;
                depth[c.index()] = d;
            }
        }
        depth
    }

    /// Breadth-first distances from `center` on the undirected view, cut
    /// off at `radius` hops. Unreached nodes are `None`.
    pub fn bfs_from(&self, center: NodeId, radius: u32) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.len()];
        dist[center.index()] = Some(0);
        let mut queue = VecDeque::from([center]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n.index()].unwrap();
            if d == radius {
                continue;
            }
            for m in self.undirected_neighbors(n) {
                if dist[m.index()].is_none() {
                    dist[m.index()] = Some(d + 1);
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    /// All nodes within `radius` undirected hops of `center`, excluding the
    /// dummy root (paths through it still count).
    pub fn neighborhood(&self, center: NodeId, radius: u32) -> Result<Vec<NodeId>> {
        self.check_node(center)?;
        let dist = self.bfs_from(center, radius);
        Ok(self
            .nodes()
            .filter(|&n| dist[n.index()].is_some() && !self.is_dummy(n))
            .collect())
    }

    /// Nodes at exactly `distance` hops from `center`, excluding the dummy root.
    pub fn ring(&self, center: NodeId, distance: u32) -> Result<Vec<NodeId>> {
        self.check_node(center)?;
        let dist = self.bfs_from(center, distance);
        Ok(self
            .nodes()
            .filter(|&n| dist[n.index()] == Some(distance) && !self.is_dummy(n))
            .collect())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// r -> {x, y}, x -> {x1, x2}, y -> {y1}
    pub(crate) const TOY: &str = "x\tr\ny\tr\nx1\tx\nx2\tx\ny1\ty\n";

    pub(crate) fn toy() -> KnowledgeGraph {
        KnowledgeGraph::parse(TOY).unwrap().add_dummy_root().unwrap()
    }

    fn ids(g: &KnowledgeGraph, labels: &[&str]) -> Vec<NodeId> {
        let mut v: Vec<_> = labels.iter().map(|l| g.id(l).unwrap()).collect();
        v.sort();
        v
    }

    #[test]
    fn parses_two_edge_tree() {
        let g = KnowledgeGraph::parse("b\ta\nc\ta").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.subgraph_roots(), vec![g.id("a").unwrap()]);
        assert_eq!(g.label(NodeId(0)), "b");
    }

    #[test]
    fn empty_input_is_empty_graph() {
        let g = KnowledgeGraph::parse("").unwrap();
        assert!(g.is_empty());
        assert!(g.subgraph_roots().is_empty());
        let g = KnowledgeGraph::parse("# only a comment\n\n").unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn rejects_duplicate_edge() {
        let err = KnowledgeGraph::parse("b\ta\nb\ta\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateEdge { line: 2, .. }));
    }

    #[test]
    fn rejects_second_parent() {
        let err = KnowledgeGraph::parse("b\ta\nb\tc\n").unwrap_err();
        assert!(matches!(err, Error::MultipleParents { .. }), "{err}");
    }

    #[test]
    fn rejects_cycle_and_names_it() {
        let err = KnowledgeGraph::parse("a\tb\nb\tc\nc\ta\n").unwrap_err();
        match err {
            Error::Cycle(path) => {
                assert_eq!(path.len(), 4);
                assert_eq!(path.first(), path.last());
            }
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(
            KnowledgeGraph::parse("a\ta").unwrap_err(),
            Error::Cycle(_)
        ));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            KnowledgeGraph::parse("a b\n").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        assert!(KnowledgeGraph::parse("a\t\n").is_err());
        assert!(KnowledgeGraph::parse("a\tb\tc\n").is_err());
    }

    #[test]
    fn labels_are_case_preserved_and_first_seen() {
        let g = KnowledgeGraph::parse("# c\nOral Care\tHealth\noral care\tHealth\n").unwrap();
        assert_eq!(g.labels(), &["Oral Care", "Health", "oral care"]);
    }

    #[test]
    fn dummy_root_joins_disjoint_trees() {
        let g = KnowledgeGraph::parse("b\ta\nd\tc\n").unwrap();
        let g = g.add_dummy_root().unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.edge_count(), 4);
        let dummy = g.dummy_root().unwrap();
        assert_eq!(g.children(dummy).len(), 2);
        assert!(g.parent(dummy).is_none());
        assert_eq!(g.subgraph_roots(), ids(&g, &["a", "c"]));
        assert!(matches!(g.add_dummy_root(), Err(Error::DummyRootPresent)));
    }

    #[test]
    fn every_non_dummy_node_has_one_parent_after_augmentation() {
        let g = toy();
        for n in g.real_nodes() {
            assert!(g.parent(n).is_some());
        }
        assert_eq!(g.edges().len(), 5);
    }

    #[test]
    fn neighborhood_of_x() {
        let g = toy();
        let x = g.id("x").unwrap();
        assert_eq!(
            g.neighborhood(x, 1).unwrap(),
            ids(&g, &["x", "r", "x1", "x2"])
        );
        assert_eq!(g.neighborhood(x, 0).unwrap(), vec![x]);
        assert_eq!(g.neighborhood(x, 10).unwrap().len(), 6);
        assert!(g.neighborhood(NodeId(99), 1).is_err());
    }

    #[test]
    fn ring_excludes_inner_nodes() {
        let g = toy();
        let x = g.id("x").unwrap();
        assert_eq!(g.ring(x, 1).unwrap(), ids(&g, &["r", "x1", "x2"]));
        assert_eq!(g.ring(x, 2).unwrap(), ids(&g, &["y"]));
    }

    #[test]
    fn leaves_exclude_roots() {
        let g = KnowledgeGraph::parse("b\ta\n").unwrap().add_dummy_root().unwrap();
        assert_eq!(g.leaves(), vec![g.id("b").unwrap()]);
        assert_eq!(toy().leaves().len(), 3);
    }

    #[test]
    fn add_leaf_keeps_dummy_last() {
        let mut g = toy();
        let x = g.id("x").unwrap();
        let id = g.add_leaf("x3", x).unwrap();
        assert_eq!(id, NodeId(6));
        assert_eq!(g.dummy_root(), Some(NodeId(7)));
        assert_eq!(g.parent(id), Some(x));
        assert!(matches!(
            g.add_leaf("x1", x),
            Err(Error::DuplicateLabel { .. })
        ));
        let dummy = g.dummy_root().unwrap();
        assert!(g.add_leaf("z", dummy).is_err());
    }

    #[test]
    fn edge_list_round_trips() {
        let g = toy();
        let again = KnowledgeGraph::parse(&g.to_edge_list())
            .unwrap()
            .add_dummy_root()
            .unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn depths_from_dummy() {
        let g = toy();
        let d = g.depths();
        assert_eq!(d[g.dummy_root().unwrap().index()], 0);
        assert_eq!(d[g.id("r").unwrap().index()], 1);
        assert_eq!(d[g.id("x1").unwrap().index()], 3);
    }
}
