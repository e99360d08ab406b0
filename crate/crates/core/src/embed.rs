//! Node feature vectors.
//!
//! Every node carries two copies of its unit-norm vector: the child copy is
//! frozen and used when the node is scored as a child, the parent copy is a
//! trainable parameter used when it is scored as a candidate parent.

use std::collections::HashMap;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeId};
use crate::real::{l2_norm, Real};
use crate::rng;
use crate::text::tokenize;

/// Written as the first line of generated embedding files.
pub const EMBEDDING_HEADER: &str =
    "# taxo embeddings v1; phrase vectors are mean-pooled then unit-normalized";

const UNIT_TOL: f64 = 1e-6;

pub fn normalize_unit<R: Real>(v: &[R]) -> Result<Vec<R>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector to normalize".into()));
    }
    let norm = l2_norm(v);
    if norm == R::zero() {
        return Err(Error::invalid("cannot normalize a zero vector"));
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

/// Unit vector drawn from a PRNG seeded by the hash of `key`.
pub fn hashed_unit_vector(key: &str, dim: usize) -> Vec<f32> {
    let mut rng = rng::stream(rng::hash64(key), "oov", 0);
    random_unit(&mut rng, dim)
}

pub(crate) fn random_unit<R: rand::Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = normalize_unit(&v) {
            return u;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<R = f32> {
    dim: usize,
    child: Vec<R>,
    parent: Vec<R>,
}

impl<R: Real> EmbeddingStore<R> {
    /// Build from one vector per node; both copies start equal.
    pub fn from_rows(dim: usize, rows: Vec<Vec<R>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {dim}",
                    r.len()
                )));
            }
            flat.extend_from_slice(r);
        }
        Ok(EmbeddingStore {
            dim,
            parent: flat.clone(),
            child: flat,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.child.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.child.is_empty()
    }

    pub fn child(&self, id: NodeId) -> &[R] {
        &self.child[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    pub fn parent(&self, id: NodeId) -> &[R] {
        &self.parent[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    pub fn try_child(&self, id: NodeId) -> Result<&[R]> {
        if id.index() < self.len() {
            Ok(self.child(id))
        } else {
            Err(Error::UnknownNode(id.to_string()))
        }
    }

    pub fn try_parent(&self, id: NodeId) -> Result<&[R]> {
        if id.index() < self.len() {
            Ok(self.parent(id))
        } else {
            Err(Error::UnknownNode(id.to_string()))
        }
    }

    pub fn parent_mut(&mut self, id: NodeId) -> &mut [R] {
        &mut self.parent[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    /// The whole parent table, row-major by node id.
    pub fn parent_table(&self) -> &[R] {
        &self.parent
    }

    pub fn parent_table_mut(&mut self) -> &mut [R] {
        &mut self.parent
    }

    pub fn set_parent_table(&mut self, table: Vec<R>) -> Result<()> {
        if table.len() != self.parent.len() {
            return Err(Error::Shape(format!(
                "parent table has {} entries, expected {}",
                table.len(),
                self.parent.len()
            )));
        }
        self.parent = table;
        Ok(())
    }

    pub fn push(&mut self, v: &[R]) -> Result<NodeId> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!("expected {} entries", self.dim)));
        }
        self.child.extend_from_slice(v);
        self.parent.extend_from_slice(v);
        Ok(NodeId(self.len() as u32 - 1))
    }

    /// Insert a node's vector (both copies) at `at`, shifting later rows.
    /// Mirrors how attaching a leaf takes the dummy root's id.
    pub fn insert(&mut self, at: NodeId, v: &[R]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!("expected {} entries", self.dim)));
        }
        if at.index() > self.len() {
            return Err(Error::UnknownNode(at.to_string()));
        }
        let pos = at.index() * self.dim;
        self.child.splice(pos..pos, v.iter().copied());
        self.parent.splice(pos..pos, v.iter().copied());
        Ok(())
    }

    /// Every row of both copies has unit norm within 1e-6.
    pub fn is_unit_norm(&self) -> bool {
        self.child
            .chunks(self.dim)
            .chain(self.parent.chunks(self.dim))
            .all(|r| (l2_norm(r).as_f64() - 1.0).abs() <= UNIT_TOL)
    }

    pub fn cast<S: Real>(&self) -> EmbeddingStore<S> {
        EmbeddingStore {
            dim: self.dim,
            child: crate::real::cast_vec(&self.child),
            parent: crate::real::cast_vec(&self.parent),
        }
    }
}

impl EmbeddingStore<f32> {
    /// Independent random unit vectors, one per node.
    pub fn random(nodes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "random-embeddings", 0);
        let rows = (0..nodes).map(|_| random_unit(&mut rng, dim)).collect();
        Self::from_rows(dim, rows).expect("dim > 0")
    }

    /// Load `label<TAB>v1 v2 ... vd` lines. Every graph node except the dummy
    /// root must appear exactly once; the dummy root gets a hashed vector.
    pub fn load(text: &str, g: &KnowledgeGraph, expected_dim: usize) -> Result<Self> {
        Self::load_rows(text, g, expected_dim, None).map(|(s, _)| s)
    }

    /// Like [`EmbeddingStore::load`], but nodes missing from the file (for
    /// instance ones attached since the file was written) are embedded from
    /// their labels. Returns the filled-in nodes as well.
    pub fn load_or_embed(
        text: &str,
        g: &KnowledgeGraph,
        expected_dim: usize,
        words: &WordVectorTable,
    ) -> Result<(Self, Vec<NodeId>)> {
        Self::load_rows(text, g, expected_dim, Some(words))
    }

    fn load_rows(
        text: &str,
        g: &KnowledgeGraph,
        expected_dim: usize,
        words: Option<&WordVectorTable>,
    ) -> Result<(Self, Vec<NodeId>)> {
        if expected_dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut rows: Vec<Option<Vec<f32>>> = vec![None; g.len()];
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, values) = parse_vector_line(line, line_no, expected_dim)?;
            let id = g
                .id(label)
                .ok_or_else(|| Error::parse(line_no, format!("unknown node `{label}`")))?;
            if rows[id.index()].is_some() {
                return Err(Error::parse(line_no, format!("node `{label}` listed twice")));
            }
            let unit = normalize_unit(&values)
                .map_err(|e| Error::parse(line_no, format!("`{label}`: {e}")))?;
            rows[id.index()] = Some(unit);
        }
        let mut filled = Vec::new();
        let rows = g
            .nodes()
            .map(|n| match (rows[n.index()].take(), words) {
                (Some(v), _) => Ok(v),
                (None, _) if g.is_dummy(n) => Ok(hashed_unit_vector(g.label(n), expected_dim)),
                (None, Some(table)) => {
                    filled.push(n);
                    phrase_embedding(g.label(n), table)
                }
                (None, None) => Err(Error::invalid(format!(
                    "missing embedding for node `{}`",
                    g.label(n)
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((Self::from_rows(expected_dim, rows)?, filled))
    }

    /// Child copies as an embedding file (dummy root omitted).
    pub fn to_text(&self, g: &KnowledgeGraph) -> String {
        let mut out = String::from(EMBEDDING_HEADER);
        out.push('\n');
        for n in g.real_nodes() {
            out.push_str(&vector_line(g.label(n), self.child(n)));
        }
        out
    }
}

pub fn vector_line(label: &str, v: &[f32]) -> String {
    let mut out = String::from(label);
    out.push('\t');
    let nums: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    out.push_str(&nums.join(" "));
    out.push('\n');
    out
}

fn parse_vector_line(line: &str, line_no: usize, dim: usize) -> Result<(&str, Vec<f32>)> {
    let (label, rest) = line
        .split_once('\t')
        .ok_or_else(|| Error::parse(line_no, "expected `label<TAB>values`"))?;
    let values = rest
        .split_whitespace()
        .map(|t| {
            t.parse::<f32>()
                .map_err(|_| Error::parse(line_no, format!("bad number `{t}`")))
        })
        .collect::<Result<Vec<f32>>>()?;
    if values.len() != dim {
        return Err(Error::parse(
            line_no,
            format!("expected {dim} values, found {}", values.len()),
        ));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::parse(line_no, "non-finite value"));
    }
    Ok((label.trim(), values))
}

/// Word -> vector lookup used to embed free-text queries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    words: HashMap<String, Vec<f32>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        WordVectorTable {
            dim,
            words: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, word: &str, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "word `{word}` has {} entries, expected {}",
                v.len(),
                self.dim
            )));
        }
        self.words.insert(word.to_lowercase(), v);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.words.get(word).map(Vec::as_slice)
    }

    pub fn load(text: &str, dim: usize) -> Result<Self> {
        let mut table = WordVectorTable::new(dim);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, v) = parse_vector_line(line, i + 1, dim)?;
            table.insert(word, v)?;
        }
        Ok(table)
    }

    /// Vector for one token; out-of-vocabulary tokens fall back to a
    /// hash-seeded unit vector.
    pub fn token_vector(&self, token: &str) -> Vec<f32> {
        match self.get(token) {
            Some(v) => v.to_vec(),
            None => hashed_unit_vector(token, self.dim),
        }
    }
}

/// Mean of the token vectors of `text`, normalized once after pooling.
pub fn phrase_embedding(text: &str, table: &WordVectorTable) -> Result<Vec<f32>> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::invalid("cannot embed an empty label"));
    }
    let mut sum = vec![0f32; table.dim()];
    for t in &tokens {
        for (s, x) in sum.iter_mut().zip(table.token_vector(t)) {
            *s += x;
        }
    }
    let n = tokens.len() as f32;
    sum.iter_mut().for_each(|s| *s /= n);
    normalize_unit(&sum)
}

/// Synthetic features that follow the hierarchy: leaves get random unit
/// vectors, each internal node (bottom-up) gets
/// `normalize(mean(children) + noise * N(0, I / dim))`.
pub fn synth_embeddings(
    g: &KnowledgeGraph,
    dim: usize,
    noise: f32,
    seed: u64,
) -> Result<EmbeddingStore<f32>> {
    if dim < 2 {
        return Err(Error::invalid("synthetic embeddings need dim >= 2"));
    }
    // isotropic noise with expected squared norm noise^2, whatever the dim
    let noise_scale = noise / (dim as f32).sqrt();
    let depth = g.depths();
    let mut order: Vec<NodeId> = g.nodes().collect();
    order.sort_by_key(|&n| (std::cmp::Reverse(depth[n.index()]), n));

    let mut leaf_rng = rng::stream(seed, "synth-leaves", 0);
    let mut noise_rng = rng::stream(seed, "synth-noise", 0);
    let mut rows: Vec<Vec<f32>> = vec![Vec::new(); g.len()];
    for n in g.nodes() {
        if g.children(n).is_empty() {
            rows[n.index()] = random_unit(&mut leaf_rng, dim);
        }
    }
    for n in order {
        let kids = g.children(n);
        if kids.is_empty() {
            continue;
        }
        let mut v = vec![0f32; dim];
        for &c in kids {
            for (a, b) in v.iter_mut().zip(&rows[c.index()]) {
                *a += b;
            }
        }
        let k = kids.len() as f32;
        for a in v.iter_mut() {
            *a /= k;
            if noise > 0.0 {
                let z: f32 = noise_rng.sample(StandardNormal);
                *a += noise_scale * z;
            }
        }
        rows[n.index()] = match normalize_unit(&v) {
            Ok(u) => u,
            // children cancelled exactly; fall back to a seeded direction
            Err(_) => random_unit(&mut noise_rng, dim),
        };
    }
    EmbeddingStore::from_rows(dim, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::toy;
    use crate::real::dot;

    fn close(a: &[f32], b: &[f32]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6)
    }

    #[test]
    fn normalize_examples() {
        assert!(close(&normalize_unit(&[3.0f32, 4.0]).unwrap(), &[0.6, 0.8]));
        assert!(close(&normalize_unit(&[-2.0f32, 0.0]).unwrap(), &[-1.0, 0.0]));
        assert!(close(&normalize_unit(&[0.6f32, 0.8]).unwrap(), &[0.6, 0.8]));
        assert!(normalize_unit(&[0.0f32, 0.0]).is_err());
    }

    #[test]
    fn load_three_nodes() {
        let g = KnowledgeGraph::parse("b\ta\nc\ta\n").unwrap();
        let text = "a\t1 0 0 0\nb\t0 2 0 0\nc\t1 1 1 1\n";
        let store = EmbeddingStore::load(text, &g, 4).unwrap();
        assert_eq!(store.len(), 3);
        assert!(store.is_unit_norm());
        assert_eq!(store.child(NodeId(2)), store.parent(NodeId(2)));
        assert!(close(store.child(NodeId(2)), &[0.5; 4]));
    }

    #[test]
    fn load_rejects_bad_rows() {
        let g = KnowledgeGraph::parse("b\ta\n").unwrap();
        let zero = EmbeddingStore::load("a\t0 0\nb\t1 0\n", &g, 2).unwrap_err();
        assert!(matches!(zero, Error::Parse { line: 1, .. }), "{zero}");
        let dim = EmbeddingStore::load("a\t1 0 0\nb\t1 0\n", &g, 2).unwrap_err();
        assert!(matches!(dim, Error::Parse { line: 1, .. }));
        let nan = EmbeddingStore::load("a\t1 0\nb\tNaN 1\n", &g, 2).unwrap_err();
        assert!(matches!(nan, Error::Parse { line: 2, .. }));
        let missing = EmbeddingStore::load("a\t1 0\n", &g, 2).unwrap_err();
        assert!(missing.to_string().contains("`b`"));
    }

    #[test]
    fn missing_rows_are_embedded_from_labels() {
        let g = KnowledgeGraph::parse("b\ta\nnew thing\ta\n").unwrap();
        let words = WordVectorTable::new(2);
        let (store, filled) =
            EmbeddingStore::load_or_embed("a\t1 0\nb\t0 1\n", &g, 2, &words).unwrap();
        assert_eq!(filled, vec![g.id("new thing").unwrap()]);
        let expected = phrase_embedding("new thing", &words).unwrap();
        assert_eq!(store.child(filled[0]), expected.as_slice());
        assert!(store.is_unit_norm());
    }

    #[test]
    fn dummy_root_gets_a_vector() {
        let g = KnowledgeGraph::parse("b\ta\n").unwrap().add_dummy_root().unwrap();
        let store = EmbeddingStore::load("a\t1 0\nb\t0 1\n", &g, 2).unwrap();
        assert_eq!(store.len(), 3);
        assert!(store.is_unit_norm());
    }

    #[test]
    fn phrase_examples() {
        let mut t = WordVectorTable::new(2);
        t.insert("alpha", vec![1.0, 0.0]).unwrap();
        t.insert("beta", vec![0.0, 1.0]).unwrap();
        t.insert("gamma", vec![3.0, 4.0]).unwrap();
        assert!(close(&phrase_embedding("Gamma", &t).unwrap(), &[0.6, 0.8]));
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!(close(&phrase_embedding("alpha beta", &t).unwrap(), &[h, h]));
        assert_eq!(
            phrase_embedding("gamma gamma", &t).unwrap(),
            phrase_embedding("gamma", &t).unwrap()
        );
        assert!(phrase_embedding("   ", &t).is_err());
    }

    #[test]
    fn oov_tokens_are_deterministic_units() {
        let t = WordVectorTable::new(8);
        let a = phrase_embedding("zebra crossing", &t).unwrap();
        let b = phrase_embedding("zebra crossing", &t).unwrap();
        assert_eq!(a, b);
        assert!((l2_norm(&a) - 1.0).abs() < 1e-6);
        assert_ne!(hashed_unit_vector("zebra", 8), hashed_unit_vector("crossing", 8));
    }

    #[test]
    fn noise_free_parent_is_normalized_mean() {
        let g = toy();
        let store = synth_embeddings(&g, 8, 0.0, 5).unwrap();
        let x = g.id("x").unwrap();
        let (a, b) = (store.child(g.id("x1").unwrap()), store.child(g.id("x2").unwrap()));
        let mean: Vec<f32> = a.iter().zip(b).map(|(p, q)| (p + q) / 2.0).collect();
        assert_eq!(store.child(x), normalize_unit(&mean).unwrap().as_slice());
        assert!(store.is_unit_norm());
    }

    #[test]
    fn synth_is_deterministic() {
        let g = toy();
        assert_eq!(
            synth_embeddings(&g, 16, 0.1, 3).unwrap(),
            synth_embeddings(&g, 16, 0.1, 3).unwrap()
        );
        assert!(synth_embeddings(&g, 1, 0.1, 3).is_err());
    }

    #[test]
    fn same_subtree_is_closer_than_cross_subtree_on_average() {
        // brute-force cosine over 100 seeds on the toy tree; leaves are
        // independent draws, so similarity comes from shared subtrees
        let g = toy();
        let id = |l: &str| g.id(l).unwrap();
        let within = [("x", "x1"), ("x", "x2"), ("x1", "x2"), ("y", "y1")];
        let across = [("x1", "y1"), ("x2", "y1"), ("x", "y1"), ("y", "x1"), ("y", "x2")];
        let mean_cos = |s: &EmbeddingStore, pairs: &[(&str, &str)]| {
            pairs
                .iter()
                .map(|&(a, b)| dot(s.child(id(a)), s.child(id(b))) as f64)
                .sum::<f64>()
                / pairs.len() as f64
        };
        let (mut w, mut c) = (0.0, 0.0);
        for seed in 0..100 {
            let s = synth_embeddings(&g, 16, 0.1, seed).unwrap();
            w += mean_cos(&s, &within);
            c += mean_cos(&s, &across);
        }
        assert!(w > c, "within {w} vs across {c}");
    }
}
