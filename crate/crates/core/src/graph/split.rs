use std::collections::HashSet;

use rand::seq::SliceRandom;

use super::{KnowledgeGraph, NodeId};
use crate::error::{Error, Result};
use crate::rng::{self, PRNG_NAME};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    /// Fraction of leaves held out for testing (rounded down).
    pub test_frac: f64,
    /// Fraction of the remaining children used for training (rounded to
    /// nearest); the rest go to validation.
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_frac: 0.30,
            train_frac: 0.85,
            seed: 0,
        }
    }
}

/// Train/validation/test `(child, parent)` pairs, each sorted by child id.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub train: Vec<(NodeId, NodeId)>,
    pub validation: Vec<(NodeId, NodeId)>,
    pub test: Vec<(NodeId, NodeId)>,
    pub seed: u64,
    pub test_frac: f64,
    pub train_frac: f64,
}

// Guard against 0.3 * 10 evaluating to 2.9999999999999996.
fn floor_count(frac: f64, n: usize) -> usize {
    ((frac * n as f64) + 1e-9).floor() as usize
}

fn round_count(frac: f64, n: usize) -> usize {
    (frac * n as f64).round() as usize
}

/// Hold out leaves for testing, then split the remaining eligible children
/// (everything except the dummy root and subgraph roots) into train and
/// validation. Deterministic given the seed.
pub fn split_dataset(g: &KnowledgeGraph, cfg: &SplitConfig) -> Result<SplitAssignment> {
    if g.dummy_root().is_none() {
        return Err(Error::DummyRootMissing);
    }
    for (name, f) in [("test_frac", cfg.test_frac), ("train_frac", cfg.train_frac)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1], got {f}")));
        }
    }
    let mut leaves = g.leaves();
    if leaves.is_empty() {
        return Err(Error::NoLeaves);
    }
    let mut rng = rng::stream(cfg.seed, "split", 0);
    leaves.shuffle(&mut rng);
    let n_test = floor_count(cfg.test_frac, leaves.len());
    let test_set: HashSet<NodeId> = leaves[..n_test].iter().copied().collect();

    let mut rest: Vec<NodeId> = g
        .real_nodes()
        .filter(|&n| !g.is_subgraph_root(n) && !test_set.contains(&n))
        .collect();
    rest.shuffle(&mut rng);
    let n_train = round_count(cfg.train_frac, rest.len());

    let pairs = |nodes: &[NodeId]| -> Vec<(NodeId, NodeId)> {
        let mut v: Vec<_> = nodes
            .iter()
            .map(|&c| (c, g.parent(c).expect("eligible child has a parent")))
            .collect();
        v.sort();
        v
    };
    let test: Vec<NodeId> = test_set.into_iter().collect();
    Ok(SplitAssignment {
        train: pairs(&rest[..n_train]),
        validation: pairs(&rest[n_train..]),
        test: pairs(&test),
        seed: cfg.seed,
        test_frac: cfg.test_frac,
        train_frac: cfg.train_frac,
    })
}

impl SplitAssignment {
    pub fn test_children(&self) -> HashSet<NodeId> {
        self.test.iter().map(|&(c, _)| c).collect()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidate parents for evaluation: every non-test node except the
    /// dummy root, ascending.
    pub fn candidates(&self, g: &KnowledgeGraph) -> Vec<NodeId> {
        let test = self.test_children();
        g.real_nodes().filter(|n| !test.contains(n)).collect()
    }

    /// Render the split file. Identical inputs give identical bytes.
    pub fn to_text(&self, g: &KnowledgeGraph) -> String {
        let mut out = String::from("# taxo split v1\n");
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("prng={PRNG_NAME}\n"));
        out.push_str(&format!("test_frac={}\n", self.test_frac));
        out.push_str(&format!("train_frac={}\n", self.train_frac));
        for (name, pairs) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            out.push_str(&format!("[{name}]\n"));
            for &(c, p) in pairs {
                out.push_str(g.label(c));
                out.push('\t');
                out.push_str(g.label(p));
                out.push('\n');
            }
        }
        out
    }

    /// Parse a split file against `g`, checking every pair is an edge.
    pub fn from_text(text: &str, g: &KnowledgeGraph) -> Result<Self> {
        let mut split = SplitAssignment {
            train: vec![],
            validation: vec![],
            test: vec![],
            seed: 0,
            test_frac: f64::NAN,
            train_frac: f64::NAN,
        };
        let mut seen_seed = false;
        let mut section: Option<&str> = None;
        let mut children = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                match name {
                    "train" | "validation" | "test" => section = Some(name),
                    _ => return Err(Error::parse(line_no, format!("unknown section [{name}]"))),
                }
                continue;
            }
            let Some(sec) = section else {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| Error::parse(line_no, "expected key=value header"))?;
                let bad = |_| Error::parse(line_no, format!("bad value for {key}"));
                match key {
                    "seed" => {
                        split.seed = value.parse().map_err(|e| bad(format!("{e}")))?;
                        seen_seed = true;
                    }
                    "test_frac" => split.test_frac = value.parse().map_err(|e| bad(format!("{e}")))?,
                    "train_frac" => {
                        split.train_frac = value.parse().map_err(|e| bad(format!("{e}")))?
                    }
                    _ => {}
                }
                continue;
            };
            let (c, p) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(line_no, "expected `child<TAB>parent`"))?;
            let (c, p) = (g.require(c)?, g.require(p)?);
            if g.parent(c) != Some(p) {
                return Err(Error::parse(line_no, "pair is not an edge of the graph"));
            }
            if !children.insert(c) {
                return Err(Error::parse(line_no, "child listed twice"));
            }
            match sec {
                "train" => split.train.push((c, p)),
                "validation" => split.validation.push((c, p)),
                _ => split.test.push((c, p)),
            }
        }
        if !seen_seed {
            return Err(Error::parse(0, "missing seed= header"));
        }
        split.train.sort();
        split.validation.sort();
        split.test.sort();
        Ok(split)
    }
}
