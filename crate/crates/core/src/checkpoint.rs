//! Versioned parameter container.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, a JSON
//! header, then every tensor as little-endian `f32` in header order. The
//! header carries shapes, the seed, node labels for the parent-copy table
//! and optimizer settings, so a file is self-describing. Serialization is
//! byte-deterministic.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::nn::{Activation, Dense, Mlp};
use crate::optim::{Optimizer, OptimizerKind};
use crate::scoring::ScoreParams;

pub const MAGIC: &[u8; 8] = b"TAXOCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Score,
    Ffnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// Number of moment segments; tensors `opt.m.{i}` and `opt.v.{i}`.
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: ModelKind,
    pub dim: usize,
    /// Shared transforms; 0 for models without them.
    pub k: usize,
    /// Network widths `[input, hidden..., output]`.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub seed: u64,
    /// Parent copies are trained freely and never projected back to unit norm.
    pub parent_copies_renormalized: bool,
    /// Row labels of the `parent_copies` tensor; empty when absent.
    pub node_labels: Vec<String>,
    pub optimizer: Option<OptimizerHeader>,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub data: Vec<Vec<f32>>,
}

impl Checkpoint {
    fn new(header: Header) -> Self {
        Checkpoint {
            header,
            data: Vec::new(),
        }
    }

    fn push(&mut self, name: impl Into<String>, values: Vec<f32>) {
        self.header.tensors.push(TensorInfo {
            name: name.into(),
            len: values.len(),
        });
        self.data.push(values);
    }

    pub fn tensor(&self, name: &str) -> Result<&[f32]> {
        self.header
            .tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.data[i].as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    fn tensor_len(&self, name: &str, len: usize) -> Result<&[f32]> {
        let t = self.tensor(name)?;
        if t.len() != len {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has {} values, expected {len}",
                t.len()
            )));
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let total: usize = self.data.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 4 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.data {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut pos = 16 + hlen;
        let mut data = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let end = pos + 4 * t.len;
            let raw = bytes
                .get(pos..end)
                .ok_or_else(|| Error::Checkpoint(format!("truncated tensor `{}`", t.name)))?;
            data.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
            pos = end;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Checkpoint { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.header.kind
            )));
        }
        Ok(())
    }

    fn push_mlp(&mut self, prefix: &str, net: &Mlp<f32>) {
        for (l, layer) in net.layers.iter().enumerate() {
            self.push(format!("{prefix}.{l}.weight"), layer.weight.clone());
            self.push(format!("{prefix}.{l}.bias"), layer.bias.clone());
        }
    }

    fn read_mlp(&self, prefix: &str) -> Result<Mlp<f32>> {
        let sizes = &self.header.layer_sizes;
        if sizes.len() < 2 {
            return Err(Error::Checkpoint("layer_sizes needs input and output".into()));
        }
        let mut layers = Vec::new();
        for (l, w) in sizes.windows(2).enumerate() {
            layers.push(Dense {
                inputs: w[0],
                outputs: w[1],
                weight: self
                    .tensor_len(&format!("{prefix}.{l}.weight"), w[0] * w[1])?
                    .to_vec(),
                bias: self.tensor_len(&format!("{prefix}.{l}.bias"), w[1])?.to_vec(),
            });
        }
        Ok(Mlp {
            layers,
            hidden_activation: self.header.hidden_activation,
        })
    }

    fn push_optimizer(&mut self, opt: &Optimizer<f32>) {
        self.header.optimizer = Some(OptimizerHeader {
            kind: opt.kind,
            learning_rate: opt.learning_rate,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            step: opt.step,
            segments: opt.first.len(),
        });
        for (i, (m, v)) in opt.first.iter().zip(&opt.second).enumerate() {
            self.push(format!("opt.m.{i}"), m.clone());
            self.push(format!("opt.v.{i}"), v.clone());
        }
    }

    pub fn optimizer(&self) -> Result<Option<Optimizer<f32>>> {
        let Some(h) = &self.header.optimizer else {
            return Ok(None);
        };
        let mut opt = Optimizer::new(h.kind, h.learning_rate, h.weight_decay);
        opt.beta1 = h.beta1;
        opt.beta2 = h.beta2;
        opt.eps = h.eps;
        opt.step = h.step;
        for i in 0..h.segments {
            opt.first.push(self.tensor(&format!("opt.m.{i}"))?.to_vec());
            opt.second.push(self.tensor(&format!("opt.v.{i}"))?.to_vec());
        }
        Ok(Some(opt))
    }
}

/// Trained parent copies keyed by node label.
#[derive(Debug, Clone, PartialEq)]
pub struct ParentTable {
    pub dim: usize,
    pub labels: Vec<String>,
    pub values: Vec<f32>,
}

impl ParentTable {
    /// Overwrite parent copies of every labelled node present in `g`.
    /// Nodes the table does not know keep their current parent copy.
    pub fn apply(&self, g: &KnowledgeGraph, store: &mut EmbeddingStore<f32>) -> Result<usize> {
        if store.dim() != self.dim {
            return Err(Error::Shape(format!(
                "parent table dim {} != embedding dim {}",
                self.dim,
                store.dim()
            )));
        }
        let mut applied = 0;
        for (i, label) in self.labels.iter().enumerate() {
            if let Some(id) = g.id(label) {
                store
                    .parent_mut(id)
                    .copy_from_slice(&self.values[i * self.dim..(i + 1) * self.dim]);
                applied += 1;
            }
        }
        Ok(applied)
    }
}

/// Score-function checkpoint, optionally with trained parent copies and
/// optimizer moments.
pub fn save_score(
    params: &ScoreParams<f32>,
    parents: Option<(&KnowledgeGraph, &EmbeddingStore<f32>)>,
    optimizer: Option<&Optimizer<f32>>,
) -> Checkpoint {
    let mut ck = Checkpoint::new(Header {
        kind: ModelKind::Score,
        dim: params.dim,
        k: params.k,
        layer_sizes: params.weight_net.sizes(),
        hidden_activation: params.weight_net.hidden_activation,
        seed: params.seed,
        parent_copies_renormalized: false,
        node_labels: Vec::new(),
        optimizer: None,
        tensors: Vec::new(),
    });
    ck.push("transforms", params.transforms.clone());
    ck.push_mlp("net", &params.weight_net);
    if let Some((g, store)) = parents {
        ck.header.node_labels = g.labels().to_vec();
        ck.push("parent_copies", store.parent_table().to_vec());
    }
    if let Some(opt) = optimizer {
        ck.push_optimizer(opt);
    }
    ck
}

pub fn load_score(ck: &Checkpoint) -> Result<(ScoreParams<f32>, Option<ParentTable>)> {
    ck.expect_kind(ModelKind::Score)?;
    let h = &ck.header;
    let params = ScoreParams {
        dim: h.dim,
        k: h.k,
        transforms: ck.tensor_len("transforms", h.k * h.dim * h.dim)?.to_vec(),
        weight_net: ck.read_mlp("net")?,
        seed: h.seed,
    };
    params
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let table = if h.node_labels.is_empty() {
        None
    } else {
        Some(ParentTable {
            dim: h.dim,
            labels: h.node_labels.clone(),
            values: ck
                .tensor_len("parent_copies", h.node_labels.len() * h.dim)?
                .to_vec(),
        })
    };
    Ok((params, table))
}

/// Checkpoint for a bare network (the feedforward baseline).
pub fn save_mlp(
    kind: ModelKind,
    dim: usize,
    seed: u64,
    net: &Mlp<f32>,
    optimizer: Option<&Optimizer<f32>>,
) -> Checkpoint {
    let mut ck = Checkpoint::new(Header {
        kind,
        dim,
        k: 0,
        layer_sizes: net.sizes(),
        hidden_activation: net.hidden_activation,
        seed,
        parent_copies_renormalized: false,
        node_labels: Vec::new(),
        optimizer: None,
        tensors: Vec::new(),
    });
    ck.push_mlp("net", net);
    if let Some(opt) = optimizer {
        ck.push_optimizer(opt);
    }
    ck
}

pub fn load_mlp(ck: &Checkpoint, kind: ModelKind) -> Result<Mlp<f32>> {
    ck.expect_kind(kind)?;
    ck.read_mlp("net")
}
