//! Minimum-margin triplet training.
//!
//! For a child `u` with parent `v` and a negative `v'`, the constraint
//! `s(u, v) >= s(u, v') + d(v, v')` asks the true parent to win by at least
//! the hop distance between the two candidates. Training minimizes the
//! batch mean of the hinge violations over a fixed table of sampled
//! negatives and keeps the snapshot with the best validation MRR.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::{DistanceMatrix, KnowledgeGraph, NodeId, SplitAssignment};
use crate::metrics::{self, ModelRanker};
use crate::nn::{DenseGrad, Trace};
use crate::optim::{Optimizer, OptimizerKind};
use crate::real::{dot, Real};
use crate::rng::{self, derive_seed, PRNG_NAME};
use crate::scoring::{init_params, ParamGradients, ScoreParams};

/// Largest graph for which [`loss_full`] enumerates every negative.
pub const FULL_LOSS_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub child: NodeId,
    pub parent: NodeId,
    pub negative: NodeId,
}

/// The required score gap between `v` and `v'`: their hop distance.
pub fn margin(v: NodeId, v_neg: NodeId, dm: &DistanceMatrix) -> u32 {
    dm.get(v, v_neg)
}

/// `max(0, s_neg - s_pos + margin)`.
pub fn hinge<R: Real>(s_pos: R, s_neg: R, margin: R) -> R {
    (s_neg - s_pos + margin).max(R::zero())
}

pub fn violation<R: Real>(
    t: Triplet,
    params: &ScoreParams<R>,
    store: &EmbeddingStore<R>,
    dm: &DistanceMatrix,
) -> Result<R> {
    let pos = params.score(t.child, t.parent, store)?;
    let neg = params.score(t.child, t.negative, store)?;
    Ok(hinge(pos, neg, R::of(margin(t.parent, t.negative, dm) as f64)))
}

/// Scores of every node as a parent of each training child, row per pair.
/// Only built for graphs within [`FULL_LOSS_LIMIT`].
#[derive(Debug, Clone)]
pub struct ScoreTable {
    nodes: usize,
    scores: Vec<f64>,
}

impl ScoreTable {
    pub fn compute<R: Real>(
        g: &KnowledgeGraph,
        train: &[(NodeId, NodeId)],
        params: &ScoreParams<R>,
        store: &EmbeddingStore<R>,
    ) -> Result<Self> {
        if g.len() > FULL_LOSS_LIMIT {
            return Err(Error::TooLarge {
                nodes: g.len(),
                limit: FULL_LOSS_LIMIT,
            });
        }
        if train.is_empty() {
            return Err(Error::invalid("training split is empty"));
        }
        let scorer = crate::scoring::Scorer::new(params, store)?;
        let all: Vec<NodeId> = g.nodes().collect();
        let rows = train
            .par_iter()
            .map(|&(u, _)| scorer.scores(u, &all))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreTable {
            nodes: all.len(),
            scores: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.nodes..(i + 1) * self.nodes]
    }
}

/// Sum of hinge violations over every training pair and every negative in
/// `V` minus the true parent and the dummy root.
pub fn loss_full_from_scores(
    g: &KnowledgeGraph,
    train: &[(NodeId, NodeId)],
    table: &ScoreTable,
    dm: &DistanceMatrix,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, &(_, v)) in train.iter().enumerate() {
        let s = table.row(i);
        for neg in g.real_nodes().filter(|&n| n != v) {
            total += hinge(s[v.index()], s[neg.index()], margin(v, neg, dm) as f64);
        }
    }
    Ok(total)
}

pub fn loss_full<R: Real>(
    g: &KnowledgeGraph,
    train: &[(NodeId, NodeId)],
    params: &ScoreParams<R>,
    store: &EmbeddingStore<R>,
    dm: &DistanceMatrix,
) -> Result<f64> {
    let table = ScoreTable::compute(g, train, params, store)?;
    loss_full_from_scores(g, train, &table, dm)
}

/// Nodes eligible as negatives: children and parents of training pairs,
/// optionally extended by validation pairs. Never the dummy root.
pub fn negative_pool(
    g: &KnowledgeGraph,
    split: &SplitAssignment,
    include_validation: bool,
) -> Vec<NodeId> {
    let mut pool = BTreeSet::new();
    let extra: &[(NodeId, NodeId)] = if include_validation {
        &split.validation
    } else {
        &[]
    };
    for &(c, p) in split.train.iter().chain(extra) {
        pool.insert(c);
        pool.insert(p);
    }
    pool.into_iter().filter(|&n| !g.is_dummy(n)).collect()
}

/// `m` distinct negatives per training child, drawn uniformly without
/// replacement from the pool minus the child and its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeTable {
    pub rows: BTreeMap<NodeId, Vec<NodeId>>,
}

pub fn sample_negatives(
    g: &KnowledgeGraph,
    train: &[(NodeId, NodeId)],
    pool: &[NodeId],
    m: usize,
    seed: u64,
) -> Result<NegativeTable> {
    let mut rows = BTreeMap::new();
    for &(u, v) in train {
        let eligible: Vec<NodeId> = pool
            .iter()
            .copied()
            .filter(|&n| n != u && n != v && !g.is_dummy(n))
            .collect();
        if eligible.len() < m {
            return Err(Error::TooFewNegatives {
                child: g.label(u).to_string(),
                requested: m,
                available: eligible.len(),
            });
        }
        let mut r = rng::stream(seed, "negatives", u.0 as u64);
        let mut picked: Vec<NodeId> = rand::seq::index::sample(&mut r, eligible.len(), m)
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        picked.sort_unstable();
        rows.insert(u, picked);
    }
    Ok(NegativeTable { rows })
}

impl NegativeTable {
    /// The table a training run with `cfg` uses for `epoch` (epoch 0 unless
    /// negatives are resampled every epoch).
    pub fn for_run(
        g: &KnowledgeGraph,
        split: &SplitAssignment,
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<Self> {
        let pool = negative_pool(g, split, cfg.include_validation_negatives);
        let seed = derive_seed(cfg.seed, "negative-table", epoch as u64);
        sample_negatives(g, &split.train, &pool, cfg.negatives_per_child, seed)
    }

    pub fn triplets(&self, train: &[(NodeId, NodeId)]) -> Vec<Triplet> {
        train
            .iter()
            .flat_map(|&(u, v)| {
                self.rows.get(&u).into_iter().flatten().map(move |&n| Triplet {
                    child: u,
                    parent: v,
                    negative: n,
                })
            })
            .collect()
    }
}

/// Batch-mean hinge loss, evaluated score by score.
pub fn batch_loss<R: Real>(
    params: &ScoreParams<R>,
    store: &EmbeddingStore<R>,
    dm: &DistanceMatrix,
    batch: &[Triplet],
) -> Result<R> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = R::zero();
    for &t in batch {
        total += violation(t, params, store, dm)?;
    }
    Ok(total / R::of(batch.len() as f64))
}

/// Contributions from one child's triplets.
struct ChildPart<R> {
    child: NodeId,
    loss: R,
    /// `k x d`: sum over active candidates of `c * w_x[i] * e_x`.
    outer: Option<Vec<R>>,
    /// `(node slot, d(loss)/d(w_x), direct parent-copy gradient)`.
    nodes: Vec<(usize, Vec<R>, Vec<R>)>,
}

const NODE_CHUNK: usize = 32;

/// Batch-mean hinge loss and its gradient. Triplets sharing a child reuse
/// one projection and one rank-k outer-product update; the weight network
/// is back-propagated once per distinct candidate. Reductions run over
/// fixed chunks in a fixed order, so results do not depend on scheduling.
pub fn batch_loss_grad<R: Real>(
    params: &ScoreParams<R>,
    store: &EmbeddingStore<R>,
    dm: &DistanceMatrix,
    batch: &[Triplet],
) -> Result<(R, ParamGradients<R>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (d, k) = (params.dim, params.k);
    let inv = R::of(1.0 / batch.len() as f64);

    let mut nodes: Vec<NodeId> = batch.iter().flat_map(|t| [t.parent, t.negative]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let traces: Vec<Trace<R>> = nodes
        .par_iter()
        .map(|&x| params.weight_net.trace(store.try_parent(x)?))
        .collect::<Result<_>>()?;
    let slot = |x: NodeId| nodes.binary_search(&x).expect("node collected above");

    let mut order: Vec<Triplet> = batch.to_vec();
    order.sort_unstable();
    let groups: Vec<&[Triplet]> = order.chunk_by(|a, b| a.child == b.child).collect();

    let parts = groups
        .par_iter()
        .map(|group| -> Result<ChildPart<R>> {
            let u = group[0].child;
            let e_u = store.try_child(u)?;
            let projected = params.project(e_u);
            let mut q_cache: BTreeMap<usize, Vec<R>> = BTreeMap::new();
            let mut coef: BTreeMap<usize, R> = BTreeMap::new();
            let mut loss = R::zero();
            let score = |x: NodeId, q_cache: &mut BTreeMap<usize, Vec<R>>| -> R {
                let s = slot(x);
                let e_x = store.parent(x);
                let q = q_cache.entry(s).or_insert_with(|| {
                    (0..k)
                        .map(|i| dot(&projected[i * d..(i + 1) * d], e_x))
                        .collect()
                });
                q.iter().zip(traces[s].output()).map(|(&a, &w)| a * w).sum()
            };
            for t in group.iter() {
                let pos = score(t.parent, &mut q_cache);
                let neg = score(t.negative, &mut q_cache);
                let gap = R::of(margin(t.parent, t.negative, dm) as f64);
                let h = neg - pos + gap;
                if h > R::zero() {
                    loss += h;
                    *coef.entry(slot(t.negative)).or_insert(R::zero()) += inv;
                    *coef.entry(slot(t.parent)).or_insert(R::zero()) -= inv;
                }
            }
            let mut outer: Option<Vec<R>> = None;
            let mut out_nodes = Vec::new();
            for (&s, &c) in &coef {
                if c == R::zero() {
                    continue;
                }
                let w = traces[s].output();
                let e_x = store.parent(nodes[s]);
                let acc = outer.get_or_insert_with(|| vec![R::zero(); k * d]);
                for i in 0..k {
                    let cw = c * w[i];
                    for (a, &e) in acc[i * d..(i + 1) * d].iter_mut().zip(e_x) {
                        *a += cw * e;
                    }
                }
                let dw: Vec<R> = q_cache[&s].iter().map(|&q| c * q).collect();
                let direct: Vec<R> = (0..d)
                    .map(|j| c * (0..k).map(|i| w[i] * projected[i * d + j]).sum::<R>())
                    .collect();
                out_nodes.push((s, dw, direct));
            }
            Ok(ChildPart {
                child: u,
                loss,
                outer,
                nodes: out_nodes,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grads = ParamGradients::zeros(params);
    let loss = parts.iter().fold(R::zero(), |acc, p| acc + p.loss) * inv;

    // transforms: dP_i = sum_u e_u (outer) a_{u,i}
    let active: Vec<(&[R], &[R])> = parts
        .iter()
        .filter_map(|p| Some((store.child(p.child), p.outer.as_deref()?)))
        .collect();
    grads
        .transforms
        .par_chunks_mut(d * d)
        .enumerate()
        .for_each(|(i, gp)| {
            for &(e_u, a) in &active {
                let a_i = &a[i * d..(i + 1) * d];
                for (row, &x) in e_u.iter().enumerate() {
                    if x == R::zero() {
                        continue;
                    }
                    for (g, &av) in gp[row * d..(row + 1) * d].iter_mut().zip(a_i) {
                        *g += x * av;
                    }
                }
            }
        });

    let mut dw = vec![vec![R::zero(); k]; nodes.len()];
    let mut direct = vec![vec![R::zero(); d]; nodes.len()];
    let mut touched = vec![false; nodes.len()];
    for p in &parts {
        for (s, w, dir) in &p.nodes {
            touched[*s] = true;
            dw[*s].iter_mut().zip(w).for_each(|(a, &b)| *a += b);
            direct[*s].iter_mut().zip(dir).for_each(|(a, &b)| *a += b);
        }
    }
    let live: Vec<usize> = (0..nodes.len()).filter(|&s| touched[s]).collect();
    let chunks = live
        .par_chunks(NODE_CHUNK)
        .map(|chunk| -> Result<(Vec<DenseGrad<R>>, Vec<(usize, Vec<R>)>)> {
            let mut net = params.weight_net.zero_grads();
            let mut inputs = Vec::with_capacity(chunk.len());
            for &s in chunk {
                let gx = params.weight_net.backward(&traces[s], &dw[s], &mut net)?;
                inputs.push((s, gx));
            }
            Ok((net, inputs))
        })
        .collect::<Result<Vec<_>>>()?;
    for (net, inputs) in chunks {
        for (acc, part) in grads.weight_net.iter_mut().zip(net) {
            acc.weight.iter_mut().zip(part.weight).for_each(|(a, b)| *a += b);
            acc.bias.iter_mut().zip(part.bias).for_each(|(a, b)| *a += b);
        }
        for (s, gx) in inputs {
            let row: Vec<R> = direct[s].iter().zip(gx).map(|(&a, b)| a + b).collect();
            grads.parent.insert(nodes[s], row);
        }
    }
    Ok((loss, grads))
}

/// Mean hinge violation over many triplets with a fixed snapshot.
pub fn mean_violation<R: Real>(
    params: &ScoreParams<R>,
    store: &EmbeddingStore<R>,
    dm: &DistanceMatrix,
    triplets: &[Triplet],
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::invalid("no triplets"));
    }
    let sums = triplets
        .par_chunks(1024)
        .map(|c| {
            c.iter()
                .map(|&t| violation(t, params, store, dm).map(|v| v.as_f64()))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sums.iter().sum::<f64>() / triplets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub hidden_sizes: Vec<usize>,
    pub negatives_per_child: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Draw a fresh negative table every epoch instead of once per run.
    pub resample_negatives: bool,
    /// Let validation nodes serve as negatives.
    pub include_validation_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 128,
            batch_size: 8192,
            learning_rate: 1e-3,
            weight_decay: 1.0,
            optimizer: OptimizerKind::AdamW,
            hidden_sizes: vec![150, 150],
            negatives_per_child: 5000,
            patience: 10,
            max_epochs: 200,
            seed: 0,
            resample_negatives: false,
            include_validation_negatives: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("batch_size", self.batch_size),
            ("negatives_per_child", self.negatives_per_child),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden_sizes must be non-empty and positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be finite and non-negative"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid("patience cannot exceed max_epochs"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean hinge over the epoch's triplets; absent for the initial snapshot.
    pub train_loss: Option<f64>,
    pub validation_mrr: Option<f64>,
}

/// The best snapshot of a run plus its history.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ScoreParams<f32>,
    /// Child copies as given; parent copies as trained.
    pub store: EmbeddingStore<f32>,
    pub optimizer: Optimizer<f32>,
    /// Epochs actually run.
    pub epoch: usize,
    pub best_epoch: usize,
    /// `None` when the validation split is empty (the last epoch wins).
    pub best_validation_mrr: Option<f64>,
    pub history: Vec<EpochRecord>,
}

fn validation_mrr(
    params: &ScoreParams<f32>,
    store: &EmbeddingStore<f32>,
    split: &SplitAssignment,
    candidates: &[NodeId],
    dm: &DistanceMatrix,
) -> Result<Option<f64>> {
    if split.validation.is_empty() {
        return Ok(None);
    }
    let ranker = ModelRanker::new(params, store)?;
    Ok(Some(
        metrics::evaluate(&ranker, &split.validation, candidates, dm)?.mrr,
    ))
}

pub fn train(
    g: &KnowledgeGraph,
    split: &SplitAssignment,
    store: &EmbeddingStore<f32>,
    dm: &DistanceMatrix,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if store.len() != g.len() || dm.len() != g.len() {
        return Err(Error::Shape(format!(
            "graph has {} nodes, embeddings {}, distances {}",
            g.len(),
            store.len(),
            dm.len()
        )));
    }
    let mut params = init_params(store.dim(), cfg.k, &cfg.hidden_sizes, cfg.seed)?;
    let mut live = store.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    let candidates = split.candidates(g);
    let mut triplets = NegativeTable::for_run(g, split, cfg, 0)?.triplets(&split.train);

    let initial = validation_mrr(&params, &live, split, &candidates, dm)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        validation_mrr: initial,
    }];
    let mut best = TrainState {
        params: params.clone(),
        store: live.clone(),
        optimizer: opt.clone(),
        epoch: 0,
        best_epoch: 0,
        best_validation_mrr: initial,
        history: Vec::new(),
    };
    let mut stale = 0;
    let mut epoch = 0;
    while epoch < cfg.max_epochs {
        epoch += 1;
        if cfg.resample_negatives && epoch > 1 {
            triplets = NegativeTable::for_run(g, split, cfg, epoch - 1)?.triplets(&split.train);
        }
        triplets.shuffle(&mut rng::stream(cfg.seed, "epoch-shuffle", epoch as u64));
        let mut hinge_sum = 0.0;
        for (b, batch) in triplets.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_loss_grad(&params, &live, dm, batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
            }
            hinge_sum += loss as f64 * batch.len() as f64;
            let parent_grad = grads.dense_parent(live.len(), live.dim());
            let mut segs = params.segments_mut();
            segs.push(live.parent_table_mut());
            let mut gsegs = grads.segments();
            gsegs.push(&parent_grad);
            opt.update(segs, gsegs)?;
        }
        let train_loss = hinge_sum / triplets.len() as f64;
        let mrr = validation_mrr(&params, &live, split, &candidates, dm)?;
        tracing::info!(epoch, train_loss, validation_mrr = ?mrr, "epoch done");
        history.push(EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            validation_mrr: mrr,
        });
        let improved = match (mrr, best.best_validation_mrr) {
            (Some(now), Some(prev)) => now > prev,
            (None, _) => true,
            (Some(_), None) => true,
        };
        if improved {
            best.params = params.clone();
            best.store = live.clone();
            best.optimizer = opt.clone();
            best.best_epoch = epoch;
            best.best_validation_mrr = mrr;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    best.epoch = epoch;
    best.history = history;
    Ok(best)
}

/// Everything needed to rerun a training job bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub prng: String,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of each input file, keyed by role.
    pub digests: BTreeMap<String, String>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_mrr: Option<f64>,
}

impl RunManifest {
    pub fn new(cfg: &TrainConfig, state: &TrainState, digests: BTreeMap<String, String>) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("run".to_string(), cfg.seed);
        seeds.insert(
            "negative-table".to_string(),
            derive_seed(cfg.seed, "negative-table", 0),
        );
        RunManifest {
            config: cfg.clone(),
            prng: PRNG_NAME.to_string(),
            seeds,
            digests,
            epochs: state.history.clone(),
            best_epoch: state.best_epoch,
            best_validation_mrr: state.best_validation_mrr,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}
