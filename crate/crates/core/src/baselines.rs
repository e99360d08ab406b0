//! Reference rankers: random permutation, word-overlap Jaccard, and a
//! feedforward binary classifier over concatenated embeddings.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::{DistanceMatrix, KnowledgeGraph, NodeId, SplitAssignment};
use crate::metrics::{self, order_by_scores, Ranker};
use crate::nn::{sigmoid, Activation, DenseGrad, Mlp};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng;
use crate::text::tokenize;
use crate::training::{EpochRecord, NegativeTable};

/// One independent seeded permutation per query.
#[derive(Debug, Clone, Copy)]
pub struct RandomGuess {
    pub seed: u64,
}

impl Ranker for RandomGuess {
    fn rank(&self, query: NodeId, candidates: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut out = candidates.to_vec();
        out.shuffle(&mut rng::stream(self.seed, "random-guess", query.0 as u64));
        Ok(out)
    }
}

/// `|A ∩ B| / |A ∪ B|` over lowercased word sets.
pub fn jaccard_score(a: &str, b: &str) -> Result<f64> {
    let wa: BTreeSet<String> = tokenize(a).into_iter().collect();
    let wb: BTreeSet<String> = tokenize(b).into_iter().collect();
    if wa.is_empty() || wb.is_empty() {
        return Err(Error::invalid("Jaccard similarity needs non-empty texts"));
    }
    let inter = wa.intersection(&wb).count();
    let union = wa.union(&wb).count();
    Ok(inter as f64 / union as f64)
}

/// Ranks candidates by label overlap with the query's label.
pub struct JaccardRanker<'a> {
    pub graph: &'a KnowledgeGraph,
}

impl Ranker for JaccardRanker<'_> {
    fn rank(&self, query: NodeId, candidates: &[NodeId]) -> Result<Vec<NodeId>> {
        self.graph.check_node(query)?;
        let q = self.graph.label(query);
        let scores = candidates
            .iter()
            .map(|&c| jaccard_score(q, self.graph.label(c)))
            .collect::<Result<Vec<_>>>()?;
        order_by_scores(candidates, &scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfnnConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub hidden_sizes: Vec<usize>,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for FfnnConfig {
    fn default() -> Self {
        FfnnConfig {
            batch_size: 4096,
            learning_rate: 1e-4,
            weight_decay: 1.0,
            optimizer: OptimizerKind::Adam,
            hidden_sizes: vec![150, 150],
            patience: 10,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl FfnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::invalid(
                "batch_size, patience and max_epochs must be positive",
            ));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden_sizes must be non-empty and positive"));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning_rate and weight_decay must be non-negative"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid("patience cannot exceed max_epochs"));
        }
        Ok(())
    }
}

/// ReLU network `2d -> hidden... -> 1` producing a logit; the pair score
/// is its sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnnParams {
    pub dim: usize,
    pub net: Mlp<f32>,
    pub seed: u64,
}

impl FfnnParams {
    pub fn init(dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![2 * dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut r = rng::stream(seed, "init-ffnn", 0);
        FfnnParams {
            dim,
            net: Mlp::glorot(&sizes, Activation::Relu, &mut r),
            seed,
        }
    }

    fn input(&self, u: NodeId, v: NodeId, store: &EmbeddingStore<f32>) -> Result<Vec<f32>> {
        if store.dim() != self.dim {
            return Err(Error::Shape(format!(
                "embedding dim {} != classifier dim {}",
                store.dim(),
                self.dim
            )));
        }
        let mut x = store.try_child(u)?.to_vec();
        x.extend_from_slice(store.try_parent(v)?);
        Ok(x)
    }

    pub fn logit(&self, u: NodeId, v: NodeId, store: &EmbeddingStore<f32>) -> Result<f32> {
        Ok(self.net.forward(&self.input(u, v, store)?)?[0])
    }
}

/// Sigmoid output for child `u` and candidate parent `v`.
pub fn ffnn_score(
    u: NodeId,
    v: NodeId,
    params: &FfnnParams,
    store: &EmbeddingStore<f32>,
) -> Result<f32> {
    Ok(sigmoid(params.logit(u, v, store)?))
}

pub struct FfnnRanker<'a> {
    pub params: &'a FfnnParams,
    pub store: &'a EmbeddingStore<f32>,
}

impl Ranker for FfnnRanker<'_> {
    fn rank(&self, query: NodeId, candidates: &[NodeId]) -> Result<Vec<NodeId>> {
        // logits order identically to sigmoid outputs without saturating ties
        let scores = candidates
            .iter()
            .map(|&c| self.params.logit(query, c, self.store).map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        order_by_scores(candidates, &scores)
    }
}

#[derive(Debug, Clone)]
pub struct FfnnState {
    pub params: FfnnParams,
    pub optimizer: Optimizer<f32>,
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_validation_mrr: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Labelled pairs: each sampled negative is paired with its child's true
/// parent so both classes are equally represented.
fn examples(train: &[(NodeId, NodeId)], negatives: &NegativeTable) -> Vec<(NodeId, NodeId, f32)> {
    let mut out = Vec::new();
    for &(u, v) in train {
        for &n in negatives.rows.get(&u).into_iter().flatten() {
            out.push((u, v, 1.0));
            out.push((u, n, 0.0));
        }
    }
    out
}

const EXAMPLE_CHUNK: usize = 256;

/// Mean binary cross-entropy on logits and its gradient.
pub fn bce_loss_grad(
    params: &FfnnParams,
    store: &EmbeddingStore<f32>,
    batch: &[(NodeId, NodeId, f32)],
) -> Result<(f64, Vec<DenseGrad<f32>>)> {
    let inv = 1.0 / batch.len() as f32;
    let parts = batch
        .par_chunks(EXAMPLE_CHUNK)
        .map(|chunk| -> Result<(f64, Vec<DenseGrad<f32>>)> {
            let mut grads = params.net.zero_grads();
            let mut loss = 0.0f64;
            for &(u, v, y) in chunk {
                let trace = params.net.trace(&params.input(u, v, store)?)?;
                let z = trace.output()[0];
                // softplus(z) - y z, computed stably
                let sp = z.max(0.0) as f64 + (-(z.abs() as f64)).exp().ln_1p();
                loss += sp - (y * z) as f64;
                params
                    .net
                    .backward(&trace, &[(sigmoid(z) - y) * inv], &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut grads = params.net.zero_grads();
    for (loss, part) in parts {
        total += loss;
        for (acc, p) in grads.iter_mut().zip(part) {
            acc.weight.iter_mut().zip(p.weight).for_each(|(a, b)| *a += b);
            acc.bias.iter_mut().zip(p.bias).for_each(|(a, b)| *a += b);
        }
    }
    Ok((total / batch.len() as f64, grads))
}

fn validation_mrr(
    params: &FfnnParams,
    store: &EmbeddingStore<f32>,
    split: &SplitAssignment,
    candidates: &[NodeId],
    dm: &DistanceMatrix,
) -> Result<Option<f64>> {
    if split.validation.is_empty() {
        return Ok(None);
    }
    let ranker = FfnnRanker { params, store };
    Ok(Some(
        metrics::evaluate(&ranker, &split.validation, candidates, dm)?.mrr,
    ))
}

/// Train the classifier on the training pairs against `negatives` (the
/// proposed method's table), keeping the best-validation-MRR snapshot.
pub fn ffnn_train(
    g: &KnowledgeGraph,
    split: &SplitAssignment,
    store: &EmbeddingStore<f32>,
    dm: &DistanceMatrix,
    negatives: &NegativeTable,
    cfg: &FfnnConfig,
) -> Result<FfnnState> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut params = FfnnParams::init(store.dim(), &cfg.hidden_sizes, cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    let mut data = examples(&split.train, negatives);
    if data.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let candidates = split.candidates(g);
    let initial = validation_mrr(&params, store, split, &candidates, dm)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        validation_mrr: initial,
    }];
    let mut best = FfnnState {
        params: params.clone(),
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
        data.shuffle(&mut rng::stream(cfg.seed, "ffnn-shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for (b, batch) in data.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = bce_loss_grad(&params, store, batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss * batch.len() as f64;
            opt.update(params.net.segments_mut(), crate::nn::grad_segments(&grads))?;
        }
        let mrr = validation_mrr(&params, store, split, &candidates, dm)?;
        history.push(EpochRecord {
            epoch,
            train_loss: Some(loss_sum / data.len() as f64),
            validation_mrr: mrr,
        });
        let improved = match (mrr, best.best_validation_mrr) {
            (Some(now), Some(prev)) => now > prev,
            _ => true,
        };
        if improved {
            best.params = params.clone();
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::toy;
    use crate::training::sample_negatives;

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_score("Modern Design", "Design and Architecture").unwrap(), 0.25);
        assert_eq!(jaccard_score("a b", "B A").unwrap(), 1.0);
        assert_eq!(jaccard_score("a b", "c d").unwrap(), 0.0);
        assert!(jaccard_score("", "x").is_err());
        assert_eq!(
            jaccard_score("x y z", "y").unwrap(),
            jaccard_score("y", "x y z").unwrap()
        );
    }

    #[test]
    fn random_guess_is_seeded_per_query() {
        let cands: Vec<NodeId> = (0..10).map(NodeId).collect();
        let r = RandomGuess { seed: 4 };
        assert_eq!(r.rank(NodeId(1), &cands).unwrap(), r.rank(NodeId(1), &cands).unwrap());
        assert_ne!(
            r.rank(NodeId(1), &cands).unwrap(),
            RandomGuess { seed: 5 }.rank(NodeId(1), &cands).unwrap()
        );
        let mut sorted = r.rank(NodeId(2), &cands).unwrap();
        sorted.sort();
        assert_eq!(sorted, cands);
        assert_eq!(r.rank(NodeId(0), &[NodeId(3)]).unwrap(), vec![NodeId(3)]);
    }

    #[test]
    fn random_guess_mrr_matches_expectation() {
        let cands: Vec<NodeId> = (0..20).map(NodeId).collect();
        let r = RandomGuess { seed: 11 };
        let ranks: Vec<usize> = (100..20_100)
            .map(|q| {
                let order = r.rank(NodeId(q), &cands).unwrap();
                order.iter().position(|&c| c == NodeId(7)).unwrap() + 1
            })
            .collect();
        let got = metrics::mrr(&ranks).unwrap();
        let want = metrics::expected_random_mrr(20);
        assert!((got - want).abs() < 0.5, "{got} vs {want}");
    }

    /// Independent forward pass written out by hand.
    fn straight_line(p: &FfnnParams, x: &[f32]) -> f32 {
        let mut h: Vec<f32> = x.to_vec();
        let last = p.net.layers.len() - 1;
        for (i, l) in p.net.layers.iter().enumerate() {
            let mut next = Vec::new();
            for o in 0..l.outputs {
                let mut z = l.bias[o];
                for j in 0..l.inputs {
                    z += l.weight[o * l.inputs + j] * h[j];
                }
                next.push(if i == last { z } else { z.max(0.0) });
            }
            h = next;
        }
        1.0 / (1.0 + (-h[0]).exp())
    }

    #[test]
    fn score_matches_straight_line_oracle() {
        let g = toy();
        let store = EmbeddingStore::random(g.len(), 4, 3);
        let mut p = FfnnParams::init(4, &[5, 3], 8);
        p.net.layers[0].bias = vec![0.1, -0.2, 0.3, 0.0, 0.05];
        for u in 0..6 {
            for v in 0..6 {
                let (u, v) = (NodeId(u), NodeId(v));
                let mut x = store.child(u).to_vec();
                x.extend_from_slice(store.parent(v));
                let want = straight_line(&p, &x);
                let got = ffnn_score(u, v, &p, &store).unwrap();
                assert!((got - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_network_scores_one_half_and_bias_raises_scores() {
        let g = toy();
        let store = EmbeddingStore::random(g.len(), 4, 3);
        let mut p = FfnnParams::init(4, &[3], 0);
        for l in &mut p.net.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        assert_eq!(ffnn_score(NodeId(0), NodeId(1), &p, &store).unwrap(), 0.5);
        let q = FfnnParams::init(4, &[3], 1);
        let mut raised = q.clone();
        raised.net.layers.last_mut().unwrap().bias[0] += 0.5;
        for u in 0..6 {
            let (a, b) = (
                ffnn_score(NodeId(u), NodeId(1), &q, &store).unwrap(),
                ffnn_score(NodeId(u), NodeId(1), &raised, &store).unwrap(),
            );
            assert!(b > a);
        }
        let wrong = EmbeddingStore::random(g.len(), 3, 3);
        assert!(ffnn_score(NodeId(0), NodeId(1), &q, &wrong).is_err());
    }

    fn toy_split(g: &KnowledgeGraph) -> SplitAssignment {
        SplitAssignment {
            train: g
                .real_nodes()
                .filter(|&n| !g.is_subgraph_root(n))
                .map(|n| (n, g.parent(n).unwrap()))
                .collect(),
            validation: Vec::new(),
            test: Vec::new(),
            seed: 0,
            test_frac: 0.0,
            train_frac: 1.0,
        }
    }

    #[test]
    fn training_separates_positives_from_negatives() {
        let g = toy();
        let dm = DistanceMatrix::compute(&g).unwrap();
        let store = crate::embed::synth_embeddings(&g, 4, 0.0, 2).unwrap();
        let split = toy_split(&g);
        let pool: Vec<NodeId> = g.real_nodes().collect();
        let negs = sample_negatives(&g, &split.train, &pool, 3, 1).unwrap();
        let cfg = FfnnConfig {
            batch_size: 8,
            learning_rate: 0.01,
            weight_decay: 0.0,
            hidden_sizes: vec![8],
            patience: 100,
            max_epochs: 100,
            ..Default::default()
        };
        let state = ffnn_train(&g, &split, &store, &dm, &negs, &cfg).unwrap();
        let mean = |label: f32| {
            let xs: Vec<f32> = examples(&split.train, &negs)
                .into_iter()
                .filter(|e| e.2 == label)
                .map(|(u, v, _)| ffnn_score(u, v, &state.params, &store).unwrap())
                .collect();
            xs.iter().sum::<f32>() / xs.len() as f32
        };
        assert!(mean(1.0) > mean(0.0));

        let frozen = ffnn_train(
            &g,
            &split,
            &store,
            &dm,
            &negs,
            &FfnnConfig {
                learning_rate: 0.0,
                max_epochs: 3,
                patience: 3,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(frozen.params, FfnnParams::init(4, &[8], 0));
    }
}
