//! Parent ranking and evaluation.
//!
//! Ranking quality is reported as MRR and R@1; how far wrong answers land
//! from the truth is reported as MND (mean hop distance between the true
//! and top-ranked parent, normalized by the diameter) and MND-I (the same
//! mean restricted to incorrect top predictions). All metrics are
//! percentages computed in `f64`.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::{DistanceMatrix, KnowledgeGraph, NodeId};
use crate::real::Real;
use crate::scoring::{ScoreParams, Scorer};
use crate::training;

/// Anything that orders candidate parents for a query node.
pub trait Ranker: Sync {
    fn rank(&self, query: NodeId, candidates: &[NodeId]) -> Result<Vec<NodeId>>;
}

/// Descending score, ties by ascending id. Non-finite scores are rejected.
pub fn order_by_scores(candidates: &[NodeId], scores: &[f64]) -> Result<Vec<NodeId>> {
    if candidates.len() != scores.len() {
        return Err(Error::Shape("one score per candidate required".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score of candidate {}", candidates[i])));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(candidates[a].cmp(&candidates[b]))
    });
    Ok(order.into_iter().map(|i| candidates[i]).collect())
}

/// Highest-scoring candidate, lowest id on ties.
pub fn argmax(candidates: &[NodeId], scores: &[f64]) -> Option<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for (&c, &s) in candidates.iter().zip(scores) {
        match best {
            Some((bc, bs)) if s < bs || (s == bs && c > bc) => {}
            _ => best = Some((c, s)),
        }
    }
    best.map(|(c, _)| c)
}

/// Ranks with the learned score function.
pub struct ModelRanker<'a, R: Real = f32> {
    scorer: Scorer<'a, R>,
}

impl<'a, R: Real> ModelRanker<'a, R> {
    pub fn new(params: &'a ScoreParams<R>, store: &'a EmbeddingStore<R>) -> Result<Self> {
        Ok(ModelRanker {
            scorer: Scorer::new(params, store)?,
        })
    }

    pub fn scorer(&self) -> &Scorer<'a, R> {
        &self.scorer
    }
}

impl<R: Real> Ranker for ModelRanker<'_, R> {
    fn rank(&self, query: NodeId, candidates: &[NodeId]) -> Result<Vec<NodeId>> {
        let scores = self.scorer.scores(query, candidates)?;
        order_by_scores(candidates, &scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub query: NodeId,
    pub ranking: Vec<NodeId>,
    /// 1-based position of the true parent.
    pub rank_of_true: usize,
}

impl RankedPrediction {
    pub fn new(query: NodeId, ranking: Vec<NodeId>, true_parent: NodeId) -> Result<Self> {
        let pos = ranking
            .iter()
            .position(|&c| c == true_parent)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "true parent {true_parent} of {query} is not a candidate"
                ))
            })?;
        Ok(RankedPrediction {
            query,
            ranking,
            rank_of_true: pos + 1,
        })
    }

    pub fn top(&self) -> NodeId {
        self.ranking[0]
    }
}

pub fn rank_parents(
    ranker: &dyn Ranker,
    query: NodeId,
    true_parent: NodeId,
    candidates: &[NodeId],
) -> Result<RankedPrediction> {
    if candidates.is_empty() {
        return Err(Error::invalid("candidate set is empty"));
    }
    RankedPrediction::new(query, ranker.rank(query, candidates)?, true_parent)
}

fn nonempty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        Err(Error::invalid(format!("{what} needs at least one query")))
    } else {
        Ok(())
    }
}

/// `100 * mean(1 / rank)`.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    nonempty(ranks, "MRR")?;
    if ranks.contains(&0) {
        return Err(Error::invalid("ranks are 1-based"));
    }
    Ok(100.0 * ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// `100 * fraction of ranks equal to 1`.
pub fn r_at_1(ranks: &[usize]) -> Result<f64> {
    nonempty(ranks, "R@1")?;
    Ok(100.0 * ranks.iter().filter(|&&r| r == 1).count() as f64 / ranks.len() as f64)
}

/// `100 * mean(distance / diameter)`.
pub fn mnd_from_distances(distances: &[u32], diameter: u32) -> Result<f64> {
    nonempty(distances, "MND")?;
    if diameter == 0 {
        return Err(Error::invalid("diameter must be positive"));
    }
    let d = diameter as f64;
    Ok(100.0 * distances.iter().map(|&x| x as f64 / d).sum::<f64>() / distances.len() as f64)
}

/// MND over the non-zero distances; `None` when every prediction is correct.
pub fn mnd_i_from_distances(distances: &[u32], diameter: u32) -> Result<Option<f64>> {
    nonempty(distances, "MND-I")?;
    let wrong: Vec<u32> = distances.iter().copied().filter(|&x| x > 0).collect();
    if wrong.is_empty() {
        if diameter == 0 {
            return Err(Error::invalid("diameter must be positive"));
        }
        return Ok(None);
    }
    mnd_from_distances(&wrong, diameter).map(Some)
}

/// `(true parent, top prediction)` pairs.
pub fn mnd(pairs: &[(NodeId, NodeId)], dm: &DistanceMatrix) -> Result<f64> {
    let d: Vec<u32> = pairs.iter().map(|&(t, p)| dm.get(t, p)).collect();
    mnd_from_distances(&d, dm.diameter())
}

pub fn mnd_i(pairs: &[(NodeId, NodeId)], dm: &DistanceMatrix) -> Result<Option<f64>> {
    let d: Vec<u32> = pairs.iter().map(|&(t, p)| dm.get(t, p)).collect();
    mnd_i_from_distances(&d, dm.diameter())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub r_at_1: f64,
    pub mnd: f64,
    /// `None` when every top prediction is correct.
    pub mnd_i: Option<f64>,
    /// Number of queries.
    pub m: usize,
    pub diameter: u32,
}

impl EvalReport {
    pub fn from_predictions(
        predictions: &[RankedPrediction],
        true_parents: &[NodeId],
        dm: &DistanceMatrix,
    ) -> Result<Self> {
        let ranks: Vec<usize> = predictions.iter().map(|p| p.rank_of_true).collect();
        let pairs: Vec<(NodeId, NodeId)> = true_parents
            .iter()
            .zip(predictions)
            .map(|(&t, p)| (t, p.top()))
            .collect();
        Ok(EvalReport {
            mrr: mrr(&ranks)?,
            r_at_1: r_at_1(&ranks)?,
            mnd: mnd(&pairs, dm)?,
            mnd_i: mnd_i(&pairs, dm)?,
            m: predictions.len(),
            diameter: dm.diameter(),
        })
    }

    /// `MND - (1 - R@1/100) * MND-I`; zero up to rounding for every report.
    pub fn identity_residual(&self) -> f64 {
        match self.mnd_i {
            Some(i) => self.mnd - (1.0 - self.r_at_1 / 100.0) * i,
            None => self.mnd,
        }
    }
}

/// Rank every `(child, parent)` pair in `pairs` against `candidates`
/// (the query itself is never its own candidate) and aggregate.
pub fn evaluate(
    ranker: &dyn Ranker,
    pairs: &[(NodeId, NodeId)],
    candidates: &[NodeId],
    dm: &DistanceMatrix,
) -> Result<EvalReport> {
    let predictions = predict_all(ranker, pairs, candidates)?;
    let truth: Vec<NodeId> = pairs.iter().map(|&(_, p)| p).collect();
    EvalReport::from_predictions(&predictions, &truth, dm)
}

pub fn predict_all(
    ranker: &dyn Ranker,
    pairs: &[(NodeId, NodeId)],
    candidates: &[NodeId],
) -> Result<Vec<RankedPrediction>> {
    nonempty(pairs, "evaluation")?;
    pairs
        .par_iter()
        .map(|&(u, v)| {
            let cands: Vec<NodeId>;
            let cands = if candidates.binary_search(&u).is_ok() || candidates.contains(&u) {
                cands = candidates.iter().copied().filter(|&c| c != u).collect();
                &cands
            } else {
                candidates
            };
            rank_parents(ranker, u, v, cands)
        })
        .collect()
}

/// `100 / C * sum_{r=1..C} 1/r`: expected MRR of a uniformly random ranking.
pub fn expected_random_mrr(candidates: usize) -> f64 {
    let c = candidates as f64;
    100.0 / c * (1..=candidates).map(|r| 1.0 / r as f64).sum::<f64>()
}

/// Exact expected MND-I of a uniformly random top-1 prediction: for each
/// query, the mean normalized distance to the wrong candidates.
pub fn expected_random_mnd_i(
    pairs: &[(NodeId, NodeId)],
    candidates: &[NodeId],
    dm: &DistanceMatrix,
) -> Result<f64> {
    nonempty(pairs, "expected MND-I")?;
    let d = dm.diameter() as f64;
    let mut total = 0.0;
    for &(u, v) in pairs {
        let wrong: Vec<f64> = candidates
            .iter()
            .filter(|&&c| c != v && c != u)
            .map(|&c| dm.get(v, c) as f64 / d)
            .collect();
        if wrong.is_empty() {
            return Err(Error::invalid("need at least one wrong candidate"));
        }
        total += wrong.iter().sum::<f64>() / wrong.len() as f64;
    }
    Ok(100.0 * total / pairs.len() as f64)
}

/// Table row label plus its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

fn fmt_pct(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:>9.2}"),
        None => format!("{:>9}", "undefined"),
    }
}

/// Plain-text table with columns Method, MRR, R@1, MND, MND-I.
pub fn render_table(rows: &[MethodReport]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "Method", "MRR (%)", "R@1 (%)", "MND (%)", "MND-I (%)"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {}  {}  {}  {}\n",
            r.method,
            fmt_pct(Some(r.report.mrr)),
            fmt_pct(Some(r.report.r_at_1)),
            fmt_pct(Some(r.report.mnd)),
            fmt_pct(r.report.mnd_i),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Training-pair count.
    pub n: usize,
    /// Full minimum-margin loss divided by `n`.
    pub loss_over_n: f64,
    /// Mean hop distance between true and top-ranked parents over training pairs.
    pub empirical_mean_distance: f64,
    pub in_sample_holds: bool,
    pub delta: f64,
    pub diameter: u32,
    /// High-probability bound on the expected distance for new nodes.
    pub generalization_bound: f64,
}

/// In-sample check: the mean distance between each training child's true
/// parent and its top-scored node (over all non-dummy nodes, ties to the
/// lowest id) never exceeds `loss_full / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InSampleReport {
    pub n: usize,
    pub loss_over_n: f64,
    pub empirical_mean_distance: f64,
    pub holds: bool,
}

/// Float slack allowed on the in-sample inequality.
pub const IN_SAMPLE_SLACK: f64 = 1e-6;

pub fn in_sample_check<R: Real>(
    g: &KnowledgeGraph,
    train: &[(NodeId, NodeId)],
    params: &ScoreParams<R>,
    store: &EmbeddingStore<R>,
    dm: &DistanceMatrix,
) -> Result<InSampleReport> {
    let scores = training::ScoreTable::compute(g, train, params, store)?;
    let loss = training::loss_full_from_scores(g, train, &scores, dm)?;
    let candidates: Vec<NodeId> = g.real_nodes().collect();
    let mut total = 0u64;
    for (row, &(_, v)) in train.iter().enumerate() {
        let s = scores.row(row);
        let cand_scores: Vec<f64> = candidates.iter().map(|c| s[c.index()]).collect();
        let top = argmax(&candidates, &cand_scores).expect("graph has nodes");
        total += dm.get(v, top) as u64;
    }
    let n = train.len();
    let mean = total as f64 / n as f64;
    let loss_over_n = loss / n as f64;
    Ok(InSampleReport {
        n,
        loss_over_n,
        empirical_mean_distance: mean,
        holds: mean <= loss_over_n + IN_SAMPLE_SLACK,
    })
}

/// `loss/n + D * sqrt(ln(2/delta) / (2n))`.
pub fn generalization_bound(loss_over_n: f64, n: usize, diameter: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if diameter < 0.0 {
        return Err(Error::invalid("diameter must be non-negative"));
    }
    Ok(loss_over_n + diameter * ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

pub fn bound_report<R: Real>(
    g: &KnowledgeGraph,
    train: &[(NodeId, NodeId)],
    params: &ScoreParams<R>,
    store: &EmbeddingStore<R>,
    dm: &DistanceMatrix,
    delta: f64,
) -> Result<BoundReport> {
    let p1 = in_sample_check(g, train, params, store, dm)?;
    Ok(BoundReport {
        n: p1.n,
        loss_over_n: p1.loss_over_n,
        empirical_mean_distance: p1.empirical_mean_distance,
        in_sample_holds: p1.holds,
        delta,
        diameter: dm.diameter(),
        generalization_bound: generalization_bound(p1.loss_over_n, p1.n, dm.diameter() as f64, delta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    struct Fixed(Vec<f64>);

    impl Ranker for Fixed {
        fn rank(&self, _q: NodeId, c: &[NodeId]) -> Result<Vec<NodeId>> {
            let s: Vec<f64> = c.iter().map(|n| self.0[n.index()]).collect();
            order_by_scores(c, &s)
        }
    }

    #[test]
    fn single_candidate_is_rank_one() {
        let p = rank_parents(&Fixed(vec![0.0, 0.3]), NodeId(0), NodeId(1), &[NodeId(1)]).unwrap();
        assert_eq!(p.rank_of_true, 1);
        assert!(rank_parents(&Fixed(vec![0.0]), NodeId(0), NodeId(1), &[]).is_err());
    }

    #[test]
    fn ties_go_to_lower_id() {
        let r = Fixed(vec![0.0, 0.0, 1.0, 0.5, 1.0]);
        let order = r.rank(NodeId(0), &[NodeId(4), NodeId(3), NodeId(2)]).unwrap();
        assert_eq!(order, vec![NodeId(2), NodeId(4), NodeId(3)]);
        assert_eq!(
            argmax(&[NodeId(4), NodeId(2), NodeId(3)], &[1.0, 1.0, 0.5]),
            Some(NodeId(2))
        );
    }

    #[test]
    fn nan_scores_are_rejected() {
        assert!(order_by_scores(&[NodeId(0)], &[f64::NAN]).is_err());
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 100.0);
        assert!(close(mrr(&[1, 2, 4]).unwrap(), 175.0 / 3.0, 1e-12));
        assert!(close(mrr(&[10]).unwrap(), 10.0, 1e-12));
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn r_at_1_examples() {
        assert!(close(r_at_1(&[1, 2, 4]).unwrap(), 100.0 / 3.0, 1e-12));
        assert_eq!(r_at_1(&[1, 1]).unwrap(), 100.0);
        assert_eq!(r_at_1(&[2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn mnd_examples() {
        assert_eq!(mnd_from_distances(&[0, 0], 4).unwrap(), 0.0);
        assert!(close(mnd_from_distances(&[0, 2, 4], 4).unwrap(), 50.0, 1e-12));
        assert_eq!(mnd_from_distances(&[4, 4], 4).unwrap(), 100.0);
        assert!(mnd_from_distances(&[1], 0).is_err());
    }

    #[test]
    fn mnd_i_examples() {
        assert!(close(mnd_i_from_distances(&[0, 2, 4], 4).unwrap().unwrap(), 75.0, 1e-12));
        let all_wrong = [1, 3, 2];
        assert_eq!(
            mnd_i_from_distances(&all_wrong, 4).unwrap().unwrap(),
            mnd_from_distances(&all_wrong, 4).unwrap()
        );
        assert_eq!(mnd_i_from_distances(&[0, 0], 4).unwrap(), None);
    }

    #[test]
    fn bound_closed_form() {
        let b = generalization_bound(0.5, 100, 6.0, 0.05).unwrap();
        assert!(close(b, 1.31487, 1e-4), "{b}");
        assert_eq!(generalization_bound(0.7, 10, 0.0, 0.1).unwrap(), 0.7);
        let slack = |n| generalization_bound(0.0, n, 5.0, 0.1).unwrap();
        assert!(close(slack(400), slack(100) / 2.0, 1e-12));
        assert!(generalization_bound(0.5, 10, 1.0, 0.0).is_err());
        assert!(generalization_bound(0.5, 10, 1.0, 1.0).is_err());
    }

    #[test]
    fn expected_random_mrr_small_cases() {
        assert_eq!(expected_random_mrr(1), 100.0);
        assert!(close(expected_random_mrr(2), 75.0, 1e-12));
    }

    #[test]
    fn table_marks_undefined() {
        let rows = vec![MethodReport {
            method: "Perfect".into(),
            report: EvalReport {
                mrr: 100.0,
                r_at_1: 100.0,
                mnd: 0.0,
                mnd_i: None,
                m: 3,
                diameter: 4,
            },
        }];
        let t = render_table(&rows);
        assert!(t.contains("undefined"));
        assert!(t.starts_with("Method"));
        let json = serde_json::to_string(&rows[0]).unwrap();
        assert!(json.contains("\"mnd_i\":null"));
    }
}
