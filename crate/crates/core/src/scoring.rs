//! Bilinear parent scores with node-specific mixtures of shared transforms.
//!
//! For a child `u` and candidate parent `v` the score is
//! `s(u, v) = (e_u M_v) . e_v` with `M_v = sum_i w_v[i] P_i` and
//! `w_v = f(e_v)`, where `f` is a small tanh network. `e_u` is the frozen
//! child copy and `e_v` the trainable parent copy. The parameter count
//! depends on `d`, `k` and `f` only, never on the number of nodes.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;

use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::nn::{glorot_limit, grad_segments, Activation, DenseGrad, Mlp};
use crate::real::{all_finite, dot, Real};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreParams<R = f32> {
    pub dim: usize,
    pub k: usize,
    /// `k` row-major `d x d` matrices, concatenated.
    pub transforms: Vec<R>,
    pub weight_net: Mlp<R>,
    pub seed: u64,
}

/// `(e_u M) . e_v` for a row-major `d x d` matrix `m`.
pub fn score_bilinear<R: Real>(e_u: &[R], e_v: &[R], m: &[R]) -> Result<R> {
    let d = e_u.len();
    if e_v.len() != d || m.len() != d * d {
        return Err(Error::Shape(format!(
            "bilinear score needs |e_u| = |e_v| = d and d x d matrix; got {}, {}, {}",
            d,
            e_v.len(),
            m.len()
        )));
    }
    // row vector e_u M first, in the same order as the projected path
    let mut row = vec![R::zero(); d];
    for (a, &x) in e_u.iter().enumerate() {
        if x == R::zero() {
            continue;
        }
        for (o, &mv) in row.iter_mut().zip(&m[a * d..(a + 1) * d]) {
            *o += x * mv;
        }
    }
    Ok(dot(&row, e_v))
}

/// Glorot-uniform initialization of every matrix; biases start at zero.
pub fn init_params(dim: usize, k: usize, hidden: &[usize], seed: u64) -> Result<ScoreParams<f32>> {
    if dim == 0 || k == 0 || hidden.contains(&0) {
        return Err(Error::invalid("dimensions must be positive"));
    }
    let mut r = rng::stream(seed, "init-transforms", 0);
    let limit = glorot_limit(dim, dim) as f32;
    let transforms = (0..k * dim * dim)
        .map(|_| r.random_range(-limit..=limit))
        .collect();
    let mut sizes = vec![dim];
    sizes.extend_from_slice(hidden);
    sizes.push(k);
    let mut r = rng::stream(seed, "init-weight-net", 0);
    let weight_net = Mlp::glorot(&sizes, Activation::Tanh, &mut r);
    Ok(ScoreParams {
        dim,
        k,
        transforms,
        weight_net,
        seed,
    })
}

impl<R: Real> ScoreParams<R> {
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if self.k == 0 || d == 0 {
            return Err(Error::invalid("k and d must be positive"));
        }
        if self.transforms.len() != self.k * d * d {
            return Err(Error::Shape("transform tensor is not k x d x d".into()));
        }
        if self.weight_net.input_dim() != d || self.weight_net.output_dim() != self.k {
            return Err(Error::Shape("weight network must map R^d to R^k".into()));
        }
        if !all_finite(&self.transforms)
            || self.weight_net.segments().iter().any(|s| !all_finite(s))
        {
            return Err(Error::NonFinite("score parameters".into()));
        }
        Ok(())
    }

    pub fn transform(&self, i: usize) -> &[R] {
        let dd = self.dim * self.dim;
        &self.transforms[i * dd..(i + 1) * dd]
    }

    pub fn transform_mut(&mut self, i: usize) -> &mut [R] {
        let dd = self.dim * self.dim;
        &mut self.transforms[i * dd..(i + 1) * dd]
    }

    pub fn param_count(&self) -> usize {
        self.transforms.len() + self.weight_net.param_count()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let s = self.weight_net.sizes();
        s[1..s.len() - 1].to_vec()
    }

    /// Mixture weights `w_v = f(e_v)` for a parent-copy vector.
    pub fn mixture(&self, parent_vec: &[R]) -> Result<Vec<R>> {
        self.weight_net.forward(parent_vec)
    }

    /// `M = sum_i w[i] P_i`.
    pub fn combine(&self, w: &[R]) -> Vec<R> {
        let dd = self.dim * self.dim;
        let mut m = vec![R::zero(); dd];
        for (i, &wi) in w.iter().enumerate() {
            for (acc, &p) in m.iter_mut().zip(self.transform(i)) {
                *acc += wi * p;
            }
        }
        m
    }

    /// `M_v` for node `v`.
    pub fn materialize_transform(&self, v: NodeId, store: &EmbeddingStore<R>) -> Result<Vec<R>> {
        let w = self.mixture(store.try_parent(v)?)?;
        Ok(self.combine(&w))
    }

    /// Row vectors `e_u P_i` for every `i`, concatenated (`k x d`). Scoring a
    /// projected query against a parent then costs `O(k d)`.
    pub fn project(&self, e_u: &[R]) -> Vec<R> {
        let d = self.dim;
        let mut out = vec![R::zero(); self.k * d];
        for i in 0..self.k {
            let p = self.transform(i);
            let row = &mut out[i * d..(i + 1) * d];
            for (a, &x) in e_u.iter().enumerate() {
                if x == R::zero() {
                    continue;
                }
                for (o, &pv) in row.iter_mut().zip(&p[a * d..(a + 1) * d]) {
                    *o += x * pv;
                }
            }
        }
        out
    }

    pub fn score_projected(&self, projected: &[R], w: &[R], parent_vec: &[R]) -> R {
        let d = self.dim;
        w.iter()
            .enumerate()
            .map(|(i, &wi)| wi * dot(&projected[i * d..(i + 1) * d], parent_vec))
            .sum()
    }

    /// `s(u, v)` using the child copy of `u` and the parent copy of `v`.
    pub fn score(&self, u: NodeId, v: NodeId, store: &EmbeddingStore<R>) -> Result<R> {
        let e_u = store.try_child(u)?;
        self.score_vector(e_u, v, store)
    }

    /// Score an arbitrary child-side vector against node `v`.
    pub fn score_vector(&self, e_u: &[R], v: NodeId, store: &EmbeddingStore<R>) -> Result<R> {
        if e_u.len() != self.dim {
            return Err(Error::Shape(format!("query has {} entries", e_u.len())));
        }
        let e_v = store.try_parent(v)?;
        let w = self.mixture(e_v)?;
        Ok(self.score_projected(&self.project(e_u), &w, e_v))
    }

    /// Gradient of `upstream * s(u, v)` with respect to every transform,
    /// the weight network and the parent copy of `v`. The child copy is
    /// frozen and receives nothing.
    pub fn grad_score(
        &self,
        u: NodeId,
        v: NodeId,
        store: &EmbeddingStore<R>,
        upstream: R,
    ) -> Result<ParamGradients<R>> {
        let mut grads = ParamGradients::zeros(self);
        let e_u = store.try_child(u)?;
        let projected = self.project(e_u);
        self.accumulate_grad(e_u, &projected, v, store, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Add `upstream * ds(u, v)/dtheta` into `grads`; `projected` must be
    /// `self.project(e_u)`.
    pub fn accumulate_grad(
        &self,
        e_u: &[R],
        projected: &[R],
        v: NodeId,
        store: &EmbeddingStore<R>,
        upstream: R,
        grads: &mut ParamGradients<R>,
    ) -> Result<()> {
        let d = self.dim;
        let e_v = store.try_parent(v)?;
        let trace = self.weight_net.trace(e_v)?;
        let w = trace.output().to_vec();

        // dP_i = upstream * w_i * e_u (outer) e_v
        for (i, &wi) in w.iter().enumerate() {
            let scale = upstream * wi;
            if scale == R::zero() {
                continue;
            }
            let g = &mut grads.transforms[i * d * d..(i + 1) * d * d];
            for (a, &x) in e_u.iter().enumerate() {
                let sx = scale * x;
                if sx == R::zero() {
                    continue;
                }
                for (gv, &ev) in g[a * d..(a + 1) * d].iter_mut().zip(e_v) {
                    *gv += sx * ev;
                }
            }
        }

        // ds/dw_i = (e_u P_i) . e_v
        let dw: Vec<R> = (0..self.k)
            .map(|i| upstream * dot(&projected[i * d..(i + 1) * d], e_v))
            .collect();
        let through_net = self
            .weight_net
            .backward(&trace, &dw, &mut grads.weight_net)?;

        // direct term: sum_i w_i (e_u P_i)
        let gv = grads
            .parent
            .entry(v)
            .or_insert_with(|| vec![R::zero(); d]);
        for (j, g) in gv.iter_mut().enumerate() {
            let direct: R = (0..self.k).map(|i| w[i] * projected[i * d + j]).sum();
            *g += upstream * direct + through_net[j];
        }
        if !all_finite(gv) {
            return Err(Error::NonFinite(format!("parent-copy gradient of node {v}")));
        }
        Ok(())
    }

    pub fn cast<S: Real>(&self) -> ScoreParams<S> {
        ScoreParams {
            dim: self.dim,
            k: self.k,
            transforms: crate::real::cast_vec(&self.transforms),
            weight_net: self.weight_net.cast(),
            seed: self.seed,
        }
    }

    /// Trainable slices in optimizer order: transforms, then the network.
    pub fn segments_mut(&mut self) -> Vec<&mut [R]> {
        let mut out = vec![self.transforms.as_mut_slice()];
        out.extend(self.weight_net.segments_mut());
        out
    }

    pub fn segments(&self) -> Vec<&[R]> {
        let mut out = vec![self.transforms.as_slice()];
        out.extend(self.weight_net.segments());
        out
    }
}

/// Gradient buffers mirroring [`ScoreParams`] plus sparse parent-copy rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients<R = f32> {
    pub transforms: Vec<R>,
    pub weight_net: Vec<DenseGrad<R>>,
    pub parent: BTreeMap<NodeId, Vec<R>>,
}

impl<R: Real> ParamGradients<R> {
    pub fn zeros(params: &ScoreParams<R>) -> Self {
        ParamGradients {
            transforms: vec![R::zero(); params.transforms.len()],
            weight_net: params.weight_net.zero_grads(),
            parent: BTreeMap::new(),
        }
    }

    pub fn scale(&mut self, c: R) {
        self.transforms.iter_mut().for_each(|x| *x *= c);
        for g in &mut self.weight_net {
            g.weight.iter_mut().for_each(|x| *x *= c);
            g.bias.iter_mut().for_each(|x| *x *= c);
        }
        for row in self.parent.values_mut() {
            row.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Elementwise sum, used to merge per-worker buffers.
    pub fn merge(&mut self, other: ParamGradients<R>) {
        for (a, b) in self.transforms.iter_mut().zip(other.transforms) {
            *a += b;
        }
        for (ga, gb) in self.weight_net.iter_mut().zip(other.weight_net) {
            for (a, b) in ga.weight.iter_mut().zip(gb.weight) {
                *a += b;
            }
            for (a, b) in ga.bias.iter_mut().zip(gb.bias) {
                *a += b;
            }
        }
        for (id, row) in other.parent {
            match self.parent.get_mut(&id) {
                Some(mine) => mine.iter_mut().zip(row).for_each(|(a, b)| *a += b),
                None => {
                    self.parent.insert(id, row);
                }
            }
        }
    }

    pub fn segments(&self) -> Vec<&[R]> {
        let mut out = vec![self.transforms.as_slice()];
        out.extend(grad_segments(&self.weight_net));
        out
    }

    /// Parent-copy gradient as a dense table of `nodes x dim`.
    pub fn dense_parent(&self, nodes: usize, dim: usize) -> Vec<R> {
        let mut table = vec![R::zero(); nodes * dim];
        for (id, row) in &self.parent {
            table[id.index() * dim..(id.index() + 1) * dim].copy_from_slice(row);
        }
        table
    }

    pub fn is_finite(&self) -> bool {
        self.segments().iter().all(|s| all_finite(s))
            && self.parent.values().all(|r| all_finite(r))
    }
}

/// Scores many candidates for many queries against one parameter snapshot.
/// Mixture weights for every node are computed once up front.
pub struct Scorer<'a, R: Real = f32> {
    pub params: &'a ScoreParams<R>,
    pub store: &'a EmbeddingStore<R>,
    mixtures: Vec<Vec<R>>,
}

impl<'a, R: Real> Scorer<'a, R> {
    pub fn new(params: &'a ScoreParams<R>, store: &'a EmbeddingStore<R>) -> Result<Self> {
        if store.dim() != params.dim {
            return Err(Error::Shape(format!(
                "embedding dim {} != model dim {}",
                store.dim(),
                params.dim
            )));
        }
        let mixtures = (0..store.len())
            .into_par_iter()
            .map(|i| params.mixture(store.parent(NodeId(i as u32))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scorer {
            params,
            store,
            mixtures,
        })
    }

    /// Scores of `query_vec` (a child-side vector) against each candidate.
    pub fn scores_for_vector(&self, query_vec: &[R], candidates: &[NodeId]) -> Result<Vec<f64>> {
        if query_vec.len() != self.params.dim {
            return Err(Error::Shape(format!("query has {} entries", query_vec.len())));
        }
        let projected = self.params.project(query_vec);
        candidates
            .iter()
            .map(|&v| {
                let w = self
                    .mixtures
                    .get(v.index())
                    .ok_or_else(|| Error::UnknownNode(v.to_string()))?;
                Ok(self
                    .params
                    .score_projected(&projected, w, self.store.parent(v))
                    .as_f64())
            })
            .collect()
    }

    pub fn scores(&self, query: NodeId, candidates: &[NodeId]) -> Result<Vec<f64>> {
        self.scores_for_vector(self.store.try_child(query)?, candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_net(d: usize, k: usize, bias: &[f64]) -> Mlp<f64> {
        let mut m = Mlp::zeros(&[d, 3, k], Activation::Tanh);
        m.layers[1].bias = bias.to_vec();
        m
    }

    fn store2(rows: Vec<Vec<f64>>) -> EmbeddingStore<f64> {
        EmbeddingStore::from_rows(rows[0].len(), rows).unwrap()
    }

    #[test]
    fn bilinear_examples() {
        let id = [1.0, 0.0, 0.0, 1.0];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((score_bilinear(&[h, h], &[h, h], &id).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(score_bilinear(&[0.3, 0.4], &[0.9, -1.0], &[0.0; 4]).unwrap(), 0.0);
        let m = [0.0, 2.0, 0.0, 0.0];
        assert_eq!(score_bilinear(&[1.0, 0.0], &[0.0, 1.0], &m).unwrap(), 2.0);
        assert!(score_bilinear(&[1.0, 0.0], &[0.0, 1.0, 0.0], &m).is_err());
    }

    #[test]
    fn materialize_examples() {
        let store = store2(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        // k = 1, constant weight 1 -> M_v = P_1
        let mut p = ScoreParams {
            dim: 2,
            k: 1,
            transforms: vec![1.0, 2.0, 3.0, 4.0],
            weight_net: unit_net(2, 1, &[1.0]),
            seed: 0,
        };
        assert_eq!(p.materialize_transform(NodeId(1), &store).unwrap(), p.transforms);
        p.weight_net = unit_net(2, 1, &[0.0]);
        assert_eq!(p.materialize_transform(NodeId(1), &store).unwrap(), vec![0.0; 4]);
        // k = 2, w = (0.5, -1), P1 = I, P2 = 2I -> -1.5 I
        let p = ScoreParams {
            dim: 2,
            k: 2,
            transforms: vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0],
            weight_net: unit_net(2, 2, &[0.5, -1.0]),
            seed: 0,
        };
        assert_eq!(
            p.materialize_transform(NodeId(0), &store).unwrap(),
            vec![-1.5, 0.0, 0.0, -1.5]
        );
    }

    #[test]
    fn reduction_to_single_transform() {
        let store = EmbeddingStore::random(5, 4, 3).cast::<f64>();
        let base = init_params(4, 1, &[3], 9).unwrap().cast::<f64>();
        let p = ScoreParams {
            weight_net: unit_net(4, 1, &[1.0]),
            ..base
        };
        for u in 0..5 {
            for v in 0..5 {
                let (u, v) = (NodeId(u), NodeId(v));
                let direct =
                    score_bilinear(store.child(u), store.parent(v), &p.transforms).unwrap();
                assert_eq!(p.score(u, v, &store).unwrap(), direct);
            }
        }
    }

    #[test]
    fn zero_transforms_score_zero() {
        let store = EmbeddingStore::random(4, 3, 1);
        let mut p = init_params(3, 2, &[4], 2).unwrap();
        p.transforms.iter_mut().for_each(|x| *x = 0.0);
        for u in 0..4 {
            for v in 0..4 {
                assert_eq!(p.score(NodeId(u), NodeId(v), &store).unwrap(), 0.0);
            }
        }
    }

    /// Straight-line re-evaluation: explicit M_v, explicit row-vector times
    /// matrix, explicit dot.
    fn oracle_score(p: &ScoreParams<f64>, e_u: &[f64], e_v: &[f64]) -> f64 {
        let d = p.dim;
        let mut h = e_v.to_vec();
        for (li, layer) in p.weight_net.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.outputs];
            for o in 0..layer.outputs {
                let mut z = layer.bias[o];
                for i in 0..layer.inputs {
                    z += layer.weight[o * layer.inputs + i] * h[i];
                }
                next[o] = if li + 1 == p.weight_net.layers.len() { z } else { z.tanh() };
            }
            h = next;
        }
        let mut m = vec![vec![0.0; d]; d];
        for i in 0..p.k {
            for a in 0..d {
                for b in 0..d {
                    m[a][b] += h[i] * p.transforms[i * d * d + a * d + b];
                }
            }
        }
        let mut row = vec![0.0; d];
        for b in 0..d {
            for a in 0..d {
                row[b] += e_u[a] * m[a][b];
            }
        }
        row.iter().zip(e_v).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn score_matches_straight_line_oracle() {
        let store = EmbeddingStore::random(6, 4, 17).cast::<f64>();
        let p = init_params(4, 2, &[5], 23).unwrap().cast::<f64>();
        let scorer = Scorer::new(&p, &store).unwrap();
        let all: Vec<NodeId> = (0..6).map(NodeId).collect();
        for u in 0..6 {
            let fast = scorer.scores(NodeId(u), &all).unwrap();
            for v in 0..6 {
                let s = p.score(NodeId(u), NodeId(v), &store).unwrap();
                let o = oracle_score(&p, store.child(NodeId(u)), store.parent(NodeId(v)));
                assert!((s - o).abs() < 1e-12, "{s} vs {o}");
                assert!((fast[v as usize] - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_transform_gradient_is_outer_product() {
        let store = EmbeddingStore::random(2, 3, 5).cast::<f64>();
        let base = init_params(3, 1, &[2], 1).unwrap().cast::<f64>();
        let p = ScoreParams {
            weight_net: unit_net(3, 1, &[1.0]),
            ..base
        };
        let g = p.grad_score(NodeId(0), NodeId(1), &store, 1.0).unwrap();
        let (eu, ev) = (store.child(NodeId(0)), store.parent(NodeId(1)));
        for a in 0..3 {
            for b in 0..3 {
                assert!((g.transforms[a * 3 + b] - eu[a] * ev[b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_child_vector_gives_zero_gradients() {
        let mut store = EmbeddingStore::from_rows(3, vec![vec![0.0; 3], vec![0.6, 0.8, 0.0]]).unwrap();
        store.parent_mut(NodeId(0)).copy_from_slice(&[0.0; 3]);
        let p = init_params(3, 2, &[4], 8).unwrap();
        let g = p.grad_score(NodeId(0), NodeId(1), &store, 1.0).unwrap();
        assert!(g.transforms.iter().all(|&x| x == 0.0));
        assert!(g.weight_net.iter().all(|l| l.weight.iter().chain(&l.bias).all(|&x| x == 0.0)));
        assert!(g.parent.values().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(6, 3, &[5, 4], 77).unwrap();
        assert_eq!(a, init_params(6, 3, &[5, 4], 77).unwrap());
        assert_ne!(a, init_params(6, 3, &[5, 4], 78).unwrap());
        let limit = (6.0f32 / 12.0).sqrt();
        assert!(a.transforms.iter().all(|x| x.abs() <= limit));
        a.validate().unwrap();
    }

    #[test]
    fn weight_net_parameter_count() {
        let p = init_params(300, 128, &[150, 150], 0).unwrap();
        assert_eq!(
            p.weight_net.param_count(),
            300 * 150 + 150 + 150 * 150 + 150 + 150 * 128 + 128
        );
        assert_eq!(p.transforms.len(), 128 * 300 * 300);
        let limit = (6.0f32 / 600.0).sqrt();
        assert!(p.transforms.iter().all(|x| x.abs() <= limit));
        assert_eq!(p.hidden_sizes(), vec![150, 150]);
    }

    #[test]
    fn linear_in_each_transform() {
        let store = EmbeddingStore::random(3, 4, 2).cast::<f64>();
        let p = init_params(4, 3, &[5], 4).unwrap().cast::<f64>();
        let (u, v) = (NodeId(0), NodeId(2));
        let w = p.mixture(store.parent(v)).unwrap();
        let term = |p: &ScoreParams<f64>, i: usize| {
            w[i] * score_bilinear(store.child(u), store.parent(v), p.transform(i)).unwrap()
        };
        for i in 0..3 {
            let mut scaled = p.clone();
            scaled.transform_mut(i).iter_mut().for_each(|x| *x *= 2.5);
            let delta = scaled.score(u, v, &store).unwrap() - p.score(u, v, &store).unwrap();
            assert!((delta - 1.5 * term(&p, i)).abs() < 1e-12);
        }
    }
}
