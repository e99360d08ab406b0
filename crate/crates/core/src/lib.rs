//! Taxonomy expansion with graph-aware triplet margins.
//!
//! A score function `s(u, v)` is learned so that a child's true parent
//! outscores every other node by at least their undirected hop distance.
//! The crate covers the full pipeline:
//!
//! - [`graph`]: parsing, dummy-root augmentation, all-pairs hop distances,
//!   dataset splits and neighborhood queries.
//! - [`embed`]: unit-norm node features with separate child/parent copies.
//! - [`scoring`]: the shared-transformation bilinear score and its gradients.
//! - [`training`]: margins, hinge violations, negative sampling and the
//!   optimization loop with early stopping on validation MRR.
//! - [`metrics`]: parent ranking, MRR / R@1 / MND / MND-I and the
//!   distance bound reports.
//! - [`baselines`]: random, Jaccard and feedforward-classifier rankers.
//! - [`service`]: prompt generation with controlled-error decision support,
//!   review sessions, the decision log, prediction and attachment.

pub mod baselines;
pub mod checkpoint;
pub mod embed;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod real;
pub mod rng;
pub mod scoring;
pub mod service;
pub mod synth;
pub mod text;
pub mod training;

pub use embed::{EmbeddingStore, WordVectorTable};
pub use error::{Error, Result};
pub use graph::{DistanceMatrix, KnowledgeGraph, NodeId, SplitAssignment};
pub use metrics::{BoundReport, EvalReport, RankedPrediction};
pub use real::Real;
pub use scoring::{ParamGradients, ScoreParams};
pub use training::{TrainConfig, TrainState, Triplet};
