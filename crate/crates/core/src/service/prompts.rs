use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeId};
use crate::metrics::Ranker;
use crate::rng::{self, PRNG_NAME};

/// How the preselected parent is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Condition {
    /// Wrong suggestions sit one hop from the true parent.
    Hf,
    /// Wrong suggestions sit five hops from the true parent.
    Nhf,
    /// The trained ranker's top prediction.
    Model,
}

impl Condition {
    pub fn error_distance(self) -> Option<u32> {
        match self {
            Condition::Hf => Some(1),
            Condition::Nhf => Some(5),
            Condition::Model => None,
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HF" => Ok(Condition::Hf),
            "NHF" => Ok(Condition::Nhf),
            "MODEL" => Ok(Condition::Model),
            _ => Err(Error::invalid(format!("unknown condition `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    /// 1-based position in presentation order.
    pub prompt_id: u32,
    pub query: NodeId,
    pub query_label: String,
    pub true_parent: NodeId,
    pub preselected: NodeId,
    pub condition: Condition,
    pub support_correct: bool,
}

/// What a client sees while a session is open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptView {
    pub prompt_id: u32,
    pub query: NodeId,
    pub query_label: String,
    pub preselected: NodeId,
    pub preselected_label: String,
}

impl Prompt {
    pub fn view(&self, g: &KnowledgeGraph) -> PromptView {
        PromptView {
            prompt_id: self.prompt_id,
            query: self.query,
            query_label: self.query_label.clone(),
            preselected: self.preselected,
            preselected_label: g.label(self.preselected).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptConfig {
    pub condition: Condition,
    pub frac_correct: f64,
    pub seed: u64,
    /// Overrides the condition's error distance.
    pub error_distance: Option<u32>,
}

impl PromptConfig {
    pub fn new(condition: Condition, seed: u64) -> Self {
        PromptConfig {
            condition,
            frac_correct: 0.5,
            seed,
            error_distance: None,
        }
    }
}

/// Controlled-error prompts for `(query, true parent)` pairs.
///
/// Exactly `floor(frac_correct * N)` prompts preselect the true parent;
/// the rest preselect a uniform draw from the nodes at exactly the error
/// distance from the true parent (never the dummy root, nor any query of
/// this set, which is not part of the displayed taxonomy). Presentation
/// order is shuffled.
pub fn generate_prompts(
    g: &KnowledgeGraph,
    pairs: &[(NodeId, NodeId)],
    cfg: &PromptConfig,
) -> Result<Vec<Prompt>> {
    let h = cfg
        .error_distance
        .or(cfg.condition.error_distance())
        .ok_or_else(|| Error::invalid("the MODEL condition needs a ranker"))?;
    if !(0.0..=1.0).contains(&cfg.frac_correct) {
        return Err(Error::invalid("frac_correct must lie in [0, 1]"));
    }
    if h == 0 {
        return Err(Error::invalid("error distance must be positive"));
    }
    let n = pairs.len();
    let n_correct = ((cfg.frac_correct * n as f64) + 1e-9).floor() as usize;
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng::stream(cfg.seed, "prompt-assign", 0));
    let mut correct = vec![false; n];
    for &i in &slots[..n_correct] {
        correct[i] = true;
    }
    let queries: HashSet<NodeId> = pairs.iter().map(|&(u, _)| u).collect();

    let mut prompts = Vec::with_capacity(n);
    for (i, &(u, v)) in pairs.iter().enumerate() {
        g.check_node(u)?;
        g.check_node(v)?;
        let preselected = if correct[i] {
            v
        } else {
            let ring: Vec<NodeId> = g
                .ring(v, h)?
                .into_iter()
                .filter(|n| !queries.contains(n))
                .collect();
            *ring
                .choose(&mut rng::stream(cfg.seed, "prompt-preselect", i as u64))
                .ok_or_else(|| Error::EmptyRing {
                    node: g.label(v).to_string(),
                    distance: h,
                })?
        };
        prompts.push(Prompt {
            prompt_id: 0,
            query: u,
            query_label: g.label(u).to_string(),
            true_parent: v,
            preselected,
            condition: cfg.condition,
            support_correct: correct[i],
        });
    }
    prompts.shuffle(&mut rng::stream(cfg.seed, "prompt-order", 0));
    for (i, p) in prompts.iter_mut().enumerate() {
        p.prompt_id = i as u32 + 1;
    }
    Ok(prompts)
}

/// Prompts whose preselection is the ranker's top candidate.
pub fn generate_model_prompts(
    g: &KnowledgeGraph,
    pairs: &[(NodeId, NodeId)],
    ranker: &dyn Ranker,
    candidates: &[NodeId],
    seed: u64,
) -> Result<Vec<Prompt>> {
    let mut prompts = Vec::with_capacity(pairs.len());
    for &(u, v) in pairs {
        let cands: Vec<NodeId> = candidates.iter().copied().filter(|&c| c != u).collect();
        let top = *ranker
            .rank(u, &cands)?
            .first()
            .ok_or_else(|| Error::invalid("candidate set is empty"))?;
        prompts.push(Prompt {
            prompt_id: 0,
            query: u,
            query_label: g.label(u).to_string(),
            true_parent: v,
            preselected: top,
            condition: Condition::Model,
            support_correct: top == v,
        });
    }
    prompts.shuffle(&mut rng::stream(seed, "prompt-order", 0));
    for (i, p) in prompts.iter_mut().enumerate() {
        p.prompt_id = i as u32 + 1;
    }
    Ok(prompts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSetMeta {
    pub condition: Condition,
    pub frac_correct: Option<f64>,
    pub error_distance: Option<u32>,
    pub seed: u64,
    pub prng: String,
    /// Correct preselections are exactly `floor(frac_correct * N)`, not
    /// drawn independently per prompt.
    pub exact_fraction: bool,
    pub count: usize,
}

/// A prompt file: one metadata line, then one prompt per line.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub meta: PromptSetMeta,
    pub prompts: Vec<Prompt>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: PromptSetMeta,
}

impl PromptSet {
    pub fn new(cfg: &PromptConfig, prompts: Vec<Prompt>) -> Self {
        let model = cfg.condition == Condition::Model;
        PromptSet {
            meta: PromptSetMeta {
                condition: cfg.condition,
                frac_correct: (!model).then_some(cfg.frac_correct),
                error_distance: cfg.error_distance.or(cfg.condition.error_distance()),
                seed: cfg.seed,
                prng: PRNG_NAME.to_string(),
                exact_fraction: !model,
                count: prompts.len(),
            },
            prompts,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&MetaLine {
            meta: self.meta.clone(),
        })
        .expect("meta serializes");
        out.push('\n');
        for p in &self.prompts {
            out.push_str(&serde_json::to_string(p).expect("prompt serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty prompt file"))?;
        let meta: MetaLine =
            serde_json::from_str(first).map_err(|e| Error::parse(1, e.to_string()))?;
        let prompts = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
            .collect::<Result<Vec<Prompt>>>()?;
        if prompts.len() != meta.meta.count {
            return Err(Error::invalid(format!(
                "prompt file declares {} prompts but holds {}",
                meta.meta.count,
                prompts.len()
            )));
        }
        Ok(PromptSet {
            meta: meta.meta,
            prompts,
        })
    }
}
