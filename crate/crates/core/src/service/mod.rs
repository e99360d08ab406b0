//! Curation workflow: decision-support prompts, timed review sessions with
//! an append-only decision log, and a workspace that predicts, attaches and
//! re-indexes new concepts.

mod prompts;
mod session;
mod workspace;

pub use prompts::{
    generate_model_prompts, generate_prompts, Condition, Prompt, PromptConfig, PromptSet,
    PromptSetMeta, PromptView,
};
pub use session::{
    session_metrics, Clock, DecisionLog, DecisionRecord, ManualClock, NextPrompt, Session,
    SessionMetrics, StratumMetrics, SystemClock, DEFAULT_BUDGET_MS,
};
pub use workspace::{Candidate, NeighborhoodHandle, Prediction, TreeNode, Workspace};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("session time budget exhausted")]
    Expired,
    #[error("no prompts remain")]
    Finished,
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown prompt {0}")]
    UnknownPrompt(u32),
    #[error("prompt {0} was already answered")]
    DuplicateDecision(u32),
    #[error("prompt {0} has not been issued")]
    NotIssued(u32),
    #[error("the dummy root cannot be chosen as a parent")]
    DummyChoice,
    #[error("decision log is empty")]
    EmptyLog,
}
