use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::prompts::{Condition, Prompt, PromptView};
use super::SessionError;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeId};

/// Fifteen minutes for the whole prompt set.
pub const DEFAULT_BUDGET_MS: u64 = 15 * 60 * 1000;

/// Source of UTC milliseconds; injectable so timing is testable.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub session_id: String,
    pub prompt_id: u32,
    pub condition: Condition,
    pub preselected_id: NodeId,
    pub chosen_id: NodeId,
    pub true_parent_id: NodeId,
    pub elapsed_ms: u64,
    /// UTC milliseconds at receipt.
    pub ts: u64,
}

impl DecisionRecord {
    pub fn complied(&self) -> bool {
        self.chosen_id == self.preselected_id
    }

    pub fn correct(&self) -> bool {
        self.chosen_id == self.true_parent_id
    }

    pub fn support_correct(&self) -> bool {
        self.preselected_id == self.true_parent_id
    }
}

/// Append-only JSON-lines log, synced to disk after every record.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    /// Creates missing parent directories.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(DecisionLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &DecisionRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_all()?;
        Ok(())
    }

    pub fn replay(path: &Path) -> Result<Vec<DecisionRecord>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumMetrics {
    pub decisions: usize,
    pub correct: usize,
    pub incorrect: usize,
    /// Correct minus incorrect.
    pub total_score: i64,
    pub mean_time_per_prompt_s: f64,
    pub accuracy_pct: f64,
    pub compliance_pct: f64,
}

impl StratumMetrics {
    fn of(records: &[&DecisionRecord]) -> Option<Self> {
        if records.is_empty() {
            return None;
        }
        let n = records.len();
        let correct = records.iter().filter(|r| r.correct()).count();
        let complied = records.iter().filter(|r| r.complied()).count();
        let time_ms: u64 = records.iter().map(|r| r.elapsed_ms).sum();
        Some(StratumMetrics {
            decisions: n,
            correct,
            incorrect: n - correct,
            total_score: correct as i64 - (n - correct) as i64,
            mean_time_per_prompt_s: time_ms as f64 / 1000.0 / n as f64,
            accuracy_pct: 100.0 * correct as f64 / n as f64,
            compliance_pct: 100.0 * complied as f64 / n as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub overall: StratumMetrics,
    /// Decisions where the preselection was the true parent.
    pub support_correct: Option<StratumMetrics>,
    pub support_incorrect: Option<StratumMetrics>,
}

pub fn session_metrics(log: &[DecisionRecord]) -> Result<SessionMetrics, SessionError> {
    let all: Vec<&DecisionRecord> = log.iter().collect();
    let overall = StratumMetrics::of(&all).ok_or(SessionError::EmptyLog)?;
    let (good, bad): (Vec<&DecisionRecord>, Vec<&DecisionRecord>) =
        all.iter().partition(|r| r.support_correct());
    Ok(SessionMetrics {
        overall,
        support_correct: StratumMetrics::of(&good),
        support_incorrect: StratumMetrics::of(&bad),
    })
}

/// The next prompt plus header fields for the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextPrompt {
    pub prompt: PromptView,
    /// 1-based.
    pub index: usize,
    pub total: usize,
    pub remaining_ms: u64,
    pub score: i64,
    pub correct: usize,
    pub incorrect: usize,
}

/// One reviewer working through a prompt set under a time budget.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    prompts: Vec<Prompt>,
    started_ms: u64,
    budget_ms: u64,
    next: usize,
    issued_at: Option<u64>,
    decisions: Vec<DecisionRecord>,
    log: Option<DecisionLog>,
}

impl Session {
    pub fn new(id: impl Into<String>, prompts: Vec<Prompt>, now_ms: u64, budget_ms: u64) -> Self {
        Session {
            id: id.into(),
            prompts,
            started_ms: now_ms,
            budget_ms,
            next: 0,
            issued_at: None,
            decisions: Vec::new(),
            log: None,
        }
    }

    pub fn with_log(mut self, log: DecisionLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    pub fn remaining_ms(&self, now_ms: u64) -> u64 {
        self.budget_ms
            .saturating_sub(now_ms.saturating_sub(self.started_ms))
    }

    pub fn is_closed(&self, now_ms: u64) -> bool {
        self.remaining_ms(now_ms) == 0 || self.next >= self.prompts.len()
    }

    pub fn score(&self) -> (i64, usize, usize) {
        let correct = self.decisions.iter().filter(|r| r.correct()).count();
        let wrong = self.decisions.len() - correct;
        (correct as i64 - wrong as i64, correct, wrong)
    }

    /// Issue (or re-issue) the current prompt, starting its clock on first
    /// issue only.
    pub fn next_prompt(
        &mut self,
        g: &KnowledgeGraph,
        now_ms: u64,
    ) -> Result<NextPrompt, SessionError> {
        if self.remaining_ms(now_ms) == 0 {
            return Err(SessionError::Expired);
        }
        let prompt = self.prompts.get(self.next).ok_or(SessionError::Finished)?;
        if self.issued_at.is_none() {
            self.issued_at = Some(now_ms);
        }
        let (score, correct, incorrect) = self.score();
        Ok(NextPrompt {
            prompt: prompt.view(g),
            index: self.next + 1,
            total: self.prompts.len(),
            remaining_ms: self.remaining_ms(now_ms),
            score,
            correct,
            incorrect,
        })
    }

    /// Record the reviewer's choice for the issued prompt. Elapsed time is
    /// measured from issue to receipt on the server clock.
    pub fn record_decision(
        &mut self,
        g: &KnowledgeGraph,
        prompt_id: u32,
        chosen: NodeId,
        now_ms: u64,
    ) -> Result<DecisionRecord> {
        let idx = self
            .prompts
            .iter()
            .position(|p| p.prompt_id == prompt_id)
            .ok_or(SessionError::UnknownPrompt(prompt_id))?;
        if idx < self.next {
            return Err(SessionError::DuplicateDecision(prompt_id).into());
        }
        let issued = match self.issued_at {
            Some(t) if idx == self.next => t,
            _ => return Err(SessionError::NotIssued(prompt_id).into()),
        };
        if self.remaining_ms(now_ms) == 0 {
            return Err(SessionError::Expired.into());
        }
        g.check_node(chosen)?;
        if g.is_dummy(chosen) {
            return Err(SessionError::DummyChoice.into());
        }
        let p = &self.prompts[idx];
        let record = DecisionRecord {
            session_id: self.id.clone(),
            prompt_id,
            condition: p.condition,
            preselected_id: p.preselected,
            chosen_id: chosen,
            true_parent_id: p.true_parent,
            elapsed_ms: now_ms.saturating_sub(issued),
            ts: now_ms,
        };
        if let Some(log) = &mut self.log {
            log.append(&record)?;
        }
        self.decisions.push(record.clone());
        self.next += 1;
        self.issued_at = None;
        Ok(record)
    }

    pub fn metrics(&self) -> Result<SessionMetrics, SessionError> {
        session_metrics(&self.decisions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::toy;

    fn prompts(g: &KnowledgeGraph) -> Vec<Prompt> {
        let id = |l: &str| g.id(l).unwrap();
        let mk = |pid, q: &str, t: &str, pre: &str| Prompt {
            prompt_id: pid,
            query: id(q),
            query_label: q.to_string(),
            true_parent: id(t),
            preselected: id(pre),
            condition: Condition::Hf,
            support_correct: t == pre,
        };
        vec![mk(1, "x1", "x", "x"), mk(2, "y1", "y", "r"), mk(3, "x2", "x", "x")]
    }

    fn rec(pre: u32, chosen: u32, truth: u32, ms: u64) -> DecisionRecord {
        DecisionRecord {
            session_id: "s".into(),
            prompt_id: 1,
            condition: Condition::Hf,
            preselected_id: NodeId(pre),
            chosen_id: NodeId(chosen),
            true_parent_id: NodeId(truth),
            elapsed_ms: ms,
            ts: 0,
        }
    }

    #[test]
    fn metrics_arithmetic() {
        let log = vec![
            rec(1, 1, 1, 10_000),
            rec(2, 2, 1, 20_000),
            rec(3, 3, 1, 30_000),
            rec(4, 1, 1, 40_000),
        ];
        let m = session_metrics(&log).unwrap().overall;
        assert_eq!(m.compliance_pct, 75.0);
        assert_eq!(m.accuracy_pct, 50.0);
        assert_eq!(m.mean_time_per_prompt_s, 25.0);
        assert_eq!(m.total_score, 0);
        assert_eq!(session_metrics(&[]), Err(SessionError::EmptyLog));

        let mut many = vec![rec(1, 1, 1, 1); 10];
        many.extend(vec![rec(1, 2, 1, 1); 3]);
        assert_eq!(session_metrics(&many).unwrap().overall.total_score, 7);
    }

    #[test]
    fn session_flow_and_errors() {
        let g = toy();
        let clock = ManualClock::new(1_000);
        let mut s = Session::new("s1", prompts(&g), clock.now_ms(), DEFAULT_BUDGET_MS);
        let first = s.next_prompt(&g, clock.now_ms()).unwrap();
        assert_eq!((first.index, first.total, first.score), (1, 3, 0));
        assert!(matches!(
            s.record_decision(&g, 2, NodeId(0), clock.now_ms()),
            Err(Error::Session(SessionError::NotIssued(2)))
        ));
        assert!(matches!(
            s.record_decision(&g, 1, g.dummy_root().unwrap(), clock.now_ms()),
            Err(Error::Session(SessionError::DummyChoice))
        ));
        clock.advance(1_500);
        let r = s.record_decision(&g, 1, g.id("x").unwrap(), clock.now_ms()).unwrap();
        assert!(r.correct() && r.complied());
        assert_eq!(r.elapsed_ms, 1_500);
        assert!(matches!(
            s.record_decision(&g, 1, NodeId(0), clock.now_ms()),
            Err(Error::Session(SessionError::DuplicateDecision(1)))
        ));
        assert!(matches!(
            s.record_decision(&g, 99, NodeId(0), clock.now_ms()),
            Err(Error::Session(SessionError::UnknownPrompt(99)))
        ));
        s.next_prompt(&g, clock.now_ms()).unwrap();
        let r = s.record_decision(&g, 2, g.id("r").unwrap(), clock.now_ms()).unwrap();
        assert!(r.complied() && !r.correct());
        assert_eq!(s.score(), (0, 1, 1));
        s.next_prompt(&g, clock.now_ms()).unwrap();
        s.record_decision(&g, 3, g.id("x").unwrap(), clock.now_ms()).unwrap();
        assert_eq!(s.next_prompt(&g, clock.now_ms()), Err(SessionError::Finished));
    }

    #[test]
    fn budget_closes_session() {
        let g = toy();
        let clock = ManualClock::new(0);
        let mut s = Session::new("s2", prompts(&g), 0, DEFAULT_BUDGET_MS);
        s.next_prompt(&g, 0).unwrap();
        clock.advance(DEFAULT_BUDGET_MS);
        assert_eq!(s.next_prompt(&g, clock.now_ms()), Err(SessionError::Expired));
        assert!(s.is_closed(clock.now_ms()));
    }

    #[test]
    fn log_replay_reproduces_metrics() {
        let g = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s3.jsonl");
        let mut s = Session::new("s3", prompts(&g), 0, DEFAULT_BUDGET_MS)
            .with_log(DecisionLog::open(&path).unwrap());
        for (t, pick) in [(700, "x"), (1_900, "r"), (2_600, "y")] {
            let pid = s.next_prompt(&g, t - 500).unwrap().prompt.prompt_id;
            s.record_decision(&g, pid, g.id(pick).unwrap(), t).unwrap();
        }
        let replayed = DecisionLog::replay(&path).unwrap();
        assert_eq!(replayed, s.decisions());
        assert_eq!(session_metrics(&replayed).unwrap(), s.metrics().unwrap());
        let line = std::fs::read_to_string(&path).unwrap();
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(
            line.lines().next().unwrap(),
        )
        .unwrap()
        .keys()
        .cloned()
        .collect();
        let mut want = vec![
            "session_id", "prompt_id", "condition", "preselected_id", "chosen_id",
            "true_parent_id", "elapsed_ms", "ts",
        ];
        want.sort();
        assert_eq!(keys, want);
    }
}
