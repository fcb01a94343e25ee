//! Session runtime: begin or resume, serve the current trial, record its
//! result, advance, finish.
//!
//! Every recorded result is journaled and synced before the plan file is
//! rewritten, so a crash between the two loses nothing: the next
//! [`Session::begin`] replays the journal before choosing where to start.

use std::path::PathBuf;

use crate::codec::serialize_plan;
use crate::error::{Error, Result};
use crate::fault;
use crate::persistence::{
    atomic_rewrite, default_journal_path, locking_disabled, recover, EntryKind, Journal, LockGuard,
    LockHolder, LockOutcome, RecoveryReport,
};
use crate::plan::{
    check_outputs, find_resume_point, mark_result, participant_rows, PlanShape, ResumePoint,
    TrialPlan,
};

/// Prefix written into every output cell of a skipped trial.
pub const SKIP_SENTINEL: &str = "SKIPPED:";

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub plan_path: PathBuf,
    /// Defaults to `<plan>.journal.csv`.
    pub journal_path: Option<PathBuf>,
    pub participant: u64,
    pub shape: PlanShape,
    /// Trial number to start at, overriding the automatic resume point.
    pub start_from: Option<u64>,
    /// Take the plan lock. Also off when `EXPTRIAL_NO_LOCK=1`.
    pub lock: bool,
}

impl SessionConfig {
    pub fn new(plan_path: impl Into<PathBuf>, participant: u64, shape: PlanShape) -> Self {
        Self {
            plan_path: plan_path.into(),
            journal_path: None,
            participant,
            shape,
            start_from: None,
            lock: true,
        }
    }

    pub fn journal_path(&self) -> PathBuf {
        self.journal_path
            .clone()
            .unwrap_or_else(|| default_journal_path(&self.plan_path))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CurrentTrial {
    Trial {
        trial_number: u64,
        inputs: Vec<(String, String)>,
    },
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionStatus {
    pub total: usize,
    pub completed: usize,
    pub remaining: usize,
    pub current: Option<u64>,
}

/// What happened while the session was opened.
#[derive(Debug, Clone)]
pub struct BeginInfo {
    pub recovery: RecoveryReport,
    /// Resume point computed from the file, before any `start_from`.
    pub auto_resume: ResumePoint,
    pub stolen_lock: Option<LockHolder>,
}

impl BeginInfo {
    /// True when `start_from` sends the session back over completed trials.
    pub fn start_precedes_resume(&self, start_trial: Option<u64>) -> bool {
        match (start_trial, self.auto_resume) {
            (None, _) => false,
            (Some(_), ResumePoint::Complete) => true,
            (Some(t), ResumePoint::Index { trial_number, .. }) => t < trial_number,
        }
    }
}

#[derive(Debug)]
pub struct Session {
    plan: TrialPlan,
    plan_path: PathBuf,
    participant: u64,
    /// Plan row indices of this participant's trials, in file order.
    rows: Vec<usize>,
    /// Position in `rows`; `None` once finished.
    cursor: Option<usize>,
    completed_this_session: usize,
    session_id: String,
    journal: Journal,
    lock: Option<LockGuard>,
    info: BeginInfo,
}

pub fn new_session_id() -> String {
    format!(
        "{}-{:08x}",
        chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ"),
        rand::random::<u32>()
    )
}

impl Session {
    pub fn begin(config: &SessionConfig) -> Result<Session> {
        let session_id = new_session_id();
        let (lock, outcome) = if config.lock && !locking_disabled() {
            let (guard, outcome) = LockGuard::acquire(&config.plan_path, &session_id)?;
            (Some(guard), outcome)
        } else {
            (None, LockOutcome::Acquired)
        };

        let journal_path = config.journal_path();
        let (plan, recovery) = recover(&config.plan_path, &journal_path, config.shape)?;

        let participant = config.participant;
        let rows: Vec<usize> = participant_rows(&plan, participant)
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        let auto_resume = find_resume_point(&plan, participant)?;
        let cursor = match config.start_from {
            Some(trial) => Some(
                rows.iter()
                    .position(|&i| plan.rows[i].trial_number == trial)
                    .ok_or(Error::BadStartFrom { participant, trial })?,
            ),
            None => match auto_resume {
                ResumePoint::Index { row_index, .. } => Some(row_index),
                ResumePoint::Complete => None,
            },
        };

        let mut journal = Journal::open(&journal_path, &plan.schema.output_columns)?;
        let stolen_lock = match outcome {
            LockOutcome::Stolen(holder) => {
                journal.append(EntryKind::LockStolen, &session_id, participant, None, &[])?;
                Some(holder)
            }
            LockOutcome::Acquired => None,
        };
        journal.append(EntryKind::SessionStart, &session_id, participant, None, &[])?;

        Ok(Session {
            plan,
            plan_path: config.plan_path.clone(),
            participant,
            rows,
            cursor,
            completed_this_session: 0,
            session_id,
            journal,
            lock,
            info: BeginInfo {
                recovery,
                auto_resume,
                stolen_lock,
            },
        })
    }

    pub fn plan(&self) -> &TrialPlan {
        &self.plan
    }

    pub fn participant(&self) -> u64 {
        self.participant
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn info(&self) -> &BeginInfo {
        &self.info
    }

    pub fn completed_this_session(&self) -> usize {
        self.completed_this_session
    }

    pub fn is_finished(&self) -> bool {
        self.cursor.is_none()
    }

    pub fn output_columns(&self) -> &[String] {
        &self.plan.schema.output_columns
    }

    pub fn current_trial(&self) -> CurrentTrial {
        let Some(pos) = self.cursor else {
            return CurrentTrial::Finished;
        };
        let row = &self.plan.rows[self.rows[pos]];
        CurrentTrial::Trial {
            trial_number: row.trial_number,
            inputs: self
                .plan
                .schema
                .input_columns
                .iter()
                .cloned()
                .zip(row.inputs.iter().cloned())
                .collect(),
        }
    }

    pub fn current_trial_number(&self) -> Option<u64> {
        self.cursor
            .map(|pos| self.plan.rows[self.rows[pos]].trial_number)
    }

    pub fn status(&self) -> SessionStatus {
        let total = self.rows.len();
        let completed = self
            .rows
            .iter()
            .filter(|&&i| self.plan.rows[i].is_complete())
            .count();
        SessionStatus {
            total,
            completed,
            remaining: total - completed,
            current: self.current_trial_number(),
        }
    }

    /// Journals, persists and advances past the current trial.
    pub fn record_result(&mut self, outputs: &[String]) -> Result<()> {
        let pos = self.cursor.ok_or(Error::SessionFinished)?;
        check_outputs(&self.plan.schema, outputs)?;
        self.commit(pos, EntryKind::Result, outputs)
    }

    /// Fills every output of the current trial with `SKIPPED:<reason>`.
    pub fn skip_trial(&mut self, reason: &str) -> Result<()> {
        let pos = self.cursor.ok_or(Error::SessionFinished)?;
        let value = format!("{SKIP_SENTINEL}{reason}");
        let outputs = vec![value; self.plan.schema.output_count()];
        self.commit(pos, EntryKind::Skip, &outputs)
    }

    fn commit(&mut self, pos: usize, kind: EntryKind, outputs: &[String]) -> Result<()> {
        let index = self.rows[pos];
        let next = mark_result(&self.plan, index, outputs)?;
        let trial = self.plan.rows[index].trial_number;

        fault::point("before_journal");
        self.journal.append(
            kind,
            &self.session_id,
            self.participant,
            Some(trial),
            outputs,
        )?;
        fault::point("after_journal");
        atomic_rewrite(&self.plan_path, &serialize_plan(&next))?;
        fault::point("after_rewrite");

        self.plan = next;
        self.completed_this_session += 1;
        self.cursor =
            (pos + 1..self.rows.len()).find(|&p| !self.plan.rows[self.rows[p]].is_complete());
        Ok(())
    }

    /// Journals SESSION_END and releases the lock.
    pub fn end(mut self) -> Result<()> {
        self.journal.append(
            EntryKind::SessionEnd,
            &self.session_id,
            self.participant,
            None,
            &[],
        )?;
        match self.lock.take() {
            Some(lock) => lock.release(),
            None => Ok(()),
        }
    }
}
