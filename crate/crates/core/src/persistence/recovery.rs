use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::codec::{parse_plan, serialize_plan};
use crate::error::{Error, Result};
use crate::plan::{validate_plan, PlanShape, TrialPlan};

use super::atomic::atomic_rewrite;
use super::journal::{read_journal, truncate_torn_tail, JournalEntry};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    /// `(participant, trial_number)` filled from the journal, in plan order.
    pub restored: Vec<(u64, u64)>,
    /// RESULT/SKIP entries naming a trial the plan does not have.
    pub orphans: Vec<JournalEntry>,
    pub torn_tail: bool,
}

/// Latest RESULT/SKIP entry per `(participant, trial)`, by sequence number.
pub fn latest_entries(entries: &[JournalEntry]) -> HashMap<(u64, u64), &JournalEntry> {
    let mut latest: HashMap<(u64, u64), &JournalEntry> = HashMap::new();
    for entry in entries.iter().filter(|e| e.kind.is_trial()) {
        let Some(trial) = entry.trial_number else {
            continue;
        };
        let slot = latest.entry((entry.participant, trial)).or_insert(entry);
        if entry.seq > slot.seq {
            *slot = entry;
        }
    }
    latest
}

/// Fills every incomplete plan row that has a journaled result. Complete
/// rows are never overwritten: the plan is the source of truth once a row
/// is filled.
pub fn reconcile(plan: &TrialPlan, entries: &[JournalEntry]) -> (TrialPlan, RecoveryReport) {
    let latest = latest_entries(entries);
    let mut next = plan.clone();
    let mut report = RecoveryReport::default();

    for row in next.rows.iter_mut().filter(|r| !r.is_complete()) {
        if let Some(entry) = latest.get(&row.key()) {
            if entry.outputs.len() == row.outputs.len() {
                row.outputs = entry.output_values().into_iter().map(Some).collect();
                report.restored.push(row.key());
            }
        }
    }

    let mut orphans: Vec<&JournalEntry> = entries
        .iter()
        .filter(|e| e.kind.is_trial())
        .filter(|e| {
            e.trial_number
                .is_some_and(|t| plan.find_row(e.participant, t).is_none())
        })
        .collect();
    orphans.sort_by_key(|e| e.seq);
    report.orphans = orphans.into_iter().cloned().collect();
    (next, report)
}

/// Reads and validates the plan at `plan_path`.
pub fn load_plan(plan_path: &Path, shape: PlanShape) -> Result<TrialPlan> {
    let bytes = fs::read(plan_path).map_err(|e| Error::storage(plan_path, e))?;
    let mut plan = parse_plan(&bytes, shape.inputs)?;
    let report = validate_plan(&plan, shape);
    if !report.is_runnable() {
        return Err(Error::PlanInvalid(report));
    }
    plan.source_path = Some(plan_path.to_path_buf());
    Ok(plan)
}

/// Replays the journal into the plan file. Rows restored from the journal
/// are written back atomically; a plan that needs nothing is not rewritten.
/// A torn trailing journal line is cut off.
pub fn recover(
    plan_path: &Path,
    journal_path: &Path,
    shape: PlanShape,
) -> Result<(TrialPlan, RecoveryReport)> {
    let plan = load_plan(plan_path, shape)?;
    let journal = read_journal(journal_path)?;
    if !journal.output_columns.is_empty() && journal.output_columns != plan.schema.output_columns {
        return Err(Error::MalformedJournal {
            line: 1,
            detail: format!(
                "journal output columns {:?} do not match plan output columns {:?}",
                journal.output_columns, plan.schema.output_columns
            ),
        });
    }
    let (reconciled, mut report) = reconcile(&plan, &journal.entries);
    report.torn_tail = journal.torn_tail;
    if !report.restored.is_empty() {
        atomic_rewrite(plan_path, &serialize_plan(&reconciled))?;
    }
    truncate_torn_tail(journal_path, &journal)?;
    Ok((reconciled, report))
}
