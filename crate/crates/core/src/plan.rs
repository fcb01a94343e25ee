//! Trial-plan data model.
//!
//! A plan is the in-memory form of the pre-generated CSV: two id columns
//! (`partiNumber`, `trialNumber`), a block of input columns carrying the
//! stimulus settings, and a block of output columns that start empty and
//! are filled as trials complete. A row is complete when every output cell
//! holds a non-blank value; the resume point for a participant is the first
//! row that is not.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use crate::error::{Error, Result};

pub const PARTICIPANT_COLUMN: &str = "partiNumber";
pub const TRIAL_COLUMN: &str = "trialNumber";

/// Number of input and output feature columns, excluding the two id columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl PlanShape {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs }
    }
}

/// Whitespace-only cells count as empty.
pub fn is_blank(value: &str) -> bool {
    value.trim().is_empty()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub id_columns: [String; 2],
    pub input_columns: Vec<String>,
    pub output_columns: Vec<String>,
}

impl ColumnSchema {
    /// Schema with the standard id headers.
    pub fn new(input_columns: Vec<String>, output_columns: Vec<String>) -> Self {
        Self {
            id_columns: [PARTICIPANT_COLUMN.to_string(), TRIAL_COLUMN.to_string()],
            input_columns,
            output_columns,
        }
    }

    pub fn input_count(&self) -> usize {
        self.input_columns.len()
    }

    pub fn output_count(&self) -> usize {
        self.output_columns.len()
    }

    pub fn shape(&self) -> PlanShape {
        PlanShape::new(self.input_count(), self.output_count())
    }

    /// All column names in file order.
    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.id_columns
            .iter()
            .chain(&self.input_columns)
            .chain(&self.output_columns)
            .map(String::as_str)
    }

    pub fn width(&self) -> usize {
        2 + self.input_count() + self.output_count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecord {
    pub participant: u64,
    pub trial_number: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<Option<String>>,
}

impl TrialRecord {
    /// A fresh row with every output slot empty.
    pub fn unfilled(
        participant: u64,
        trial_number: u64,
        inputs: Vec<String>,
        outputs: usize,
    ) -> Self {
        Self {
            participant,
            trial_number,
            inputs,
            outputs: vec![None; outputs],
        }
    }

    pub fn filled_outputs(&self) -> usize {
        self.outputs
            .iter()
            .filter(|o| o.as_deref().is_some_and(|v| !is_blank(v)))
            .count()
    }

    pub fn is_complete(&self) -> bool {
        self.filled_outputs() == self.outputs.len()
    }

    pub fn key(&self) -> (u64, u64) {
        (self.participant, self.trial_number)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialPlan {
    pub schema: ColumnSchema,
    pub rows: Vec<TrialRecord>,
    pub source_path: Option<PathBuf>,
}

impl TrialPlan {
    pub fn new(schema: ColumnSchema, rows: Vec<TrialRecord>) -> Self {
        Self {
            schema,
            rows,
            source_path: None,
        }
    }

    /// Participant ids in order of first appearance.
    pub fn participants(&self) -> Vec<u64> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .map(|r| r.participant)
            .filter(|p| seen.insert(*p))
            .collect()
    }

    pub fn find_row(&self, participant: u64, trial_number: u64) -> Option<usize> {
        self.rows
            .iter()
            .position(|r| r.participant == participant && r.trial_number == trial_number)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResumePoint {
    Complete,
    /// `row_index` is the position within the participant's rows, not the
    /// whole plan.
    Index {
        row_index: usize,
        trial_number: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FindingCode {
    BadIdHeaders,
    ArityMismatch,
    DuplicateColumn,
    DuplicateTrialKey,
    NonMonotonicTrials,
    NoOutputColumns,
    RowArity,
    PartialOutputRow,
    NoRows,
}

impl FindingCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingCode::BadIdHeaders => "BAD_ID_HEADERS",
            FindingCode::ArityMismatch => "ARITY_MISMATCH",
            FindingCode::DuplicateColumn => "DUPLICATE_COLUMN",
            FindingCode::DuplicateTrialKey => "DUPLICATE_TRIAL_KEY",
            FindingCode::NonMonotonicTrials => "NON_MONOTONIC_TRIALS",
            FindingCode::NoOutputColumns => "NO_OUTPUT_COLUMNS",
            FindingCode::RowArity => "ROW_ARITY",
            FindingCode::PartialOutputRow => "PARTIAL_OUTPUT_ROW",
            FindingCode::NoRows => "NO_ROWS",
        }
    }
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub severity: Severity,
    pub code: FindingCode,
    /// Zero-based plan row index.
    pub row: Option<usize>,
    pub column: Option<String>,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.severity, self.code)?;
        if let Some(row) = self.row {
            write!(f, " row {row}")?;
        }
        if let Some(column) = &self.column {
            write!(f, " column {column}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn error_count(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
            .count()
    }

    pub fn warning_count(&self) -> usize {
        self.findings.len() - self.error_count()
    }

    pub fn is_runnable(&self) -> bool {
        self.error_count() == 0
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    fn push(
        &mut self,
        severity: Severity,
        code: FindingCode,
        row: Option<usize>,
        column: Option<&str>,
        message: String,
    ) {
        self.findings.push(Finding {
            severity,
            code,
            row,
            column: column.map(str::to_string),
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        write!(
            f,
            "{} errors, {} warnings",
            self.error_count(),
            self.warning_count()
        )
    }
}

/// Checks a structurally parsed plan against the plan contract. Problems are
/// collected, never thrown.
pub fn validate_plan(plan: &TrialPlan, expected: PlanShape) -> ValidationReport {
    use FindingCode::*;
    use Severity::*;

    let mut report = ValidationReport::default();
    let schema = &plan.schema;

    for (pos, wanted) in [PARTICIPANT_COLUMN, TRIAL_COLUMN].into_iter().enumerate() {
        let found = &schema.id_columns[pos];
        if found != wanted {
            report.push(
                Error,
                BadIdHeaders,
                None,
                Some(found),
                format!("header {} must be {wanted:?}, found {found:?}", pos + 1),
            );
        }
    }

    if schema.input_count() != expected.inputs {
        report.push(
            Error,
            ArityMismatch,
            None,
            None,
            format!(
                "expected {} input columns, plan has {}",
                expected.inputs,
                schema.input_count()
            ),
        );
    }
    if schema.output_count() != expected.outputs {
        report.push(
            Error,
            ArityMismatch,
            None,
            None,
            format!(
                "expected {} output columns, plan has {}",
                expected.outputs,
                schema.output_count()
            ),
        );
    }
    if schema.output_count() == 0 {
        report.push(
            Error,
            NoOutputColumns,
            None,
            None,
            "plan has no output columns, so no trial can ever complete".to_string(),
        );
    }

    let mut seen_columns = HashSet::new();
    for name in schema.columns() {
        if !seen_columns.insert(name) {
            report.push(
                Error,
                DuplicateColumn,
                None,
                Some(name),
                format!("column {name:?} appears more than once"),
            );
        }
    }

    if plan.rows.is_empty() {
        report.push(
            Warning,
            NoRows,
            None,
            None,
            "plan has no trial rows".to_string(),
        );
    }

    let mut keys = HashSet::new();
    let mut last_trial: HashMap<u64, u64> = HashMap::new();
    for (idx, row) in plan.rows.iter().enumerate() {
        if row.inputs.len() != schema.input_count() || row.outputs.len() != schema.output_count() {
            report.push(
                Error,
                RowArity,
                Some(idx),
                None,
                format!(
                    "row has {} inputs / {} outputs, schema has {} / {}",
                    row.inputs.len(),
                    row.outputs.len(),
                    schema.input_count(),
                    schema.output_count()
                ),
            );
        }

        if !keys.insert(row.key()) {
            report.push(
                Error,
                DuplicateTrialKey,
                Some(idx),
                Some(TRIAL_COLUMN),
                format!(
                    "participant {} trial {} appears more than once",
                    row.participant, row.trial_number
                ),
            );
        } else if let Some(&prev) = last_trial.get(&row.participant) {
            if row.trial_number <= prev {
                report.push(
                    Error,
                    NonMonotonicTrials,
                    Some(idx),
                    Some(TRIAL_COLUMN),
                    format!(
                        "participant {} trial {} follows trial {prev}",
                        row.participant, row.trial_number
                    ),
                );
            }
        }
        let last = last_trial
            .entry(row.participant)
            .or_insert(row.trial_number);
        *last = (*last).max(row.trial_number);

        let filled = row.filled_outputs();
        if filled > 0 && filled < row.outputs.len() {
            report.push(
                Warning,
                PartialOutputRow,
                Some(idx),
                None,
                format!(
                    "participant {} trial {} has {filled} of {} outputs filled; it will be re-run",
                    row.participant,
                    row.trial_number,
                    row.outputs.len()
                ),
            );
        }
    }

    report
}

/// Rows belonging to `participant`, in file order, with their plan indices.
pub fn participant_rows(plan: &TrialPlan, participant: u64) -> Vec<(usize, &TrialRecord)> {
    plan.rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.participant == participant)
        .collect()
}

/// First incomplete row for `participant`, or `Complete` when every row has
/// all outputs filled.
pub fn find_resume_point(plan: &TrialPlan, participant: u64) -> Result<ResumePoint> {
    let rows = participant_rows(plan, participant);
    if rows.is_empty() {
        return Err(Error::UnknownParticipant(participant));
    }
    Ok(rows
        .iter()
        .enumerate()
        .find(|(_, (_, r))| !r.is_complete())
        .map(|(pos, (_, r))| ResumePoint::Index {
            row_index: pos,
            trial_number: r.trial_number,
        })
        .unwrap_or(ResumePoint::Complete))
}

/// Checks an output vector against the schema without touching any row.
pub fn check_outputs(schema: &ColumnSchema, outputs: &[String]) -> Result<()> {
    if outputs.len() != schema.output_count() {
        return Err(Error::OutputArityMismatch {
            expected: schema.output_count(),
            found: outputs.len(),
        });
    }
    if let Some((column, _)) = schema
        .output_columns
        .iter()
        .zip(outputs)
        .find(|(_, v)| is_blank(v))
    {
        return Err(Error::EmptyOutputValue {
            column: column.clone(),
        });
    }
    Ok(())
}

/// Returns a copy of `plan` with row `row_index` filled with `outputs`.
pub fn mark_result(plan: &TrialPlan, row_index: usize, outputs: &[String]) -> Result<TrialPlan> {
    if row_index >= plan.rows.len() {
        return Err(Error::RowOutOfRange {
            index: row_index,
            len: plan.rows.len(),
        });
    }
    check_outputs(&plan.schema, outputs)?;
    let mut next = plan.clone();
    next.rows[row_index].outputs = outputs.iter().cloned().map(Some).collect();
    Ok(next)
}
