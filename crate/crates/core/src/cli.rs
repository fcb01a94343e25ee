//! `exptrial` command line.
//!
//! Exit codes: 0 success, 2 validation or spec error, 3 I/O error, 4 lock
//! conflict. Reports and data go to stdout, diagnostics to stderr.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codec::{self, parse_plan, sniff_schema};
use crate::error::{Error, Result};
use crate::generator::{generate_plan, parse_spec_file};
use crate::persistence::{
    atomic_rewrite, default_journal_path, latest_entries, load_plan, locking_disabled,
    read_journal, reconcile, recover, LockGuard,
};
use crate::plan::{find_resume_point, validate_plan, PlanShape, ResumePoint, TrialPlan};
use crate::protocol::{exit_code_for, serve, Transport};
use crate::session::{new_session_id, SessionConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "exptrial",
    version,
    about = "Crash-safe trial management for experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a randomized trial plan from a config file
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a plan file against the plan contract
    Validate {
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Print a plan's header without interpreting it
    Inspect {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Show progress and the resume point for a participant
    Status {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        participant: u64,
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Run a session for a stimulus engine over the sidecar protocol
    Serve {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        participant: u64,
        /// Trial number to start at, overriding automatic resume
        #[arg(long)]
        start_from: Option<u64>,
        #[arg(long, value_enum, default_value_t = TransportKind::Stdio)]
        transport: TransportKind,
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Replay the journal into the plan after a crash
    Recover {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Write completed trials as an analysis-ready CSV
    Export {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Defaults to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Number of input columns after the two id columns
    #[arg(long)]
    pub inputs: Option<usize>,
    /// Number of output columns
    #[arg(long)]
    pub outputs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    Stdio,
    Socket,
}

/// A failed command: what to print and how to exit.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let mut message = format!("{}: {err}", err.code());
        if let Error::PlanInvalid(report) = &err {
            message = format!("{message}\n{report}");
        }
        Failure {
            code: exit_code_for(&err),
            message,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(err: io::Error) -> Self {
        Failure {
            code: EXIT_IO,
            message: format!("STORAGE_FAILURE: {err}"),
        }
    }
}

type CmdResult = std::result::Result<i32, Failure>;

pub fn meta_path(plan: &Path) -> PathBuf {
    let mut name = plan.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

/// Reads `<plan>.meta` (`inputs=N` / `outputs=N` lines), if present.
pub fn read_meta(plan: &Path) -> Result<Option<PlanShape>> {
    let path = meta_path(plan);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::storage(&path, e)),
    };
    let mut inputs = None;
    let mut outputs = None;
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let bad = || Error::SpecInvalid(format!("{}: bad line {line:?}", path.display()));
        let (key, value) = line.split_once('=').ok_or_else(bad)?;
        let value: usize = value.trim().parse().map_err(|_| bad())?;
        match key.trim() {
            "inputs" => inputs = Some(value),
            "outputs" => outputs = Some(value),
            _ => return Err(bad()),
        }
    }
    match (inputs, outputs) {
        (Some(i), Some(o)) => Ok(Some(PlanShape::new(i, o))),
        _ => Err(Error::SpecInvalid(format!(
            "{}: needs both inputs and outputs",
            path.display()
        ))),
    }
}

pub fn write_meta(plan: &Path, shape: PlanShape) -> Result<()> {
    let text = format!("inputs={}\noutputs={}\n", shape.inputs, shape.outputs);
    atomic_rewrite(&meta_path(plan), text.as_bytes())
}

fn resolve_shape(args: &PlanArgs) -> std::result::Result<PlanShape, Failure> {
    if let (Some(i), Some(o)) = (args.inputs, args.outputs) {
        return Ok(PlanShape::new(i, o));
    }
    let meta = read_meta(&args.plan)?;
    let shape = match (args.inputs, args.outputs, meta) {
        (i, o, Some(m)) => PlanShape::new(i.unwrap_or(m.inputs), o.unwrap_or(m.outputs)),
        (Some(i), None, None) => {
            // outputs are whatever follows the inputs
            let (total, _) = sniff_schema(&read_file(&args.plan)?)?;
            PlanShape::new(i, total.saturating_sub(2 + i))
        }
        _ => {
            let hint = fs::read(&args.plan)
                .ok()
                .and_then(|b| sniff_schema(&b).ok())
                .map(|(n, names)| format!(" (header has {n} columns: {})", names.join(", ")))
                .unwrap_or_default();
            return Err(Failure {
                code: EXIT_INVALID,
                message: format!(
                    "column counts unknown: pass --inputs and --outputs or create {}{hint}",
                    meta_path(&args.plan).display()
                ),
            });
        }
    };
    Ok(shape)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::storage(path, e))
}

fn journal_for(plan: &Path, journal: Option<PathBuf>) -> PathBuf {
    journal.unwrap_or_else(|| default_journal_path(plan))
}

fn take_lock(plan: &Path) -> Result<Option<LockGuard>> {
    if locking_disabled() {
        return Ok(None);
    }
    let (guard, _) = LockGuard::acquire(plan, &new_session_id())?;
    Ok(Some(guard))
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Generate { spec, out, seed } => cmd_generate(&spec, &out, seed),
        Command::Validate { plan } => cmd_validate(&plan),
        Command::Inspect { plan } => cmd_inspect(&plan),
        Command::Status {
            plan,
            participant,
            journal,
        } => cmd_status(&plan, participant, journal),
        Command::Serve {
            plan,
            participant,
            start_from,
            transport,
            port,
            journal,
        } => cmd_serve(&plan, participant, start_from, transport, port, journal),
        Command::Recover { plan, journal } => cmd_recover(&plan, journal),
        Command::Export { plan, journal, out } => cmd_export(&plan, journal, out),
    };
    match result {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

pub fn cmd_generate(spec_path: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::storage(spec_path, e))?;
    let spec = parse_spec_file(&text, seed)?;
    let plan = generate_plan(&spec)?;
    atomic_rewrite(out, &codec::serialize_plan(&plan))?;
    write_meta(out, plan.schema.shape())?;
    println!(
        "wrote {} rows for {} participant(s) to {} (method {}, seed {})",
        plan.rows.len(),
        spec.participants.len(),
        out.display(),
        spec.method,
        spec.seed
    );
    Ok(EXIT_OK)
}

pub fn cmd_validate(args: &PlanArgs) -> CmdResult {
    let shape = resolve_shape(args)?;
    let plan = parse_plan(&read_file(&args.plan)?, shape.inputs)?;
    let report = validate_plan(&plan, shape);
    println!("{report}");
    Ok(if report.is_runnable() {
        EXIT_OK
    } else {
        EXIT_INVALID
    })
}

pub fn cmd_inspect(plan: &Path) -> CmdResult {
    let (total, names) = sniff_schema(&read_file(plan)?)?;
    println!("{total} columns");
    for (i, name) in names.iter().enumerate() {
        println!("{i}\t{name}");
    }
    if let Some(shape) = read_meta(plan)? {
        println!("meta: inputs={} outputs={}", shape.inputs, shape.outputs);
    }
    Ok(EXIT_OK)
}

/// Plan with journaled-but-unapplied results folded in, without writing.
fn reconciled_view(
    plan_path: &Path,
    journal: &Path,
    shape: PlanShape,
) -> Result<(TrialPlan, usize)> {
    let plan = load_plan(plan_path, shape)?;
    let contents = read_journal(journal)?;
    let (view, report) = reconcile(&plan, &contents.entries);
    Ok((view, report.restored.len()))
}

pub fn cmd_status(args: &PlanArgs, participant: u64, journal: Option<PathBuf>) -> CmdResult {
    let shape = resolve_shape(args)?;
    let journal = journal_for(&args.plan, journal);
    let (plan, pending) = reconciled_view(&args.plan, &journal, shape)?;
    let resume = find_resume_point(&plan, participant)?;
    let rows: Vec<_> = plan
        .rows
        .iter()
        .filter(|r| r.participant == participant)
        .collect();
    let completed = rows.iter().filter(|r| r.is_complete()).count();
    println!(
        "participant {participant}: {} trials, {completed} completed, {} remaining",
        rows.len(),
        rows.len() - completed
    );
    match resume {
        ResumePoint::Index { trial_number, .. } => println!("resume at trial {trial_number}"),
        ResumePoint::Complete => println!("session complete"),
    }
    if pending > 0 {
        println!("{pending} journaled result(s) not yet in the plan; they are applied on the next serve or recover");
    }
    Ok(EXIT_OK)
}

pub fn cmd_serve(
    args: &PlanArgs,
    participant: u64,
    start_from: Option<u64>,
    transport: TransportKind,
    port: u16,
    journal: Option<PathBuf>,
) -> CmdResult {
    let shape = resolve_shape(args)?;
    let mut config = SessionConfig::new(&args.plan, participant, shape);
    config.start_from = start_from;
    config.journal_path = journal;
    let transport = match transport {
        TransportKind::Stdio => Transport::Stdio,
        TransportKind::Socket => Transport::Socket { port },
    };
    Ok(serve(&config, transport)?)
}

fn describe_restored(restored: &[(u64, u64)]) -> String {
    let single = restored.windows(2).all(|w| w[0].0 == w[1].0);
    let items: Vec<String> = restored
        .iter()
        .map(|(p, t)| {
            if single {
                format!("trial {t}")
            } else {
                format!("participant {p} trial {t}")
            }
        })
        .collect();
    if items.is_empty() {
        "0 restored".to_string()
    } else {
        format!("{} restored ({})", items.len(), items.join(", "))
    }
}

pub fn cmd_recover(args: &PlanArgs, journal: Option<PathBuf>) -> CmdResult {
    let shape = resolve_shape(args)?;
    let journal = journal_for(&args.plan, journal);
    let _lock = take_lock(&args.plan)?;
    let (_, report) = recover(&args.plan, &journal, shape)?;
    println!("{}", describe_restored(&report.restored));
    for orphan in &report.orphans {
        println!(
            "orphan: journal seq {} {} participant {} trial {} is not in the plan",
            orphan.seq,
            orphan.kind,
            orphan.participant,
            orphan.trial_number.unwrap_or_default()
        );
    }
    if report.torn_tail {
        println!("torn trailing journal line removed");
    }
    Ok(EXIT_OK)
}

/// Long-format CSV of every completed trial: ids, inputs, outputs, then the
/// timestamp and session id of the journal entry that produced the outputs.
/// Rows filled by hand have empty provenance columns.
pub fn export_csv(
    plan: &TrialPlan,
    journal_entries: &[crate::persistence::JournalEntry],
) -> Vec<u8> {
    let latest = latest_entries(journal_entries);
    let mut out = String::new();
    codec::write_record(
        &mut out,
        plan.schema.columns().chain(["timestamp", "session_id"]),
    );
    for row in plan.rows.iter().filter(|r| r.is_complete()) {
        let values: Vec<String> = row
            .outputs
            .iter()
            .map(|o| o.clone().unwrap_or_default())
            .collect();
        let (timestamp, session) = match latest.get(&row.key()) {
            Some(e) if e.output_values() == values => (e.timestamp.as_str(), e.session_id.as_str()),
            _ => ("", ""),
        };
        let participant = row.participant.to_string();
        let trial = row.trial_number.to_string();
        codec::write_record(
            &mut out,
            [participant.as_str(), trial.as_str()]
                .into_iter()
                .chain(row.inputs.iter().map(String::as_str))
                .chain(values.iter().map(String::as_str))
                .chain([timestamp, session]),
        );
    }
    out.into_bytes()
}

pub fn cmd_export(args: &PlanArgs, journal: Option<PathBuf>, out: Option<PathBuf>) -> CmdResult {
    let shape = resolve_shape(args)?;
    let journal = journal_for(&args.plan, journal);
    let plan = load_plan(&args.plan, shape)?;
    let contents = read_journal(&journal)?;
    let (view, _) = reconcile(&plan, &contents.entries);
    let bytes = export_csv(&view, &contents.entries);
    match out {
        Some(path) => {
            atomic_rewrite(&path, &bytes)?;
            let rows = view.rows.iter().filter(|r| r.is_complete()).count();
            eprintln!("exported {rows} completed trial(s) to {}", path.display());
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(&bytes)?;
            lock.flush()?;
        }
    }
    Ok(EXIT_OK)
}
