//! Shared helpers for the integration tests: fixtures, a sidecar driver,
//! and brute-force oracles that do not reuse library logic.

#![allow(dead_code)]

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Output, Stdio};

use exptrial::{ColumnSchema, TrialPlan, TrialRecord};
use rand::rngs::StdRng;
use rand::Rng;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_exptrial")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Runs the CLI with `args`, no fault injection and no inherited lock opt-out.
pub fn run_cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("EXPTRIAL_CRASH_AT")
        .env_remove("EXPTRIAL_NO_LOCK")
        .output()
        .expect("spawn exptrial")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A running `exptrial serve` driven over stdio, one request line at a time.
pub struct Sidecar {
    pub child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl Sidecar {
    pub fn spawn(
        plan: &Path,
        participant: u64,
        inputs: usize,
        outputs: usize,
        env: &[(&str, &str)],
    ) -> Sidecar {
        Self::spawn_args(
            &[
                "serve",
                "--plan",
                path_str(plan),
                "--participant",
                &participant.to_string(),
                "--inputs",
                &inputs.to_string(),
                "--outputs",
                &outputs.to_string(),
            ],
            env,
        )
    }

    pub fn spawn_args(args: &[&str], env: &[(&str, &str)]) -> Sidecar {
        let mut cmd = Command::new(bin());
        cmd.args(args)
            .env_remove("EXPTRIAL_CRASH_AT")
            .env_remove("EXPTRIAL_NO_LOCK")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        for (k, v) in env {
            cmd.env(k, v);
        }
        let mut child = cmd.spawn().expect("spawn exptrial serve");
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("stdout"));
        Sidecar {
            child,
            stdin,
            stdout,
        }
    }

    /// Sends one line and returns the reply line, or `None` if the process
    /// went away first.
    pub fn request(&mut self, line: &str) -> Option<String> {
        let stdin = self.stdin.as_mut()?;
        let mut framed = line.to_string();
        if !framed.ends_with('\n') {
            framed.push('\n');
        }
        if stdin
            .write_all(framed.as_bytes())
            .and_then(|_| stdin.flush())
            .is_err()
        {
            return None;
        }
        let mut reply = String::new();
        match self.stdout.read_line(&mut reply) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(reply),
        }
    }

    /// Sends one line without waiting for the reply.
    pub fn send_only(&mut self, line: &str) {
        if let Some(stdin) = self.stdin.as_mut() {
            let _ = stdin
                .write_all(format!("{line}\n").as_bytes())
                .and_then(|_| stdin.flush());
        }
    }

    pub fn close_stdin(&mut self) {
        self.stdin = None;
    }

    /// Waits for exit and returns the status code (`None` when killed by a signal).
    pub fn wait(mut self) -> Option<i32> {
        self.stdin = None;
        self.child.wait().expect("wait").code()
    }

    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Drops `"timestamp"` fields at any depth so replies can be compared.
pub fn normalize_reply(line: &str) -> String {
    fn strip(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(map) => {
                map.retain(|k, _| k != "timestamp");
                map.values_mut().for_each(strip);
            }
            serde_json::Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    match serde_json::from_str::<serde_json::Value>(line.trim_end_matches(['\n', '\r'])) {
        Ok(mut v) => {
            strip(&mut v);
            v.to_string()
        }
        Err(_) => line.trim_end().to_string(),
    }
}

/// First row of `participant` with any blank output, scanning the whole
/// file. Blank means empty after trimming.
pub fn oracle_resume(plan: &TrialPlan, participant: u64) -> Option<usize> {
    let mut index = 0;
    for row in &plan.rows {
        if row.participant != participant {
            continue;
        }
        let mut incomplete = false;
        for out in &row.outputs {
            match out {
                None => incomplete = true,
                Some(v) if v.trim().is_empty() => incomplete = true,
                _ => {}
            }
        }
        if incomplete {
            return Some(index);
        }
        index += 1;
    }
    None
}

/// Independent RFC 4180 reader: returns every record as a list of cells.
/// Handles quotes, doubled quotes, CRLF and embedded newlines.
pub fn oracle_read_csv(text: &str) -> Vec<Vec<String>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let chars: Vec<char> = text.chars().collect();
    let mut records = Vec::new();
    let mut record = Vec::new();
    let mut cell = String::new();
    let mut i = 0;
    let mut quoted = false;
    let mut touched = false;
    while i < chars.len() {
        let c = chars[i];
        if quoted {
            if c == '"' {
                if chars.get(i + 1) == Some(&'"') {
                    cell.push('"');
                    i += 1;
                } else {
                    quoted = false;
                }
            } else {
                cell.push(c);
            }
        } else {
            match c {
                '"' => {
                    quoted = true;
                    touched = true;
                }
                ',' => {
                    record.push(std::mem::take(&mut cell));
                    touched = true;
                }
                '\r' if chars.get(i + 1) == Some(&'\n') => {}
                '\n' => {
                    if touched || !cell.is_empty() {
                        record.push(std::mem::take(&mut cell));
                        records.push(std::mem::take(&mut record));
                    }
                    touched = false;
                }
                _ => {
                    cell.push(c);
                    touched = true;
                }
            }
        }
        i += 1;
    }
    if touched || !cell.is_empty() {
        record.push(cell);
        records.push(record);
    }
    records
}

const ALPHABET: &[&str] = &[
    "a", "b", "Z", "0", "7", " ", ",", "\"", "\n", "\r\n", "é", "猫", "🙂", "'", ";", "\t",
];

pub fn random_text(rng: &mut StdRng, max_len: usize) -> String {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

pub fn random_nonblank(rng: &mut StdRng, max_len: usize) -> String {
    loop {
        let s = random_text(rng, max_len.max(1));
        if !s.trim().is_empty() {
            return s;
        }
    }
}

/// Unique, non-blank column names that avoid the id column names.
pub fn random_columns(rng: &mut StdRng, count: usize, taken: &mut Vec<String>) -> Vec<String> {
    let mut out = Vec::new();
    while out.len() < count {
        let name = random_nonblank(rng, 6);
        if !taken.contains(&name) {
            taken.push(name.clone());
            out.push(name);
        }
    }
    out
}

/// Random plan with arbitrary cell contents. Participants appear in runs,
/// trial numbers increase per participant, outputs are randomly filled.
pub fn random_plan(
    rng: &mut StdRng,
    max_trials: usize,
    max_inputs: usize,
    max_outputs: usize,
) -> TrialPlan {
    let mut taken = vec!["partiNumber".to_string(), "trialNumber".to_string()];
    let input_count = rng.gen_range(0..=max_inputs);
    let inputs = random_columns(rng, input_count, &mut taken);
    let output_count = rng.gen_range(1..=max_outputs);
    let outputs = random_columns(rng, output_count, &mut taken);
    let schema = ColumnSchema::new(inputs, outputs);
    let participants = rng.gen_range(1..=3u64);
    let mut rows = Vec::new();
    for p in 1..=participants {
        let n = rng.gen_range(0..=max_trials / participants as usize);
        let mut trial = 0;
        for _ in 0..n {
            trial += rng.gen_range(1..=2u64);
            let ins = (0..schema.input_count())
                .map(|_| random_text(rng, 8))
                .collect();
            let outs = (0..schema.output_count())
                .map(|_| rng.gen_bool(0.5).then(|| random_nonblank(rng, 8)))
                .collect();
            rows.push(TrialRecord {
                participant: p,
                trial_number: trial,
                inputs: ins,
                outputs: outs,
            });
        }
    }
    TrialPlan::new(schema, rows)
}

/// Simple plan text: participant `p`, trials 1..=n, one input `cond`,
/// outputs named `out1..outK`, all empty.
pub fn simple_plan_csv(participants: &[u64], trials: u64, outputs: usize) -> String {
    let mut s = String::from("partiNumber,trialNumber,cond");
    for k in 1..=outputs {
        s.push_str(&format!(",out{k}"));
    }
    s.push('\n');
    for &p in participants {
        for t in 1..=trials {
            s.push_str(&format!("{p},{t},c{}", (t * 7 + p) % 5));
            s.push_str(&",".repeat(outputs));
            s.push('\n');
        }
    }
    s
}

pub fn write_file(path: &Path, content: &str) {
    fs::write(path, content).expect("write fixture");
}

/// Independent writer: quotes a cell only when it holds `,`, `"`, CR or LF.
pub fn oracle_write_csv(records: &[Vec<String>], terminator: &str) -> String {
    let mut out = String::new();
    for record in records {
        let cells: Vec<String> = record
            .iter()
            .map(|c| {
                if c.contains([',', '"', '\r', '\n']) {
                    format!("\"{}\"", c.replace('"', "\"\""))
                } else {
                    c.clone()
                }
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push_str(terminator);
    }
    out
}

/// The plan as the list of records a CSV file of it should contain.
pub fn plan_records(plan: &TrialPlan) -> Vec<Vec<String>> {
    let mut records = vec![plan
        .schema
        .columns()
        .map(str::to_string)
        .collect::<Vec<_>>()];
    for row in &plan.rows {
        let mut r = vec![row.participant.to_string(), row.trial_number.to_string()];
        r.extend(row.inputs.iter().cloned());
        r.extend(row.outputs.iter().map(|o| o.clone().unwrap_or_default()));
        records.push(r);
    }
    records
}

/// Writes a journal with `entries` random entries through the library and
/// returns its bytes plus the file length after each complete line (the
/// header included), starting with 0.
pub fn build_journal(path: &Path, rng: &mut StdRng, entries: usize) -> (Vec<u8>, Vec<usize>) {
    use exptrial::persistence::{append_journal, EntryKind, JournalEntry};

    let outputs: Vec<String> = vec!["resp".into(), "rt, ms".into()];
    let mut boundaries = vec![0];
    for seq in 1..=entries as u64 {
        let kind = match rng.gen_range(0..5) {
            0 => EntryKind::SessionStart,
            1 => EntryKind::SessionEnd,
            2 => EntryKind::Skip,
            _ => EntryKind::Result,
        };
        let values: Vec<(String, String)> = if kind.is_trial() {
            outputs
                .iter()
                .map(|n| (n.clone(), random_nonblank(rng, 10)))
                .collect()
        } else {
            Vec::new()
        };
        let entry = JournalEntry {
            seq,
            kind,
            session_id: format!("s-{}", rng.gen_range(0..3)),
            participant: rng.gen_range(1..4),
            trial_number: kind.is_trial().then(|| rng.gen_range(1..20)),
            outputs: values,
            timestamp: "2026-01-01T00:00:00.000Z".into(),
        };
        append_journal(path, &outputs, &entry).expect("append");
        let len = fs::metadata(path).expect("journal").len() as usize;
        if seq == 1 {
            // first append also wrote the header line
            let bytes = fs::read(path).unwrap();
            let header_end = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
            boundaries.push(header_end);
        }
        boundaries.push(len);
    }
    (fs::read(path).expect("journal"), boundaries)
}

/// Replays `tests/golden/<name>/session.txt` against fresh copies of its
/// `plan.csv` and `plan.csv.meta`, then compares the plan file with
/// `final.csv`. Returns the transcript of what happened on mismatch.
///
/// Script lines:
/// - `! start [args...]`: spawn `serve` with extra args (`VAR=value` items set env)
/// - `> line`: send a request
/// - `< line`: expected reply, compared byte for byte outside `timestamp` fields
/// - `< <eof>`: the process must have gone away without replying
/// - `! kill`: SIGKILL the running process
/// - `! wait <code|signal>`: close stdin and check how the process exited
/// - `#` comments and blank lines are ignored
pub fn run_golden(name: &str) -> Result<usize, String> {
    let src = golden_dir().join(name);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let plan = dir.path().join("plan.csv");
    fs::copy(src.join("plan.csv"), &plan).map_err(|e| e.to_string())?;
    fs::copy(src.join("plan.csv.meta"), dir.path().join("plan.csv.meta"))
        .map_err(|e| e.to_string())?;
    let script = fs::read_to_string(src.join("session.txt")).map_err(|e| e.to_string())?;

    let mut sidecar: Option<Sidecar> = None;
    let mut checked = 0;
    for (n, line) in script.lines().enumerate() {
        let at = format!("{name}/session.txt:{}", n + 1);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("! start") {
            let mut args = vec!["serve".to_string(), "--plan".into(), path_str(&plan).into()];
            let mut env = Vec::new();
            for item in rest.split_whitespace() {
                match item.split_once('=') {
                    Some((k, v)) if !k.starts_with('-') => env.push((k.to_string(), v.to_string())),
                    _ => args.push(item.to_string()),
                }
            }
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let env: Vec<(&str, &str)> =
                env.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
            sidecar = Some(Sidecar::spawn_args(&args, &env));
        } else if let Some(request) = line.strip_prefix("> ") {
            let s = sidecar
                .as_mut()
                .ok_or(format!("{at}: no running process"))?;
            let reply = s.request(request);
            let expected = script.lines().nth(n + 1).and_then(|l| l.strip_prefix("< "));
            let Some(expected) = expected else {
                return Err(format!("{at}: request without an expected reply"));
            };
            match (reply, expected) {
                (None, "<eof>") => {}
                (Some(got), "<eof>") => return Err(format!("{at}: expected no reply, got {got}")),
                (None, want) => return Err(format!("{at}: no reply, expected {want}")),
                (Some(got), want) => {
                    let got = got.strip_suffix('\n').unwrap_or(&got);
                    let same = if got.contains("\"timestamp\"") || want.contains("\"timestamp\"") {
                        normalize_reply(got) == normalize_reply(want)
                    } else {
                        got == want
                    };
                    if !same {
                        return Err(format!("{at}:\n  expected {want}\n  got      {got}"));
                    }
                }
            }
            checked += 1;
        } else if line.starts_with("< ") {
            // consumed together with its request
        } else if line == "! kill" {
            sidecar
                .take()
                .ok_or(format!("{at}: nothing to kill"))?
                .kill();
        } else if let Some(want) = line.strip_prefix("! wait ") {
            let code = sidecar
                .take()
                .ok_or(format!("{at}: nothing to wait for"))?
                .wait();
            let got = code.map_or("signal".to_string(), |c| c.to_string());
            if got != want.trim() {
                return Err(format!("{at}: exit {got}, expected {want}"));
            }
        } else {
            return Err(format!("{at}: unknown script line {line:?}"));
        }
    }
    if let Some(s) = sidecar {
        s.kill();
        return Err(format!(
            "{name}: script ended with the process still running"
        ));
    }
    let got = fs::read_to_string(&plan).map_err(|e| e.to_string())?;
    let want = fs::read_to_string(src.join("final.csv")).map_err(|e| e.to_string())?;
    if got != want {
        return Err(format!(
            "{name}: final plan differs\n--- expected\n{want}--- got\n{got}"
        ));
    }
    Ok(checked)
}
