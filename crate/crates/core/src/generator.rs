//! Seeded generation of randomized and counterbalanced trial plans.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::plan::{ColumnSchema, TrialPlan, TrialRecord, PARTICIPANT_COLUMN, TRIAL_COLUMN};
use crate::rng::{seeded_shuffle, stream_key};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

impl Factor {
    pub fn new(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            name: name.into(),
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// One shuffle over every condition and repetition.
    Shuffle,
    /// Each repetition block shuffled on its own, blocks concatenated.
    Blocked,
    /// Participant `k` gets row `k mod n` of a seeded `n`×`n` square.
    LatinSquare,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffle" => Ok(Method::Shuffle),
            "blocked" => Ok(Method::Blocked),
            "latin_square" => Ok(Method::LatinSquare),
            other => Err(Error::SpecInvalid(format!(
                "unknown method {other:?} (expected shuffle, blocked or latin_square)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Shuffle => "shuffle",
            Method::Blocked => "blocked",
            Method::LatinSquare => "latin_square",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomizationSpec {
    pub factors: Vec<Factor>,
    pub repetitions: usize,
    pub method: Method,
    pub participants: Vec<u64>,
    pub output_columns: Vec<String>,
    pub seed: u64,
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::SpecInvalid(msg.into()))
}

impl RandomizationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return invalid("at least one factor is required");
        }
        if self.repetitions == 0 {
            return invalid("repetitions must be at least 1");
        }
        if self.participants.is_empty() {
            return invalid("at least one participant is required");
        }
        if self.output_columns.is_empty() {
            return invalid("at least one output column is required");
        }
        let mut participants = HashSet::new();
        if let Some(p) = self.participants.iter().find(|p| !participants.insert(**p)) {
            return invalid(format!("participant {p} listed twice"));
        }

        let mut columns: HashSet<&str> = [PARTICIPANT_COLUMN, TRIAL_COLUMN].into();
        for factor in &self.factors {
            if factor.name.trim().is_empty() {
                return invalid("factor name is empty");
            }
            if factor.name == PARTICIPANT_COLUMN || factor.name == TRIAL_COLUMN {
                return invalid(format!("factor name {:?} is reserved", factor.name));
            }
            if !columns.insert(&factor.name) {
                return invalid(format!("duplicate factor name {:?}", factor.name));
            }
            if factor.levels.is_empty() {
                return invalid(format!("factor {:?} has no levels", factor.name));
            }
            let mut levels = HashSet::new();
            if let Some(l) = factor.levels.iter().find(|l| !levels.insert(l.as_str())) {
                return invalid(format!("factor {:?} lists level {l:?} twice", factor.name));
            }
        }
        for name in &self.output_columns {
            if name.trim().is_empty() {
                return invalid("output column name is empty");
            }
            if !columns.insert(name) {
                return invalid(format!(
                    "output column {name:?} clashes with another column"
                ));
            }
        }
        self.condition_count()?;
        Ok(())
    }

    /// Size of the full factorial (one repetition).
    pub fn condition_count(&self) -> Result<usize> {
        self.factors
            .iter()
            .try_fold(1usize, |acc, f| acc.checked_mul(f.levels.len()))
            .ok_or_else(|| Error::SpecInvalid("factorial design is too large".into()))
    }
}

/// Cartesian product of the factor levels, first factor slowest-varying,
/// repeated `repetitions` times.
pub fn factorial_expand(factors: &[Factor], repetitions: usize) -> Vec<Vec<String>> {
    let mut product: Vec<Vec<String>> = vec![Vec::new()];
    for factor in factors {
        product = product
            .into_iter()
            .flat_map(|prefix| {
                factor.levels.iter().map(move |level| {
                    let mut tuple = prefix.clone();
                    tuple.push(level.clone());
                    tuple
                })
            })
            .collect();
    }
    if factors.is_empty() {
        product.clear();
    }
    let once = product;
    (0..repetitions)
        .flat_map(|_| once.iter().cloned())
        .collect()
}

/// Seeded `order`×`order` Latin square of condition indices: the cyclic
/// square `(r + c) mod order` with rows and symbols permuted by seeded
/// shuffles.
pub fn latin_square(order: usize, seed: u64) -> Vec<Vec<usize>> {
    let rows = seeded_shuffle((0..order).collect(), seed, stream_key(&[3, 0]));
    let symbols = seeded_shuffle(
        (0..order).collect::<Vec<usize>>(),
        seed,
        stream_key(&[3, 1]),
    );
    rows.iter()
        .map(|&r| (0..order).map(|c| symbols[(r + c) % order]).collect())
        .collect()
}

/// Condition order for one participant (`index` is its zero-based position
/// in the participant list), as indices into one factorial repetition.
fn condition_order(
    spec: &RandomizationSpec,
    index: usize,
    participant: u64,
    n: usize,
    square: &[Vec<usize>],
) -> Vec<usize> {
    let all: Vec<usize> = (0..spec.repetitions).flat_map(|_| 0..n).collect();
    match spec.method {
        Method::Shuffle => seeded_shuffle(all, spec.seed, stream_key(&[1, participant])),
        Method::Blocked => (0..spec.repetitions)
            .flat_map(|block| {
                seeded_shuffle(
                    (0..n).collect(),
                    spec.seed,
                    stream_key(&[2, participant, block as u64]),
                )
            })
            .collect(),
        Method::LatinSquare => {
            let row = &square[index % n];
            (0..spec.repetitions)
                .flat_map(|_| row.iter().copied())
                .collect()
        }
    }
}

/// Builds a plan for every participant in `spec`, trial numbers 1..n per
/// participant and every output slot empty.
pub fn generate_plan(spec: &RandomizationSpec) -> Result<TrialPlan> {
    spec.validate()?;
    let conditions = factorial_expand(&spec.factors, 1);
    let square = match spec.method {
        Method::LatinSquare => latin_square(conditions.len(), spec.seed),
        _ => Vec::new(),
    };

    let schema = ColumnSchema::new(
        spec.factors.iter().map(|f| f.name.clone()).collect(),
        spec.output_columns.clone(),
    );
    let outputs = schema.output_count();
    let mut rows = Vec::new();
    for (index, &participant) in spec.participants.iter().enumerate() {
        let order = condition_order(spec, index, participant, conditions.len(), &square);
        rows.extend(order.into_iter().enumerate().map(|(t, c)| {
            TrialRecord::unfilled(participant, t as u64 + 1, conditions[c].clone(), outputs)
        }));
    }
    Ok(TrialPlan::new(schema, rows))
}

fn split_list(value: &str) -> Result<Vec<String>> {
    let mut items = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    let mut chars = value.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '"' if in_quotes && chars.peek() == Some(&'"') => {
                current.push('"');
                chars.next();
            }
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => items.push(std::mem::take(&mut current)),
            _ if !in_quotes && ch.is_whitespace() && current.is_empty() => {}
            _ => current.push(ch),
        }
    }
    if in_quotes {
        return invalid(format!("unbalanced quote in {value:?}"));
    }
    items.push(current);
    // trailing unquoted whitespace
    Ok(items
        .into_iter()
        .map(|s| s.trim_end().to_string())
        .filter(|s| !s.is_empty())
        .collect())
}

fn parse_participants(value: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for item in split_list(value)? {
        let bad = || Error::SpecInvalid(format!("bad participant entry {item:?}"));
        match item.split_once('-') {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
                let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                out.extend(lo..=hi);
            }
            None => out.push(item.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

/// Parses the plain-text generator config. See `docs/formats.md`.
///
/// ```text
/// method = latin_square
/// repetitions = 2
/// participants = 1-6
/// outputs = response, rt
/// seed = 42
/// factor side = left, right
/// factor duration = 250, 500, 1000
/// ```
///
/// `seed_override` replaces (or supplies) the `seed` key.
pub fn parse_spec_file(text: &str, seed_override: Option<u64>) -> Result<RandomizationSpec> {
    let mut method = None;
    let mut repetitions = None;
    let mut participants = None;
    let mut outputs = None;
    let mut seed = None;
    let mut factors = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = n + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::SpecInvalid(format!("line {lineno}: expected key = value")))?;
        let key = key.trim();
        let value = value.trim();

        fn set<T>(slot: &mut Option<T>, key: &str, lineno: usize, value: T) -> Result<()> {
            if slot.replace(value).is_some() {
                return invalid(format!("line {lineno}: {key} given twice"));
            }
            Ok(())
        }

        if let Some(name) = key.strip_prefix("factor ") {
            factors.push(Factor {
                name: name.trim().to_string(),
                levels: split_list(value)?,
            });
            continue;
        }
        match key {
            "method" => set(&mut method, key, lineno, value.parse::<Method>()?)?,
            "repetitions" => {
                let reps = value.parse().map_err(|_| {
                    Error::SpecInvalid(format!(
                        "line {lineno}: repetitions must be a positive integer"
                    ))
                })?;
                set(&mut repetitions, key, lineno, reps)?
            }
            "participants" => set(&mut participants, key, lineno, parse_participants(value)?)?,
            "outputs" => set(&mut outputs, key, lineno, split_list(value)?)?,
            "seed" => {
                let s = value.parse().map_err(|_| {
                    Error::SpecInvalid(format!(
                        "line {lineno}: seed must be an unsigned 64-bit integer"
                    ))
                })?;
                set(&mut seed, key, lineno, s)?
            }
            other => return invalid(format!("line {lineno}: unknown key {other:?}")),
        }
    }

    let spec = RandomizationSpec {
        factors,
        repetitions: repetitions.unwrap_or(1),
        method: method.ok_or_else(|| Error::SpecInvalid("method is required".into()))?,
        participants: participants
            .ok_or_else(|| Error::SpecInvalid("participants is required".into()))?,
        output_columns: outputs.ok_or_else(|| Error::SpecInvalid("outputs is required".into()))?,
        seed: seed_override
            .or(seed)
            .ok_or_else(|| Error::SpecInvalid("seed is required (config key or --seed)".into()))?,
    };
    spec.validate()?;
    Ok(spec)
}
