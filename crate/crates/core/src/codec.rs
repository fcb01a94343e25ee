//! CSV codec shared by plan files, the results journal and exports.
//!
//! One fixed dialect: comma delimiter, double-quote quoting with doubled
//! inner quotes, UTF-8, LF written, LF or CRLF accepted on read, mandatory
//! header row. A leading UTF-8 BOM is skipped on read and never written.
//! Cells are quoted on write only when they contain a comma, a quote, CR
//! or LF.

use crate::error::{Error, Result};
use crate::plan::{is_blank, ColumnSchema, TrialPlan, TrialRecord};

const BOM: &[u8] = b"\xEF\xBB\xBF";

pub fn strip_bom(bytes: &[u8]) -> &[u8] {
    bytes.strip_prefix(BOM).unwrap_or(bytes)
}

/// One record as found in the byte stream, before UTF-8 decoding.
#[derive(Debug, Clone)]
pub(crate) struct RawRecord {
    pub cells: Vec<Vec<u8>>,
    /// 1-based line on which the record starts.
    pub line: usize,
    /// Byte offset just past the record's terminator (or EOF).
    pub end: usize,
    pub terminated: bool,
    /// Zero bytes between the previous terminator and this one.
    pub blank: bool,
}

impl RawRecord {
    pub fn decode(&self) -> Result<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                String::from_utf8(c.clone()).map_err(|_| Error::MalformedCsv {
                    line: self.line,
                    detail: "invalid UTF-8".to_string(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Default)]
pub(crate) struct Tokens {
    pub records: Vec<RawRecord>,
    /// Start line and byte offset of a quoted field still open at EOF. The
    /// partial record is not included in `records`.
    pub open_quote: Option<(usize, usize)>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    FieldStart,
    Unquoted,
    Quoted,
    QuoteInQuoted,
}

/// Splits `bytes` into records. Stops after `limit` records when given.
pub(crate) fn tokenize(bytes: &[u8], limit: Option<usize>) -> Result<Tokens> {
    let mut tokens = Tokens::default();
    let mut state = State::FieldStart;
    let mut cells: Vec<Vec<u8>> = Vec::new();
    let mut field: Vec<u8> = Vec::new();
    let mut line = 1;
    let mut record_line = 1;
    let mut record_start = 0;
    let mut i = 0;

    while i < bytes.len() {
        if limit.is_some_and(|n| tokens.records.len() >= n) {
            return Ok(tokens);
        }
        let b = bytes[i];
        // length of a line terminator starting here, if any
        let newline = match b {
            b'\n' => 1,
            b'\r' if bytes.get(i + 1) == Some(&b'\n') => 2,
            _ => 0,
        };
        match state {
            State::Quoted => {
                if b == b'"' {
                    state = State::QuoteInQuoted;
                } else {
                    if b == b'\n' {
                        line += 1;
                    }
                    field.push(b);
                }
                i += 1;
                continue;
            }
            State::QuoteInQuoted if b == b'"' => {
                field.push(b'"');
                state = State::Quoted;
                i += 1;
                continue;
            }
            State::QuoteInQuoted if b != b',' && newline == 0 => {
                return Err(Error::MalformedCsv {
                    line,
                    detail: "unexpected character after closing quote".to_string(),
                });
            }
            State::Unquoted if b == b'"' => {
                return Err(Error::MalformedCsv {
                    line,
                    detail: "quote inside unquoted field".to_string(),
                });
            }
            State::FieldStart if b == b'"' => {
                state = State::Quoted;
                i += 1;
                continue;
            }
            _ => {}
        }

        if b == b',' {
            cells.push(std::mem::take(&mut field));
            state = State::FieldStart;
            i += 1;
        } else if newline > 0 {
            let blank = i == record_start;
            cells.push(std::mem::take(&mut field));
            i += newline;
            line += 1;
            tokens.records.push(RawRecord {
                cells: std::mem::take(&mut cells),
                line: record_line,
                end: i,
                terminated: true,
                blank,
            });
            record_line = line;
            record_start = i;
            state = State::FieldStart;
        } else {
            field.push(b);
            state = State::Unquoted;
            i += 1;
        }
    }

    if limit.is_some_and(|n| tokens.records.len() >= n) {
        return Ok(tokens);
    }
    if state == State::Quoted {
        tokens.open_quote = Some((record_line, record_start));
    } else if record_start < bytes.len() {
        cells.push(field);
        tokens.records.push(RawRecord {
            cells,
            line: record_line,
            end: bytes.len(),
            terminated: false,
            blank: false,
        });
    }
    Ok(tokens)
}

fn needs_quotes(cell: &str) -> bool {
    cell.bytes()
        .any(|b| matches!(b, b',' | b'"' | b'\n' | b'\r'))
}

/// Appends one cell, quoted if needed.
pub fn write_cell(out: &mut String, cell: &str) {
    if needs_quotes(cell) {
        out.push('"');
        for ch in cell.chars() {
            if ch == '"' {
                out.push('"');
            }
            out.push(ch);
        }
        out.push('"');
    } else {
        out.push_str(cell);
    }
}

/// Appends one LF-terminated record.
pub fn write_record<'a>(out: &mut String, cells: impl IntoIterator<Item = &'a str>) {
    for (i, cell) in cells.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_cell(out, cell);
    }
    out.push('\n');
}

/// Parses a single record from text (trailing terminator optional).
pub fn parse_record(text: &str) -> Result<Vec<String>> {
    let tokens = tokenize(text.as_bytes(), None)?;
    if let Some((line, _)) = tokens.open_quote {
        return Err(Error::MalformedCsv {
            line,
            detail: "unbalanced quote".to_string(),
        });
    }
    match tokens.records.as_slice() {
        [] => Ok(Vec::new()),
        [record] => record.decode(),
        [_, extra, ..] => Err(Error::MalformedCsv {
            line: extra.line,
            detail: "expected a single record".to_string(),
        }),
    }
}

/// Header cell count and names, without looking at data rows.
pub fn sniff_schema(bytes: &[u8]) -> Result<(usize, Vec<String>)> {
    let bytes = strip_bom(bytes);
    let tokens = tokenize(bytes, Some(1))?;
    let header = match tokens.records.first() {
        Some(r) => r,
        None if tokens.open_quote.is_some() => {
            return Err(Error::MalformedCsv {
                line: 1,
                detail: "unbalanced quote".to_string(),
            })
        }
        None => return Err(Error::EmptyFile),
    };
    let names = header.decode()?;
    Ok((names.len(), names))
}

fn parse_id(raw: &str) -> Option<u64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || !trimmed.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    trimmed.parse().ok()
}

/// Parses plan bytes. The header is split by position: two id columns,
/// `input_count` input columns, and every remaining column is an output.
/// Blank output cells become absent values.
pub fn parse_plan(bytes: &[u8], input_count: usize) -> Result<TrialPlan> {
    let bytes = strip_bom(bytes);
    if bytes.is_empty() {
        return Err(Error::EmptyFile);
    }
    let tokens = tokenize(bytes, None)?;
    if let Some((line, _)) = tokens.open_quote {
        return Err(Error::MalformedCsv {
            line,
            detail: "unbalanced quote".to_string(),
        });
    }
    let mut records = tokens.records.iter().filter(|r| !r.blank);
    let header = records.next().ok_or(Error::EmptyFile)?.decode()?;

    let required = 2 + input_count + 1;
    if header.len() < required {
        return Err(Error::HeaderArity {
            found: header.len(),
            required,
            inputs: input_count,
        });
    }
    let width = header.len();
    let mut names = header.into_iter();
    let id_columns = [names.next().unwrap(), names.next().unwrap()];
    let input_columns: Vec<String> = names.by_ref().take(input_count).collect();
    let output_columns: Vec<String> = names.collect();
    let schema = ColumnSchema {
        id_columns,
        input_columns,
        output_columns,
    };

    let mut rows = Vec::new();
    for (n, record) in records.enumerate() {
        let row = n + 1;
        if record.cells.len() != width {
            return Err(Error::RaggedRow {
                row,
                line: record.line,
                found: record.cells.len(),
                expected: width,
            });
        }
        let mut cells = record.decode()?.into_iter();
        let mut id = |column: &str| {
            let value = cells.next().unwrap();
            parse_id(&value).ok_or_else(|| Error::NonIntegerId {
                row,
                line: record.line,
                column: column.to_string(),
                value,
            })
        };
        let participant = id(&schema.id_columns[0])?;
        let trial_number = id(&schema.id_columns[1])?;
        let inputs = cells.by_ref().take(input_count).collect();
        let outputs = cells.map(|v| (!is_blank(&v)).then_some(v)).collect();
        rows.push(TrialRecord {
            participant,
            trial_number,
            inputs,
            outputs,
        });
    }

    Ok(TrialPlan::new(schema, rows))
}

/// Canonical plan bytes: header, then one line per row, LF after each.
pub fn serialize_plan(plan: &TrialPlan) -> Vec<u8> {
    let mut out = String::new();
    write_record(&mut out, plan.schema.columns());
    for row in &plan.rows {
        let participant = row.participant.to_string();
        let trial = row.trial_number.to_string();
        let cells = [participant.as_str(), trial.as_str()]
            .into_iter()
            .chain(row.inputs.iter().map(String::as_str))
            .chain(row.outputs.iter().map(|o| o.as_deref().unwrap_or("")));
        write_record(&mut out, cells);
    }
    out.into_bytes()
}
