use std::io::{self, BufRead, BufReader, Write};
use std::net::{Ipv4Addr, TcpListener};
use std::thread;

use indexmap::IndexMap;

use crate::error::Error;
use crate::session::{CurrentTrial, Session, SessionConfig};

use super::message::{
    decode, encode, salvage_tag, Frame, Message, ProtocolError, MAX_LINE_BYTES, PROTOCOL_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Stdio,
    /// Loopback TCP; port 0 picks a free port.
    Socket {
        port: u16,
    },
}

/// Process exit status for a failure, shared with the CLI.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::StorageFailure { .. } => 3,
        Error::AlreadyLocked { .. } => 4,
        _ => 2,
    }
}

enum Line {
    Text(String),
    TooLong,
    BadUtf8,
}

/// Reads one LF-terminated line of at most `MAX_LINE_BYTES`. Longer lines
/// are consumed and reported as `TooLong`.
fn read_line<R: BufRead>(reader: &mut R) -> io::Result<Option<Line>> {
    let mut buf = Vec::new();
    let n = io::Read::take(&mut *reader, MAX_LINE_BYTES as u64 + 1).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') && buf.len() > MAX_LINE_BYTES {
        // drain the rest of the oversized line
        loop {
            let chunk = reader.fill_buf()?;
            if chunk.is_empty() {
                break;
            }
            match chunk.iter().position(|&b| b == b'\n') {
                Some(i) => {
                    reader.consume(i + 1);
                    break;
                }
                None => {
                    let len = chunk.len();
                    reader.consume(len);
                }
            }
        }
        return Ok(Some(Line::TooLong));
    }
    Ok(Some(match String::from_utf8(buf) {
        Ok(s) => Line::Text(s),
        Err(_) => Line::BadUtf8,
    }))
}

fn send<W: Write>(writer: &mut W, frame: &Frame) -> io::Result<()> {
    let line = encode(frame).unwrap_or_else(|e| {
        encode(&Frame::tagged(
            Message::error(e.code(), e.to_string()),
            frame.tag.clone(),
        ))
        .expect("error frame encodes")
    });
    writer.write_all(line.as_bytes())?;
    writer.flush()
}

fn major(version: &str) -> Option<&str> {
    let major = version.split('.').next()?.trim();
    (!major.is_empty()).then_some(major)
}

fn welcome(session: &Session) -> Message {
    let status = session.status();
    Message::Welcome {
        participant: session.participant(),
        total: status.total,
        completed: status.completed,
        resumed_at_trial: status.current,
    }
}

fn trial_message(session: &Session) -> Message {
    match session.current_trial() {
        CurrentTrial::Finished => Message::Finished,
        CurrentTrial::Trial {
            trial_number,
            inputs,
        } => Message::Trial {
            trial_number,
            inputs: inputs.into_iter().collect(),
        },
    }
}

/// Orders wire outputs by the plan's output columns. Any missing or extra
/// name is an arity mismatch.
fn positional_outputs(
    columns: &[String],
    outputs: &IndexMap<String, String>,
) -> Result<Vec<String>, Message> {
    let mut values = Vec::with_capacity(columns.len());
    for name in columns {
        match outputs.get(name) {
            Some(v) => values.push(v.clone()),
            None => {
                return Err(Message::error(
                    "OUTPUT_ARITY_MISMATCH",
                    format!("missing output {name:?}"),
                ))
            }
        }
    }
    if let Some(extra) = outputs.keys().find(|k| !columns.contains(k)) {
        return Err(Message::error(
            "OUTPUT_ARITY_MISMATCH",
            format!("unknown output {extra:?}"),
        ));
    }
    Ok(values)
}

fn error_message(err: &Error) -> Message {
    Message::error(err.code(), err.to_string())
}

/// Runs one session over a line transport and returns the process exit
/// status. The session is opened before the first message is read; if that
/// fails, the first message is answered with the error.
pub fn serve_stream<R: BufRead, W: Write>(
    config: &SessionConfig,
    mut reader: R,
    mut writer: W,
) -> io::Result<i32> {
    let mut session = match Session::begin(config) {
        Ok(s) => s,
        Err(err) => {
            eprintln!("error: {}: {err}", err.code());
            if let Some(Line::Text(text)) = read_line(&mut reader)? {
                let tag = salvage_tag(&text);
                send(&mut writer, &Frame::tagged(error_message(&err), tag))?;
            }
            return Ok(exit_code_for(&err));
        }
    };
    report_begin(config, &session);

    let mut greeted = false;
    loop {
        let text = match read_line(&mut reader)? {
            None => {
                // transport closed without BYE: treated as a crash, no SESSION_END
                eprintln!("transport closed without BYE");
                return Ok(0);
            }
            Some(Line::TooLong) => {
                let err = ProtocolError::LineTooLong;
                send(
                    &mut writer,
                    &Frame::new(Message::error(err.code(), err.to_string())),
                )?;
                continue;
            }
            Some(Line::BadUtf8) => {
                send(
                    &mut writer,
                    &Frame::new(Message::error("PROTOCOL_ERROR", "line is not valid UTF-8")),
                )?;
                continue;
            }
            Some(Line::Text(t)) => t,
        };
        let frame = match decode(&text) {
            Ok(f) => f,
            Err(e) => {
                let reply =
                    Frame::tagged(Message::error(e.code(), e.to_string()), salvage_tag(&text));
                send(&mut writer, &reply)?;
                continue;
            }
        };
        let tag = frame.tag;
        let reply =
            |writer: &mut W, message: Message| send(writer, &Frame::tagged(message, tag.clone()));

        // BYE is accepted before the handshake so an engine can give up cleanly
        if !greeted && !matches!(frame.message, Message::Hello { .. } | Message::Bye) {
            reply(&mut writer, Message::error("NOT_READY", "send HELLO first"))?;
            continue;
        }

        match frame.message {
            Message::Hello { protocol_version } => {
                if greeted {
                    reply(
                        &mut writer,
                        Message::error("PROTOCOL_ERROR", "duplicate HELLO"),
                    )?;
                    continue;
                }
                if major(&protocol_version) != major(PROTOCOL_VERSION) {
                    reply(
                        &mut writer,
                        Message::error(
                            "UNSUPPORTED_VERSION",
                            format!("manager speaks {PROTOCOL_VERSION}, engine sent {protocol_version:?}"),
                        ),
                    )?;
                    return Ok(match session.end() {
                        Ok(()) => 2,
                        Err(e) => exit_code_for(&e),
                    });
                }
                greeted = true;
                reply(&mut writer, welcome(&session))?;
            }
            Message::GetTrial => reply(&mut writer, trial_message(&session))?,
            Message::PutResult { outputs } => {
                if session.is_finished() {
                    reply(&mut writer, error_message(&Error::SessionFinished))?;
                    continue;
                }
                let values = match positional_outputs(session.output_columns(), &outputs) {
                    Ok(v) => v,
                    Err(msg) => {
                        reply(&mut writer, msg)?;
                        continue;
                    }
                };
                match session.record_result(&values) {
                    Ok(()) => reply(&mut writer, Message::Ack)?,
                    Err(err @ Error::StorageFailure { .. }) => {
                        eprintln!("error: {}: {err}", err.code());
                        reply(&mut writer, error_message(&err))?;
                        return Ok(exit_code_for(&err));
                    }
                    Err(err) => reply(&mut writer, error_message(&err))?,
                }
            }
            Message::Skip { reason } => match session.skip_trial(&reason) {
                Ok(()) => reply(&mut writer, Message::Ack)?,
                Err(err @ Error::StorageFailure { .. }) => {
                    eprintln!("error: {}: {err}", err.code());
                    reply(&mut writer, error_message(&err))?;
                    return Ok(exit_code_for(&err));
                }
                Err(err) => reply(&mut writer, error_message(&err))?,
            },
            Message::Status => {
                let s = session.status();
                reply(
                    &mut writer,
                    Message::StatusReport {
                        total: s.total,
                        completed: s.completed,
                        remaining: s.remaining,
                        current: s.current,
                    },
                )?
            }
            Message::Bye => {
                return match session.end() {
                    Ok(()) => {
                        reply(&mut writer, Message::Ack)?;
                        Ok(0)
                    }
                    Err(err) => {
                        eprintln!("error: {}: {err}", err.code());
                        reply(&mut writer, error_message(&err))?;
                        Ok(exit_code_for(&err))
                    }
                };
            }
            other => reply(
                &mut writer,
                Message::error(
                    "PROTOCOL_ERROR",
                    format!("{} is not an engine message", other.type_name()),
                ),
            )?,
        }
    }
}

fn report_begin(config: &SessionConfig, session: &Session) {
    let info = session.info();
    if !info.recovery.restored.is_empty() {
        eprintln!(
            "recovered {} trial(s) from the journal",
            info.recovery.restored.len()
        );
    }
    if let Some(holder) = &info.stolen_lock {
        eprintln!(
            "warning: took over stale lock from session {:?} (pid {})",
            holder.session_id, holder.pid
        );
    }
    if info.start_precedes_resume(config.start_from) {
        eprintln!(
            "warning: starting at trial {} re-runs completed trials; their outputs will be overwritten",
            config.start_from.unwrap_or_default()
        );
    }
}

/// Serves one session on `transport`.
pub fn serve(config: &SessionConfig, transport: Transport) -> io::Result<i32> {
    match transport {
        Transport::Stdio => {
            let stdin = io::stdin();
            let stdout = io::stdout();
            serve_stream(config, stdin.lock(), stdout.lock())
        }
        Transport::Socket { port } => {
            let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, port))?;
            eprintln!("listening on {}", listener.local_addr()?);
            let (stream, peer) = listener.accept()?;
            eprintln!("engine connected from {peer}");
            let refuser = listener.try_clone()?;
            thread::spawn(move || refuse_extra_connections(refuser));
            let reader = BufReader::new(stream.try_clone()?);
            serve_stream(config, reader, stream)
        }
    }
}

fn refuse_extra_connections(listener: TcpListener) {
    for mut stream in listener.incoming().flatten() {
        let busy = Frame::new(Message::error("BUSY", "another engine is connected"));
        let _ = send(&mut stream, &busy);
    }
}
