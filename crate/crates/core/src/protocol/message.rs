use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const PROTOCOL_VERSION: &str = "1.0";
pub const MAX_LINE_BYTES: usize = 1 << 20;

/// Every message on the wire, both directions. One JSON object per line,
/// discriminated by `"type"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    // engine -> manager
    Hello {
        protocol_version: String,
    },
    GetTrial,
    PutResult {
        outputs: IndexMap<String, String>,
    },
    Skip {
        #[serde(default)]
        reason: String,
    },
    Status,
    Bye,

    // manager -> engine
    Welcome {
        participant: u64,
        total: usize,
        completed: usize,
        resumed_at_trial: Option<u64>,
    },
    Trial {
        trial_number: u64,
        inputs: IndexMap<String, String>,
    },
    Finished,
    #[serde(rename = "OK")]
    Ack,
    StatusReport {
        total: usize,
        completed: usize,
        remaining: usize,
        current: Option<u64>,
    },
    Error {
        code: String,
        message: String,
    },
}

impl Message {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Message::Error {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::GetTrial => "GET_TRIAL",
            Message::PutResult { .. } => "PUT_RESULT",
            Message::Skip { .. } => "SKIP",
            Message::Status => "STATUS",
            Message::Bye => "BYE",
            Message::Welcome { .. } => "WELCOME",
            Message::Trial { .. } => "TRIAL",
            Message::Finished => "FINISHED",
            Message::Ack => "OK",
            Message::StatusReport { .. } => "STATUS_REPORT",
            Message::Error { .. } => "ERROR",
        }
    }
}

const MESSAGE_TYPES: [&str; 12] = [
    "HELLO",
    "GET_TRIAL",
    "PUT_RESULT",
    "SKIP",
    "STATUS",
    "BYE",
    "WELCOME",
    "TRIAL",
    "FINISHED",
    "OK",
    "STATUS_REPORT",
    "ERROR",
];

/// A message plus the optional correlation tag echoed back in replies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub message: Message,
    pub tag: Option<Value>,
}

impl Frame {
    pub fn new(message: Message) -> Self {
        Self { message, tag: None }
    }

    pub fn tagged(message: Message, tag: Option<Value>) -> Self {
        Self { message, tag }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{0}")]
    Syntax(String),
    #[error("line exceeds {MAX_LINE_BYTES} bytes")]
    LineTooLong,
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Syntax(_) => "PROTOCOL_ERROR",
            ProtocolError::LineTooLong => "LINE_TOO_LONG",
        }
    }
}

/// One LF-terminated line. Newlines inside values are JSON-escaped.
pub fn encode(frame: &Frame) -> Result<String, ProtocolError> {
    let mut value =
        serde_json::to_value(&frame.message).map_err(|e| ProtocolError::Syntax(e.to_string()))?;
    if let (Some(tag), Value::Object(map)) = (&frame.tag, &mut value) {
        map.insert("tag".to_string(), tag.clone());
    }
    let mut line = value.to_string();
    if line.len() >= MAX_LINE_BYTES {
        return Err(ProtocolError::LineTooLong);
    }
    line.push('\n');
    Ok(line)
}

/// The `tag` of a line that is a JSON object, even if it is not a valid
/// message, so error replies can still be correlated.
pub fn salvage_tag(line: &str) -> Option<Value> {
    match serde_json::from_str::<Value>(line.trim_end()) {
        Ok(Value::Object(mut map)) => map.remove("tag"),
        _ => None,
    }
}

/// Parses one line (terminator optional). Unknown fields are ignored;
/// an unknown or missing `"type"` is an error.
pub fn decode(line: &str) -> Result<Frame, ProtocolError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.len() > MAX_LINE_BYTES {
        return Err(ProtocolError::LineTooLong);
    }
    let mut value: Value = serde_json::from_str(line)
        .map_err(|e| ProtocolError::Syntax(format!("invalid JSON: {e}")))?;
    let Value::Object(map) = &mut value else {
        return Err(ProtocolError::Syntax(
            "message must be a JSON object".into(),
        ));
    };
    match map.get("type") {
        Some(Value::String(t)) if !MESSAGE_TYPES.contains(&t.as_str()) => {
            return Err(ProtocolError::Syntax(format!("unknown message type {t:?}")))
        }
        Some(Value::String(_)) => {}
        Some(_) => return Err(ProtocolError::Syntax("\"type\" must be a string".into())),
        None => return Err(ProtocolError::Syntax("missing \"type\"".into())),
    }
    let tag = map.remove("tag");
    let message =
        serde_json::from_value(value).map_err(|e| ProtocolError::Syntax(e.to_string()))?;
    Ok(Frame { message, tag })
}
