//! Front-end/worker messages: one JSON object per `\n`-terminated line,
//! discriminated by its `type` field.

use std::io::{self, BufRead, Read, Write};

use atmoscope_core::schedule::TaskChunk;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

/// Upper bound on one encoded message, newline included.
pub const MAX_MESSAGE_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Register {
    /// Free-form label (host and pid) shown in cluster status.
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registered {
    pub worker_id: u64,
    pub heartbeat_interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub worker_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub chunk: TaskChunk,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkResult {
    pub task_id: u64,
    pub chunk_index: u32,
    pub worker_id: u64,
    pub count: u64,
    pub elapsed_ms: f64,
    /// JSON array, passed through without re-encoding.
    pub payload: Box<RawValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_index: Option<u32>,
    pub code: String,
    pub message: String,
}

/// Error code the front-end sends to a worker it has declared dead.
pub const CODE_DEAD: &str = "DEAD";
pub const CODE_PROTOCOL: &str = "PROTOCOL";
pub const CODE_STORE: &str = "STORE";

#[derive(Debug, Clone)]
pub enum Message {
    Register(Register),
    Registered(Registered),
    Heartbeat(Heartbeat),
    Task(Task),
    Result(ChunkResult),
    Error(ErrorMsg),
    Shutdown,
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct Tag<'a> {
    #[serde(rename = "type", borrow)]
    kind: &'a str,
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("message exceeds {MAX_MESSAGE_BYTES} bytes")]
    TooLarge,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Register(_) => "register",
            Message::Registered(_) => "registered",
            Message::Heartbeat(_) => "heartbeat",
            Message::Task(_) => "task",
            Message::Result(_) => "result",
            Message::Error(_) => "error",
            Message::Shutdown => "shutdown",
        }
    }

    /// One line including the trailing `\n`.
    pub fn encode(&self) -> Vec<u8> {
        fn tagged<T: Serialize>(kind: &'static str, body: &T) -> Vec<u8> {
            serde_json::to_vec(&Tagged { kind, body }).expect("messages serialize")
        }
        let kind = self.kind();
        let mut out = match self {
            Message::Register(m) => tagged(kind, m),
            Message::Registered(m) => tagged(kind, m),
            Message::Heartbeat(m) => tagged(kind, m),
            Message::Task(m) => tagged(kind, m),
            Message::Result(m) => tagged(kind, m),
            Message::Error(m) => tagged(kind, m),
            Message::Shutdown => br#"{"type":"shutdown"}"#.to_vec(),
        };
        out.push(b'\n');
        out
    }

    pub fn decode(line: &[u8]) -> Result<Message, ProtocolError> {
        fn body<'a, T: Deserialize<'a>>(line: &'a [u8]) -> Result<T, ProtocolError> {
            serde_json::from_slice(line).map_err(|e| ProtocolError::Malformed(e.to_string()))
        }
        let tag: Tag<'_> = body(line)?;
        Ok(match tag.kind {
            "register" => Message::Register(body(line)?),
            "registered" => Message::Registered(body(line)?),
            "heartbeat" => Message::Heartbeat(body(line)?),
            "task" => Message::Task(body(line)?),
            "result" => Message::Result(body(line)?),
            "error" => Message::Error(body(line)?),
            "shutdown" => Message::Shutdown,
            other => return Err(ProtocolError::UnknownType(other.to_string())),
        })
    }
}

/// Reads one line into `buf` (cleared first). `Ok(false)` on clean EOF.
pub fn read_line<R: BufRead>(r: &mut R, buf: &mut Vec<u8>) -> Result<bool, ProtocolError> {
    buf.clear();
    let n = Read::take(&mut *r, MAX_MESSAGE_BYTES as u64 + 1).read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(false);
    }
    if buf.len() > MAX_MESSAGE_BYTES {
        return Err(ProtocolError::TooLarge);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    } else {
        return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
    }
    Ok(true)
}

pub fn read_message<R: BufRead>(r: &mut R) -> Result<Option<Message>, ProtocolError> {
    let mut buf = Vec::new();
    if !read_line(r, &mut buf)? {
        return Ok(None);
    }
    Message::decode(&buf).map(Some)
}

pub fn write_message<W: Write>(w: &mut W, m: &Message) -> io::Result<()> {
    w.write_all(&m.encode())?;
    w.flush()
}
