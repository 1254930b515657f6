//! Host↔guest wire protocol: newline-delimited JSON over the guest's stdio.
//!
//! The guest announces itself with `{"proto":1}` on its first stdout line,
//! then answers each request with exactly one response line echoing the
//! request id. Unknown fields are ignored on both sides.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Exec { id: String, snippet: String },
    Reset { id: String },
    Ping { id: String },
}

impl Request {
    pub fn id(&self) -> &str {
        match self {
            Request::Exec { id, .. } | Request::Reset { id } | Request::Ping { id } => id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub status: WireStatus,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub duration_s: f64,
    /// Names newly bound by the snippet. Optional extension; guests that do
    /// not track namespace deltas omit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_names: Option<Vec<String>>,
}

impl Response {
    pub fn ok(id: impl Into<String>) -> Self {
        Response {
            id: id.into(),
            status: WireStatus::Ok,
            stdout: String::new(),
            stderr: String::new(),
            artifacts: Vec::new(),
            duration_s: 0.0,
            new_names: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub proto: u32,
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    // Serializing these plain structs cannot fail.
    serde_json::to_string(msg).expect("wire message serializes")
}
