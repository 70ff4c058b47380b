use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::transport::JsonTransport;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub n: usize,
    pub max_tokens: usize,
    pub temperature: f64,
}

/// Produces candidate rewrites for a prompt.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<Vec<String>>;
}

/// Client over a JSON transport: the request is sent as is and the reply
/// must be `{"texts": [..]}`.
pub struct TransportClient {
    transport: JsonTransport,
}

impl TransportClient {
    pub fn new(transport: JsonTransport) -> Self {
        Self { transport }
    }
}

impl LlmClient for TransportClient {
    fn complete(&self, request: &LlmRequest) -> Result<Vec<String>> {
        let reply = self
            .transport
            .call(&json!(request))
            .map_err(|e| Error::Client(e.to_string()))?;
        let texts = reply
            .get("texts")
            .and_then(|t| t.as_array())
            .ok_or_else(|| Error::Client("reply lacks a `texts` array".into()))?;
        texts
            .iter()
            .map(|t| {
                t.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::Client("non-string entry in `texts`".into()))
            })
            .collect()
    }
}

fn markup() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Leading list markers: "1.", "2)", "(3)", "4:", "-", "*", "•".
    RE.get_or_init(|| Regex::new(r"^\s*(?:\(?\d{1,2}[.):]|[-*•])\s+").unwrap())
}

/// Splits replies into one sentence per line, drops enumeration markers and
/// wrapping quotes, and discards empty lines.
pub fn parse_candidates(texts: &[String]) -> Vec<String> {
    texts
        .iter()
        .flat_map(|t| t.lines())
        .map(|line| {
            let s = markup().replace(line, "");
            let s = s.trim();
            let s = s
                .strip_prefix('"')
                .and_then(|x| x.strip_suffix('"'))
                .unwrap_or(s)
                .trim();
            s.to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}
