//! JSON request/response transport for external services.
//!
//! A service is either a local command, which receives one JSON document on
//! stdin and must print one JSON document on stdout, or an HTTP endpoint
//! that accepts a JSON `POST` body and answers with JSON.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JsonTransport {
    Command { program: String, #[serde(default)] args: Vec<String> },
    Http { url: String },
}

impl JsonTransport {
    /// Parses `cmd:<program> [args...]` or an `http(s)://` URL.
    pub fn parse(spec: &str) -> Result<Self> {
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(JsonTransport::Http { url: spec.to_string() });
        }
        let rest = spec
            .strip_prefix("cmd:")
            .ok_or_else(|| Error::Config(format!("service `{spec}` is neither cmd:<program> nor a URL")))?;
        let mut parts = rest.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty command".into()))?;
        Ok(JsonTransport::Command {
            program,
            args: parts.collect(),
        })
    }

    pub fn call(&self, request: &Value) -> Result<Value> {
        match self {
            JsonTransport::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::piped())
                    .spawn()
                    .map_err(|e| Error::External(format!("spawning `{program}`: {e}")))?;
                {
                    let mut stdin = child.stdin.take().expect("stdin is piped");
                    serde_json::to_writer(&mut stdin, request)?;
                    stdin.write_all(b"\n")?;
                }
                let out = child.wait_with_output()?;
                if !out.status.success() {
                    return Err(Error::External(format!(
                        "`{program}` exited with {}: {}",
                        out.status,
                        String::from_utf8_lossy(&out.stderr).trim()
                    )));
                }
                serde_json::from_slice(&out.stdout)
                    .map_err(|e| Error::External(format!("`{program}` returned invalid JSON: {e}")))
            }
            JsonTransport::Http { url } => {
                let mut resp = ureq::post(url)
                    .send_json(request)
                    .map_err(|e| Error::External(format!("POST {url}: {e}")))?;
                resp.body_mut()
                    .read_json::<Value>()
                    .map_err(|e| Error::External(format!("POST {url}: invalid JSON reply: {e}")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parse_specs() {
        assert_eq!(
            JsonTransport::parse("cmd:python3 -m scorer").unwrap(),
            JsonTransport::Command {
                program: "python3".into(),
                args: vec!["-m".into(), "scorer".into()]
            }
        );
        assert!(matches!(
            JsonTransport::parse("http://localhost:9000/score").unwrap(),
            JsonTransport::Http { .. }
        ));
        assert!(JsonTransport::parse("scorer").is_err());
    }

    #[test]
    fn command_echo() {
        let t = JsonTransport::parse("cmd:cat").unwrap();
        let req = json!({"a": [1, 2, 3]});
        assert_eq!(t.call(&req).unwrap(), req);
        let bad = JsonTransport::parse("cmd:false").unwrap();
        assert!(matches!(bad.call(&req), Err(Error::External(_))));
    }
}
