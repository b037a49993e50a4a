//! Line-delimited JSON protocol for out-of-process backends.
//!
//! Each request is one line `{"op": <name>, "args": {...}}` and each reply one
//! line, either `{"result": ...}` or `{"error": <message>, "kind": ...}`.
//! Ops: `describe`, `configure`, `embed_tokens`, `conditional_token_logprobs`,
//! `arc_entailment_probs`, `masked_fill_accuracy`, `parse_dependencies`.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendDescriptor, BackendError, DependencyArc, Result, TokenEmbeddings};

pub trait Transport: Send {
    /// Sends one request line and returns the reply line.
    fn round_trip(&mut self, request: &str) -> Result<String>;
}

/// Talks to a child process over its stdin/stdout.
pub struct ProcessTransport {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ProcessTransport {
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::Config("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Io(format!("spawning `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ProcessTransport { child, stdin, stdout })
    }
}

impl Transport for ProcessTransport {
    fn round_trip(&mut self, request: &str) -> Result<String> {
        let io = |e: std::io::Error| BackendError::Io(e.to_string());
        self.stdin.write_all(request.as_bytes()).map_err(io)?;
        self.stdin.write_all(b"\n").map_err(io)?;
        self.stdin.flush().map_err(io)?;
        let mut line = String::new();
        if self.stdout.read_line(&mut line).map_err(io)? == 0 {
            return Err(BackendError::Io("backend server closed its output".into()));
        }
        Ok(line)
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// In-process transport that answers requests with a local backend. Useful
/// for exercising the protocol without spawning anything.
pub struct LoopbackTransport {
    backend: Arc<dyn Backend>,
}

impl LoopbackTransport {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        LoopbackTransport { backend }
    }
}

impl Transport for LoopbackTransport {
    fn round_trip(&mut self, request: &str) -> Result<String> {
        Ok(handle_request(self.backend.as_ref(), request))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Describe {
    #[serde(flatten)]
    descriptor: BackendDescriptor,
    #[serde(default)]
    max_tokens: Option<usize>,
}

/// Backend whose calls are forwarded over a [`Transport`]. Calls are
/// serialized by an internal lock.
pub struct RemoteBackend {
    transport: Mutex<Box<dyn Transport>>,
    descriptor: BackendDescriptor,
    max_tokens: Option<usize>,
}

impl RemoteBackend {
    /// Sends `configure` (when given) and `describe`.
    pub fn connect(transport: Box<dyn Transport>, config: Option<Value>) -> Result<Self> {
        let mut remote = RemoteBackend {
            transport: Mutex::new(transport),
            descriptor: BackendDescriptor {
                name: String::new(),
                version: String::new(),
                deterministic: false,
                concurrent: false,
            },
            max_tokens: None,
        };
        if let Some(config) = config {
            let _: Value = remote.call("configure", config)?;
        }
        let described: Describe = remote.call("describe", json!({}))?;
        remote.descriptor = described.descriptor;
        remote.max_tokens = described.max_tokens;
        Ok(remote)
    }

    fn call<T: DeserializeOwned>(&self, op: &str, args: Value) -> Result<T> {
        let request = json!({"op": op, "args": args}).to_string();
        let reply = {
            let mut transport = self
                .transport
                .lock()
                .map_err(|_| BackendError::Io("transport lock poisoned".into()))?;
            transport.round_trip(&request)?
        };
        let reply: Value = serde_json::from_str(reply.trim())
            .map_err(|e| BackendError::Protocol(format!("bad reply to `{op}`: {e}")))?;
        if let Some(err) = reply.get("error") {
            return Err(decode_error(err, &reply));
        }
        let result = reply
            .get("result")
            .cloned()
            .ok_or_else(|| BackendError::Protocol(format!("reply to `{op}` has no result")))?;
        serde_json::from_value(result)
            .map_err(|e| BackendError::Protocol(format!("bad result for `{op}`: {e}")))
    }
}

fn decode_error(err: &Value, reply: &Value) -> BackendError {
    let message = err.as_str().map(String::from).unwrap_or_else(|| err.to_string());
    match reply.get("kind").and_then(Value::as_str) {
        Some("precondition") => BackendError::Precondition(message),
        Some("length") => BackendError::Length {
            limit: reply.get("limit").and_then(Value::as_u64).unwrap_or(0) as usize,
            actual: reply.get("actual").and_then(Value::as_u64).unwrap_or(0) as usize,
        },
        _ => BackendError::Protocol(message),
    }
}

fn expect_len(op: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(BackendError::Protocol(format!("`{op}` returned {got} values, expected {want}")))
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn max_tokens(&self) -> Option<usize> {
        self.max_tokens
    }

    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings> {
        #[derive(Deserialize)]
        struct Raw {
            tokens: Vec<String>,
            vectors: Vec<Vec<f64>>,
        }
        let raw: Raw = self.call("embed_tokens", json!({ "text": text }))?;
        TokenEmbeddings::new(raw.tokens, raw.vectors)
    }

    fn conditional_token_logprobs(&self, source: &str, target: &str) -> Result<Vec<f64>> {
        let lp: Vec<f64> = self.call(
            "conditional_token_logprobs",
            json!({ "source": source, "target": target }),
        )?;
        if lp.iter().any(|&v| v.is_nan() || v > 0.0) {
            return Err(BackendError::Protocol("log-probability above zero or NaN".into()));
        }
        Ok(lp)
    }

    fn arc_entailment_probs(&self, document: &str, arcs: &[DependencyArc]) -> Result<Vec<f64>> {
        let probs: Vec<f64> =
            self.call("arc_entailment_probs", json!({ "document": document, "arcs": arcs }))?;
        expect_len("arc_entailment_probs", probs.len(), arcs.len())?;
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(BackendError::Protocol("arc probability outside [0, 1]".into()));
        }
        Ok(probs)
    }

    fn masked_fill_accuracy(
        &self,
        prefix: &str,
        sentence: &str,
        mask_positions: &BTreeSet<usize>,
    ) -> Result<f64> {
        let acc: f64 = self.call(
            "masked_fill_accuracy",
            json!({ "prefix": prefix, "sentence": sentence, "mask_positions": mask_positions }),
        )?;
        if !(0.0..=1.0).contains(&acc) {
            return Err(BackendError::Protocol("fill accuracy outside [0, 1]".into()));
        }
        Ok(acc)
    }

    fn parse_dependencies(&self, summary: &str) -> Result<Vec<DependencyArc>> {
        self.call("parse_dependencies", json!({ "summary": summary }))
    }
}

fn arg<T: DeserializeOwned>(args: &Value, key: &str) -> std::result::Result<T, BackendError> {
    let v = args
        .get(key)
        .cloned()
        .ok_or_else(|| BackendError::Protocol(format!("missing argument `{key}`")))?;
    serde_json::from_value(v).map_err(|e| BackendError::Protocol(format!("argument `{key}`: {e}")))
}

fn dispatch(backend: &dyn Backend, op: &str, args: &Value) -> Result<Value> {
    let to_value = |v: serde_json::Result<Value>| v.map_err(|e| BackendError::Protocol(e.to_string()));
    match op {
        "describe" => to_value(serde_json::to_value(Describe {
            descriptor: backend.descriptor(),
            max_tokens: backend.max_tokens(),
        })),
        "configure" => Ok(Value::Null),
        "embed_tokens" => {
            let e = backend.embed_tokens(&arg::<String>(args, "text")?)?;
            Ok(json!({ "tokens": e.tokens(), "vectors": e.vectors() }))
        }
        "conditional_token_logprobs" => {
            let lp = backend.conditional_token_logprobs(
                &arg::<String>(args, "source")?,
                &arg::<String>(args, "target")?,
            )?;
            Ok(json!(lp))
        }
        "arc_entailment_probs" => {
            let arcs: Vec<DependencyArc> = arg(args, "arcs")?;
            Ok(json!(backend.arc_entailment_probs(&arg::<String>(args, "document")?, &arcs)?))
        }
        "masked_fill_accuracy" => {
            let masks: BTreeSet<usize> = arg(args, "mask_positions")?;
            Ok(json!(backend.masked_fill_accuracy(
                &arg::<String>(args, "prefix")?,
                &arg::<String>(args, "sentence")?,
                &masks
            )?))
        }
        "parse_dependencies" => Ok(json!(backend.parse_dependencies(&arg::<String>(args, "summary")?)?)),
        other => Err(BackendError::Protocol(format!("unknown op `{other}`"))),
    }
}

/// Server side of the protocol: answers one request line.
pub fn handle_request(backend: &dyn Backend, request: &str) -> String {
    let parsed: std::result::Result<Value, _> = serde_json::from_str(request.trim());
    let outcome = match parsed {
        Ok(req) => {
            let op = req.get("op").and_then(Value::as_str).unwrap_or_default();
            let args = req.get("args").cloned().unwrap_or(Value::Null);
            dispatch(backend, op, &args)
        }
        Err(e) => Err(BackendError::Protocol(format!("bad request: {e}"))),
    };
    match outcome {
        Ok(result) => json!({ "result": result }).to_string(),
        Err(BackendError::Length { limit, actual }) => {
            let msg = BackendError::Length { limit, actual }.to_string();
            json!({ "error": msg, "kind": "length", "limit": limit, "actual": actual }).to_string()
        }
        Err(BackendError::Precondition(msg)) => {
            json!({ "error": msg, "kind": "precondition" }).to_string()
        }
        Err(other) => json!({ "error": other.to_string(), "kind": "backend" }).to_string(),
    }
}

/// Serves `backend` until `input` is exhausted.
pub fn serve<R: BufRead, W: Write>(backend: &dyn Backend, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        output.write_all(handle_request(backend, &line).as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
