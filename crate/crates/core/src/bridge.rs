//! Client for the line-delimited JSON bridge protocol.
//!
//! An external process can supply the predictor and/or the explainers. Every
//! message is one JSON object on one line. The client sends a request
//! carrying `op` and a fresh integer `id`, then reads exactly one response,
//! which must echo that `id`. There is never more than one outstanding
//! request on a connection.
//!
//! | op          | request fields                                        | response fields                 |
//! |-------------|-------------------------------------------------------|---------------------------------|
//! | `handshake` | `version`, `seed`                                     | `version`, `capabilities`, `params` |
//! | `fit`       | `target`, `handle`, `features`, `kinds`, `rows`, `labels?`, `hash` | `handle`, `hash`    |
//! | `predict`   | `rows`                                                | `probs`                         |
//! | `explain`   | `explainer`, `handle`, `row`, `seed`                  | `scores`                        |
//! | `shutdown`  |                                                       | (none required)                 |
//!
//! Any response may instead carry `error` (a message). `hash` is the
//! SHA-256 of the row-major little-endian `f64` bytes of `rows`; the server
//! recomputes it from the rows it parsed and echoes it back, and a mismatch
//! aborts the session.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dataset::{matrix_hash, Dataset};
use crate::error::{Error, Result};
use crate::explainers::{ExplainDiagnostics, ExplainOutput, Explainer, FitRole, FittedExplainer};
use crate::importance::{Explanation, FeatureKind, FeatureSchema};
use crate::model::Predictor;

pub const PROTOCOL_VERSION: u64 = 1;

/// Fit target naming the server-side predictor rather than an explainer.
pub const PREDICTOR_TARGET: &str = "predictor";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

// ---------------------------------------------------------------------------
// Transports

/// Moves whole lines (without the trailing newline) to and from a server.
pub trait Transport: Send {
    fn send_line(&mut self, line: &str) -> Result<()>;

    /// Next line from the server, or a bridge error after `timeout`.
    fn recv_line(&mut self, timeout: Duration) -> Result<String>;

    fn close(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Reads lines on a background thread so receives can time out.
struct LineReader {
    rx: Receiver<std::io::Result<String>>,
}

impl LineReader {
    fn spawn<R: std::io::Read + Send + 'static>(reader: R) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self { rx }
    }

    fn recv(&self, timeout: Duration) -> Result<String> {
        match self.rx.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::bridge(format!("read failed: {e}"), None)),
            Err(RecvTimeoutError::Timeout) => Err(Error::bridge(
                format!("no response within {:.1} s", timeout.as_secs_f64()),
                None,
            )),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::bridge("server closed the connection", None))
            }
        }
    }
}

/// Server running as a child process, spoken to over its standard streams.
pub struct ChildTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    reader: LineReader,
}

impl ChildTransport {
    /// Spawns `program` with `args`; stderr is inherited.
    pub fn spawn<S: AsRef<std::ffi::OsStr>>(program: &str, args: &[S]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::bridge(format!("cannot start '{program}': {e}"), None))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        Ok(Self {
            child,
            stdin,
            reader: LineReader::spawn(stdout),
        })
    }

    /// Splits `command` on whitespace (no shell quoting) and spawns it.
    pub fn spawn_command_line(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::config("empty bridge command"))?;
        let args: Vec<&str> = parts.collect();
        Self::spawn(program, &args)
    }
}

impl Transport for ChildTransport {
    fn send_line(&mut self, line: &str) -> Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::bridge("connection already closed", None))?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::bridge(format!("write failed: {e}"), None))
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String> {
        self.reader.recv(timeout)
    }

    fn close(&mut self) -> Result<()> {
        // Closing stdin lets a well-behaved server exit on EOF.
        self.stdin.take();
        for _ in 0..50 {
            if self.child.try_wait()?.is_some() {
                return Ok(());
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        self.child.kill()?;
        self.child.wait()?;
        Ok(())
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        if self.stdin.is_some() || matches!(self.child.try_wait(), Ok(None)) {
            let _ = self.close();
        }
    }
}

/// Same framing over a TCP connection.
pub struct TcpTransport {
    stream: TcpStream,
    reader: LineReader,
}

impl TcpTransport {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::bridge(format!("cannot connect to {addr}: {e}"), None))?;
        let reader = LineReader::spawn(stream.try_clone()?);
        Ok(Self { stream, reader })
    }
}

impl Transport for TcpTransport {
    fn send_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.stream, "{line}")
            .and_then(|_| self.stream.flush())
            .map_err(|e| Error::bridge(format!("write failed: {e}"), None))
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String> {
        self.reader.recv(timeout)
    }

    fn close(&mut self) -> Result<()> {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
        Ok(())
    }
}

/// One line of a recorded session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptLine {
    Send(Value),
    Recv(Value),
}

/// Parses a transcript file: one `{"send": …}` or `{"recv": …}` per line.
pub fn read_transcript(path: impl AsRef<Path>) -> Result<Vec<TranscriptLine>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn write_transcript(path: impl AsRef<Path>, lines: &[TranscriptLine]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Plays back a recorded session. Each request must equal (as JSON) the
/// recorded one; responses are served from the recording.
pub struct ReplayTransport {
    lines: std::vec::IntoIter<TranscriptLine>,
}

impl ReplayTransport {
    pub fn new(lines: Vec<TranscriptLine>) -> Self {
        Self {
            lines: lines.into_iter(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(read_transcript(path)?))
    }
}

impl Transport for ReplayTransport {
    fn send_line(&mut self, line: &str) -> Result<()> {
        let sent: Value = serde_json::from_str(line)?;
        match self.lines.next() {
            Some(TranscriptLine::Send(expected)) if expected == sent => Ok(()),
            Some(TranscriptLine::Send(expected)) => Err(Error::bridge(
                format!("request diverges from transcript; expected {expected}"),
                Some(line.to_string()),
            )),
            Some(TranscriptLine::Recv(_)) => Err(Error::bridge(
                "transcript expected a response, got a request",
                Some(line.to_string()),
            )),
            None => Err(Error::bridge("transcript exhausted", Some(line.to_string()))),
        }
    }

    fn recv_line(&mut self, _timeout: Duration) -> Result<String> {
        match self.lines.next() {
            Some(TranscriptLine::Recv(v)) => Ok(serde_json::to_string(&v)?),
            Some(TranscriptLine::Send(_)) => {
                Err(Error::bridge("transcript expected a request, got a response", None))
            }
            None => Err(Error::bridge("transcript exhausted", None)),
        }
    }
}

/// Wraps a transport and keeps a copy of every line that crosses it.
pub struct RecordingTransport<T> {
    inner: T,
    log: Arc<Mutex<Vec<TranscriptLine>>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> (Self, Arc<Mutex<Vec<TranscriptLine>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        (
            Self {
                inner,
                log: Arc::clone(&log),
            },
            log,
        )
    }

    fn record(&self, line: &str, send: bool) {
        // Unparsable lines are still worth keeping verbatim.
        let v = serde_json::from_str(line).unwrap_or_else(|_| Value::String(line.to_string()));
        let entry = if send { TranscriptLine::Send(v) } else { TranscriptLine::Recv(v) };
        self.log.lock().expect("transcript lock").push(entry);
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send_line(&mut self, line: &str) -> Result<()> {
        self.record(line, true);
        self.inner.send_line(line)
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String> {
        let line = self.inner.recv_line(timeout)?;
        self.record(&line, false);
        Ok(line)
    }

    fn close(&mut self) -> Result<()> {
        self.inner.close()
    }
}

/// Where to find a bridge server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BridgeAddress {
    /// `tcp://host:port`
    Tcp(String),
    /// `replay:<path>`
    Replay(String),
    /// Anything else: a command line to spawn.
    Command(String),
}

impl BridgeAddress {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::config("empty bridge address"));
        }
        Ok(if let Some(addr) = s.strip_prefix("tcp://") {
            Self::Tcp(addr.to_string())
        } else if let Some(path) = s.strip_prefix("replay:") {
            Self::Replay(path.to_string())
        } else {
            Self::Command(s.to_string())
        })
    }

    pub fn open(&self) -> Result<Box<dyn Transport>> {
        Ok(match self {
            Self::Tcp(a) => Box::new(TcpTransport::connect(a)?),
            Self::Replay(p) => Box::new(ReplayTransport::from_file(p)?),
            Self::Command(c) => Box::new(ChildTransport::spawn_command_line(c)?),
        })
    }
}

// ---------------------------------------------------------------------------
// Client

/// What the server announced in the handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandshakeInfo {
    pub version: u64,
    pub capabilities: Vec<String>,
    /// Server-owned hyperparameters, recorded in run manifests.
    #[serde(default)]
    pub params: Value,
}

pub struct BridgeClient {
    transport: Box<dyn Transport>,
    next_id: u64,
    timeout: Duration,
    broken: bool,
    info: HandshakeInfo,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("next_id", &self.next_id)
            .field("broken", &self.broken)
            .field("info", &self.info)
            .finish()
    }
}

impl BridgeClient {
    /// Performs the handshake; fails on a version mismatch.
    pub fn connect(transport: Box<dyn Transport>, seed: u64, timeout: Duration) -> Result<Self> {
        let mut client = Self {
            transport,
            next_id: 1,
            timeout,
            broken: false,
            info: HandshakeInfo {
                version: 0,
                capabilities: Vec::new(),
                params: Value::Null,
            },
        };
        let mut payload = Map::new();
        payload.insert("version".into(), json!(PROTOCOL_VERSION));
        payload.insert("seed".into(), json!(seed));
        let (resp, raw) = client.request("handshake", payload)?;
        let info: HandshakeInfo = serde_json::from_value(Value::Object(resp))
            .map_err(|e| client.protocol_error(format!("bad handshake response: {e}"), raw.clone()))?;
        if info.version != PROTOCOL_VERSION {
            return Err(client.protocol_error(
                format!(
                    "server speaks protocol version {}, client {PROTOCOL_VERSION}",
                    info.version
                ),
                raw,
            ));
        }
        client.info = info;
        Ok(client)
    }

    pub fn info(&self) -> &HandshakeInfo {
        &self.info
    }

    pub fn supports(&self, capability: &str) -> bool {
        self.info.capabilities.iter().any(|c| c == capability)
    }

    fn protocol_error(&mut self, message: impl Into<String>, raw: Option<String>) -> Error {
        // After a framing or id error the stream position is unknown.
        self.broken = true;
        Error::bridge(message, raw)
    }

    /// Sends one request and returns the response object (without `id`)
    /// together with the raw line.
    fn request(&mut self, op: &str, mut payload: Map<String, Value>) -> Result<(Map<String, Value>, Option<String>)> {
        if self.broken {
            return Err(Error::bridge("session unusable after an earlier protocol error", None));
        }
        let id = self.next_id;
        self.next_id += 1;
        payload.insert("op".into(), json!(op));
        payload.insert("id".into(), json!(id));
        let line = serde_json::to_string(&Value::Object(payload))?;
        if let Err(e) = self.transport.send_line(&line) {
            self.broken = true;
            return Err(e);
        }
        let raw = match self.transport.recv_line(self.timeout) {
            Ok(r) => r,
            Err(e) => {
                self.broken = true;
                return Err(e);
            }
        };
        let mut obj = match serde_json::from_str::<Value>(&raw) {
            Ok(Value::Object(o)) => o,
            Ok(_) => return Err(self.protocol_error("response is not a JSON object", Some(raw))),
            Err(e) => return Err(self.protocol_error(format!("malformed response: {e}"), Some(raw))),
        };
        match obj.remove("id") {
            Some(v) if v.as_u64() == Some(id) => {}
            other => {
                return Err(self.protocol_error(
                    format!("response id {} does not match request id {id}", other.unwrap_or(Value::Null)),
                    Some(raw),
                ))
            }
        }
        if let Some(err) = obj.get("error") {
            let msg = err.as_str().map(str::to_string).unwrap_or_else(|| err.to_string());
            return Err(Error::bridge(format!("server error on '{op}': {msg}"), Some(raw)));
        }
        Ok((obj, Some(raw)))
    }

    fn float_array(&mut self, obj: &Map<String, Value>, key: &str, raw: Option<String>) -> Result<Vec<f64>> {
        let parsed = obj.get(key).and_then(Value::as_array).and_then(|a| {
            a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>()
        });
        parsed.ok_or_else(|| self.protocol_error(format!("response lacks numeric array '{key}'"), raw))
    }

    /// Positive-class probabilities for `rows`.
    pub fn predict(&mut self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut payload = Map::new();
        payload.insert("rows".into(), json!(rows));
        let (resp, raw) = self.request("predict", payload)?;
        let probs = self.float_array(&resp, "probs", raw.clone())?;
        if probs.len() != rows.len() {
            return Err(Error::bridge(
                format!("{} probabilities for {} rows", probs.len(), rows.len()),
                raw,
            ));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::bridge(format!("probability {p} outside [0, 1]"), raw));
        }
        Ok(probs)
    }

    /// Ships `data` to the server under `handle` for `target` (an explainer
    /// name or [`PREDICTOR_TARGET`]).
    pub fn fit(&mut self, target: &str, handle: &str, data: &Dataset) -> Result<()> {
        let hash = matrix_hash(data.rows());
        let schema = data.schema();
        let kinds: Vec<&str> = schema
            .kinds()
            .iter()
            .map(|k| match k {
                FeatureKind::Numeric => "numeric",
                FeatureKind::Categorical => "categorical",
            })
            .collect();
        let mut payload = Map::new();
        payload.insert("target".into(), json!(target));
        payload.insert("handle".into(), json!(handle));
        payload.insert("features".into(), json!(schema.names()));
        payload.insert("kinds".into(), json!(kinds));
        payload.insert("rows".into(), json!(data.rows()));
        if let Some(l) = data.labels() {
            payload.insert("labels".into(), json!(l));
        }
        payload.insert("hash".into(), json!(hash));
        let (resp, raw) = self.request("fit", payload)?;
        if resp.get("handle").and_then(Value::as_str) != Some(handle) {
            return Err(self.protocol_error(format!("fit ack does not echo handle '{handle}'"), raw));
        }
        match resp.get("hash").and_then(Value::as_str) {
            Some(h) if h == hash => Ok(()),
            other => Err(self.protocol_error(
                format!("dataset hash mismatch: sent {hash}, server saw {}", other.unwrap_or("nothing")),
                raw,
            )),
        }
    }

    pub fn explain(&mut self, explainer: &str, handle: &str, row: &[f64], seed: u64) -> Result<Vec<f64>> {
        let mut payload = Map::new();
        payload.insert("explainer".into(), json!(explainer));
        payload.insert("handle".into(), json!(handle));
        payload.insert("row".into(), json!(row));
        payload.insert("seed".into(), json!(seed));
        let (resp, raw) = self.request("explain", payload)?;
        let scores = self.float_array(&resp, "scores", raw.clone())?;
        if scores.len() != row.len() {
            return Err(Error::bridge(
                format!("{} scores for {} features", scores.len(), row.len()),
                raw,
            ));
        }
        Ok(scores)
    }

    /// Asks the server to exit and closes the transport.
    pub fn shutdown(mut self) -> Result<()> {
        if !self.broken {
            let id = self.next_id;
            let line = json!({"op": "shutdown", "id": id}).to_string();
            self.transport.send_line(&line)?;
            // The acknowledgement is optional; a closed stream is fine too.
            let _ = self.transport.recv_line(Duration::from_secs(5));
        }
        self.transport.close()
    }
}

/// A client shared by the predictor and explainers of one run. The mutex
/// keeps requests strictly sequential.
pub type SharedClient = Arc<Mutex<BridgeClient>>;

pub fn shared(client: BridgeClient) -> SharedClient {
    Arc::new(Mutex::new(client))
}

fn lock(client: &SharedClient) -> Result<std::sync::MutexGuard<'_, BridgeClient>> {
    client
        .lock()
        .map_err(|_| Error::bridge("bridge session poisoned by a panic", None))
}

/// The server-side model as a [`Predictor`].
pub struct BridgePredictor {
    client: SharedClient,
    d: usize,
}

impl BridgePredictor {
    /// Trains the server-side predictor on `train` (with labels).
    pub fn fit(client: SharedClient, train: &Dataset) -> Result<Self> {
        if train.labels().is_none() {
            return Err(Error::invalid("training a bridge predictor needs labels"));
        }
        lock(&client)?.fit(PREDICTOR_TARGET, PREDICTOR_TARGET, train)?;
        Ok(Self {
            client,
            d: train.n_features(),
        })
    }
}

impl Predictor for BridgePredictor {
    fn n_features(&self) -> usize {
        self.d
    }

    fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.d) {
            return Err(Error::Predictor(format!(
                "row has {} features, model expects {}",
                r.len(),
                self.d
            )));
        }
        lock(&self.client)?.predict(rows)
    }
}

/// A server-side explainer. Explanations are produced with the server's own
/// predictor, whatever predictor the pipeline passes in.
pub struct BridgeExplainer {
    client: SharedClient,
    name: String,
}

impl BridgeExplainer {
    pub fn new(client: SharedClient, name: impl Into<String>) -> Self {
        Self {
            client,
            name: name.into(),
        }
    }
}

struct FittedBridge {
    client: SharedClient,
    name: String,
    handle: String,
    schema: FeatureSchema,
}

impl Explainer for BridgeExplainer {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit(&self, data: &Dataset, role: FitRole) -> Result<Arc<dyn FittedExplainer>> {
        let handle = format!("{}:{}", self.name, role.as_str());
        lock(&self.client)?.fit(&self.name, &handle, data)?;
        Ok(Arc::new(FittedBridge {
            client: Arc::clone(&self.client),
            name: self.name.clone(),
            handle,
            schema: data.schema().clone(),
        }))
    }
}

impl FittedExplainer for FittedBridge {
    fn explain(&self, _predictor: &dyn Predictor, x: &[f64], seed: u64) -> Result<ExplainOutput> {
        let scores = lock(&self.client)?.explain(&self.name, &self.handle, x, seed)?;
        Ok(ExplainOutput {
            explanation: Explanation::new(self.schema.clone(), scores, self.name.clone())?,
            diagnostics: ExplainDiagnostics::External,
        })
    }
}
