//! Black-box objective adapter over an external command.
//!
//! Protocol: one JSON object `{"params": [..]}` per line on the command's
//! stdin; one `{"value": x}` or `{"error": "..."}` per line on its stdout.
//! Worker processes are pooled up to a concurrency cap and reused across
//! evaluations; a worker that misbehaves is killed and respawned.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::objective::ObjectiveModel;

#[derive(Debug, Serialize)]
struct EvalRequest<'a> {
    params: &'a [f64],
}

#[derive(Debug, Deserialize)]
struct EvalResponse {
    value: Option<f64>,
    error: Option<String>,
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Worker {
    fn spawn(command: &str, args: &[String]) -> Result<Worker> {
        let mut child = Command::new(command)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::ObjectiveFailure(format!("spawn '{command}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Worker { child, stdin, stdout })
    }

    fn eval(&mut self, p: &[f64]) -> Result<f64> {
        let line = serde_json::to_string(&EvalRequest { params: p })?;
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.write_all(b"\n"))
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::ObjectiveFailure(format!("worker write: {e}")))?;
        let mut response = String::new();
        let n = self
            .stdout
            .read_line(&mut response)
            .map_err(|e| Error::ObjectiveFailure(format!("worker read: {e}")))?;
        if n == 0 {
            return Err(Error::ObjectiveFailure("worker closed its output".into()));
        }
        let parsed: EvalResponse = serde_json::from_str(response.trim()).map_err(|e| {
            Error::ObjectiveFailure(format!("bad worker response {response:?}: {e}"))
        })?;
        match (parsed.value, parsed.error) {
            (Some(v), None) if v.is_finite() => Ok(v),
            (_, Some(msg)) => Err(Error::ObjectiveFailure(msg)),
            _ => Err(Error::ObjectiveFailure(format!(
                "worker response had neither value nor error: {response:?}"
            ))),
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Spec of an external command objective, as it appears in campaign configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalCommandSpec {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Maximum concurrently running worker processes.
    #[serde(default = "default_workers")]
    pub max_workers: usize,
    pub lower_bound: Option<f64>,
}

fn default_workers() -> usize {
    2
}

/// An [`ObjectiveModel`] backed by a pool of external worker processes.
pub struct ExternalCommandModel {
    spec: ExternalCommandSpec,
    domain: BoxDomain,
    idle: Mutex<Vec<Worker>>,
    live: std::sync::atomic::AtomicUsize,
}

impl ExternalCommandModel {
    pub fn new(spec: ExternalCommandSpec, domain: BoxDomain) -> Result<Self> {
        if spec.command.is_empty() {
            return Err(Error::Config("external objective needs a command".into()));
        }
        if spec.max_workers == 0 {
            return Err(Error::Config("max_workers must be >= 1".into()));
        }
        Ok(ExternalCommandModel {
            spec,
            domain,
            idle: Mutex::new(Vec::new()),
            live: std::sync::atomic::AtomicUsize::new(0),
        })
    }

    fn checkout(&self) -> Result<Worker> {
        use std::sync::atomic::Ordering;
        loop {
            if let Some(w) = self.idle.lock().unwrap().pop() {
                return Ok(w);
            }
            let live = self.live.load(Ordering::SeqCst);
            if live < self.spec.max_workers {
                if self
                    .live
                    .compare_exchange(live, live + 1, Ordering::SeqCst, Ordering::SeqCst)
                    .is_ok()
                {
                    return Worker::spawn(&self.spec.command, &self.spec.args).inspect_err(|_| {
                        self.live.fetch_sub(1, Ordering::SeqCst);
                    });
                }
                continue;
            }
            // At the cap with everything busy: wait for a return.
            std::thread::yield_now();
        }
    }

    fn checkin(&self, worker: Worker) {
        self.idle.lock().unwrap().push(worker);
    }

    fn discard(&self) {
        self.live.fetch_sub(1, std::sync::atomic::Ordering::SeqCst);
    }
}

impl ObjectiveModel for ExternalCommandModel {
    fn name(&self) -> &str {
        &self.spec.command
    }

    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn default_domain(&self) -> BoxDomain {
        self.domain.clone()
    }

    fn lower_bound(&self) -> f64 {
        self.spec.lower_bound.unwrap_or(0.0)
    }

    fn eval(&self, p: &[f64]) -> Result<f64> {
        let mut worker = self.checkout()?;
        match worker.eval(p) {
            Ok(v) => {
                self.checkin(worker);
                Ok(v)
            }
            Err(e) => {
                drop(worker);
                self.discard();
                Err(e)
            }
        }
    }
}
