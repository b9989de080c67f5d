//! Adapter for estimators running in a subprocess.
//!
//! The child speaks newline-delimited JSON on stdin/stdout:
//!
//! ```text
//! -> {"cmd":"hello","version":1}                 <- {"ok":true,"name":...}
//! -> {"cmd":"fit","train":{x,t,d,y},"val":{..},"seed":u64,"hyperparams":{..}}
//!                                                <- {"ok":true} | {"ok":false,"error":..}
//! -> {"cmd":"predict","x":[[..]],"t":[..],"d":[..]}  <- {"ok":true,"y":[..]}
//! -> {"cmd":"shutdown"}                          (child exits 0)
//! ```
//!
//! Interventions travel as 0-based indices. Stderr is collected and attached
//! to every error.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{EstimatorError, ExternalCommand, FitData, HyperParams, Query};

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

struct Process {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<String>>,
    timeout: Duration,
    program: String,
}

impl Process {
    fn spawn(cmd: &ExternalCommand) -> Result<Self, EstimatorError> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| EstimatorError::External(format!("cannot start `{}`: {e}", cmd.program)))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr_pipe = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = stderr_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                sink.lock().expect("stderr lock").push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        });
        Ok(Self {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            stderr,
            timeout: cmd.timeout,
            program: cmd.program.clone(),
        })
    }

    fn stderr_tail(&self) -> String {
        // Give the reader thread a moment to drain what the child wrote last.
        thread::sleep(Duration::from_millis(50));
        let s = self.stderr.lock().expect("stderr lock");
        let s = s.trim();
        let start = s.char_indices().rev().nth(2000).map_or(0, |(i, _)| i);
        s[start..].to_string()
    }

    fn fail(&mut self, what: &str) -> EstimatorError {
        let status = match self.child.try_wait() {
            Ok(Some(s)) => Some(s),
            Ok(None) => {
                thread::sleep(Duration::from_millis(100));
                self.child.try_wait().ok().flatten()
            }
            Err(_) => None,
        };
        let code = match status {
            Some(s) => match s.code() {
                Some(c) => format!("exit code {c}"),
                None => "killed by signal".to_string(),
            },
            None => "still running".to_string(),
        };
        EstimatorError::External(format!("`{}` {what} ({code}); stderr: {}", self.program, self.stderr_tail()))
    }

    fn request(&mut self, msg: &Value) -> Result<Value, EstimatorError> {
        let mut line = serde_json::to_string(msg).expect("serializable message");
        line.push('\n');
        let sent = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()).is_ok(),
            None => false,
        };
        if !sent {
            return Err(self.fail("closed its input"));
        }
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(self.fail(&format!("unreadable output: {e}"))),
            Err(RecvTimeoutError::Disconnected) => return Err(self.fail("exited before replying")),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                return Err(self.fail(&format!("timed out after {:?}", self.timeout)));
            }
        };
        let value: Value = serde_json::from_str(&reply)
            .map_err(|e| EstimatorError::External(format!("malformed reply `{reply}`: {e}")))?;
        match value.get("ok").and_then(Value::as_bool) {
            Some(true) => Ok(value),
            Some(false) => Err(EstimatorError::External(format!(
                "`{}` reported: {}",
                self.program,
                value.get("error").and_then(Value::as_str).unwrap_or("unspecified error")
            ))),
            None => Err(EstimatorError::External(format!("malformed reply `{reply}`: missing \"ok\""))),
        }
    }
}

impl Drop for Process {
    fn drop(&mut self) {
        if let Some(mut stdin) = self.stdin.take() {
            let _ = stdin.write_all(b"{\"cmd\":\"shutdown\"}\n");
        }
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A fitted model living in a subprocess.
pub struct ExternalModel {
    name: String,
    process: Mutex<Process>,
}

impl std::fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalModel").field("name", &self.name).finish()
    }
}

fn rows_json(data: &FitData<'_>) -> Value {
    let x: Vec<&[f64]> = data.rows.iter().map(|&i| data.x.row(i)).collect();
    let t: Vec<usize> = data.rows.iter().map(|&i| data.t[i]).collect();
    let d: Vec<f64> = data.rows.iter().map(|&i| data.d[i]).collect();
    json!({ "x": x, "t": t, "d": d, "y": data.targets() })
}

impl ExternalModel {
    /// Starts the process, performs the handshake and sends the training data.
    pub fn fit(
        cmd: &ExternalCommand,
        hyperparams: &HyperParams,
        train: &FitData<'_>,
        val: &FitData<'_>,
        seed: u64,
    ) -> Result<Self, EstimatorError> {
        let mut process = Process::spawn(cmd)?;
        let hello = process.request(&json!({ "cmd": "hello", "version": PROTOCOL_VERSION }))?;
        let name = hello.get("name").and_then(Value::as_str).unwrap_or(&cmd.program).to_string();
        process.request(&json!({
            "cmd": "fit",
            "train": rows_json(train),
            "val": rows_json(val),
            "seed": seed,
            "hyperparams": hyperparams,
        }))?;
        Ok(Self { name, process: Mutex::new(process) })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn predict(&self, queries: &[Query<'_>]) -> Result<Vec<f64>, EstimatorError> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let x: Vec<&[f64]> = queries.iter().map(|q| q.x).collect();
        let t: Vec<usize> = queries.iter().map(|q| q.t).collect();
        let d: Vec<f64> = queries.iter().map(|q| q.d).collect();
        let mut process = self.process.lock().expect("process lock");
        let reply = process.request(&json!({ "cmd": "predict", "x": x, "t": t, "d": d }))?;
        let y: Vec<f64> = reply
            .get("y")
            .and_then(Value::as_array)
            .ok_or_else(|| EstimatorError::External("predict reply without \"y\"".into()))?
            .iter()
            .map(|v| v.as_f64().unwrap_or(f64::NAN))
            .collect();
        if y.len() != queries.len() {
            return Err(EstimatorError::External(format!(
                "predict returned {} values for {} queries",
                y.len(),
                queries.len()
            )));
        }
        Ok(y)
    }
}
