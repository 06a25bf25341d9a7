//! External-subprocess objective driver.
//!
//! One child process per evaluation: the request is written as a single JSON
//! line to the child's stdin, one JSON line is read back from its stdout,
//! and stderr is captured (never parsed). Stdout and stderr are drained on
//! their own threads while the parent polls for exit, so a child that floods
//! a pipe or never terminates cannot deadlock the evaluation.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::{EvalRequest, EvalResponse, Evaluation, Evaluator};

const STDERR_EXCERPT_BYTES: usize = 4096;
const RAW_LINE_EXCERPT_BYTES: usize = 256;

/// Runs `program args...` once per evaluation with a hard timeout.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    program: String,
    args: Vec<String>,
    timeout: Duration,
}

impl ExternalEvaluator {
    pub fn new(program: impl Into<String>, args: Vec<String>, timeout: Duration) -> Self {
        ExternalEvaluator {
            program: program.into(),
            args,
            timeout,
        }
    }

    /// Split a full command line on whitespace. Adequate for the simple
    /// launcher lines this tool takes on its own command line.
    pub fn from_command_line(cmd: &str, timeout: Duration) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(ExternalEvaluator::new(program, parts.collect(), timeout))
    }

    pub fn eval_request(&self, request: &EvalRequest) -> EvalResponse {
        let line = match serde_json::to_string(request) {
            Ok(l) => l,
            Err(e) => return EvalResponse::failed(&format!("request serialization: {e}")),
        };

        let mut child = match Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(c) => c,
            Err(e) => {
                return EvalResponse::failed("spawn")
                    .with_meta("detail", format!("{e}").into());
            }
        };

        // Exactly one request line; closing stdin signals end of input.
        {
            let mut stdin = child.stdin.take().expect("stdin piped");
            if stdin
                .write_all(line.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .is_err()
            {
                // The child may have exited before reading; fall through and
                // let the exit status / empty output report the failure.
            }
        }

        // Reader threads are detached on purpose: an orphaned grandchild can
        // keep a pipe open long after the direct child is gone, and a join
        // would block on it. Results come back over channels with a grace
        // timeout instead.
        let stdout = child.stdout.take().expect("stdout piped");
        let (line_tx, line_rx) = mpsc::channel::<Option<String>>();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut first = String::new();
            let got = match reader.read_line(&mut first) {
                Ok(0) => None,
                Ok(_) => Some(first),
                Err(_) => None,
            };
            let _ = line_tx.send(got);
            // Drain whatever else the child writes so it never blocks.
            let mut sink = Vec::new();
            let _ = reader.read_to_end(&mut sink);
        });

        let stderr = child.stderr.take().expect("stderr piped");
        let (stderr_tx, stderr_rx) = mpsc::channel::<Vec<u8>>();
        std::thread::spawn(move || {
            let mut buf = Vec::new();
            let mut reader = BufReader::new(stderr);
            let _ = reader.read_to_end(&mut buf);
            let _ = stderr_tx.send(buf);
        });

        // Poll for exit until the deadline; kill on timeout.
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) => {
                    if Instant::now() >= deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        break None;
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(_) => break None,
            }
        };

        let grace = if status.is_some() {
            Duration::from_millis(1000)
        } else {
            Duration::from_millis(100)
        };
        let first_line = line_rx.recv_timeout(grace).ok().flatten();
        let stderr_bytes = stderr_rx.recv_timeout(grace).unwrap_or_default();
        let stderr_excerpt = excerpt(&stderr_bytes, STDERR_EXCERPT_BYTES);

        let status = match status {
            Some(s) => s,
            None => {
                return EvalResponse::failed("timeout")
                    .with_meta("timeout_s", self.timeout.as_secs_f64().into())
                    .with_meta("stderr", stderr_excerpt.into());
            }
        };

        if !status.success() {
            return EvalResponse::failed("nonzero exit")
                .with_meta("exit_code", status.code().into())
                .with_meta("stderr", stderr_excerpt.into());
        }

        let raw = match first_line {
            Some(l) => l,
            None => {
                return EvalResponse::failed("protocol")
                    .with_meta("detail", "no response line on stdout".into())
                    .with_meta("stderr", stderr_excerpt.into());
            }
        };

        match serde_json::from_str::<EvalResponse>(raw.trim_end()) {
            Ok(resp) if resp.is_ok() && !resp.value.is_finite() => {
                EvalResponse::failed("protocol")
                    .with_meta("detail", "ok response with non-finite value".into())
                    .with_meta("raw", excerpt(raw.as_bytes(), RAW_LINE_EXCERPT_BYTES).into())
            }
            Ok(resp) => resp,
            Err(e) => EvalResponse::failed("protocol")
                .with_meta("detail", format!("{e}").into())
                .with_meta("raw", excerpt(raw.as_bytes(), RAW_LINE_EXCERPT_BYTES).into())
                .with_meta("stderr", stderr_excerpt.into()),
        }
    }
}

fn excerpt(bytes: &[u8], cap: usize) -> String {
    let cut = bytes.len().min(cap);
    String::from_utf8_lossy(&bytes[..cut]).into_owned()
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, request: &EvalRequest) -> Evaluation {
        let start = Instant::now();
        let response = self.eval_request(request);
        Evaluation {
            response,
            wall_time: start.elapsed().as_secs_f64(),
        }
    }
}
