//! Client for decoders running as child processes.
//!
//! Newline-delimited JSON over the child's stdin/stdout, one message per
//! line:
//!
//! ```text
//! → {"id": 1, "op": "info"}
//! ← {"id": 1, "latent_dim": 16, "fingerprint_len": 64}
//! → {"id": 2, "op": "decode_map", "z": [0.1, -0.3, ...]}
//! ← {"id": 2, "fingerprint": [0, 1, ...], "label": "..."}
//! ← {"id": 2, "error": "..."}
//! ```
//!
//! A connection has at most one outstanding request and ids increase
//! strictly. Any failure poisons the connection.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::types::{Fingerprint, LatentVector, Structure};

pub struct ExternalClient {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    poisoned: Option<String>,
}

impl ExternalClient {
    pub fn launch(command: &[String], timeout: Duration) -> Result<Self> {
        let (program, args) =
            command.split_first().ok_or_else(|| Error::Config("external decoder command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::protocol(format!("failed to launch decoder: {e}"), program.clone()))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExternalClient { child, stdin, replies, next_id: 1, timeout, poisoned: None })
    }

    fn fail(&mut self, message: impl Into<String>, payload: impl Into<String>) -> Error {
        let message = message.into();
        self.poisoned = Some(message.clone());
        Error::protocol(message, payload)
    }

    /// Sends one request and waits for the matching reply.
    fn request(&mut self, mut body: serde_json::Map<String, Value>) -> Result<Value> {
        if let Some(why) = &self.poisoned {
            return Err(Error::protocol(format!("connection unusable after earlier failure: {why}"), ""));
        }
        let id = self.next_id;
        self.next_id += 1;
        body.insert("id".into(), json!(id));
        let line = Value::Object(body).to_string();
        let written = match self.stdin.as_mut() {
            Some(stdin) => writeln!(stdin, "{line}").and_then(|_| stdin.flush()),
            None => Err(std::io::Error::other("stdin closed")),
        };
        if let Err(e) = written {
            return Err(self.fail(format!("write to decoder failed: {e}"), line));
        }
        let reply = match self.replies.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(self.fail(format!("read from decoder failed: {e}"), line)),
            Err(RecvTimeoutError::Timeout) => {
                return Err(
                    self.fail(format!("timed out after {} ms waiting for reply {id}", self.timeout.as_millis()), line)
                )
            }
            Err(RecvTimeoutError::Disconnected) => return Err(self.fail("decoder closed its output", line)),
        };
        let value: Value = match serde_json::from_str(&reply) {
            Ok(v) => v,
            Err(e) => return Err(self.fail(format!("malformed reply: {e}"), reply)),
        };
        match value.get("id").and_then(Value::as_u64) {
            Some(got) if got == id => {}
            _ => return Err(self.fail(format!("reply id does not match request id {id}"), reply)),
        }
        if let Some(err) = value.get("error") {
            let msg = err.as_str().map_or_else(|| err.to_string(), str::to_owned);
            // An error reply is a well-formed exchange; the connection stays usable.
            return Err(Error::protocol(format!("decoder reported error: {msg}"), reply));
        }
        Ok(value)
    }

    /// Returns the decoder's declared `(latent_dim, fingerprint_len)`.
    pub fn handshake(&mut self) -> Result<(usize, usize)> {
        let mut body = serde_json::Map::new();
        body.insert("op".into(), json!("info"));
        let reply = self.request(body)?;
        let dim = |key: &str| reply.get(key).and_then(Value::as_u64).map(|v| v as usize);
        match (dim("latent_dim"), dim("fingerprint_len")) {
            (Some(d), Some(l)) if d > 0 && l > 0 => Ok((d, l)),
            _ => Err(self.fail("info reply lacks positive latent_dim/fingerprint_len", reply.to_string())),
        }
    }

    /// Raw decode; the caller applies the zero-fingerprint fallback.
    pub fn decode(&mut self, z: &LatentVector, fingerprint_len: usize) -> Result<Structure> {
        let mut body = serde_json::Map::new();
        body.insert("op".into(), json!("decode_map"));
        body.insert("z".into(), json!(z.coords()));
        let reply = self.request(body)?;
        let counts = reply.get("fingerprint").and_then(Value::as_array).and_then(|arr| {
            arr.iter().map(|v| v.as_u64().and_then(|c| u32::try_from(c).ok())).collect::<Option<Vec<u32>>>()
        });
        let Some(counts) = counts else {
            return Err(self.fail("fingerprint must be an array of non-negative integers", reply.to_string()));
        };
        if counts.len() != fingerprint_len {
            return Err(self.fail(
                format!("fingerprint has length {} but expected {fingerprint_len}", counts.len()),
                reply.to_string(),
            ));
        }
        let label = match reply.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(self.fail("label must be a string or null", reply.to_string())),
        };
        Ok(Structure { fingerprint: Fingerprint::new(counts), label })
    }

    /// Id the next request will carry.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }
}

impl Drop for ExternalClient {
    fn drop(&mut self) {
        // Closing stdin asks the decoder to exit.
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
