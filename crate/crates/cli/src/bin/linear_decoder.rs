//! Reference external decoder: serves a linear-threshold decoder loaded from
//! a weights file over the line-delimited JSON protocol on stdin/stdout.
//!
//! Usage: `linear-decoder <weights-file> [--counts]`
//!
//! Raw fingerprints are returned as-is, including all-zero ones; the client
//! applies its fallback. Malformed requests get an error reply and the
//! server keeps going. EOF on stdin ends the process.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use cowboys::decoder::{load_weights, LinearThreshold};
use cowboys::LatentVector;
use serde_json::{json, Value};

fn reply(dec: &LinearThreshold, line: &str) -> Value {
    let req: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return json!({"id": null, "error": format!("malformed request: {e}")}),
    };
    let id = req.get("id").cloned().unwrap_or(Value::Null);
    match req.get("op").and_then(Value::as_str) {
        Some("info") => json!({
            "id": id,
            "latent_dim": dec.latent_dim(),
            "fingerprint_len": dec.fingerprint_len(),
        }),
        Some("decode_map") => {
            let coords = req
                .get("z")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>());
            let Some(coords) = coords else {
                return json!({"id": id, "error": "z must be an array of numbers"});
            };
            if coords.len() != dec.latent_dim() {
                return json!({
                    "id": id,
                    "error": format!("z has length {} but latent_dim is {}", coords.len(), dec.latent_dim()),
                });
            }
            match LatentVector::new(coords) {
                Ok(z) => json!({"id": id, "fingerprint": dec.decode_raw(&z).counts(), "label": null}),
                Err(e) => json!({"id": id, "error": e.to_string()}),
            }
        }
        Some(op) => json!({"id": id, "error": format!("unknown op {op:?}")}),
        None => json!({"id": id, "error": "missing op"}),
    }
}

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let mut path: Option<PathBuf> = None;
    let mut counts = false;
    for a in args.by_ref() {
        match a.as_str() {
            "--counts" => counts = true,
            "-h" | "--help" => {
                println!("usage: linear-decoder <weights-file> [--counts]");
                return ExitCode::SUCCESS;
            }
            _ if path.is_none() => path = Some(PathBuf::from(a)),
            _ => {
                eprintln!("linear-decoder: unexpected argument {a:?}");
                return ExitCode::from(2);
            }
        }
    }
    let Some(path) = path else {
        eprintln!("usage: linear-decoder <weights-file> [--counts]");
        return ExitCode::from(2);
    };
    let dec = match load_weights(&path, counts) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("linear-decoder: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let out = reply(&dec, &line);
        if writeln!(stdout, "{out}").and_then(|_| stdout.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
