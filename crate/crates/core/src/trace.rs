//! Run outputs: `trace.csv`, `evaluations.jsonl` and `summary.txt`.
//!
//! Every file is written to a temporary sibling and renamed into place.
//! Numbers use Rust's locale-free shortest round-trip formatting and lines
//! end in `\n`. `wall_ms` is written as `0` unless wall-clock recording is
//! requested, so traces of identical runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::error::Result;
use crate::optimizer::RunRecord;

pub const TRACE_HEADER: &str = "iteration,batch_index,y,best_so_far,accept_rate,beta_final,restarts,fallbacks,decoder_calls_cum,gp_predicts_cum,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub batch_index: usize,
    pub y: f64,
    pub best_so_far: f64,
    pub accept_rate: Option<f64>,
    pub beta_final: Option<f64>,
    pub restarts: Option<usize>,
    pub fallbacks: Option<usize>,
    pub decoder_calls_cum: u64,
    pub gp_predicts_cum: u64,
    pub wall_ms: f64,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl TraceRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.batch_index,
            self.y,
            self.best_so_far,
            opt(self.accept_rate),
            opt(self.beta_final),
            opt(self.restarts),
            opt(self.fallbacks),
            self.decoder_calls_cum,
            self.gp_predicts_cum,
            self.wall_ms
        )
    }
}

/// One row per evaluation; sampler columns repeat the iteration's values.
pub fn trace_rows(record: &RunRecord, wall_clock: bool) -> Vec<TraceRow> {
    let best = record.best_so_far();
    record
        .evaluations
        .iter()
        .zip(best)
        .map(|(e, best_so_far)| {
            let stats = record.stats_for(e.iteration);
            TraceRow {
                iteration: e.iteration,
                batch_index: e.batch_index,
                y: e.y,
                best_so_far,
                accept_rate: stats.and_then(|s| s.accept_rate),
                beta_final: stats.and_then(|s| s.beta_final),
                restarts: stats.and_then(|s| s.restarts),
                fallbacks: stats.and_then(|s| s.fallbacks),
                decoder_calls_cum: stats.map_or(0, |s| s.decoder_calls_cum),
                gp_predicts_cum: stats.map_or(0, |s| s.gp_predicts_cum),
                wall_ms: match (wall_clock, stats) {
                    (true, Some(s)) => s.wall.as_secs_f64() * 1e3,
                    _ => 0.0,
                },
            }
        })
        .collect()
}

pub fn format_trace(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

pub fn format_evaluations(record: &RunRecord) -> String {
    let mut out = String::new();
    for e in &record.evaluations {
        let line = json!({
            "iteration": e.iteration,
            "batch_index": e.batch_index,
            "fingerprint": e.structure.fingerprint.counts(),
            "label": e.structure.label,
            "y": e.y,
            "latent": e.latent.coords(),
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

pub fn format_summary(record: &RunRecord) -> String {
    let mut out = String::new();
    let best = record.best();
    let _ = writeln!(out, "strategy = {}", record.strategy.as_str());
    let _ = writeln!(out, "evaluations = {}", record.evaluations.len());
    match best {
        Some(e) => {
            let _ = writeln!(out, "final_best = {}", e.y);
            let _ = writeln!(out, "best_iteration = {}", e.iteration);
            let _ = writeln!(out, "best_batch_index = {}", e.batch_index);
            let _ = writeln!(out, "best_fingerprint = {:?}", e.structure.fingerprint.counts());
        }
        None => {
            let _ = writeln!(out, "final_best = none");
        }
    }
    let _ = writeln!(out, "decoder_calls = {}", record.decoder_calls);
    let _ = writeln!(out, "gp_predicts = {}", record.gp_predicts);
    let t = &record.phase_times;
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    let _ = writeln!(
        out,
        "wall_ms = {{ design = {:.3}, fit = {:.3}, sample = {:.3}, evaluate = {:.3} }}",
        ms(t.design),
        ms(t.fit),
        ms(t.sample),
        ms(t.evaluate)
    );
    for w in &record.warnings {
        let _ = writeln!(out, "warning = {w:?}");
    }
    out.push_str("\n# config\n");
    out.push_str(&record.config.to_toml_string());
    out
}

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Writes the three run files into `dir`, creating it if needed.
pub fn write_run(dir: &Path, record: &RunRecord, wall_clock: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("trace.csv"), format_trace(&trace_rows(record, wall_clock)).as_bytes())?;
    write_atomic(&dir.join("evaluations.jsonl"), format_evaluations(record).as_bytes())?;
    write_atomic(&dir.join("summary.txt"), format_summary(record).as_bytes())?;
    Ok(())
}

/// Appends one CSV row, writing `header` first if the file is new. The
/// whole file is rewritten atomically.
pub fn append_csv_row(path: &Path, header: &str, row: &str) -> Result<()> {
    let mut contents = match fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{header}\n"),
        Err(e) => return Err(e.into()),
    };
    if !contents.is_empty() && !contents.ends_with('\n') {
        contents.push('\n');
    }
    contents.push_str(row);
    contents.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_atomic(path, contents.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::optimizer::random_search_run;

    fn record() -> RunRecord {
        let mut config = RunConfig::new(3, 8, 6, 2);
        config.seed = 9;
        let dec = config.decoder_spec().unwrap();
        let obj = config.objective_spec(&dec).unwrap();
        random_search_run(&config, &dec, &obj).unwrap()
    }

    #[test]
    fn trace_has_header_and_one_row_per_evaluation() {
        let text = format_trace(&trace_rows(&record(), false));
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines.len(), 6 + 2); // header, rows, trailing empty
        assert!(!text.contains('\r'));
        for line in &lines[1..7] {
            assert_eq!(line.split(',').count(), 11);
            assert!(line.ends_with(",0"));
        }
    }

    #[test]
    fn best_so_far_column_is_monotone() {
        let rows = trace_rows(&record(), false);
        assert!(rows.windows(2).all(|w| w[0].best_so_far <= w[1].best_so_far));
    }

    #[test]
    fn evaluations_are_json_lines() {
        let text = format_evaluations(&record());
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["fingerprint"].as_array().unwrap().len(), 8);
            assert_eq!(v["latent"].as_array().unwrap().len(), 3);
        }
    }

    #[test]
    fn files_written_atomically() {
        let dir = std::env::temp_dir().join(format!("cowboys-trace-{}", std::process::id()));
        let r = record();
        write_run(&dir, &r, false).unwrap();
        let names: Vec<String> =
            fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        assert!(names.iter().all(|n| !n.ends_with(".tmp")));
        let summary = fs::read_to_string(dir.join("summary.txt")).unwrap();
        assert!(summary.contains("decoder_calls = 6"));
        let csv = dir.join("diag.csv");
        append_csv_row(&csv, "a,b", "1,2").unwrap();
        append_csv_row(&csv, "a,b", "3,4").unwrap();
        assert_eq!(fs::read_to_string(&csv).unwrap(), "a,b\n1,2\n3,4\n");
        fs::remove_dir_all(&dir).unwrap();
    }
}
