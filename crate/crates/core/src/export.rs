//! Line-delimited record files with a versioned header line.
//!
//! Every file starts with one header object naming the record kind and the
//! schema version, optionally followed by free-form metadata. Each further
//! line is one record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_traced, EvalReport, EvalSpec, NeuralPolicy};
use crate::terrain::TerrainFamily;
use crate::trainer::checkpoint::Checkpoint;
use crate::trainer::{IterationMetrics, LATEST_CHECKPOINT, METRICS_FILE, METRICS_KIND};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub schema_version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Streams records to a file after writing its header.
pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path, kind: &str, meta: serde_json::Value) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = Header {
            kind: kind.into(),
            schema_version: SCHEMA_VERSION,
            meta,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(Self { out })
    }

    /// Opens an existing file for appending after checking its header.
    pub fn append(path: &Path, kind: &str) -> Result<Self> {
        read_header(path, kind)?;
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn check_header(header: &Header, kind: &str, path: &Path) -> Result<()> {
    if header.kind != kind {
        return Err(Error::Schema(format!(
            "{} holds '{}' records, expected '{kind}'",
            path.display(),
            header.kind
        )));
    }
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "{}: schema version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            header.schema_version
        )));
    }
    Ok(())
}

pub fn read_header(path: &Path, kind: &str) -> Result<Header> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let header: Header = serde_json::from_str(first.trim_end())
        .map_err(|e| Error::Schema(format!("{}: bad header: {e}", path.display())))?;
    check_header(&header, kind, path)?;
    Ok(header)
}

/// Reads a whole file, verifying its header.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<(Header, Vec<T>)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{} is empty", path.display())))??;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| Error::Schema(format!("{}: bad header: {e}", path.display())))?;
    check_header(&header, kind, path)?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Schema(format!("{} line {}: {e}", path.display(), i + 2)))?,
        );
    }
    Ok((header, records))
}

/// Writes a header and all records in one go.
pub fn write_jsonl<T: Serialize>(path: &Path, kind: &str, meta: serde_json::Value, records: &[T]) -> Result<()> {
    let mut w = JsonlWriter::create(path, kind, meta)?;
    for r in records {
        w.write(r)?;
    }
    w.flush()
}

pub const TRAJECTORY_KIND: &str = "trajectory";
pub const GAIT_USAGE_KIND: &str = "gait_usage";

/// Decision steps per gait for one `(family, level)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitUsage {
    pub family: TerrainFamily,
    pub level: usize,
    pub episodes: usize,
    pub decision_steps: usize,
    /// trot, pronk, pace, bound
    pub gait_steps: [usize; 4],
}

impl GaitUsage {
    pub fn from_report(report: &EvalReport) -> Vec<GaitUsage> {
        report
            .cells
            .iter()
            .map(|c| {
                let mut gait_steps = [0usize; 4];
                let mut decision_steps = 0;
                for e in report.episodes.iter().filter(|e| e.family == c.family && e.level == c.level) {
                    decision_steps += e.steps;
                    for (acc, n) in gait_steps.iter_mut().zip(e.gait_steps) {
                        *acc += n;
                    }
                }
                GaitUsage {
                    family: c.family,
                    level: c.level,
                    episodes: c.episodes,
                    decision_steps,
                    gait_steps,
                }
            })
            .collect()
    }
}

/// Files written by [`export_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub metrics_records: usize,
    pub trajectory_records: usize,
    pub gait_usage_records: usize,
    /// Iteration of the checkpoint that was rolled out, if any.
    pub checkpoint_iteration: Option<usize>,
}

/// Copies the metrics log of `run_dir` into `out_dir` and, when the run
/// has a checkpoint, rolls its policy out under `spec` to write
/// per-step trajectories and per-cell gait usage. A run without iterations
/// or checkpoints yields files holding only their header.
pub fn export_run(run_dir: &Path, out_dir: &Path, spec: &EvalSpec) -> Result<ExportSummary> {
    if !run_dir.is_dir() {
        return Err(Error::Usage(format!("run directory {} does not exist", run_dir.display())));
    }
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let (meta, metrics): (serde_json::Value, Vec<IterationMetrics>) = if metrics_path.exists() {
        let (h, r) = read_jsonl(&metrics_path, METRICS_KIND)?;
        (h.meta, r)
    } else {
        (serde_json::Value::Null, Vec::new())
    };
    write_jsonl(&out_dir.join(METRICS_FILE), METRICS_KIND, meta, &metrics)?;

    let ckpt_path = run_dir.join(LATEST_CHECKPOINT);
    let (trajectory, usage, iteration) = if ckpt_path.exists() {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let stack = ckpt.config.build_stack()?;
        let iteration = ckpt.iteration;
        let mut policy = NeuralPolicy::new(ckpt.policy);
        let (report, trace) = evaluate_traced(&stack, &mut policy, spec, true)?;
        (trace, GaitUsage::from_report(&report), Some(iteration))
    } else {
        (Vec::new(), Vec::new(), None)
    };
    let meta = serde_json::json!({ "spec": spec, "checkpoint_iteration": iteration });
    write_jsonl(&out_dir.join("trajectories.jsonl"), TRAJECTORY_KIND, meta.clone(), &trajectory)?;
    write_jsonl(&out_dir.join("gait_usage.jsonl"), GAIT_USAGE_KIND, meta, &usage)?;
    Ok(ExportSummary {
        metrics_records: metrics.len(),
        trajectory_records: trajectory.len(),
        gait_usage_records: usage.len(),
        checkpoint_iteration: iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_exports_header_only_files() {
        let run = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let spec = EvalSpec {
            families: vec![TerrainFamily::Rough],
            levels: vec![0],
            episodes: 2,
            seed: 1,
            stop_on_reach: false,
        };
        let s = export_run(run.path(), out.path(), &spec).unwrap();
        assert_eq!(s.metrics_records + s.trajectory_records + s.gait_usage_records, 0);
        for f in ["metrics.jsonl", "trajectories.jsonl", "gait_usage.jsonl"] {
            let text = std::fs::read_to_string(out.path().join(f)).unwrap();
            assert_eq!(text.lines().count(), 1, "{f}");
        }
    }

    #[test]
    fn header_only_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl::<u32>(&p, "thing", serde_json::json!({"a": 1}), &[]).unwrap();
        let (h, r): (Header, Vec<u32>) = read_jsonl(&p, "thing").unwrap();
        assert!(r.is_empty());
        assert_eq!(h.meta["a"], 1);
        assert!(matches!(read_jsonl::<u32>(&p, "other"), Err(Error::Schema(_))));
    }

    #[test]
    fn version_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        std::fs::write(&p, "{\"kind\":\"thing\",\"schema_version\":99}\n").unwrap();
        assert!(matches!(read_jsonl::<u32>(&p, "thing"), Err(Error::Schema(_))));
    }

    #[test]
    fn append_continues_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(&p, "n", serde_json::Value::Null, &[1u32, 2]).unwrap();
        let mut w = JsonlWriter::append(&p, "n").unwrap();
        w.write(&3u32).unwrap();
        w.flush().unwrap();
        let (_, r): (Header, Vec<u32>) = read_jsonl(&p, "n").unwrap();
        assert_eq!(r, vec![1, 2, 3]);
    }
}
