//! Deterministic artifact writers: pretty JSON (trailing newline), CSV
//! traces written incrementally, and atomically replaced checkpoints.
//!
//! Every writer here is a pure function of its inputs, so re-running a
//! scenario with the same config and seed reproduces each file byte for
//! byte. Floats are rendered in shortest round-trip form by serde_json/csv.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use lindopt_core::{PagdSnapshot, TraceRecord};
use serde::{Deserialize, Serialize};

use crate::error::{CliResult, Failure};

/// On-disk optimizer checkpoint: driver snapshot plus the oracle call
/// counters that position the noise streams, and the seed for validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub snapshot: PagdSnapshot,
    pub grad_calls: u64,
    pub value_calls: u64,
    pub seed: u64,
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::config(format!("cannot create output dir {}: {e}", dir.display())))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::config(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Write-to-temp-then-rename so a crash never leaves a torn checkpoint.
pub fn write_checkpoint(path: &Path, checkpoint: &CheckpointFile) -> CliResult<()> {
    let tmp: PathBuf = path.with_extension("json.tmp");
    write_json(&tmp, checkpoint)?;
    fs::rename(&tmp, path)
        .map_err(|e| Failure::config(format!("cannot replace {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> CliResult<CheckpointFile> {
    crate::config::read_json(path, "checkpoint")
}

/// Incremental trace writer. On a fresh run it truncates and writes the
/// header; on resume it keeps exactly the rows before `resume_iter`
/// (discarding any written after the checkpoint) and appends from there.
pub struct TraceWriter {
    writer: csv::Writer<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path)
            .map_err(|e| Failure::config(format!("cannot create {}: {e}", path.display())))?;
        Ok(TraceWriter { writer: csv::WriterBuilder::new().has_headers(true).from_writer(file) })
    }

    pub fn resume(path: &Path, resume_iter: usize) -> CliResult<Self> {
        let kept: Vec<TraceRecord> = match File::open(path) {
            Ok(file) => csv::Reader::from_reader(file)
                .deserialize()
                .collect::<Result<Vec<TraceRecord>, _>>()
                .map_err(|e| Failure::config(format!("cannot parse {}: {e}", path.display())))?
                .into_iter()
                .filter(|r| r.iter < resume_iter)
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => {
                return Err(Failure::config(format!("cannot open {}: {e}", path.display())))
            }
        };
        let mut out = Self::create(path)?;
        for record in &kept {
            out.write(record)?;
        }
        out.flush()?;
        Ok(out)
    }

    pub fn write(&mut self, record: &TraceRecord) -> CliResult<()> {
        self.writer
            .serialize(record)
            .map_err(|e| Failure::config(format!("cannot write trace row: {e}")))
    }

    pub fn flush(&mut self) -> CliResult<()> {
        self.writer.flush().map_err(|e| Failure::config(format!("cannot flush trace: {e}")))
    }
}
