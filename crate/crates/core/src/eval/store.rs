//! Append-only JSON-lines results with resume support.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::record::{MethodRun, RunFailure, RunKey, RunTiming};
use crate::error::{Result, ScarfError};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

/// Results directory: `results.jsonl`, `failures.jsonl`, `timings.jsonl`.
#[derive(Debug)]
pub struct ResultsStore {
    dir: PathBuf,
    completed: BTreeSet<RunKey>,
}

impl ResultsStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| ScarfError::io(&dir, e))?;
        for name in [RESULTS_FILE, FAILURES_FILE, TIMINGS_FILE] {
            drop_torn_tail(&dir.join(name))?;
        }
        let results = dir.join(RESULTS_FILE);
        let completed = if results.exists() {
            read_runs(&results)?.iter().map(MethodRun::key).collect()
        } else {
            BTreeSet::new()
        };
        Ok(Self { dir, completed })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn results_path(&self) -> PathBuf {
        self.dir.join(RESULTS_FILE)
    }

    pub fn is_complete(&self, key: &RunKey) -> bool {
        self.completed.contains(key)
    }

    pub fn completed(&self) -> usize {
        self.completed.len()
    }

    pub fn append_run(&mut self, run: &MethodRun, wall_time: f64) -> Result<()> {
        append_line(&self.dir.join(RESULTS_FILE), run)?;
        append_line(
            &self.dir.join(TIMINGS_FILE),
            &RunTiming {
                key: run.key(),
                wall_time,
            },
        )?;
        self.completed.insert(run.key());
        Ok(())
    }

    pub fn append_failure(&mut self, failure: &RunFailure) -> Result<()> {
        append_line(&self.dir.join(FAILURES_FILE), failure)
    }
}

/// Cuts an unterminated final line so later appends start on a fresh line.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(ScarfError::io(path, e)),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let f = OpenOptions::new().write(true).open(path).map_err(|e| ScarfError::io(path, e))?;
    f.set_len(keep as u64).map_err(|e| ScarfError::io(path, e))
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_string(value).map_err(|e| ScarfError::Parse(e.to_string()))?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ScarfError::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| ScarfError::io(path, e))?;
    f.flush().map_err(|e| ScarfError::io(path, e))
}

/// Parses a JSON-lines file. A final line without a newline is treated as
/// the remains of an interrupted write and ignored if it does not parse.
pub fn read_lines<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| ScarfError::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| ScarfError::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let terminated = buf.ends_with('\n');
        let text = buf.trim();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str(text) {
            Ok(v) => out.push(v),
            Err(_) if !terminated => break,
            Err(e) => {
                return Err(ScarfError::Parse(format!("{}:{line_no}: {e}", path.display())));
            }
        }
    }
    Ok(out)
}

pub fn read_runs(path: impl AsRef<Path>) -> Result<Vec<MethodRun>> {
    read_lines(path)
}

pub fn write_runs(path: impl AsRef<Path>, runs: &[MethodRun]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in runs {
        text.push_str(&serde_json::to_string(r).map_err(|e| ScarfError::Parse(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| ScarfError::io(path, e))
}
