//! Append-only JSON-lines log of expert decisions.
//!
//! Each line is one [`MappingDecision`]. Readers apply latest-wins per
//! component; the full history stays on disk. A record torn by a crash is
//! sealed with a newline on the next open and skipped on replay, so the file
//! never shrinks.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{ComponentId, MappingDecision};

#[derive(Debug, Error)]
pub enum DecisionLogError {
    #[error("decision log i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode decision: {0}")]
    Encode(#[from] serde_json::Error),
}

/// Decisions recovered from a log file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Replay {
    /// Complete records in file order.
    pub decisions: Vec<MappingDecision>,
    /// 1-based line numbers that did not parse (torn or foreign records).
    pub skipped_lines: Vec<usize>,
}

impl Replay {
    /// Last decision per component, in order of first appearance.
    pub fn latest(&self) -> Vec<MappingDecision> {
        latest_wins(&self.decisions)
    }
}

/// Collapses a decision history to the most recent decision per component,
/// ordered by each component's first appearance.
pub fn latest_wins(decisions: &[MappingDecision]) -> Vec<MappingDecision> {
    let mut order: Vec<&ComponentId> = Vec::new();
    let mut last: HashMap<&ComponentId, &MappingDecision> = HashMap::new();
    for d in decisions {
        if last.insert(&d.component_id, d).is_none() {
            order.push(&d.component_id);
        }
    }
    order.into_iter().map(|c| last[c].clone()).collect()
}

/// Parses log text. Unparseable lines are reported, not fatal.
pub fn parse_log(text: &str) -> Replay {
    let mut replay = Replay::default();
    for (i, line) in text.split('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MappingDecision>(line) {
            Ok(d) => replay.decisions.push(d),
            Err(_) => replay.skipped_lines.push(i + 1),
        }
    }
    replay
}

/// Reads a log; a missing file is an empty history.
pub fn replay(path: &Path) -> Result<Replay, DecisionLogError> {
    match fs::read(path) {
        Ok(bytes) => Ok(parse_log(&String::from_utf8_lossy(&bytes))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Replay::default()),
        Err(source) => Err(DecisionLogError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

/// Single writer over the log file.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    /// Opens or creates the log, sealing a torn final record if present.
    pub fn open(path: &Path) -> Result<Self, DecisionLogError> {
        let io = |source| DecisionLogError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        let len = file.metadata().map_err(io)?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1)).map_err(io)?;
            file.read_exact(&mut last).map_err(io)?;
            if last[0] != b'\n' {
                log::warn!("{}: sealing torn final record", path.display());
                file.write_all(b"\n").map_err(io)?;
                file.sync_all().map_err(io)?;
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record and fsyncs before returning.
    pub fn append(&mut self, decision: &MappingDecision) -> Result<(), DecisionLogError> {
        let mut line = serde_json::to_string(decision)?;
        line.push('\n');
        let io = |source| DecisionLogError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_all().map_err(io)
    }

    pub fn replay(&self) -> Result<Replay, DecisionLogError> {
        replay(&self.path)
    }
}
