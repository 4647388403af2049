//! Run directory layout and the append-only event log.
//!
//! ```text
//! <run>/config.toml                effective configuration
//! <run>/events.jsonl               one JSON object per line, see [`Event`]
//! <run>/summary.json               wall time and final losses (not deterministic)
//! <run>/snapshots/step-<t>/
//!     manifest.json                network shapes and the parameter byte layout
//!     agent-<k>.params             little-endian f64: encoder, decoder, discriminator
//!     buffer-subsample.csv         step,agent,x,y
//!     buffer-full.csv              step,agent,x,y (only at full-dump steps)
//!     creations.csv                step,agent,x,y (creations of step t)
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::Artifact;

pub const CONFIG_FILE: &str = "config.toml";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const TRUNCATION_MARKER: &str = "TRUNCATED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcceptanceKind {
    Rep,
    Creation,
}

impl AcceptanceKind {
    pub fn label(self) -> &'static str {
        match self {
            AcceptanceKind::Rep => "rep",
            AcceptanceKind::Creation => "creation",
        }
    }
}

/// One directed acceptance tally: `agent` judged `proposals` items offered by `partner`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRecord {
    pub step: usize,
    pub agent: usize,
    pub partner: usize,
    pub kind: AcceptanceKind,
    pub proposals: usize,
    pub acceptances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Pretrain {
        agent: usize,
        initial_loss: f64,
        final_loss: f64,
    },
    Acceptance(AcceptanceRecord),
    AgentStep {
        step: usize,
        agent: usize,
        /// Mean variational free energy over the update iterations.
        vfe: f64,
        /// Mean discriminator loss; absent when the pair set was empty.
        disc_loss: Option<f64>,
        /// Mean expected free energy of this step's creations.
        mean_efe: Option<f64>,
        /// RSA between memory and posterior-mean distance matrices.
        rsa: Option<f64>,
        pairs: usize,
        occupancy: usize,
    },
    Warning {
        step: usize,
        agent: Option<usize>,
        message: String,
    },
    Invariants {
        step: usize,
        occupancy_total: usize,
        expected_total: usize,
        all_finite: bool,
        stages: Vec<String>,
    },
    Snapshot {
        step: usize,
        full_buffers: bool,
    },
    Truncated {
        step: usize,
        reason: String,
    },
}

/// Buffered JSON-lines writer, flushed at step boundaries.
pub struct EventWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EventWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(EventWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, event: &Event) -> Result<()> {
        let line = serde_json::to_string(event).expect("events serialize");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                what: format!("{} line {}", path.display(), i + 1),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn snapshot_dir(run: &Path, step: usize) -> PathBuf {
    run.join(SNAPSHOT_DIR).join(format!("step-{step}"))
}

pub fn agent_params_file(dir: &Path, agent: usize) -> PathBuf {
    dir.join(format!("agent-{agent}.params"))
}

/// Writes `step,agent,x,y` rows.
pub fn write_points_csv<'a>(path: &Path, rows: impl IntoIterator<Item = (usize, usize, &'a Artifact)>) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "step,agent,x,y").map_err(io)?;
    for (step, agent, o) in rows {
        writeln!(out, "{step},{agent},{},{}", o[0], o[1]).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads `step,agent,x,y` rows.
pub fn read_points_csv(path: &Path) -> Result<Vec<(usize, usize, Artifact)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        what: format!("{} line {}", path.display(), line + 1),
        msg,
    };
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(parse_err(i, format!("expected 4 fields, got {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| parse_err(i, e.to_string()));
            let real = |s: &str| s.parse::<f64>().map_err(|e| parse_err(i, e.to_string()));
            Ok((int(f[0])?, int(f[1])?, [real(f[2])?, real(f[3])?]))
        })
        .collect()
}
