//! Line-delimited trajectory files.
//!
//! The first line is a header record:
//!
//! ```text
//! {"format":"ciql-trajectories","version":1,"env_hash":"…","env_config":{…},"scores":null}
//! ```
//!
//! `scores` is `{"alpha":…,"confidence":{…}}` for scored files. Every
//! following non-empty line holds one trajectory:
//!
//! ```text
//! {"id":"…","source":"synthetic","category":"Better","env_hash":"…","length":3,
//!  "transitions":[{"s":[x,y,g],"a":0,"s_next":[x,y,g],"done":false,"keypoint":false},…],
//!  "w":[…]}
//! ```
//!
//! `w` is present only in scored files. Floats are written in shortest
//! round-trip decimal form, so numeric fields survive a save/load cycle exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::confidence::{ConfidenceConfig, ScoredDataset};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::types::{Category, Dataset, Source, Trajectory, Transition};

pub const FORMAT_NAME: &str = "ciql-trajectories";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    env_hash: String,
    env_config: EnvConfig,
    #[serde(default)]
    scores: Option<ScoreHeader>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ScoreHeader {
    alpha: f64,
    confidence: ConfidenceConfig,
}

/// One trajectory line. Also the body accepted by the trajectory upload endpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub source: Source,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_hash: Option<String>,
    pub length: usize,
    pub transitions: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(traj: &Trajectory, env_hash: Option<&str>, w: Option<&[f64]>) -> Self {
        TrajectoryRecord {
            id: traj.id.clone(),
            source: traj.source,
            category: traj.category,
            parent: traj.parent.clone(),
            env_hash: env_hash.map(str::to_owned),
            length: traj.len(),
            transitions: traj.transitions.clone(),
            w: w.map(<[f64]>::to_vec),
        }
    }

    /// Checks the declared length and the chaining invariants.
    pub fn into_trajectory(self, env: &EnvConfig) -> Result<(Trajectory, Option<Vec<f64>>)> {
        if self.length != self.transitions.len() {
            return Err(Error::invariant(
                &self.id,
                format!(
                    "declared length {} but {} transitions",
                    self.length,
                    self.transitions.len()
                ),
            ));
        }
        let traj = Trajectory {
            id: self.id,
            source: self.source,
            category: self.category,
            parent: self.parent,
            transitions: self.transitions,
        };
        traj.validate(env.action_count())?;
        Ok((traj, self.w))
    }
}

/// Short stable digest of the environment configuration.
pub fn env_hash(env: &EnvConfig) -> String {
    let canonical = serde_json::to_vec(env).expect("env config serializes");
    hex::encode(&Sha256::digest(&canonical)[..8])
}

fn write_lines<W: Write>(
    mut out: W,
    env: &EnvConfig,
    trajectories: &[Trajectory],
    scores: Option<(&[Vec<f64>], ScoreHeader)>,
) -> std::io::Result<()> {
    let hash = env_hash(env);
    let (rows, score_header) = match scores {
        Some((rows, header)) => (Some(rows), Some(header)),
        None => (None, None),
    };
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        env_hash: hash.clone(),
        env_config: env.clone(),
        scores: score_header,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (i, traj) in trajectories.iter().enumerate() {
        let w = rows.map(|r| r[i].as_slice());
        serde_json::to_writer(&mut out, &TrajectoryRecord::from_trajectory(traj, Some(&hash), w))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_dataset<W: Write>(out: W, dataset: &Dataset) -> std::io::Result<()> {
    write_lines(out, &dataset.env, &dataset.trajectories, None)
}

pub fn write_scored<W: Write>(out: W, scored: &ScoredDataset) -> std::io::Result<()> {
    let header = ScoreHeader {
        alpha: scored.alpha,
        confidence: scored.config,
    };
    write_lines(
        out,
        &scored.dataset.env,
        &scored.dataset.trajectories,
        Some((&scored.w, header)),
    )
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(BufWriter::new(file), dataset).map_err(|e| Error::io(path, e))
}

pub fn save_scored(scored: &ScoredDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_scored(BufWriter::new(file), scored).map_err(|e| Error::io(path, e))
}

struct Parsed {
    header: Header,
    trajectories: Vec<Trajectory>,
    scores: Vec<Option<Vec<f64>>>,
}

fn parse<R: BufRead>(reader: R) -> Result<Parsed> {
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header line".into(),
                })
            }
            Some((i, line)) => {
                let line = line.map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("bad header: {e}"),
                })?;
            }
        }
    };
    if header.format != FORMAT_NAME {
        return Err(Error::Parse {
            line: 1,
            message: format!("unknown format `{}`", header.format),
        });
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported version {}", header.version),
        });
    }
    header.env_config.validate()?;
    let expected_hash = env_hash(&header.env_config);
    if header.env_hash != expected_hash {
        return Err(Error::Parse {
            line: 1,
            message: "env_hash does not match env_config".into(),
        });
    }

    let mut trajectories = Vec::new();
    let mut scores = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(h) = &record.env_hash {
            if *h != expected_hash {
                return Err(Error::invariant(&record.id, "env_hash differs from the file header"));
            }
        }
        let (traj, w) = record.into_trajectory(&header.env_config)?;
        trajectories.push(traj);
        scores.push(w);
    }
    Ok(Parsed {
        header,
        trajectories,
        scores,
    })
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let parsed = parse(reader)?;
    Ok(Dataset::new(parsed.header.env_config, parsed.trajectories))
}

/// Reads a scored file; fails if the header or any line lacks scores.
pub fn read_scored<R: BufRead>(reader: R) -> Result<ScoredDataset> {
    let parsed = parse(reader)?;
    let Some(header) = parsed.header.scores else {
        return Err(Error::Parse {
            line: 1,
            message: "header has no scores".into(),
        });
    };
    let mut w = Vec::with_capacity(parsed.scores.len());
    for (traj, row) in parsed.trajectories.iter().zip(parsed.scores) {
        w.push(row.ok_or_else(|| Error::invariant(&traj.id, "missing per-transition scores"))?);
    }
    let scored = ScoredDataset {
        dataset: Dataset::new(parsed.header.env_config, parsed.trajectories),
        w,
        alpha: header.alpha,
        config: header.confidence,
    };
    scored.validate()?;
    Ok(scored)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(open(path)?)
}

pub fn load_scored(path: &Path) -> Result<ScoredDataset> {
    read_scored(open(path)?)
}

/// Appends one trajectory line to an existing dataset file after validating it
/// against the file's environment.
pub fn append_trajectory(path: &Path, record: TrajectoryRecord) -> Result<Trajectory> {
    let dataset = load_dataset(path)?;
    if dataset.trajectories.iter().any(|t| t.id == record.id) {
        return Err(Error::invariant(&record.id, "duplicate trajectory id"));
    }
    let (traj, _) = record.into_trajectory(&dataset.env)?;
    let hash = env_hash(&dataset.env);
    let mut file = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line =
        serde_json::to_vec(&TrajectoryRecord::from_trajectory(&traj, Some(&hash), None)).expect("record serializes");
    line.push(b'\n');
    file.write_all(&line).map_err(|e| Error::io(path, e))?;
    Ok(traj)
}
