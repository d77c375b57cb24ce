//! On-disk transition dataset.
//!
//! A dataset is a directory holding `frames/` and `index.tsv`. Frames are the
//! cropped, resized 84×84 captures stored as binary PPM under a name derived
//! from their content, so repeated observations are written once. The index
//! is tab-separated text with one transition per line, preceded by a `#`
//! header line:
//!
//! ```text
//! # state	action	reward	next_state	done	level	episode	shot	score_delta	policy
//! 3f0c...e1.ppm	37	0.25	91ab...07.ppm	0	train-03	12	0	5500	random
//! ```
//!
//! New rows are appended to an existing index, so collections can be mixed
//! by writing them into the same directory.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::Experience;
use crate::vision::{ppm, Frame, VisionError};

pub const INDEX_FILE: &str = "index.tsv";
pub const FRAMES_DIR: &str = "frames";
const HEADER: &str = "# state\taction\treward\tnext_state\tdone\tlevel\tepisode\tshot\tscore_delta\tpolicy";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset i/o at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("frame {name}: {source}")]
    Frame { name: String, source: VisionError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRow {
    pub state_file: String,
    pub action: usize,
    pub reward: f64,
    pub next_state_file: String,
    pub done: bool,
    pub level: String,
    pub episode: u64,
    pub shot: u32,
    pub score_delta: i64,
    pub policy: String,
}

impl DatasetRow {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            self.state_file,
            self.action,
            self.reward,
            self.next_state_file,
            self.done as u8,
            self.level,
            self.episode,
            self.shot,
            self.score_delta,
            self.policy
        )
    }

    fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(format!("expected 10 tab-separated fields, found {}", f.len()));
        }
        let num = |i: usize, what: &str| -> Result<i64, String> {
            f[i].parse().map_err(|_| format!("bad {} `{}`", what, f[i]))
        };
        Ok(DatasetRow {
            state_file: f[0].to_string(),
            action: num(1, "action")? as usize,
            reward: f[2].parse().map_err(|_| format!("bad reward `{}`", f[2]))?,
            next_state_file: f[3].to_string(),
            done: match f[4] {
                "0" => false,
                "1" => true,
                other => return Err(format!("bad done flag `{}`", other)),
            },
            level: f[5].to_string(),
            episode: num(6, "episode")? as u64,
            shot: num(7, "shot")? as u32,
            score_delta: num(8, "score_delta")?,
            policy: f[9].to_string(),
        })
    }
}

/// Content-derived file name of a frame.
pub fn frame_name(frame: &Frame) -> String {
    let mut h = Sha256::new();
    h.update(format!("{}x{}:", frame.width(), frame.height()).as_bytes());
    h.update(frame.pixels());
    format!("{}.ppm", hex::encode(&h.finalize()[..16]))
}

/// Append-only writer for one dataset directory.
pub struct DatasetWriter {
    dir: PathBuf,
    index: File,
    rows: usize,
}

impl DatasetWriter {
    /// Opens `dir`, creating it and an empty index if needed.
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let frames = dir.join(FRAMES_DIR);
        fs::create_dir_all(&frames).map_err(io_err(&frames))?;
        let index_path = dir.join(INDEX_FILE);
        let rows = if index_path.exists() {
            Dataset::open(dir)?.rows.len()
        } else {
            fs::write(&index_path, format!("{}\n", HEADER)).map_err(io_err(&index_path))?;
            0
        };
        let index = OpenOptions::new()
            .append(true)
            .open(&index_path)
            .map_err(io_err(&index_path))?;
        Ok(DatasetWriter {
            dir: dir.to_path_buf(),
            index,
            rows,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn write_frame(&self, frame: &Frame) -> Result<String, DatasetError> {
        let name = frame_name(frame);
        let path = self.dir.join(FRAMES_DIR).join(&name);
        if !path.exists() {
            let tmp = path.with_extension("tmp");
            ppm::write(&tmp, frame).map_err(|source| DatasetError::Frame {
                name: name.clone(),
                source,
            })?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        Ok(name)
    }

    /// Writes both frames, then the index line. A failure leaves every
    /// previously appended row intact.
    pub fn append(&mut self, mut row: DatasetRow, state: &Frame, next_state: &Frame) -> Result<DatasetRow, DatasetError> {
        row.state_file = self.write_frame(state)?;
        row.next_state_file = self.write_frame(next_state)?;
        let path = self.dir.join(INDEX_FILE);
        self.index
            .write_all(row.to_line().as_bytes())
            .map_err(io_err(&path))?;
        self.rows += 1;
        Ok(row)
    }

    pub fn flush(&mut self) -> Result<(), DatasetError> {
        let path = self.dir.join(INDEX_FILE);
        self.index.flush().map_err(io_err(&path))?;
        self.index.sync_data().map_err(io_err(&path))
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(INDEX_FILE);
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            rows.push(DatasetRow::parse(&line).map_err(|reason| DatasetError::Parse {
                path: path.clone(),
                line: i + 1,
                reason,
            })?);
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            rows,
        })
    }

    pub fn read_frame(&self, name: &str) -> Result<Frame, DatasetError> {
        ppm::read(&self.dir.join(FRAMES_DIR).join(name)).map_err(|source| DatasetError::Frame {
            name: name.to_string(),
            source,
        })
    }

    /// Loads every transition, sharing identical frames.
    pub fn experiences(&self) -> Result<Vec<Experience<Arc<Frame>>>, DatasetError> {
        let mut cache: HashMap<String, Arc<Frame>> = HashMap::new();
        let mut load = |name: &str| -> Result<Arc<Frame>, DatasetError> {
            if let Some(f) = cache.get(name) {
                return Ok(f.clone());
            }
            let f = Arc::new(self.read_frame(name)?);
            cache.insert(name.to_string(), f.clone());
            Ok(f)
        };
        self.rows
            .iter()
            .map(|r| {
                Ok(Experience {
                    state: load(&r.state_file)?,
                    action: r.action,
                    reward: r.reward,
                    next_state: load(&r.next_state_file)?,
                    done: r.done,
                })
            })
            .collect()
    }
}
