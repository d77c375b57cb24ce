//! Level definitions and their text format.
//!
//! ```text
//! # comment lines start with '#'
//! id train-01
//! birds red red red
//! sling 70 60
//! grid
//! ..................................S
//! ..................................P
//! ................................WWWW
//! ```
//!
//! Grid lines follow `grid` to the end of the file, top to bottom; the last
//! line is the ground row. Lines may be shorter than the playfield width
//! (missing cells are empty) and rows above the first line are empty.
//! Cells: `.` empty, `I` ice, `W` wood, `S` stone, `P` pig.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::*;

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub id: String,
    /// Row-major from the ground row up: index `row * GRID_COLS + col`.
    pub grid: Vec<Cell>,
    pub birds: Vec<BirdKind>,
    pub sling: (f64, f64),
}

impl Level {
    pub fn cell(&self, col: usize, row: usize) -> Cell {
        self.grid[row * GRID_COLS + col]
    }

    pub fn pigs(&self) -> usize {
        self.grid.iter().filter(|c| **c == Cell::Pig).count()
    }

    /// Checks every structural invariant, naming the first violated one.
    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |reason: String| {
            Err(EnvError::InvalidLevel {
                id: self.id.clone(),
                reason,
            })
        };
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return fail("id must be a nonempty word".into());
        }
        if self.grid.len() != GRID_COLS * GRID_ROWS {
            return fail(format!("grid must hold {}x{} cells", GRID_COLS, GRID_ROWS));
        }
        if self.pigs() == 0 {
            return fail("at least one pig is required".into());
        }
        if self.birds.is_empty() || self.birds.len() > MAX_BIRDS {
            return fail(format!("bird queue must hold 1..={} birds", MAX_BIRDS));
        }
        let (sx, sy) = self.sling;
        let clear = CLEAR_COLUMNS as f64 * CELL_SIZE;
        if !(sx >= RELEASE_RADIUS && sx <= clear && sy >= RELEASE_RADIUS && sy < PLAYFIELD_HEIGHT) {
            return fail(format!("sling ({}, {}) outside the launch area", sx, sy));
        }
        for row in 0..GRID_ROWS {
            for col in 0..GRID_COLS {
                let c = self.cell(col, row);
                if c.is_empty() {
                    continue;
                }
                if col < CLEAR_COLUMNS {
                    return fail(format!("cell at column {} is inside the launch area", col));
                }
                if row > 0 && self.cell(col, row - 1).is_empty() {
                    return fail(format!("cell ({}, {}) has nothing below it", col, row));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut id = None;
        let mut birds = None;
        let mut sling = None;
        let mut grid_lines: Option<Vec<(usize, &str)>> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |reason: String| EnvError::Parse { line: line_no, reason };
            if let Some(lines) = grid_lines.as_mut() {
                let row = raw.trim_end();
                if !row.is_empty() {
                    lines.push((line_no, row));
                }
                continue;
            }
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut words = line.split_whitespace();
            match words.next().unwrap_or_default() {
                "id" => id = Some(words.next().ok_or_else(|| err("missing id".into()))?.to_string()),
                "birds" => {
                    birds = Some(
                        words
                            .map(|w| BirdKind::from_name(w).ok_or_else(|| err(format!("unknown bird `{}`", w))))
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
                "sling" => {
                    let mut num = || -> Result<f64, EnvError> {
                        words
                            .next()
                            .and_then(|w| w.parse().ok())
                            .ok_or_else(|| err("sling needs two numbers".into()))
                    };
                    sling = Some((num()?, num()?));
                }
                "grid" => grid_lines = Some(Vec::new()),
                other => return Err(err(format!("unknown key `{}`", other))),
            }
        }
        let missing = |what: &str| EnvError::Parse {
            line: text.lines().count(),
            reason: format!("missing `{}`", what),
        };
        let lines = grid_lines.ok_or_else(|| missing("grid"))?;
        if lines.len() > GRID_ROWS {
            return Err(EnvError::Parse {
                line: lines[GRID_ROWS].0,
                reason: format!("grid has more than {} rows", GRID_ROWS),
            });
        }
        let mut grid = vec![Cell::Empty; GRID_COLS * GRID_ROWS];
        for (row, (line_no, text)) in lines.iter().rev().enumerate() {
            if text.chars().count() > GRID_COLS {
                return Err(EnvError::Parse {
                    line: *line_no,
                    reason: format!("row wider than {} cells", GRID_COLS),
                });
            }
            for (col, ch) in text.chars().enumerate() {
                grid[row * GRID_COLS + col] = Cell::from_char(ch).ok_or_else(|| EnvError::Parse {
                    line: *line_no,
                    reason: format!("unknown cell `{}`", ch),
                })?;
            }
        }
        let level = Level {
            id: id.ok_or_else(|| missing("id"))?,
            grid,
            birds: birds.ok_or_else(|| missing("birds"))?,
            sling: sling.ok_or_else(|| missing("sling"))?,
        };
        level.validate()?;
        Ok(level)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "id {}", self.id);
        let names: Vec<&str> = self.birds.iter().map(|b| b.name()).collect();
        let _ = writeln!(out, "birds {}", names.join(" "));
        let _ = writeln!(out, "sling {} {}", self.sling.0, self.sling.1);
        out.push_str("grid\n");
        let top = (0..GRID_ROWS)
            .rev()
            .find(|&r| (0..GRID_COLS).any(|c| !self.cell(c, r).is_empty()))
            .unwrap_or(0);
        for row in (0..=top).rev() {
            let line: String = (0..GRID_COLS).map(|c| self.cell(c, row).to_char()).collect();
            let trimmed = line.trim_end_matches('.');
            out.push_str(if trimmed.is_empty() { "." } else { trimmed });
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        Level::parse(&fs::read_to_string(path)?)
    }
}

/// Levels from one directory of `*.lvl` files, ordered by file name.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPack {
    pub levels: Vec<Level>,
}

impl LevelPack {
    pub fn load(dir: &Path) -> Result<Self, EnvError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "lvl"))
            .collect();
        paths.sort();
        let mut levels = Vec::with_capacity(paths.len());
        for p in &paths {
            let level = Level::load(p).map_err(|e| match e {
                EnvError::Parse { line, reason } => EnvError::Parse {
                    line,
                    reason: format!("{}: {}", p.display(), reason),
                },
                other => other,
            })?;
            if levels.iter().any(|l: &Level| l.id == level.id) {
                return Err(EnvError::InvalidLevel {
                    id: level.id,
                    reason: "duplicate id in pack".into(),
                });
            }
            levels.push(level);
        }
        if levels.is_empty() {
            return Err(EnvError::Io(format!("no .lvl files in {}", dir.display())));
        }
        Ok(LevelPack { levels })
    }

    pub fn get(&self, id: &str) -> Option<&Level> {
        self.levels.iter().find(|l| l.id == id)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# sample\nid t-1\nbirds red red\nsling 70 60\ngrid\n....................P\n...................WWS\n";

    #[test]
    fn parse_places_last_line_on_ground() {
        let l = Level::parse(SAMPLE).unwrap();
        assert_eq!(l.cell(19, 0), Cell::Wood);
        assert_eq!(l.cell(21, 0), Cell::Stone);
        assert_eq!(l.cell(20, 1), Cell::Pig);
        assert_eq!(l.birds.len(), 2);
        assert_eq!(Level::parse(&l.to_text()).unwrap(), l);
    }

    #[test]
    fn invariant_violations_are_named() {
        let no_pig = SAMPLE.replace('P', "W");
        match Level::parse(&no_pig) {
            Err(EnvError::InvalidLevel { reason, .. }) => assert!(reason.contains("pig")),
            other => panic!("{:?}", other),
        }
        let floating = "id f\nbirds red\nsling 70 60\ngrid\n....................P\n.\n";
        match Level::parse(floating) {
            Err(EnvError::InvalidLevel { reason, .. }) => assert!(reason.contains("nothing below")),
            other => panic!("{:?}", other),
        }
        let in_launch = "id f\nbirds red\nsling 70 60\ngrid\n..P\n";
        assert!(Level::parse(in_launch).is_err());
        assert!(matches!(
            Level::parse("id x\nbirds blue\n"),
            Err(EnvError::Parse { line: 2, .. })
        ));
    }
}
