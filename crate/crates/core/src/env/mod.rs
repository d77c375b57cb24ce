//! Deterministic slingshot environment.
//!
//! World units map 1:1 to pixels of the 770×310 playfield, with `x` to the
//! right and `y` up from the ground line. The playfield is covered by a grid
//! of square cells; a bird is launched from the slingshot along one of 91
//! integer angles, flies a ballistic arc and spends its hit-point budget
//! breaking the cells it enters. Unsupported cells then fall straight down,
//! and a falling stone crushes a pig it lands on.

mod generate;
mod level;
mod render;
mod reward;
mod world;

pub use generate::{
    best_first_shot, first_shot_scores, generate_level, generate_pack, greedy_sequence, random_policy_outcome,
    random_win_probability, seed_registry, GeneratorConfig,
};
pub use level::{Level, LevelPack};
pub use render::{cell_pixel_rect, render, PLAYFIELD_ORIGIN};
pub use reward::{reward_clipped, reward_normalized, RewardMode, ScoreRegistry};
pub use world::{release_point, simulate_shot, Physics, ShotOutcome, WorldState};

use thiserror::Error;

pub const PLAYFIELD_WIDTH: f64 = 770.0;
pub const PLAYFIELD_HEIGHT: f64 = 310.0;
pub const CELL_SIZE: f64 = 14.0;
pub const GRID_COLS: usize = 55;
pub const GRID_ROWS: usize = 22;
/// Columns left of this stay empty: slingshot and bird indicator live there.
pub const CLEAR_COLUMNS: usize = 10;

pub const NUM_ACTIONS: usize = 91;
pub const RELEASE_RADIUS: f64 = 50.0;

pub const PIG_SCORE: u64 = 5_000;
pub const BLOCK_SCORE_PER_HP: u64 = 500;
pub const UNUSED_BIRD_BONUS: u64 = 10_000;
pub const MAX_BIRDS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode is already finished")]
    EpisodeFinished,
    #[error("action {0} outside [0, 90]")]
    InvalidAction(usize),
    #[error("invalid level `{id}`: {reason}")]
    InvalidLevel { id: String, reason: String },
    #[error("level file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no positive maximum score registered for level `{0}`")]
    MissingMaximum(String),
    #[error("level i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for EnvError {
    fn from(e: std::io::Error) -> Self {
        EnvError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Cell {
    #[default]
    Empty,
    Ice,
    Wood,
    Stone,
    Pig,
}

impl Cell {
    pub fn hit_points(self) -> u32 {
        match self {
            Cell::Empty => 0,
            Cell::Ice => 1,
            Cell::Wood => 2,
            Cell::Stone => 3,
            Cell::Pig => 1,
        }
    }

    /// Points for destroying this cell.
    pub fn score(self) -> u64 {
        match self {
            Cell::Empty => 0,
            Cell::Pig => PIG_SCORE,
            other => BLOCK_SCORE_PER_HP * other.hit_points() as u64,
        }
    }

    pub fn is_empty(self) -> bool {
        self == Cell::Empty
    }

    pub fn to_char(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Ice => 'I',
            Cell::Wood => 'W',
            Cell::Stone => 'S',
            Cell::Pig => 'P',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '.' => Cell::Empty,
            'I' => Cell::Ice,
            'W' => Cell::Wood,
            'S' => Cell::Stone,
            'P' => Cell::Pig,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BirdKind {
    Red,
}

impl BirdKind {
    /// Hit points the bird can break before it stops.
    pub fn energy(self) -> u32 {
        match self {
            BirdKind::Red => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BirdKind::Red => "red",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "red" => Some(BirdKind::Red),
            _ => None,
        }
    }
}

/// Shot angle in whole degrees, `0..=90`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(u8);

impl Action {
    pub fn new(angle: usize) -> Result<Self, EnvError> {
        if angle < NUM_ACTIONS {
            Ok(Action(angle as u8))
        } else {
            Err(EnvError::InvalidAction(angle))
        }
    }

    pub fn angle(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..NUM_ACTIONS as u8).map(Action)
    }
}
