//! Brute-force shot oracles and the procedural level generator.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;

use super::*;

/// Score delta of every possible first shot, indexed by angle.
pub fn first_shot_scores(level: &Level, physics: &Physics) -> Result<Vec<u64>, EnvError> {
    let state = WorldState::reset(level)?;
    shot_scores(&state, physics)
}

fn shot_scores(state: &WorldState, physics: &Physics) -> Result<Vec<u64>, EnvError> {
    (0..NUM_ACTIONS)
        .into_par_iter()
        .map(|a| Ok(state.step(Action::new(a)?, physics)?.score_delta))
        .collect()
}

/// Highest-scoring angle, lowest angle on ties.
fn best_of(scores: &[u64]) -> (Action, u64) {
    let mut best = 0;
    for (a, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = a;
        }
    }
    (Action::new(best).unwrap(), scores[best])
}

pub fn best_first_shot(level: &Level, physics: &Physics) -> Result<(Action, u64), EnvError> {
    Ok(best_of(&first_shot_scores(level, physics)?))
}

/// Plays the best immediate shot until the episode ends. Returns the shots,
/// the episode total and whether it was won.
pub fn greedy_sequence(level: &Level, physics: &Physics) -> Result<(Vec<Action>, u64, bool), EnvError> {
    let mut state = WorldState::reset(level)?;
    let mut shots = Vec::new();
    while !state.done {
        let (action, _) = best_of(&shot_scores(&state, physics)?);
        shots.push(action);
        state = state.step(action, physics)?.state;
    }
    Ok((shots, state.score, state.won))
}

/// Exact probability that uniformly random shots win the level.
pub fn random_win_probability(level: &Level, physics: &Physics) -> Result<f64, EnvError> {
    Ok(random_policy_outcome(level, physics)?.0)
}

/// Exact `(P(win), E[score if won, else 0])` for a policy that picks every
/// angle uniformly at random.
pub fn random_policy_outcome(level: &Level, physics: &Physics) -> Result<(f64, f64), EnvError> {
    type Memo = HashMap<(Vec<Cell>, usize), (f64, f64)>;
    // Returns the win probability and the expected score still to come on
    // winning paths; the score already banked is added by the caller.
    fn go(state: &WorldState, physics: &Physics, memo: &mut Memo) -> (f64, f64) {
        if state.done {
            return (if state.won { 1.0 } else { 0.0 }, 0.0);
        }
        let key = (state.grid.clone(), state.birds.len());
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let next: Vec<ShotOutcome> = (0..NUM_ACTIONS)
            .into_par_iter()
            .map(|a| state.step(Action::new(a).unwrap(), physics).unwrap())
            .collect();
        let (mut p, mut e) = (0.0, 0.0);
        for out in &next {
            let (pn, en) = go(&out.state, physics, memo);
            p += pn;
            e += out.score_delta as f64 * pn + en;
        }
        let v = (p / NUM_ACTIONS as f64, e / NUM_ACTIONS as f64);
        memo.insert(key, v);
        v
    }
    let state = WorldState::reset(level)?;
    Ok(go(&state, physics, &mut HashMap::new()))
}

/// Shape of generated levels.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub towers: (usize, usize),
    pub birds: (usize, usize),
    pub pigs: (usize, usize),
    pub max_height: usize,
    /// Leftmost column a structure may occupy.
    pub min_col: usize,
    /// Accepted range for the number of first-shot angles that win outright.
    pub first_shot_wins: (usize, usize),
    /// Upper bound on the exact random-policy win probability.
    pub max_random_win: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            towers: (1, 3),
            birds: (2, 3),
            pigs: (1, 2),
            max_height: 8,
            min_col: 16,
            first_shot_wins: (0, NUM_ACTIONS),
            max_random_win: 1.0,
        }
    }
}

fn material<R: Rng>(rng: &mut R) -> Cell {
    match rng.gen_range(0..10) {
        0..=2 => Cell::Ice,
        3..=6 => Cell::Wood,
        _ => Cell::Stone,
    }
}

/// One random level: towers of mixed material with pigs on top of,
/// inside or beside them. Always settled and valid.
pub fn generate_level<R: Rng>(id: &str, config: &GeneratorConfig, rng: &mut R) -> Level {
    let mut grid = vec![Cell::Empty; GRID_COLS * GRID_ROWS];
    let mut heights = [0usize; GRID_COLS];
    let towers = rng.gen_range(config.towers.0..=config.towers.1);
    for _ in 0..towers {
        let width = rng.gen_range(1..=3);
        let col = rng.gen_range(config.min_col..=GRID_COLS - width);
        let height = rng.gen_range(1..=config.max_height);
        for c in col..col + width {
            for row in heights[c]..(heights[c] + height).min(GRID_ROWS - 2) {
                grid[row * GRID_COLS + c] = material(rng);
            }
            heights[c] = (heights[c] + height).min(GRID_ROWS - 2);
        }
    }
    let pigs = rng.gen_range(config.pigs.0..=config.pigs.1);
    for _ in 0..pigs {
        let col = rng.gen_range(config.min_col..GRID_COLS);
        let h = heights[col];
        if h > 0 && rng.gen_bool(0.4) {
            // Buried: replace a block, maybe with a stone cap above.
            let row = rng.gen_range(0..h);
            grid[row * GRID_COLS + col] = Cell::Pig;
        } else {
            grid[h * GRID_COLS + col] = Cell::Pig;
            heights[col] = h + 1;
            if rng.gen_bool(0.3) && heights[col] < GRID_ROWS {
                grid[heights[col] * GRID_COLS + col] = Cell::Stone;
                heights[col] += 1;
            }
        }
    }
    let birds = rng.gen_range(config.birds.0..=config.birds.1);
    Level {
        id: id.to_string(),
        grid,
        birds: vec![BirdKind::Red; birds],
        sling: (70.0, 60.0),
    }
}

/// Draws candidates until `count` levels pass every check: the greedy
/// sequence wins, the first-shot win count and random win probability are in
/// range, and the best first shot is the same at a 10x finer timestep.
pub fn generate_pack<R: Rng>(
    prefix: &str,
    count: usize,
    config: &GeneratorConfig,
    physics: &Physics,
    rng: &mut R,
) -> Result<Vec<Level>, EnvError> {
    let mut levels = Vec::with_capacity(count);
    while levels.len() < count {
        let id = format!("{}-{:02}", prefix, levels.len() + 1);
        let level = generate_level(&id, config, rng);
        let start = WorldState::reset(&level)?;
        let wins = Action::all()
            .filter(|&a| start.step(a, physics).map(|o| o.state.won).unwrap_or(false))
            .count();
        if wins < config.first_shot_wins.0 || wins > config.first_shot_wins.1 {
            continue;
        }
        if !greedy_sequence(&level, physics)?.2 {
            continue;
        }
        if best_first_shot(&level, physics)?.0 != best_first_shot(&level, &physics.refined(10))?.0 {
            continue;
        }
        if random_win_probability(&level, physics)? > config.max_random_win {
            continue;
        }
        levels.push(level);
    }
    Ok(levels)
}

/// Registry seeded with each level's greedy brute-force episode total.
pub fn seed_registry(levels: &[Level], physics: &Physics) -> Result<ScoreRegistry, EnvError> {
    let mut reg = ScoreRegistry::new();
    for l in levels {
        reg.observe(&l.id, greedy_sequence(l, physics)?.1);
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_levels_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..200 {
            let l = generate_level(&format!("g{}", i), &GeneratorConfig::default(), &mut rng);
            l.validate().unwrap();
            assert!(WorldState::reset(&l).unwrap().is_settled());
        }
    }

    #[test]
    fn best_shot_ties_go_to_lowest_angle() {
        assert_eq!(best_of(&[0, 3, 3, 1]), (Action::new(1).unwrap(), 3));
        assert_eq!(best_of(&[0; 91]).0.angle(), 0);
    }

    #[test]
    fn random_outcome_matches_full_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = GeneratorConfig {
            birds: (2, 2),
            ..GeneratorConfig::default()
        };
        let physics = Physics::default();
        for i in 0..3 {
            let level = generate_level(&format!("e{}", i), &cfg, &mut rng);
            let start = WorldState::reset(&level).unwrap();
            // Every path of at most two shots, each equally likely.
            let (mut wins, mut score) = (0.0, 0.0);
            for a in Action::all() {
                let first = start.step(a, &physics).unwrap().state;
                if first.done {
                    let w = first.won as u8 as f64;
                    wins += w * NUM_ACTIONS as f64;
                    score += w * first.score as f64 * NUM_ACTIONS as f64;
                    continue;
                }
                for b in Action::all() {
                    let end = first.step(b, &physics).unwrap().state;
                    wins += end.won as u8 as f64;
                    score += if end.won { end.score as f64 } else { 0.0 };
                }
            }
            let paths = (NUM_ACTIONS * NUM_ACTIONS) as f64;
            let (p, e) = random_policy_outcome(&level, &physics).unwrap();
            assert!((p - wins / paths).abs() < 1e-12, "{} vs {}", p, wins / paths);
            assert!((e - score / paths).abs() < 1e-6 * (1.0 + e), "{} vs {}", e, score / paths);
        }
    }
}
