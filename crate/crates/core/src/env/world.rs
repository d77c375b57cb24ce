use super::*;

/// Flight constants. Positions are evaluated in closed form at multiples of
/// `dt` and joined by straight segments, so a finer `dt` only refines the
/// chord approximation of the same parabola.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Physics {
    pub gravity: f64,
    pub launch_speed: f64,
    pub dt: f64,
    pub max_flight_time: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            gravity: 200.0,
            launch_speed: 350.0,
            dt: 1.0 / 240.0,
            max_flight_time: 30.0,
        }
    }
}

impl Physics {
    /// Same constants with the timestep divided by `factor`.
    pub fn refined(self, factor: u32) -> Self {
        Physics {
            dt: self.dt / factor as f64,
            ..self
        }
    }
}

/// Where the bird is pulled back to before release: `r = 50` behind the
/// sling along the shot direction.
pub fn release_point(action: Action, sling: (f64, f64)) -> (f64, f64) {
    let theta = (action.angle() as f64).to_radians();
    (
        sling.0 - RELEASE_RADIUS * theta.cos(),
        sling.1 - RELEASE_RADIUS * theta.sin(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub level_id: String,
    /// Row-major from the ground row up, as in [`Level::grid`].
    pub grid: Vec<Cell>,
    /// Front of the queue flies next.
    pub birds: Vec<BirdKind>,
    pub sling: (f64, f64),
    pub score: u64,
    pub shots: u32,
    pub done: bool,
    pub won: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotOutcome {
    pub state: WorldState,
    /// Everything this shot earned, terminal bonus included.
    pub score_delta: u64,
    /// `(col, row, cell)` in destruction order, crushed pigs last.
    pub destroyed: Vec<(usize, usize, Cell)>,
    pub crushed: usize,
    pub bonus: u64,
    /// Last point of the flight.
    pub stop: (f64, f64),
}

impl WorldState {
    pub fn reset(level: &Level) -> Result<Self, EnvError> {
        level.validate()?;
        Ok(WorldState {
            level_id: level.id.clone(),
            grid: level.grid.clone(),
            birds: level.birds.clone(),
            sling: level.sling,
            score: 0,
            shots: 0,
            done: false,
            won: false,
        })
    }

    pub fn cell(&self, col: usize, row: usize) -> Cell {
        self.grid[row * GRID_COLS + col]
    }

    pub fn pigs(&self) -> usize {
        self.grid.iter().filter(|c| **c == Cell::Pig).count()
    }

    /// No non-empty cell rests on an empty one.
    pub fn is_settled(&self) -> bool {
        (1..GRID_ROWS).all(|row| {
            (0..GRID_COLS).all(|col| self.cell(col, row).is_empty() || !self.cell(col, row - 1).is_empty())
        })
    }

    pub fn step(&self, action: Action, physics: &Physics) -> Result<ShotOutcome, EnvError> {
        simulate_shot(self, action, physics)
    }
}

pub fn simulate_shot(state: &WorldState, action: Action, physics: &Physics) -> Result<ShotOutcome, EnvError> {
    if state.done {
        return Err(EnvError::EpisodeFinished);
    }
    let mut next = state.clone();
    let bird = next.birds.remove(0);
    let mut destroyed = Vec::new();
    let stop = fly(&mut next.grid, bird.energy(), action, state.sling, physics, &mut destroyed);
    let before_settle = destroyed.len();
    settle(&mut next.grid, &mut destroyed);
    let crushed = destroyed.len() - before_settle;

    let mut delta: u64 = destroyed.iter().map(|(_, _, c)| c.score()).sum();
    let mut bonus = 0;
    if next.pigs() == 0 {
        bonus = UNUSED_BIRD_BONUS * next.birds.len() as u64;
        delta += bonus;
        next.won = true;
    }
    next.done = next.won || next.birds.is_empty();
    next.score += delta;
    next.shots += 1;
    Ok(ShotOutcome {
        state: next,
        score_delta: delta,
        destroyed,
        crushed,
        bonus,
        stop,
    })
}

/// Flies one bird, destroying what it can afford. Returns the stop point.
fn fly(
    grid: &mut [Cell],
    mut energy: u32,
    action: Action,
    sling: (f64, f64),
    physics: &Physics,
    destroyed: &mut Vec<(usize, usize, Cell)>,
) -> (f64, f64) {
    let theta = (action.angle() as f64).to_radians();
    let (vx, vy) = (physics.launch_speed * theta.cos(), physics.launch_speed * theta.sin());
    let at = |t: f64| (sling.0 + vx * t, sling.1 + vy * t - 0.5 * physics.gravity * t * t);
    let steps = (physics.max_flight_time / physics.dt).ceil() as u64;

    let mut prev = sling;
    for k in 1..=steps {
        let mut p = at(k as f64 * physics.dt);
        let grounded = p.1 <= 0.0;
        if grounded {
            let s = prev.1 / (prev.1 - p.1);
            p = (prev.0 + s * (p.0 - prev.0), 0.0);
        }
        let mut halted = None;
        walk_cells(prev, p, |col, row, entry| {
            if col < 0 || row < 0 || col >= GRID_COLS as i64 || row >= GRID_ROWS as i64 {
                return true;
            }
            let (col, row) = (col as usize, row as usize);
            let idx = row * GRID_COLS + col;
            let cell = grid[idx];
            if cell.is_empty() {
                return true;
            }
            if energy < cell.hit_points() {
                halted = Some(entry);
                return false;
            }
            energy -= cell.hit_points();
            grid[idx] = Cell::Empty;
            destroyed.push((col, row, cell));
            if energy == 0 {
                halted = Some(entry);
                return false;
            }
            true
        });
        if let Some(point) = halted {
            return point;
        }
        if grounded || p.0 < 0.0 || p.0 >= PLAYFIELD_WIDTH {
            return p;
        }
        prev = p;
    }
    prev
}

/// Visits, in order, every grid cell the segment `a → b` enters after the
/// one containing `a`, passing the entry point. Stops when `visit` returns
/// false. On an exact corner crossing the vertical neighbour is entered first.
fn walk_cells(a: (f64, f64), b: (f64, f64), mut visit: impl FnMut(i64, i64, (f64, f64)) -> bool) {
    let (u0, v0) = (a.0 / CELL_SIZE, a.1 / CELL_SIZE);
    let (u1, v1) = (b.0 / CELL_SIZE, b.1 / CELL_SIZE);
    let (du, dv) = (u1 - u0, v1 - v0);
    let (mut cx, mut cy) = (u0.floor() as i64, v0.floor() as i64);
    let (ex, ey) = (u1.floor() as i64, v1.floor() as i64);

    let axis = |d: f64, p: f64, c: i64| -> (i64, f64, f64) {
        if d > 0.0 {
            (1, 1.0 / d, ((c + 1) as f64 - p) / d)
        } else if d < 0.0 {
            (-1, -1.0 / d, (p - c as f64) / -d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, tdx, mut tx) = axis(du, u0, cx);
    let (sy, tdy, mut ty) = axis(dv, v0, cy);
    let crossings = (ex - cx).abs() + (ey - cy).abs();
    for _ in 0..crossings {
        let t = if tx < ty {
            cx += sx;
            let t = tx;
            tx += tdx;
            t
        } else {
            cy += sy;
            let t = ty;
            ty += tdy;
            t
        };
        let t = t.clamp(0.0, 1.0);
        let entry = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if !visit(cx, cy, entry) {
            return;
        }
    }
}

/// Drops every cell onto the one below it. A stone that falls further than
/// the pig it comes to rest on crushes that pig; the column then settles
/// again.
fn settle(grid: &mut [Cell], destroyed: &mut Vec<(usize, usize, Cell)>) {
    for col in 0..GRID_COLS {
        loop {
            // Fall distance of each cell at its new row.
            let mut drop = [0usize; GRID_ROWS];
            let mut floor = 0;
            for row in 0..GRID_ROWS {
                let cell = grid[row * GRID_COLS + col];
                if cell.is_empty() {
                    continue;
                }
                grid[row * GRID_COLS + col] = Cell::Empty;
                grid[floor * GRID_COLS + col] = cell;
                drop[floor] = row - floor;
                floor += 1;
            }
            let crushed = (1..floor).find(|&row| {
                grid[row * GRID_COLS + col] == Cell::Stone
                    && grid[(row - 1) * GRID_COLS + col] == Cell::Pig
                    && drop[row] > drop[row - 1]
            });
            match crushed {
                Some(row) => {
                    grid[(row - 1) * GRID_COLS + col] = Cell::Empty;
                    destroyed.push((col, row - 1, Cell::Pig));
                }
                None => break,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(rows: &[&str], birds: usize) -> Level {
        let mut text = format!("id t\nbirds{}\nsling 70 60\ngrid\n", " red".repeat(birds));
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        Level::parse(&text).unwrap()
    }

    fn put(state: &mut WorldState, col: usize, row: usize, c: Cell) {
        state.grid[row * GRID_COLS + col] = c;
    }

    #[test]
    fn release_point_examples() {
        let s = (70.0, 60.0);
        assert_eq!(release_point(Action::new(0).unwrap(), s), (20.0, 60.0));
        let (x, y) = release_point(Action::new(90).unwrap(), s);
        assert!((x - 70.0).abs() < 1e-12 && y == 10.0);
        let (x, y) = release_point(Action::new(45).unwrap(), s);
        let d = 50.0 / 2f64.sqrt();
        assert!((x - (70.0 - d)).abs() < 1e-12 && (y - (60.0 - d)).abs() < 1e-12);
    }

    #[test]
    fn walk_visits_each_crossed_cell_once() {
        let mut seen = vec![];
        walk_cells((1.0, 1.0), (44.0, 20.0), |c, r, _| {
            seen.push((c, r));
            true
        });
        // From (0,0) to (3,1): three x steps and one y step.
        assert_eq!(seen.len(), 4);
        assert_eq!(*seen.last().unwrap(), (3, 1));
        for w in seen.windows(2) {
            assert_eq!((w[1].0 - w[0].0).abs() + (w[1].1 - w[0].1).abs(), 1);
        }
    }

    #[test]
    fn settle_drops_cells_and_crushes_pig() {
        // Column 20: pig on the ground, two stones above it.
        let lvl = level(&["....................S", "....................S", "....................P"], 1);
        let mut grid = lvl.grid.clone();
        let mut destroyed = vec![];
        // Remove the lower stone, as a shot would.
        grid[GRID_COLS + 20] = Cell::Empty;
        settle(&mut grid, &mut destroyed);
        assert_eq!(destroyed, vec![(20, 0, Cell::Pig)]);
        assert_eq!(grid[20], Cell::Stone);
        assert!(grid[GRID_COLS + 20].is_empty());
    }

    #[test]
    fn stone_resting_on_falling_pig_does_not_crush() {
        let lvl = level(&["....................S", "....................P", "....................W"], 1);
        let mut grid = lvl.grid.clone();
        grid[20] = Cell::Empty;
        let mut destroyed = vec![];
        settle(&mut grid, &mut destroyed);
        assert!(destroyed.is_empty());
        assert_eq!((grid[20], grid[GRID_COLS + 20]), (Cell::Pig, Cell::Stone));
    }

    #[test]
    fn finished_episode_rejects_actions() {
        let lvl = level(&["..........................................P"], 1);
        let s = WorldState::reset(&lvl).unwrap();
        let out = s.step(Action::new(90).unwrap(), &Physics::default()).unwrap();
        assert!(out.state.done && !out.state.won);
        assert_eq!(out.score_delta, 0);
        assert_eq!(
            out.state.step(Action::new(10).unwrap(), &Physics::default()),
            Err(EnvError::EpisodeFinished)
        );
    }

    #[test]
    fn clear_shot_consumes_one_bird() {
        let lvl = level(&["......................................................P"], 2);
        let s = WorldState::reset(&lvl).unwrap();
        // Straight up: the bird lands back in the launch area.
        let out = s.step(Action::new(90).unwrap(), &Physics::default()).unwrap();
        assert_eq!(out.score_delta, 0);
        assert_eq!(out.state.birds.len(), 1);
        assert_eq!(out.state.grid, s.grid);
        assert!(!out.state.done);
    }

    #[test]
    fn weak_bird_is_stopped_by_stone_after_ice() {
        let lvl = level(&["................................P"], 1);
        let mut s = WorldState::reset(&lvl).unwrap();
        // A wall across the low flight path: ice then stone.
        for row in 0..GRID_ROWS {
            put(&mut s, 12, row, Cell::Ice);
            put(&mut s, 13, row, Cell::Stone);
        }
        let out = s.step(Action::new(0).unwrap(), &Physics::default()).unwrap();
        // y = 60 - 100·(98/350)² ≈ 52.2 on entering column 12: row 3.
        assert_eq!(out.destroyed, vec![(12, 3, Cell::Ice)]);
        assert!(out.stop.0 >= 13.0 * CELL_SIZE - 1e-9 && out.stop.0 < 13.0 * CELL_SIZE + 1e-6);
    }
}
