use super::*;
use crate::vision::{Frame, Rgb, CROP_HEIGHT, CROP_WIDTH, RAW_HEIGHT, RAW_WIDTH};

/// Top-left pixel of the playfield; matches the default crop window.
pub const PLAYFIELD_ORIGIN: (usize, usize) = (35, 85);

const FRAME_BG: Rgb = [38, 42, 54];
const GROUND: Rgb = [112, 82, 50];
const PANEL: Rgb = [70, 76, 92];
const SCORE_BAR: Rgb = [230, 200, 60];
const SLING: Rgb = [96, 60, 30];
const BIRD: Rgb = [214, 40, 40];

fn material_color(c: Cell) -> (Rgb, Rgb) {
    // (fill, outline)
    match c {
        Cell::Empty => unreachable!(),
        Cell::Ice => ([176, 224, 248], [120, 180, 220]),
        Cell::Wood => ([168, 116, 56], [120, 80, 36]),
        Cell::Stone => ([128, 128, 132], [88, 88, 92]),
        Cell::Pig => ([84, 200, 72], [40, 120, 36]),
    }
}

fn sky(row: usize) -> Rgb {
    [
        (120 + row * 60 / CROP_HEIGHT) as u8,
        (170 + row * 50 / CROP_HEIGHT) as u8,
        235,
    ]
}

/// Pixel rectangle `(x0, y0, x1, y1)`, half-open, covered by a grid cell.
pub fn cell_pixel_rect(col: usize, row: usize) -> (usize, usize, usize, usize) {
    let cell = CELL_SIZE as usize;
    let ground = PLAYFIELD_ORIGIN.1 + CROP_HEIGHT;
    let x0 = PLAYFIELD_ORIGIN.0 + col * cell;
    (x0, ground - (row + 1) * cell, x0 + cell, ground - row * cell)
}

/// World point to pixel coordinates (y flipped).
fn to_pixel(x: f64, y: f64) -> (usize, usize) {
    let px = PLAYFIELD_ORIGIN.0 as f64 + x;
    let py = (PLAYFIELD_ORIGIN.1 + CROP_HEIGHT) as f64 - y;
    (px.round().max(0.0) as usize, py.round().max(0.0) as usize)
}

pub fn render(state: &WorldState) -> Frame {
    let (ox, oy) = PLAYFIELD_ORIGIN;
    let mut f = Frame::filled(RAW_WIDTH, RAW_HEIGHT, FRAME_BG);

    // Decorations outside the playfield: menu buttons, score bar, ground.
    for i in 0..3 {
        f.fill_rect(12 + i * 44, 20, 48 + i * 44, 56, PANEL);
    }
    let bar = (state.score / 1_000).min(300) as usize;
    f.fill_rect(480, 30, 480 + bar, 50, SCORE_BAR);
    f.fill_rect(0, oy + CROP_HEIGHT, RAW_WIDTH, RAW_HEIGHT, GROUND);

    for row in 0..CROP_HEIGHT {
        f.fill_rect(ox, oy + row, ox + CROP_WIDTH, oy + row + 1, sky(row));
    }

    let (sx, sy) = state.sling;
    let (px, top) = to_pixel(sx, sy + 8.0);
    f.fill_rect(px - 3, top, px + 3, oy + CROP_HEIGHT, SLING);

    // Remaining birds, top-left of the playfield.
    for i in 0..state.birds.len() {
        let (x0, y0) = to_pixel(8.0 + 24.0 * i as f64, 294.0);
        f.fill_rect(x0, y0, x0 + 18, y0 + 24, BIRD);
    }

    for row in 0..GRID_ROWS {
        for col in 0..GRID_COLS {
            let c = state.cell(col, row);
            if c.is_empty() {
                continue;
            }
            let (fill, outline) = material_color(c);
            let (x0, y0, x1, y1) = cell_pixel_rect(col, row);
            f.fill_rect(x0, y0, x1, y1, outline);
            f.fill_rect(x0 + 1, y0 + 1, x1 - 1, y1 - 1, fill);
        }
    }
    f
}
