use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Action, Cell, GridError, GridMap, Result};

pub const MAX_MAP_ATTEMPTS: usize = 10_000;
const MIN_SEPARATION: usize = 4;
const START_RUN: usize = 3;
const BOMBS: usize = 3;

fn start_ray(start: Cell, dir: Action) -> Vec<Cell> {
    let mut out = Vec::with_capacity(START_RUN);
    let mut c = start;
    for _ in 0..START_RUN {
        match c.offset(dir) {
            Some(n) => {
                out.push(n);
                c = n;
            }
            None => break,
        }
    }
    out
}

/// Rejection-samples a map with the given interior size.
///
/// Each attempt draws the start cell and a direction with three free cells
/// ahead, then places nut, squirrel and three bombs one after another among
/// the cells that still satisfy every separation constraint. Attempts that
/// run out of candidates, or where the goal is unreachable, are rejected.
pub fn generate_map(interior_rows: usize, interior_cols: usize, seed: u64) -> Result<GridMap> {
    if interior_rows == 0 || interior_cols == 0 {
        return Err(GridError::InfeasibleMap("empty interior".into()));
    }
    let rows = interior_rows + 2;
    let cols = interior_cols + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = GridMap::new(
        rows,
        cols,
        &[],
        Cell::new(1, 1),
        Cell::new(1, 1),
        Vec::new(),
        Cell::new(1, 1),
        Action::Up,
    )?;
    let interior: Vec<Cell> = template.open_cells().collect();

    for _ in 0..MAX_MAP_ATTEMPTS {
        let Some(&start) = interior.choose(&mut rng) else {
            break;
        };
        let dirs: Vec<Action> = Action::ALL
            .into_iter()
            .filter(|&d| {
                let ray = start_ray(start, d);
                ray.len() == START_RUN && ray.iter().all(|&c| !template.is_wall(c))
            })
            .collect();
        let Some(&dir) = dirs.choose(&mut rng) else {
            continue;
        };
        let ray = start_ray(start, dir);

        let mut placed = vec![start];
        let mut pick = |extra: &dyn Fn(Cell) -> bool, placed: &mut Vec<Cell>| -> Option<Cell> {
            let candidates: Vec<Cell> = interior
                .iter()
                .copied()
                .filter(|&c| placed.iter().all(|&p| p.manhattan(c) >= MIN_SEPARATION) && extra(c))
                .collect();
            let c = *candidates.choose(&mut rng)?;
            placed.push(c);
            Some(c)
        };
        let any = |_: Cell| true;
        let far_from_ray = |c: Cell| ray.iter().all(|&r| r.manhattan(c) >= MIN_SEPARATION);

        let Some(nut) = pick(&any, &mut placed) else {
            continue;
        };
        let Some(squirrel) = pick(&any, &mut placed) else {
            continue;
        };
        let mut bombs = Vec::with_capacity(BOMBS);
        for _ in 0..BOMBS {
            match pick(&far_from_ray, &mut placed) {
                Some(b) => bombs.push(b),
                None => break,
            }
        }
        if bombs.len() < BOMBS {
            continue;
        }
        let map = GridMap::new(rows, cols, &[], nut, squirrel, bombs, start, dir)?;
        if validate_map(&map).is_ok() {
            return Ok(map);
        }
    }
    Err(GridError::InfeasibleMap(format!(
        "{interior_rows}x{interior_cols} interior: no valid placement after {MAX_MAP_ATTEMPTS} attempts"
    )))
}

fn reachable(map: &GridMap, from: Cell, to: Cell) -> bool {
    let mut seen = vec![false; map.rows * map.cols];
    let mut queue = VecDeque::from([from]);
    seen[from.row * map.cols + from.col] = true;
    while let Some(c) = queue.pop_front() {
        if c == to {
            return true;
        }
        for a in Action::ALL {
            if let Some(n) = c.offset(a) {
                if !map.is_wall(n) && !map.is_bomb(n) && !seen[n.row * map.cols + n.col] {
                    seen[n.row * map.cols + n.col] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    false
}

/// Checks every layout invariant; returns the list of violations.
pub fn validate_map(map: &GridMap) -> std::result::Result<(), Vec<String>> {
    let mut problems = Vec::new();
    for r in 0..map.rows {
        for c in 0..map.cols {
            let border = r == 0 || c == 0 || r == map.rows - 1 || c == map.cols - 1;
            if border && !map.is_wall(Cell::new(r, c)) {
                problems.push(format!("border cell ({r}, {c}) is open"));
            }
        }
    }
    if map.bombs.len() != BOMBS {
        problems.push(format!("{} bombs instead of {BOMBS}", map.bombs.len()));
    }
    let specials = map.special_cells();
    for (i, (na, a)) in specials.iter().enumerate() {
        if map.is_wall(*a) {
            problems.push(format!("{na} at {a:?} is a wall"));
        }
        for (nb, b) in &specials[i + 1..] {
            if a.manhattan(*b) < MIN_SEPARATION {
                problems.push(format!(
                    "{na} {a:?} and {nb} {b:?} closer than {MIN_SEPARATION}"
                ));
            }
        }
    }
    let ray = start_ray(map.start, map.start_direction);
    if ray.len() < START_RUN || ray.iter().any(|&c| map.is_wall(c)) {
        problems.push(format!(
            "start cannot move {START_RUN} cells {:?}",
            map.start_direction
        ));
    }
    for &b in &map.bombs {
        if ray.iter().any(|&r| r.manhattan(b) < MIN_SEPARATION) {
            problems.push(format!(
                "bomb {b:?} within {MIN_SEPARATION} of the start ray"
            ));
        }
    }
    if problems.is_empty()
        && !(reachable(map, map.start, map.nut) && reachable(map, map.nut, map.squirrel))
    {
        problems.push("nut or squirrel unreachable without crossing a bomb".into());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}
