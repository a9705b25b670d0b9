//! Nut-delivery grid world.
//!
//! The agent has to pick up a nut and bring it to a squirrel while avoiding
//! three bombs. Transitions are deterministic; every step costs
//! `step_cost`, entering a bomb ends the episode with `bomb`, and entering
//! the squirrel while carrying the nut ends it with `delivery`.

mod generate;
mod solve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_map, validate_map, MAX_MAP_ATTEMPTS};
pub use solve::{
    normalized_performance, optimal_step_count, solve_with_reward, value_iteration, MdpSolution,
};

pub const MAP_FORMAT_VERSION: &str = "1.0";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("no feasible map: {0}")]
    InfeasibleMap(String),
    #[error("state ({row}, {col}, has_nut={has_nut}) not in solution")]
    StateNotFound {
        row: usize,
        col: usize,
        has_nut: bool,
    },
    #[error("invalid map: {0}")]
    InvalidMap(String),
}

pub type Result<T> = std::result::Result<T, GridError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Neighbour in `dir`, or `None` when it would leave the index space.
    pub fn offset(self, dir: Action) -> Option<Cell> {
        let (dr, dc) = dir.delta();
        let row = self.row.checked_add_signed(dr)?;
        let col = self.col.checked_add_signed(dc)?;
        Some(Cell { row, col })
    }
}

impl From<[usize; 2]> for Cell {
    fn from(v: [usize; 2]) -> Self {
        Cell::new(v[0], v[1])
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

/// Moves, in the fixed order used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub row: usize,
    pub col: usize,
    pub has_nut: bool,
}

impl AgentState {
    pub fn new(row: usize, col: usize, has_nut: bool) -> Self {
        Self { row, col, has_nut }
    }

    pub fn cell(&self) -> Cell {
        Cell::new(self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub step_cost: f64,
    pub bomb: f64,
    pub delivery: f64,
    pub nut_pickup: f64,
    pub discount: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            step_cost: -1.0,
            bomb: -50.0,
            delivery: 50.0,
            nut_pickup: 0.0,
            discount: 0.95,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_cost < 0.0) {
            return Err(GridError::InvalidMap("step_cost must be negative".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(GridError::InvalidMap("discount must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            step_cost: self.step_cost * c,
            bomb: self.bomb * c,
            delivery: self.delivery * c,
            nut_pickup: self.nut_pickup * c,
            discount: self.discount,
        }
    }
}

/// Grid layout. `rows`/`cols` include the wall border.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapFile", into = "MapFile")]
pub struct GridMap {
    pub rows: usize,
    pub cols: usize,
    walls: Vec<bool>,
    pub nut: Cell,
    pub squirrel: Cell,
    pub bombs: Vec<Cell>,
    pub start: Cell,
    pub start_direction: Action,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MapFile {
    #[serde(default = "default_version")]
    version: String,
    rows: usize,
    cols: usize,
    walls: Vec<Cell>,
    nut: Cell,
    squirrel: Cell,
    bombs: Vec<Cell>,
    start: Cell,
    start_direction: Action,
}

fn default_version() -> String {
    MAP_FORMAT_VERSION.to_string()
}

impl TryFrom<MapFile> for GridMap {
    type Error = GridError;

    fn try_from(f: MapFile) -> Result<Self> {
        check_major_version(&f.version)?;
        GridMap::new(
            f.rows,
            f.cols,
            &f.walls,
            f.nut,
            f.squirrel,
            f.bombs,
            f.start,
            f.start_direction,
        )
    }
}

impl From<GridMap> for MapFile {
    fn from(m: GridMap) -> Self {
        MapFile {
            version: MAP_FORMAT_VERSION.to_string(),
            rows: m.rows,
            cols: m.cols,
            walls: m.wall_cells(),
            nut: m.nut,
            squirrel: m.squirrel,
            bombs: m.bombs,
            start: m.start,
            start_direction: m.start_direction,
        }
    }
}

pub(crate) fn check_major_version(v: &str) -> Result<()> {
    let major = v.split('.').next().unwrap_or("");
    if major != "1" {
        return Err(GridError::InvalidMap(format!(
            "unsupported map format version {v}"
        )));
    }
    Ok(())
}

/// Result of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: AgentState,
    pub reward: f64,
    pub terminal: bool,
}

impl GridMap {
    /// Builds a map from explicit walls. The border is always walled,
    /// whether or not it is listed.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rows: usize,
        cols: usize,
        walls: &[Cell],
        nut: Cell,
        squirrel: Cell,
        bombs: Vec<Cell>,
        start: Cell,
        start_direction: Action,
    ) -> Result<Self> {
        if rows < 3 || cols < 3 {
            return Err(GridError::InvalidMap(format!(
                "{rows}x{cols} grid too small"
            )));
        }
        let mut mask = vec![false; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                if r == 0 || c == 0 || r == rows - 1 || c == cols - 1 {
                    mask[r * cols + c] = true;
                }
            }
        }
        for w in walls {
            if w.row >= rows || w.col >= cols {
                return Err(GridError::InvalidMap(format!("wall {w:?} outside grid")));
            }
            mask[w.row * cols + w.col] = true;
        }
        let map = Self {
            rows,
            cols,
            walls: mask,
            nut,
            squirrel,
            bombs,
            start,
            start_direction,
        };
        for (name, cell) in map.special_cells() {
            if cell.row >= rows || cell.col >= cols || map.is_wall(cell) {
                return Err(GridError::InvalidMap(format!(
                    "{name} at {cell:?} is not an open cell"
                )));
            }
        }
        Ok(map)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| GridError::InvalidMap(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("map serialises")
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        cell.row >= self.rows
            || cell.col >= self.cols
            || self.walls[cell.row * self.cols + cell.col]
    }

    pub fn is_bomb(&self, cell: Cell) -> bool {
        self.bombs.contains(&cell)
    }

    pub fn wall_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| Cell::new(r, c)))
            .filter(|&c| self.is_wall(c))
            .collect()
    }

    pub fn open_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows)
            .flat_map(move |r| (0..self.cols).map(move |c| Cell::new(r, c)))
            .filter(move |&c| !self.is_wall(c))
    }

    pub(crate) fn special_cells(&self) -> Vec<(&'static str, Cell)> {
        let mut v = vec![
            ("start", self.start),
            ("nut", self.nut),
            ("squirrel", self.squirrel),
        ];
        v.extend(self.bombs.iter().map(|&b| ("bomb", b)));
        v
    }

    pub fn start_state(&self) -> AgentState {
        AgentState::new(self.start.row, self.start.col, false)
    }

    pub fn is_terminal(&self, state: &AgentState) -> bool {
        let cell = state.cell();
        self.is_bomb(cell) || (state.has_nut && cell == self.squirrel)
    }

    /// Deterministic transition. Walls block movement; terminal states absorb
    /// with zero reward.
    pub fn step(&self, spec: &RewardSpec, state: AgentState, action: Action) -> StepOutcome {
        if self.is_terminal(&state) {
            return StepOutcome {
                next: state,
                reward: 0.0,
                terminal: true,
            };
        }
        let target = state.cell().offset(action).filter(|&c| !self.is_wall(c));
        let Some(cell) = target else {
            return StepOutcome {
                next: state,
                reward: spec.step_cost,
                terminal: false,
            };
        };
        let mut next = AgentState::new(cell.row, cell.col, state.has_nut);
        let mut reward = spec.step_cost;
        let mut terminal = false;
        if self.is_bomb(cell) {
            reward += spec.bomb;
            terminal = true;
        } else if cell == self.nut && !state.has_nut {
            next.has_nut = true;
            reward += spec.nut_pickup;
        } else if cell == self.squirrel && state.has_nut {
            reward += spec.delivery;
            terminal = true;
        }
        StepOutcome {
            next,
            reward,
            terminal,
        }
    }

    /// Reward of arriving in `state`, as a function of the state alone.
    ///
    /// Agrees with [`GridMap::step`] on every transition as long as
    /// `nut_pickup` is zero (otherwise wall bumps on the nut cell differ).
    pub fn arrival_reward(&self, spec: &RewardSpec, state: &AgentState) -> f64 {
        let cell = state.cell();
        let event = if self.is_bomb(cell) {
            spec.bomb
        } else if cell == self.squirrel && state.has_nut {
            spec.delivery
        } else if cell == self.nut && state.has_nut {
            spec.nut_pickup
        } else {
            0.0
        };
        spec.step_cost + event
    }

    /// Hand-crafted state descriptor used by the reward network: normalised
    /// row and column, nut flag, and normalised Manhattan distances to the
    /// nut, the squirrel and the nearest bomb.
    pub fn state_features(&self, state: &AgentState) -> Vec<f64> {
        let cell = state.cell();
        let span = (self.rows + self.cols) as f64;
        let nearest_bomb = self
            .bombs
            .iter()
            .map(|&b| cell.manhattan(b))
            .min()
            .unwrap_or(0);
        vec![
            state.row as f64 / (self.rows - 1) as f64,
            state.col as f64 / (self.cols - 1) as f64,
            if state.has_nut { 1.0 } else { 0.0 },
            cell.manhattan(self.nut) as f64 / span,
            cell.manhattan(self.squirrel) as f64 / span,
            nearest_bomb as f64 / span,
        ]
    }

    pub const STATE_FEATURE_DIM: usize = 6;

    /// ASCII rendering; `agent` is drawn as `R` (or `r` once carrying the nut).
    pub fn render(&self, agent: Option<&AgentState>) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                let cell = Cell::new(r, c);
                let ch = match agent {
                    Some(a) if a.cell() == cell => {
                        if a.has_nut {
                            'r'
                        } else {
                            'R'
                        }
                    }
                    _ if self.is_wall(cell) => '#',
                    _ if self.is_bomb(cell) => 'B',
                    _ if cell == self.nut => 'N',
                    _ if cell == self.squirrel => 'S',
                    _ => '.',
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}
