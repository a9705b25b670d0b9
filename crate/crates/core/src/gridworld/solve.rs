use serde::{Deserialize, Serialize};

use super::{Action, AgentState, GridError, GridMap, Result, RewardSpec, StepOutcome};

/// Exact Q / V tables over every open (cell, has_nut) state.
///
/// Actions whose Q lies within the tie tolerance of the maximum are snapped
/// to the maximum, so `V(s) = max_a Q(s, a)` and the advantage of every
/// optimal action is exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSolution {
    pub rows: usize,
    pub cols: usize,
    q: Vec<[f64; 4]>,
    v: Vec<f64>,
    optimal: Vec<u8>,
    open: Vec<bool>,
    terminal: Vec<bool>,
    pub sweeps: usize,
}

fn index(cols: usize, s: &AgentState) -> usize {
    (s.row * cols + s.col) * 2 + usize::from(s.has_nut)
}

impl MdpSolution {
    fn slot(&self, s: &AgentState) -> Result<usize> {
        let not_found = GridError::StateNotFound {
            row: s.row,
            col: s.col,
            has_nut: s.has_nut,
        };
        if s.row >= self.rows || s.col >= self.cols {
            return Err(not_found);
        }
        let i = index(self.cols, s);
        if self.open[i] {
            Ok(i)
        } else {
            Err(not_found)
        }
    }

    pub fn q(&self, s: &AgentState, a: Action) -> Result<f64> {
        Ok(self.q[self.slot(s)?][a.index()])
    }

    pub fn q_row(&self, s: &AgentState) -> Result<[f64; 4]> {
        Ok(self.q[self.slot(s)?])
    }

    pub fn v(&self, s: &AgentState) -> Result<f64> {
        Ok(self.v[self.slot(s)?])
    }

    pub fn is_terminal(&self, s: &AgentState) -> Result<bool> {
        Ok(self.terminal[self.slot(s)?])
    }

    pub fn optimal_actions(&self, s: &AgentState) -> Result<Vec<Action>> {
        let mask = self.optimal[self.slot(s)?];
        Ok(Action::ALL
            .into_iter()
            .filter(|a| mask & (1 << a.index()) != 0)
            .collect())
    }

    pub fn is_optimal(&self, s: &AgentState, a: Action) -> Result<bool> {
        Ok(self.optimal[self.slot(s)?] & (1 << a.index()) != 0)
    }

    /// First optimal action in the fixed action order.
    pub fn greedy_action(&self, s: &AgentState) -> Result<Action> {
        let mask = self.optimal[self.slot(s)?];
        Ok(Action::ALL
            .into_iter()
            .find(|a| mask & (1 << a.index()) != 0)
            .unwrap_or(Action::Up))
    }

    /// `Q(s, a) - V(s)`.
    pub fn advantage(&self, s: &AgentState, a: Action) -> Result<f64> {
        let i = self.slot(s)?;
        Ok(self.q[i][a.index()] - self.v[i])
    }

    /// All open states, in row-major order with `has_nut = false` first.
    pub fn states(&self) -> impl Iterator<Item = AgentState> + '_ {
        (0..self.rows * self.cols * 2)
            .filter(move |&i| self.open[i])
            .map(move |i| {
                let cell = i / 2;
                AgentState::new(cell / self.cols, cell % self.cols, i % 2 == 1)
            })
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = AgentState> + '_ {
        self.states()
            .filter(move |s| !self.terminal[index(self.cols, s)])
    }

    /// CSV with one row per (state, action): `state,action,Q,advantage`.
    /// States are written as `row:col:has_nut`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,action,Q,advantage\n");
        for s in self.states() {
            for a in Action::ALL {
                let q = self.q(&s, a).expect("listed state");
                let adv = self.advantage(&s, a).expect("listed state");
                out.push_str(&format!(
                    "{}:{}:{},{},{},{}\n",
                    s.row,
                    s.col,
                    u8::from(s.has_nut),
                    a.as_str(),
                    q,
                    adv
                ));
            }
        }
        out
    }
}

/// Value iteration on the environment reward.
pub fn value_iteration(map: &GridMap, spec: &RewardSpec, tol: f64) -> MdpSolution {
    solve_with_reward(map, spec, spec.discount, tol, |out: &StepOutcome| {
        out.reward
    })
}

/// Value iteration with the transition reward supplied by `reward`.
///
/// Dynamics and terminal states always come from `map`/`spec`; only the
/// scalar credited to each transition is replaced. Terminal states have
/// value 0.
pub fn solve_with_reward<F>(
    map: &GridMap,
    spec: &RewardSpec,
    discount: f64,
    tol: f64,
    reward: F,
) -> MdpSolution
where
    F: Fn(&StepOutcome) -> f64,
{
    assert!(tol > 0.0, "tolerance must be positive");
    let n = map.rows * map.cols * 2;
    let mut open = vec![false; n];
    let mut terminal = vec![false; n];
    let mut states = Vec::new();
    for cell in map.open_cells() {
        for has_nut in [false, true] {
            let s = AgentState::new(cell.row, cell.col, has_nut);
            let i = index(map.cols, &s);
            open[i] = true;
            terminal[i] = map.is_terminal(&s);
            if !terminal[i] {
                states.push((i, s));
            }
        }
    }
    // transitions are fixed; precompute successor index and reward
    let transitions: Vec<[(usize, f64); 4]> = states
        .iter()
        .map(|(_, s)| {
            Action::ALL.map(|a| {
                let out = map.step(spec, *s, a);
                (index(map.cols, &out.next), reward(&out))
            })
        })
        .collect();

    let mut v = vec![0.0; n];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut next_v = v.clone();
        let mut delta: f64 = 0.0;
        for ((i, _), succ) in states.iter().zip(&transitions) {
            let best = succ
                .iter()
                .map(|&(j, r)| r + discount * v[j])
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[*i]).abs());
            next_v[*i] = best;
        }
        v = next_v;
        if delta < tol || sweeps >= 1_000_000 {
            break;
        }
    }

    let tie_tol = (2.0 * tol / (1.0 - discount)).max(1e-9);
    let mut q = vec![[0.0; 4]; n];
    let mut optimal = vec![0u8; n];
    for ((i, _), succ) in states.iter().zip(&transitions) {
        let mut row = succ.map(|(j, r)| r + discount * v[j]);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut mask = 0u8;
        for (k, qa) in row.iter_mut().enumerate() {
            if best - *qa <= tie_tol {
                *qa = best;
                mask |= 1 << k;
            }
        }
        q[*i] = row;
        v[*i] = best;
        optimal[*i] = mask;
    }
    for i in 0..n {
        if open[i] && terminal[i] {
            optimal[i] = 0b1111;
        }
    }

    MdpSolution {
        rows: map.rows,
        cols: map.cols,
        q,
        v,
        optimal,
        open,
        terminal,
        sweeps,
    }
}

/// Length of the start → nut → squirrel path obtained by following the
/// first optimal action from the start state.
pub fn optimal_step_count(map: &GridMap, solution: &MdpSolution) -> Result<usize> {
    let spec = RewardSpec::default();
    let mut s = map.start_state();
    let limit = map.rows * map.cols * 2;
    for steps in 1..=limit {
        let a = solution.greedy_action(&s)?;
        let out = map.step(&spec, s, a);
        if out.terminal {
            return if map.is_bomb(out.next.cell()) {
                Err(GridError::InfeasibleMap(
                    "optimal policy ends in a bomb".into(),
                ))
            } else {
                Ok(steps)
            };
        }
        s = out.next;
    }
    Err(GridError::InfeasibleMap(
        "goal unreachable from start".into(),
    ))
}

/// Steps taken divided by the optimal step count for the map.
pub fn normalized_performance(
    steps_taken: usize,
    map: &GridMap,
    solution: &MdpSolution,
) -> Result<f64> {
    if steps_taken == 0 {
        return Err(GridError::InvalidMap(
            "steps_taken must be at least 1".into(),
        ));
    }
    Ok(steps_taken as f64 / optimal_step_count(map, solution)? as f64)
}
