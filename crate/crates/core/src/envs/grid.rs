use std::collections::VecDeque;

use rand::Rng as _;

use super::Observation;
use crate::rng;
use crate::{Error, Result};

pub const FOUR_ROOMS_SIZE: usize = 11;
pub const CROSSING_SIZE: usize = 9;
/// Side of the egocentric window in the crossing family.
pub const VIEW_SIZE: usize = 5;

const FOUR_ROOMS_START: (usize, usize) = (3, 7);
const FOUR_ROOMS_GOALS: [(usize, usize); 4] = [(1, 1), (1, 9), (9, 9), (9, 1)];
const CROSSING_START: (usize, usize) = (1, 1);
const CROSSING_GOAL: (usize, usize) = (7, 7);
const VIEW_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    N,
    E,
    S,
    W,
}

impl Dir {
    fn delta(self) -> (isize, isize) {
        match self {
            Dir::N => (-1, 0),
            Dir::E => (0, 1),
            Dir::S => (1, 0),
            Dir::W => (0, -1),
        }
    }

    fn right(self) -> Dir {
        match self {
            Dir::N => Dir::E,
            Dir::E => Dir::S,
            Dir::S => Dir::W,
            Dir::W => Dir::N,
        }
    }

    fn left(self) -> Dir {
        self.right().right().right()
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridState {
    pub agent_pos: (usize, usize),
    pub agent_dir: Dir,
    pub steps_taken: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub reached_goal: bool,
    pub agent_pos: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Kind {
    /// One-hot position over free cells; `cell_index[r * size + c]` is the slot.
    FourRooms { cell_index: Vec<Option<usize>>, free_cells: usize },
    Crossing,
}

/// A deterministic gridworld episode runner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridEnv {
    kind: Kind,
    size: usize,
    walls: Vec<bool>,
    start: (usize, usize),
    start_dir: Dir,
    goal: (usize, usize),
    horizon: usize,
    state: GridState,
}

impl GridEnv {
    pub(super) fn four_rooms(goal_id: u32, horizon: usize) -> Self {
        let n = FOUR_ROOMS_SIZE;
        let mut walls = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                let border = i == 0 || j == 0 || i == n - 1 || j == n - 1;
                walls[i * n + j] = border || i == 5 || j == 5;
            }
        }
        // Doors: two in the vertical divider, two in the horizontal one.
        for (r, c) in [(2, 5), (8, 5), (5, 2), (5, 8)] {
            walls[r * n + c] = false;
        }
        let mut cell_index = vec![None; n * n];
        let mut free_cells = 0;
        for (slot, wall) in cell_index.iter_mut().zip(&walls) {
            if !wall {
                *slot = Some(free_cells);
                free_cells += 1;
            }
        }
        let start = FOUR_ROOMS_START;
        Self {
            kind: Kind::FourRooms {
                cell_index,
                free_cells,
            },
            size: n,
            walls,
            start,
            start_dir: Dir::N,
            goal: FOUR_ROOMS_GOALS[goal_id as usize],
            horizon,
            state: GridState {
                agent_pos: start,
                agent_dir: Dir::N,
                steps_taken: 0,
                done: false,
            },
        }
    }

    pub(super) fn crossing(seed: u64, horizon: usize) -> Result<Self> {
        let n = CROSSING_SIZE;
        let mut rng = rng::seeded(seed, 0);
        for _ in 0..64 {
            let mut walls = vec![false; n * n];
            for i in 0..n {
                for j in 0..n {
                    walls[i * n + j] = i == 0 || j == 0 || i == n - 1 || j == n - 1;
                }
            }
            let vertical = rng.gen_bool(0.5);
            // Interior index 2..=6 keeps start and goal columns/rows clear.
            let index = rng.gen_range(2..=n - 3);
            let gap = rng.gen_range(1..=n - 2);
            for k in 1..n - 1 {
                if k == gap {
                    continue;
                }
                let (r, c) = if vertical { (k, index) } else { (index, k) };
                walls[r * n + c] = true;
            }
            let env = Self {
                kind: Kind::Crossing,
                size: n,
                walls,
                start: CROSSING_START,
                start_dir: Dir::E,
                goal: CROSSING_GOAL,
                horizon,
                state: GridState {
                    agent_pos: CROSSING_START,
                    agent_dir: Dir::E,
                    steps_taken: 0,
                    done: false,
                },
            };
            if env.shortest_path_len(env.start, env.goal).is_some() {
                return Ok(env);
            }
        }
        Err(Error::InvalidSpec(format!(
            "could not generate a solvable crossing layout for seed {seed}"
        )))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn state(&self) -> GridState {
        self.state
    }

    pub fn is_wall(&self, pos: (usize, usize)) -> bool {
        self.walls[pos.0 * self.size + pos.1]
    }

    /// Wall cells only, row-major; used to compare layouts.
    pub fn walls(&self) -> &[bool] {
        &self.walls
    }

    pub fn num_actions(&self) -> usize {
        match self.kind {
            Kind::FourRooms { .. } => 4,
            Kind::Crossing => 3,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match &self.kind {
            Kind::FourRooms { free_cells, .. } => *free_cells,
            Kind::Crossing => VIEW_SIZE * VIEW_SIZE * VIEW_CHANNELS + 4,
        }
    }

    /// Moves the agent to an arbitrary free cell (tests, debugging).
    pub fn set_state(&mut self, state: GridState) -> Result<()> {
        if self.is_wall(state.agent_pos) || state.steps_taken > self.horizon {
            return Err(Error::InvalidSpec(format!("invalid grid state {state:?}")));
        }
        self.state = state;
        Ok(())
    }

    pub fn reset(&mut self) -> Observation {
        self.state = GridState {
            agent_pos: self.start,
            agent_dir: self.start_dir,
            steps_taken: 0,
            done: false,
        };
        self.observe()
    }

    /// Actions: four-rooms `{0: up, 1: down, 2: left, 3: right}`;
    /// crossing `{0: turn left, 1: turn right, 2: forward}`.
    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.state.done {
            return Err(Error::EpisodeDone);
        }
        let num_actions = self.num_actions();
        if action >= num_actions {
            return Err(Error::ActionOutOfRange {
                action,
                num_actions,
            });
        }
        match self.kind {
            Kind::FourRooms { .. } => {
                let dir = [Dir::N, Dir::S, Dir::W, Dir::E][action];
                self.try_move(dir);
            }
            Kind::Crossing => match action {
                0 => self.state.agent_dir = self.state.agent_dir.left(),
                1 => self.state.agent_dir = self.state.agent_dir.right(),
                _ => self.try_move(self.state.agent_dir),
            },
        }
        self.state.steps_taken += 1;
        let reached_goal = self.state.agent_pos == self.goal;
        let reward = if reached_goal {
            1.0 - 0.9 * (self.state.steps_taken as f64 / self.horizon as f64)
        } else {
            0.0
        };
        self.state.done = reached_goal || self.state.steps_taken >= self.horizon;
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.state.done,
            info: StepInfo {
                reached_goal,
                agent_pos: self.state.agent_pos,
            },
        })
    }

    fn offset(&self, pos: (usize, usize), d: (isize, isize)) -> Option<(usize, usize)> {
        let r = pos.0 as isize + d.0;
        let c = pos.1 as isize + d.1;
        if r < 0 || c < 0 || r >= self.size as isize || c >= self.size as isize {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    fn try_move(&mut self, dir: Dir) {
        if let Some(next) = self.offset(self.state.agent_pos, dir.delta()) {
            if !self.is_wall(next) {
                self.state.agent_pos = next;
            }
        }
    }

    /// Observation of the current state.
    pub fn observe(&self) -> Observation {
        match &self.kind {
            Kind::FourRooms {
                cell_index,
                free_cells,
            } => {
                let mut obs = vec![0.0; *free_cells];
                let (r, c) = self.state.agent_pos;
                let slot = cell_index[r * self.size + c].expect("agent never stands in a wall");
                obs[slot] = 1.0;
                obs
            }
            Kind::Crossing => self.egocentric_view(),
        }
    }

    // Agent sits at the bottom-centre of the window looking "up"; cells are
    // `[row][col][wall, goal, out_of_bounds]` followed by a direction one-hot.
    fn egocentric_view(&self) -> Observation {
        let k = VIEW_SIZE;
        let mut obs = vec![0.0; self.obs_dim()];
        let fwd = self.state.agent_dir.delta();
        let right = self.state.agent_dir.right().delta();
        for vi in 0..k {
            for vj in 0..k {
                let ahead = (k - 1 - vi) as isize;
                let lateral = vj as isize - (k / 2) as isize;
                let d = (
                    fwd.0 * ahead + right.0 * lateral,
                    fwd.1 * ahead + right.1 * lateral,
                );
                let base = (vi * k + vj) * VIEW_CHANNELS;
                match self.offset(self.state.agent_pos, d) {
                    None => obs[base + 2] = 1.0,
                    Some(p) => {
                        if self.is_wall(p) {
                            obs[base] = 1.0;
                        }
                        if p == self.goal {
                            obs[base + 1] = 1.0;
                        }
                    }
                }
            }
        }
        obs[k * k * VIEW_CHANNELS + self.state.agent_dir.index()] = 1.0;
        obs
    }

    /// BFS distance over free cells with 4-neighbour moves.
    pub fn shortest_path_len(&self, from: (usize, usize), to: (usize, usize)) -> Option<usize> {
        let n = self.size;
        let mut dist = vec![usize::MAX; n * n];
        let mut queue = VecDeque::new();
        dist[from.0 * n + from.1] = 0;
        queue.push_back(from);
        while let Some(p) = queue.pop_front() {
            if p == to {
                return Some(dist[p.0 * n + p.1]);
            }
            for d in [Dir::N, Dir::E, Dir::S, Dir::W] {
                if let Some(q) = self.offset(p, d.delta()) {
                    if !self.is_wall(q) && dist[q.0 * n + q.1] == usize::MAX {
                        dist[q.0 * n + q.1] = dist[p.0 * n + p.1] + 1;
                        queue.push_back(q);
                    }
                }
            }
        }
        None
    }

    /// ASCII layout: `#` wall, `A` agent, `G` goal, `.` free.
    pub fn render(&self) -> String {
        let mut s = String::with_capacity(self.size * (self.size + 1));
        for r in 0..self.size {
            for c in 0..self.size {
                let ch = if (r, c) == self.state.agent_pos {
                    'A'
                } else if (r, c) == self.goal {
                    'G'
                } else if self.is_wall((r, c)) {
                    '#'
                } else {
                    '.'
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}
