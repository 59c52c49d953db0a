//! Toy cooperative predator-prey on a small grid.
//!
//! `A` agents walk a `grid x grid` board hunting one stationary prey. The
//! team earns +1 the first time any agent steps onto the prey cell, which
//! also ends the episode. Observations are egocentric: the prey offset plus
//! the agent's own (centered) position, all scaled to roughly `[-1, 1]`.

use rand::Rng as _;

use crate::rng::Rng;

pub const ACTION_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub fn from_index(idx: usize) -> Action {
        match idx {
            0 => Action::Up,
            1 => Action::Down,
            2 => Action::Left,
            3 => Action::Right,
            _ => Action::Stay,
        }
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

pub const OBS_DIM: usize = 4;

#[derive(Debug, Clone)]
pub struct ToyEnv {
    grid: usize,
    agents: Vec<(i32, i32)>,
    prey: (i32, i32),
    horizon: usize,
    steps: usize,
    caught: bool,
}

impl ToyEnv {
    /// Fresh episode: prey and agents placed uniformly, with agents nudged
    /// off the prey cell so no episode starts already caught.
    pub fn reset(grid: usize, agents: usize, horizon: usize, rng: &mut Rng) -> Self {
        debug_assert!(grid >= 2 && agents >= 1);
        let g = grid as i32;
        let prey = (rng.random_range(0..g), rng.random_range(0..g));
        let agents = (0..agents)
            .map(|_| loop {
                let p = (rng.random_range(0..g), rng.random_range(0..g));
                if p != prey {
                    break p;
                }
            })
            .collect();
        ToyEnv {
            grid,
            agents,
            prey,
            horizon,
            steps: 0,
            caught: false,
        }
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn done(&self) -> bool {
        self.caught || self.steps >= self.horizon
    }

    pub fn caught(&self) -> bool {
        self.caught
    }

    /// Egocentric observation for one agent.
    pub fn observation(&self, agent: usize) -> [f64; OBS_DIM] {
        let scale = (self.grid - 1).max(1) as f64;
        let (ax, ay) = self.agents[agent];
        let (px, py) = self.prey;
        [
            (px - ax) as f64 / scale,
            (py - ay) as f64 / scale,
            ax as f64 / scale - 0.5,
            ay as f64 / scale - 0.5,
        ]
    }

    /// Advance one step. Returns the team reward, which is non-negative:
    /// +1 the first time an agent collides with the prey, 0 otherwise.
    pub fn step(&mut self, actions: &[Action]) -> f64 {
        debug_assert_eq!(actions.len(), self.agents.len());
        debug_assert!(!self.done());
        let bound = self.grid as i32 - 1;
        for (pos, action) in self.agents.iter_mut().zip(actions) {
            let (dx, dy) = action.delta();
            pos.0 = (pos.0 + dx).clamp(0, bound);
            pos.1 = (pos.1 + dy).clamp(0, bound);
        }
        self.steps += 1;
        if !self.caught && self.agents.contains(&self.prey) {
            self.caught = true;
            1.0
        } else {
            0.0
        }
    }
}
