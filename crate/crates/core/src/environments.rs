//! Concrete games: the inspection game, its one-state Markov embedding, the
//! 5×5 cooperation gridworld, and a seeded random Markov game generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RqeError};
use crate::markov::MarkovGame;
use crate::normal_form::PayoffPair;
use crate::simplex::{sample_dirichlet, SimplexVector};

/// Inspector (row) versus inspectee (column).
pub fn inspection_game() -> PayoffPair {
    PayoffPair::from_rows(&[vec![0.0, 5.0], vec![3.0, 3.0]], &[vec![-3.0, -5.0], vec![0.0, 3.0]])
        .expect("static payoff matrices")
}

/// The inspection game as a single self-looping state with rewards mapped to
/// [0, 1] by r_i = (R_i − min R_i)/sp(R_i).
pub fn inspection_mg(gamma: f64) -> Result<MarkovGame> {
    normal_form_mg(&inspection_game(), gamma)
}

/// Any bimatrix game as a one-state Markov game, rescaled per player.
pub fn normal_form_mg(r: &PayoffPair, gamma: f64) -> Result<MarkovGame> {
    let (n1, n2) = r.n_actions();
    let scale = |i: usize, v: f64| {
        let m = r.matrix(i);
        let sp = r.span_of(i);
        if sp == 0.0 {
            0.0
        } else {
            (v - m.min()) / sp
        }
    };
    let mut reward = Vec::with_capacity(n1 * n2);
    for a in 0..n1 {
        for b in 0..n2 {
            reward.push([scale(0, r.r1[(a, b)]), scale(1, r.r2[(a, b)])]);
        }
    }
    MarkovGame::new(1, (n1, n2), reward, vec![vec![(0, 1.0)]; n1 * n2], gamma, SimplexVector::uniform(1))
}

pub const GRID: usize = 5;
pub const GRID_CELLS: usize = GRID * GRID;

/// Moves, in action order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

pub const MOVES: [Move; 5] = [Move::Up, Move::Down, Move::Left, Move::Right, Move::Stay];

impl Move {
    /// Destination cell, or `None` when the move leaves the grid.
    pub fn apply(self, cell: usize) -> Option<usize> {
        let (r, c) = (cell / GRID, cell % GRID);
        let (r, c) = match self {
            Move::Up if r > 0 => (r - 1, c),
            Move::Down if r + 1 < GRID => (r + 1, c),
            Move::Left if c > 0 => (r, c - 1),
            Move::Right if c + 1 < GRID => (r, c + 1),
            Move::Stay => (r, c),
            _ => return None,
        };
        Some(r * GRID + c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridworldSpec {
    pub coop_stay_prob: f64,
    /// Defection zone of each agent.
    pub defect_zone: [usize; 2],
    pub coop_zone: usize,
    pub start: usize,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self { coop_stay_prob: 0.7, defect_zone: [GRID - 1, (GRID - 1) * GRID], coop_zone: GRID_CELLS - 1, start: 0 }
    }
}

impl GridworldSpec {
    fn validate(&self) -> Result<()> {
        let cells = [self.defect_zone[0], self.defect_zone[1], self.coop_zone];
        if cells.iter().any(|&c| c >= GRID_CELLS) || self.start >= GRID_CELLS {
            return Err(RqeError::Config("gridworld cell out of range".into()));
        }
        if cells[0] == cells[1] || cells[0] == cells[2] || cells[1] == cells[2] {
            return Err(RqeError::Config("gridworld zones must be distinct".into()));
        }
        if !(0.0..=1.0).contains(&self.coop_stay_prob) {
            return Err(RqeError::Config("coop_stay_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Unscaled reward of `agent` given both positions.
    pub fn raw_reward(&self, agent: usize, pos: [usize; 2]) -> f64 {
        let me = pos[agent];
        let other = 1 - agent;
        let them = pos[other];
        if me == self.coop_zone {
            if them == self.coop_zone {
                2.0
            } else if them == self.defect_zone[other] {
                0.5
            } else {
                1.0
            }
        } else if me == self.defect_zone[agent] {
            if them == self.coop_zone {
                3.0
            } else {
                0.0
            }
        } else {
            0.0
        }
    }

    /// Distribution of one agent's next cell as (cell, prob) pairs.
    pub fn agent_step(&self, agent: usize, cell: usize, action: usize) -> Vec<(usize, f64)> {
        if cell == self.defect_zone[agent] {
            return vec![(cell, 1.0)];
        }
        let normal = resolve_move(cell, MOVES[action]);
        if cell == self.coop_zone {
            let mut out = vec![(cell, self.coop_stay_prob)];
            for (c, p) in normal {
                add_mass(&mut out, c, (1.0 - self.coop_stay_prob) * p);
            }
            out.retain(|&(_, p)| p > 0.0);
            out
        } else {
            normal
        }
    }
}

fn add_mass(row: &mut Vec<(usize, f64)>, cell: usize, p: f64) {
    match row.iter_mut().find(|(c, _)| *c == cell) {
        Some(e) => e.1 += p,
        None => row.push((cell, p)),
    }
}

/// An infeasible move becomes a uniform draw over the feasible moves,
/// staying included.
fn resolve_move(cell: usize, m: Move) -> Vec<(usize, f64)> {
    if let Some(c) = m.apply(cell) {
        return vec![(c, 1.0)];
    }
    let feasible: Vec<usize> = MOVES.iter().filter_map(|mv| mv.apply(cell)).collect();
    let p = 1.0 / feasible.len() as f64;
    feasible.into_iter().map(|c| (c, p)).collect()
}

/// Joint state index of the two agents' cells.
pub fn grid_state(pos0: usize, pos1: usize) -> usize {
    pos0 * GRID_CELLS + pos1
}

pub fn grid_positions(s: usize) -> [usize; 2] {
    [s / GRID_CELLS, s % GRID_CELLS]
}

/// The cooperation gridworld with the default layout.
pub fn gridworld_mg(gamma: f64) -> Result<MarkovGame> {
    gridworld_mg_with(&GridworldSpec::default(), gamma)
}

/// 625 joint states, 5×5 joint actions, rewards divided by 3, independent
/// per-agent moves.
pub fn gridworld_mg_with(spec: &GridworldSpec, gamma: f64) -> Result<MarkovGame> {
    spec.validate()?;
    let n_states = GRID_CELLS * GRID_CELLS;
    let n_act = MOVES.len();
    let mut reward = Vec::with_capacity(n_states * n_act * n_act);
    let mut transition = Vec::with_capacity(n_states * n_act * n_act);
    for s in 0..n_states {
        let pos = grid_positions(s);
        let r = [spec.raw_reward(0, pos) / 3.0, spec.raw_reward(1, pos) / 3.0];
        for a0 in 0..n_act {
            let m0 = spec.agent_step(0, pos[0], a0);
            for a1 in 0..n_act {
                let m1 = spec.agent_step(1, pos[1], a1);
                reward.push(r);
                let mut row = Vec::with_capacity(m0.len() * m1.len());
                for &(c0, p0) in &m0 {
                    for &(c1, p1) in &m1 {
                        row.push((grid_state(c0, c1), p0 * p1));
                    }
                }
                row.sort_by_key(|e| e.0);
                transition.push(row);
            }
        }
    }
    let rho0 = SimplexVector::vertex(n_states, grid_state(spec.start, spec.start));
    MarkovGame::new(n_states, (n_act, n_act), reward, transition, gamma, rho0)
}

/// Uniform [0, 1] rewards and Dirichlet(1) transition rows shrunk onto
/// entries ≥ 0.01/n_states, from a ChaCha8 stream seeded by `seed`.
pub fn random_mg(n_states: usize, n_actions: (usize, usize), gamma: f64, seed: u64) -> Result<MarkovGame> {
    if n_states == 0 {
        return Err(RqeError::InvalidInput("n_states must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = n_states * n_actions.0 * n_actions.1;
    let floor = 0.01 / n_states as f64;
    let mut reward = Vec::with_capacity(rows);
    let mut transition = Vec::with_capacity(rows);
    for _ in 0..rows {
        reward.push([rng.random::<f64>(), rng.random::<f64>()]);
        let p = sample_dirichlet(&mut rng, n_states, 1.0, floor);
        transition.push(p.into_vec().into_iter().enumerate().collect());
    }
    MarkovGame::new(n_states, n_actions, reward, transition, gamma, SimplexVector::uniform(n_states))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inspection_matrices() {
        let r = inspection_game();
        assert_eq!(r.r1[(0, 1)], 5.0);
        assert_eq!(r.r2[(0, 0)], -3.0);
        assert_eq!((r.span_of(0), r.span_of(1), r.span()), (5.0, 8.0, 8.0));
    }

    #[test]
    fn inspection_embedding() {
        let mg = inspection_mg(0.3).unwrap();
        let r1: Vec<f64> =
            (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).map(|(a, b)| mg.reward(0, a, b)[0]).collect();
        assert_eq!(r1, vec![0.0, 1.0, 0.6, 0.6]);
        assert_eq!(mg.reward(0, 1, 1)[1], 1.0);
        assert_eq!(mg.transition_row(0, 1, 0), &[(0, 1.0)]);
    }

    #[test]
    fn random_mg_properties() {
        let a = random_mg(4, (2, 3), 0.5, 17).unwrap();
        let b = random_mg(4, (2, 3), 0.5, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_mg(4, (2, 3), 0.5, 18).unwrap());
        for s in 0..4 {
            for x in 0..2 {
                for y in 0..3 {
                    assert!(a.transition_dense(s, x, y).iter().all(|&p| p >= 0.01 / 4.0 - 1e-15));
                }
            }
        }
        let one = random_mg(1, (2, 2), 0.5, 3).unwrap();
        assert!((0..2).all(|x| (0..2).all(|y| one.transition_row(0, x, y) == [(0, 1.0)])));
    }

    #[test]
    fn corner_infeasible_move() {
        let spec = GridworldSpec::default();
        let mut row = spec.agent_step(0, 0, 0);
        row.sort_by_key(|e| e.0);
        assert_eq!(row.len(), 3);
        assert_eq!(row.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1, 5]);
        assert!(row.iter().all(|e| (e.1 - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn sticky_cooperation_and_absorbing_defection() {
        let spec = GridworldSpec::default();
        let c = spec.coop_zone;
        // up from the corner is feasible; stay keeps everything in place
        let up = spec.agent_step(1, c, 0);
        let mass = |cell: usize| up.iter().filter(|e| e.0 == cell).map(|e| e.1).sum::<f64>();
        assert_eq!(up.len(), 2);
        assert!((mass(c) - 0.7).abs() < 1e-15 && (mass(c - GRID) - 0.3).abs() < 1e-15);
        assert_eq!(spec.agent_step(1, c, 4), vec![(c, 1.0)]);
        for a in 0..5 {
            assert_eq!(spec.agent_step(0, spec.defect_zone[0], a), vec![(spec.defect_zone[0], 1.0)]);
        }
    }

    // Independent interpreter over zone labels.
    fn label(cell: usize) -> &'static str {
        match cell {
            4 => "d0",
            20 => "d1",
            24 => "coop",
            _ => "blank",
        }
    }

    fn reference_reward(agent: usize, pos: [usize; 2]) -> f64 {
        let own = if agent == 0 { "d0" } else { "d1" };
        let theirs = if agent == 0 { "d1" } else { "d0" };
        match (label(pos[agent]), label(pos[1 - agent])) {
            ("coop", "coop") => 2.0,
            ("coop", o) if o == theirs => 0.5,
            ("coop", _) => 1.0,
            (m, "coop") if m == own => 3.0,
            _ => 0.0,
        }
    }

    #[test]
    fn gridworld_tables() {
        let mg = gridworld_mg(0.9).unwrap();
        assert_eq!(mg.n_states(), 625);
        let spec = GridworldSpec::default();
        for s in 0..625 {
            let pos = grid_positions(s);
            for i in 0..2 {
                assert_eq!(mg.reward(s, 2, 3)[i], reference_reward(i, pos) / 3.0, "state {s} agent {i}");
            }
            for a0 in 0..5 {
                for a1 in 0..5 {
                    let sum: f64 = mg.transition_row(s, a0, a1).iter().map(|e| e.1).sum();
                    assert!((sum - 1.0).abs() <= 1e-12);
                    if pos[0] == spec.defect_zone[0] {
                        assert!(mg.transition_row(s, a0, a1).iter().all(|&(t, _)| grid_positions(t)[0] == pos[0]));
                    }
                }
            }
        }
        let cc = grid_state(24, 24);
        assert_eq!(mg.reward(cc, 0, 0), [2.0 / 3.0, 2.0 / 3.0]);
        let dc = grid_state(4, 24);
        assert_eq!(mg.reward(dc, 1, 1), [1.0, 0.5 / 3.0]);
        assert_eq!(mg.rho0()[0], 1.0);
    }
}
