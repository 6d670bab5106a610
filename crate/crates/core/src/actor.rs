//! The per-state projected policy step shared by the deterministic
//! two-timescale iteration and the sample-based actor-critic.

use rayon::prelude::*;

use crate::error::{Result, RqeError};
use crate::markov::{stage_game, stage_value, PolicyTable, QPair};
use crate::normal_form::{gradient_into, risk_neutral_gradient_into, JointProfile};
use crate::regularizers::RiskProfile;
use crate::simplex::{l2_distance, project_blocks, project_in_place, BlockLayout};
use crate::solver::{preconditioned_step, SolveMode};

/// States above this count are stepped in parallel.
const PAR_STATES: usize = 64;

/// A policy table stored as one flat buffer, `layout.total()` entries per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatPolicy {
    pub layout: BlockLayout,
    pub data: Vec<f64>,
}

impl FlatPolicy {
    pub fn uniform(n_states: usize, n_actions: (usize, usize)) -> Self {
        Self::from_table(&PolicyTable::uniform(n_states, n_actions))
    }

    pub fn from_table(z: &PolicyTable) -> Self {
        let (n1, n2) = z.states.first().map_or((1, 1), |p| p.n_actions());
        let layout = BlockLayout::for_actions(n1, n2);
        let mut data = Vec::with_capacity(z.states.len() * layout.total());
        for p in &z.states {
            data.extend(p.to_flat());
        }
        Self { layout, data }
    }

    pub fn to_table(&self) -> Result<PolicyTable> {
        let states = self
            .data
            .chunks(self.layout.total())
            .map(|c| JointProfile::from_flat(&self.layout, c))
            .collect::<Result<_>>()?;
        Ok(PolicyTable { states })
    }

    pub fn n_states(&self) -> usize {
        self.data.len() / self.layout.total()
    }

    pub fn state(&self, s: usize) -> &[f64] {
        let w = self.layout.total();
        &self.data[s * w..(s + 1) * w]
    }

    /// Player i's own policy at state s.
    pub fn pi(&self, s: usize, i: usize) -> &[f64] {
        &self.state(s)[self.layout.range(i)]
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// max over states of the per-state Euclidean distance.
    pub fn max_distance(&self, other: &FlatPolicy) -> f64 {
        let w = self.layout.total();
        self.data.chunks(w).zip(other.data.chunks(w)).map(|(a, b)| l2_distance(a, b)).fold(0.0, f64::max)
    }
}

fn step_state(
    z: &mut [f64],
    layout: &BlockLayout,
    q: &QPair,
    s: usize,
    beta: f64,
    profile: &RiskProfile,
    floor: f64,
    mode: SolveMode,
) {
    let r = stage_game(q, s);
    let mut g = vec![0.0; z.len()];
    let mut next = vec![0.0; z.len()];
    let mut scratch = Vec::new();
    match mode {
        SolveMode::RiskAverse => {
            gradient_into(z, layout, &r, profile, &mut g);
            preconditioned_step(z, &g, &profile.lambda, layout, beta, &mut next);
            project_blocks(&mut next, layout, floor, &mut scratch);
        }
        SolveMode::RiskNeutral => {
            risk_neutral_gradient_into(z, layout, &r, &mut g);
            preconditioned_step(z, &g, &profile.lambda, layout, beta, &mut next);
            let rg = layout.ranges();
            for b in 0..2 {
                project_in_place(&mut next[rg[b].clone()], floor, &mut scratch);
            }
            let (head, tail) = next.split_at_mut(rg[2].start);
            tail[..rg[1].len()].copy_from_slice(&head[rg[1].clone()]);
            tail[rg[1].len()..].copy_from_slice(&head[rg[0].clone()]);
        }
    }
    z.copy_from_slice(&next);
}

/// z(·|s) ← Proj(z(·|s) − β Λ F(z(·|s); −Q(s, ·))) for every state.
pub fn actor_step_flat(z: &mut FlatPolicy, q: &QPair, beta: f64, profile: &RiskProfile, floor: f64, mode: SolveMode) {
    let layout = z.layout;
    let w = layout.total();
    if z.n_states() >= PAR_STATES {
        z.data
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(s, zs)| step_state(zs, &layout, q, s, beta, profile, floor, mode));
    } else {
        for (s, zs) in z.data.chunks_mut(w).enumerate() {
            step_state(zs, &layout, q, s, beta, profile, floor, mode);
        }
    }
}

/// One risk-averse actor step on a policy table.
pub fn actor_step(z: &PolicyTable, q: &QPair, beta: f64, profile: &RiskProfile, floor: f64) -> Result<PolicyTable> {
    if z.len() != q.n_states() || z.states.iter().any(|p| p.n_actions() != q.n_actions()) {
        return Err(RqeError::InvalidInput("policy table does not match the critic".into()));
    }
    let mut flat = FlatPolicy::from_table(z);
    actor_step_flat(&mut flat, q, beta, profile, floor, SolveMode::RiskAverse);
    flat.to_table()
}

/// Player i's stage value at s: the risk-adjusted objective, or the plain
/// bilinear value π_iᵀ Q_i π_{−i} in risk-neutral mode.
pub fn mode_stage_value(
    i: usize,
    q: &QPair,
    s: usize,
    zs: &[f64],
    layout: &BlockLayout,
    profile: &RiskProfile,
    mode: SolveMode,
) -> f64 {
    match mode {
        SolveMode::RiskAverse => stage_value(i, q, s, zs, layout, profile),
        SolveMode::RiskNeutral => {
            let rg = layout.ranges();
            let (p1, p2) = (&zs[rg[0].clone()], &zs[rg[1].clone()]);
            let mut v = 0.0;
            for (a, &x) in p1.iter().enumerate() {
                for (b, &y) in p2.iter().enumerate() {
                    v += x * q.get(i, s, a, b) * y;
                }
            }
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::{raw, RegularizerKind};

    #[test]
    fn zero_critic_keeps_uniform() {
        let p = RiskProfile::symmetric(2.0, 0.2, RegularizerKind::NEG_ENTROPY_REVERSE_KL).unwrap();
        let z = PolicyTable::uniform(3, (2, 3));
        let out = actor_step(&z, &QPair::zeros(3, (2, 3)), 0.3, &p, 1e-6).unwrap();
        assert!(out.max_distance(&z) < 1e-15);
        let frozen = actor_step(&z, &QPair::zeros(3, (2, 3)).map(|_| 0.7), 0.0, &p, 1e-6).unwrap();
        assert_eq!(frozen, z);
    }

    #[test]
    fn one_step_by_hand() {
        let p = RiskProfile::symmetric(5.0, 0.2, RegularizerKind::LOG_BARRIER_KL).unwrap();
        let q = QPair::from_tables(1, (2, 2), vec![0.1, -0.4, 0.3, 0.2], vec![-0.2, 0.5, 0.0, 0.6]).unwrap();
        let beta = 0.1;
        let out = actor_step(&PolicyTable::uniform(1, (2, 2)), &q, beta, &p, 1e-6).unwrap();

        // π_i ← Proj(π_i − β λ_i [Q_i(s,·) p_i + ε ∇ν(π_i)]) written out for 2 actions
        let h = 0.5;
        let q1 = |a: usize, b: usize| q.get(0, 0, a, b);
        let q2 = |a: usize, b: usize| q.get(1, 0, a, b);
        let nu = |x: f64| raw::nu_grad_entry(p.kind.nu_kind, x);
        let dp = |x: f64, y: f64| raw::d_grad_p_entry(p.kind.d_kind, x, y);
        let g_pi1 = [q1(0, 0) * h + q1(0, 1) * h + 0.2 * nu(h), q1(1, 0) * h + q1(1, 1) * h + 0.2 * nu(h)];
        let g_pi2 = [q2(0, 0) * h + q2(1, 0) * h + 0.2 * nu(h), q2(0, 1) * h + q2(1, 1) * h + 0.2 * nu(h)];
        let g_p1 = [-(q1(0, 0) * h + q1(1, 0) * h) + dp(h, h) / 5.0, -(q1(0, 1) * h + q1(1, 1) * h) + dp(h, h) / 5.0];
        let g_p2 = [-(q2(0, 0) * h + q2(0, 1) * h) + dp(h, h) / 5.0, -(q2(1, 0) * h + q2(1, 1) * h) + dp(h, h) / 5.0];
        // on two points the projection moves both entries by half the difference
        let proj = |g: [f64; 2]| {
            let d = beta * (g[0] - g[1]) / 2.0;
            [h - d, h + d]
        };
        let expect = [proj(g_pi1), proj(g_pi2), proj(g_p1), proj(g_p2)].concat();
        let got = out.states[0].to_flat();
        for k in 0..8 {
            assert!((got[k] - expect[k]).abs() < 1e-12, "{k}: {} vs {}", got[k], expect[k]);
        }
    }

    #[test]
    fn neutral_step_pins_adversaries() {
        let p = RiskProfile::symmetric(5.0, 0.2, RegularizerKind::LOG_BARRIER_KL).unwrap();
        let q = QPair::from_tables(1, (2, 3), vec![0.1, -0.4, 0.3, 0.2, 0.0, 0.9], vec![0.5; 6]).unwrap();
        let mut z = FlatPolicy::uniform(1, (2, 3));
        actor_step_flat(&mut z, &q, 0.2, &p, 0.0, SolveMode::RiskNeutral);
        let rg = z.layout.ranges();
        let zs = z.state(0);
        assert_eq!(&zs[rg[2].clone()], &zs[rg[1].clone()]);
        assert_eq!(&zs[rg[3].clone()], &zs[rg[0].clone()]);
    }
}
