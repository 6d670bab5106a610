//! Tabular two-player discounted Markov games, critic tables, the Bellman
//! evaluation and optimality operators, value iteration, and the analytic
//! bounds on critic iterates.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RqeError};
use crate::normal_form::{adversary_closed_form, adversary_response, inner_descent, JointProfile, PayoffPair};
use crate::optim::{pga_maximize, pgd_minimize};
use crate::regularizers::{operating_floor, policy_floor, raw, DKind, NuKind, RiskProfile};
use crate::simplex::{project_blocks, BlockLayout, SimplexVector};
use crate::solver::{solve_flat, SolveMode, Workspace, DEFAULT_ETA};

const ROW_TOL: f64 = 1e-12;
pub const FORMAT_NAME: &str = "rqe-markov-game";
pub const FORMAT_VERSION: u32 = 1;

/// A finite two-player discounted Markov game with rewards in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    n_states: usize,
    n_actions: (usize, usize),
    reward: Vec<[f64; 2]>,
    transition: Vec<Vec<(usize, f64)>>,
    gamma: f64,
    rho0: SimplexVector,
}

impl MarkovGame {
    /// `reward` and `transition` are indexed by `(s * n1 + a1) * n2 + a2`;
    /// transition rows are sparse `(next_state, probability)` lists.
    pub fn new(
        n_states: usize,
        n_actions: (usize, usize),
        reward: Vec<[f64; 2]>,
        transition: Vec<Vec<(usize, f64)>>,
        gamma: f64,
        rho0: SimplexVector,
    ) -> Result<Self> {
        let (n1, n2) = n_actions;
        if n_states == 0 || n1 == 0 || n2 == 0 {
            return Err(RqeError::InvalidInput("empty state or action set".into()));
        }
        let rows = n_states * n1 * n2;
        if reward.len() != rows || transition.len() != rows {
            return Err(RqeError::InvalidInput(format!(
                "expected {rows} reward and transition rows, got {} and {}",
                reward.len(),
                transition.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(RqeError::Config(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if rho0.len() != n_states {
            return Err(RqeError::InvalidInput("initial distribution has wrong length".into()));
        }
        for (k, r) in reward.iter().enumerate() {
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(RqeError::InvalidInput(format!("reward row {k} outside [0, 1]: {r:?}")));
            }
        }
        for (k, row) in transition.iter().enumerate() {
            let mut sum = 0.0;
            for &(s, p) in row {
                if s >= n_states || !(p >= 0.0) || !p.is_finite() {
                    return Err(RqeError::InvalidInput(format!("bad transition entry ({s}, {p}) in row {k}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(RqeError::InvalidInput(format!("transition row {k} sums to {sum}")));
            }
        }
        Ok(Self { n_states, n_actions, reward, transition, gamma, rho0 })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> (usize, usize) {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho0(&self) -> &SimplexVector {
        &self.rho0
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, self.reward.clone(), self.transition.clone(), gamma, self.rho0.clone())
    }

    #[inline]
    pub fn index(&self, s: usize, a1: usize, a2: usize) -> usize {
        (s * self.n_actions.0 + a1) * self.n_actions.1 + a2
    }

    #[inline]
    pub fn reward(&self, s: usize, a1: usize, a2: usize) -> [f64; 2] {
        self.reward[self.index(s, a1, a2)]
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a1: usize, a2: usize) -> &[(usize, f64)] {
        &self.transition[self.index(s, a1, a2)]
    }

    pub fn transition_dense(&self, s: usize, a1: usize, a2: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        for &(t, p) in self.transition_row(s, a1, a2) {
            v[t] += p;
        }
        v
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, rng: &mut R, s: usize, a1: usize, a2: usize) -> usize {
        let row = self.transition_row(s, a1, a2);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(t, p) in row {
            acc += p;
            if u < acc {
                return t;
            }
        }
        row.iter().rev().find(|(_, p)| *p > 0.0).map_or(row[0].0, |e| e.0)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&MarkovGameFile::from(self)).map_err(|e| RqeError::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MarkovGameFile = serde_json::from_str(text).map_err(|e| RqeError::Serialization(e.to_string()))?;
        file.try_into()
    }
}

/// Versioned on-disk form with dense nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovGameFile {
    pub format: String,
    pub version: u32,
    pub n_states: usize,
    pub n_actions: [usize; 2],
    pub gamma: f64,
    pub rho0: Vec<f64>,
    /// reward[s][a1][a2] = [r1, r2]
    pub reward: Vec<Vec<Vec<[f64; 2]>>>,
    /// transition[s][a1][a2][s']
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
}

impl From<&MarkovGame> for MarkovGameFile {
    fn from(mg: &MarkovGame) -> Self {
        let (n1, n2) = mg.n_actions;
        fn grid<T>(dims: (usize, usize, usize), f: impl Fn(usize, usize, usize) -> T) -> Vec<Vec<Vec<T>>> {
            (0..dims.0).map(|s| (0..dims.1).map(|a| (0..dims.2).map(|b| f(s, a, b)).collect()).collect()).collect()
        }
        let dims = (mg.n_states, n1, n2);
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            n_states: mg.n_states,
            n_actions: [n1, n2],
            gamma: mg.gamma,
            rho0: mg.rho0.as_slice().to_vec(),
            reward: grid(dims, |s, a, b| mg.reward(s, a, b)),
            transition: grid(dims, |s, a, b| mg.transition_dense(s, a, b)),
        }
    }
}

impl TryFrom<MarkovGameFile> for MarkovGame {
    type Error = RqeError;
    fn try_from(f: MarkovGameFile) -> Result<Self> {
        if f.format != FORMAT_NAME {
            return Err(RqeError::Serialization(format!("unknown format {:?}", f.format)));
        }
        if f.version != FORMAT_VERSION {
            return Err(RqeError::Serialization(format!("unsupported version {}", f.version)));
        }
        let [n1, n2] = f.n_actions;
        let shape_err = || RqeError::Serialization("nested array shape does not match header".into());
        if f.reward.len() != f.n_states || f.transition.len() != f.n_states {
            return Err(shape_err());
        }
        let mut reward = Vec::with_capacity(f.n_states * n1 * n2);
        let mut transition = Vec::with_capacity(f.n_states * n1 * n2);
        for s in 0..f.n_states {
            if f.reward[s].len() != n1 || f.transition[s].len() != n1 {
                return Err(shape_err());
            }
            for a in 0..n1 {
                if f.reward[s][a].len() != n2 || f.transition[s][a].len() != n2 {
                    return Err(shape_err());
                }
                for b in 0..n2 {
                    reward.push(f.reward[s][a][b]);
                    let row = &f.transition[s][a][b];
                    if row.len() != f.n_states {
                        return Err(shape_err());
                    }
                    transition.push(row.iter().enumerate().filter(|(_, &p)| p != 0.0).map(|(t, &p)| (t, p)).collect());
                }
            }
        }
        MarkovGame::new(f.n_states, (n1, n2), reward, transition, f.gamma, SimplexVector::new(f.rho0)?)
    }
}

/// Critic tables for both players, indexed like the game's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QPair {
    n_states: usize,
    n_actions: (usize, usize),
    pub q: [Vec<f64>; 2],
}

impl QPair {
    pub fn zeros(n_states: usize, n_actions: (usize, usize)) -> Self {
        let n = n_states * n_actions.0 * n_actions.1;
        Self { n_states, n_actions, q: [vec![0.0; n], vec![0.0; n]] }
    }

    pub fn for_game(mg: &MarkovGame) -> Self {
        Self::zeros(mg.n_states, mg.n_actions)
    }

    pub fn from_tables(n_states: usize, n_actions: (usize, usize), q1: Vec<f64>, q2: Vec<f64>) -> Result<Self> {
        let n = n_states * n_actions.0 * n_actions.1;
        if q1.len() != n || q2.len() != n {
            return Err(RqeError::InvalidInput(format!("critic tables must have {n} entries")));
        }
        if q1.iter().chain(&q2).any(|v| !v.is_finite()) {
            return Err(RqeError::InvalidInput("non-finite critic entry".into()));
        }
        Ok(Self { n_states, n_actions, q: [q1, q2] })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> (usize, usize) {
        self.n_actions
    }

    #[inline]
    pub fn index(&self, s: usize, a1: usize, a2: usize) -> usize {
        (s * self.n_actions.0 + a1) * self.n_actions.1 + a2
    }

    #[inline]
    pub fn get(&self, i: usize, s: usize, a1: usize, a2: usize) -> f64 {
        self.q[i][self.index(s, a1, a2)]
    }

    pub fn set(&mut self, i: usize, s: usize, a1: usize, a2: usize, v: f64) {
        let k = self.index(s, a1, a2);
        self.q[i][k] = v;
    }

    pub fn max_norm(&self) -> f64 {
        self.q.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max over players of (max − min) across all states and joint actions.
    pub fn span(&self) -> f64 {
        self.q
            .iter()
            .map(|t| {
                let (lo, hi) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    pub fn max_diff(&self, other: &QPair) -> f64 {
        self.q.iter().zip(&other.q).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max)
    }

    /// (1 − α) self + α other.
    pub fn relax_towards(&mut self, other: &QPair, alpha: f64) {
        for i in 0..2 {
            for (a, b) in self.q[i].iter_mut().zip(&other.q[i]) {
                *a = (1.0 - alpha) * *a + alpha * b;
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> QPair {
        QPair {
            n_states: self.n_states,
            n_actions: self.n_actions,
            q: [self.q[0].iter().map(|&v| f(v)).collect(), self.q[1].iter().map(|&v| f(v)).collect()],
        }
    }
}

/// Per-state joint profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub states: Vec<JointProfile>,
}

impl PolicyTable {
    pub fn uniform(n_states: usize, n_actions: (usize, usize)) -> Self {
        Self { states: vec![JointProfile::uniform(n_actions.0, n_actions.1); n_states] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// max over states of ||z(s) − z'(s)||₂.
    pub fn max_distance(&self, other: &PolicyTable) -> f64 {
        self.states.iter().zip(&other.states).map(|(a, b)| a.distance(b)).fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.states.iter().map(|z| z.min_entry()).fold(f64::INFINITY, f64::min)
    }
}

/// Operating floor for stage games whose payoffs span at most 1/(1 − γ).
pub fn markov_floor(mg: &MarkovGame, profile: &RiskProfile) -> f64 {
    operating_floor(&policy_floor(profile, 1.0 / (1.0 - mg.gamma), mg.n_actions))
}

/// Payoffs (−Q₁(s, ·), −Q₂(s, ·)).
pub fn stage_game(q: &QPair, s: usize) -> PayoffPair {
    let (n1, n2) = q.n_actions;
    PayoffPair {
        r1: DMatrix::from_fn(n1, n2, |a, b| -q.get(0, s, a, b)),
        r2: DMatrix::from_fn(n1, n2, |a, b| -q.get(1, s, a, b)),
    }
}

/// J_i at state `s` for the stage game −Q(s, ·) and flattened profile `z`.
pub fn stage_value(i: usize, q: &QPair, s: usize, z: &[f64], layout: &BlockLayout, profile: &RiskProfile) -> f64 {
    let rg = layout.ranges();
    let pi = &z[rg[i].clone()];
    let other = &z[rg[1 - i].clone()];
    let p = &z[rg[2 + i].clone()];
    let mut bil = 0.0;
    for (a, &x) in pi.iter().enumerate() {
        for (b, &y) in p.iter().enumerate() {
            let v = if i == 0 { q.get(0, s, a, b) } else { q.get(1, s, b, a) };
            bil += x * v * y;
        }
    }
    bil - raw::d_value(profile.kind.d_kind, p, other) / profile.tau[i]
        + profile.eps[i] * raw::nu_value(profile.kind.nu_kind, pi)
}

/// −r_i(s, a) + γ Σ_{s'} P(s'|s, a) V_i(s').
pub fn backup(mg: &MarkovGame, values: &[Vec<f64>; 2]) -> QPair {
    let mut out = QPair::for_game(mg);
    let (n1, n2) = mg.n_actions;
    for s in 0..mg.n_states {
        for a in 0..n1 {
            for b in 0..n2 {
                let k = mg.index(s, a, b);
                let r = mg.reward[k];
                for i in 0..2 {
                    let ev: f64 = mg.transition[k].iter().map(|&(t, p)| p * values[i][t]).sum();
                    out.q[i][k] = -r[i] + mg.gamma * ev;
                }
            }
        }
    }
    out
}

fn check_table(z: &PolicyTable, mg: &MarkovGame) -> Result<()> {
    if z.states.len() != mg.n_states {
        return Err(RqeError::InvalidInput("policy table has wrong number of states".into()));
    }
    for (s, zs) in z.states.iter().enumerate() {
        if zs.n_actions() != mg.n_actions {
            return Err(RqeError::InvalidInput(format!("profile at state {s} has wrong dimensions")));
        }
        if !(zs.min_entry() > 0.0) {
            return Err(RqeError::Domain { what: "policy table", index: s, value: zs.min_entry() });
        }
    }
    Ok(())
}

/// Per-state risk-adjusted values V_i(s) of a fixed policy table.
pub fn policy_values(q: &QPair, z: &PolicyTable, profile: &RiskProfile) -> [Vec<f64>; 2] {
    let (n1, n2) = q.n_actions;
    let layout = BlockLayout::for_actions(n1, n2);
    let mut v = [vec![0.0; q.n_states], vec![0.0; q.n_states]];
    for (s, zs) in z.states.iter().enumerate() {
        let flat = zs.to_flat();
        for i in 0..2 {
            v[i][s] = stage_value(i, q, s, &flat, &layout, profile);
        }
    }
    v
}

/// The evaluation operator T_z: one synchronous sweep.
pub fn bellman_evaluate(q: &QPair, z: &PolicyTable, mg: &MarkovGame, profile: &RiskProfile) -> Result<QPair> {
    check_table(z, mg)?;
    if q.n_states != mg.n_states || q.n_actions != mg.n_actions {
        return Err(RqeError::InvalidInput("critic does not match the game".into()));
    }
    Ok(backup(mg, &policy_values(q, z, profile)))
}

/// Settings of the per-state RQE solves inside the optimality operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Overrides [`markov_floor`].
    pub floor: Option<f64>,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { eta: DEFAULT_ETA, tol: 1e-9, max_iter: 1_000_000, floor: None }
    }
}

#[derive(Debug, Clone)]
pub struct OptimalityBackup {
    pub tq: QPair,
    pub policy: PolicyTable,
    pub values: [Vec<f64>; 2],
    pub max_stage_iterations: usize,
}

/// Solves every stage game −Q(s', ·) to `cfg.tol`, optionally warm-started.
pub fn solve_stages(
    q: &QPair,
    mg: &MarkovGame,
    profile: &RiskProfile,
    cfg: &StageConfig,
    warm: Option<&PolicyTable>,
) -> Result<(PolicyTable, [Vec<f64>; 2], usize)> {
    let (n1, n2) = mg.n_actions;
    let layout = BlockLayout::for_actions(n1, n2);
    let floor = cfg.floor.unwrap_or_else(|| markov_floor(mg, profile));
    let solved: Vec<Result<(Vec<f64>, [f64; 2], usize)>> = (0..mg.n_states)
        .into_par_iter()
        .map_init(Workspace::default, |ws, s| {
            let r = stage_game(q, s);
            let mut z = match warm {
                Some(w) => w.states[s].to_flat(),
                None => JointProfile::uniform(n1, n2).to_flat(),
            };
            let mut scratch = Vec::new();
            project_blocks(&mut z, &layout, floor, &mut scratch);
            let out = solve_flat(
                &r,
                profile,
                &layout,
                &mut z,
                cfg.eta,
                cfg.tol,
                cfg.max_iter,
                SolveMode::RiskAverse,
                floor,
                ws,
                |_, _, _| {},
            );
            if !out.converged {
                return Err(RqeError::NonConvergence {
                    what: format!("stage game at state {s}"),
                    iterations: out.iterations,
                    residual: out.step_norm,
                });
            }
            let v = [stage_value(0, q, s, &z, &layout, profile), stage_value(1, q, s, &z, &layout, profile)];
            Ok((z, v, out.iterations))
        })
        .collect();
    let mut states = Vec::with_capacity(mg.n_states);
    let mut values = [Vec::with_capacity(mg.n_states), Vec::with_capacity(mg.n_states)];
    let mut max_it = 0;
    for item in solved {
        let (z, v, it) = item?;
        states.push(JointProfile::from_flat(&layout, &z)?);
        values[0].push(v[0]);
        values[1].push(v[1]);
        max_it = max_it.max(it);
    }
    Ok((PolicyTable { states }, values, max_it))
}

/// The optimality operator T with configurable stage solves.
pub fn bellman_optimality_with(
    q: &QPair,
    mg: &MarkovGame,
    profile: &RiskProfile,
    cfg: &StageConfig,
    warm: Option<&PolicyTable>,
) -> Result<OptimalityBackup> {
    if q.n_states != mg.n_states || q.n_actions != mg.n_actions {
        return Err(RqeError::InvalidInput("critic does not match the game".into()));
    }
    let (policy, values, max_stage_iterations) = solve_stages(q, mg, profile, cfg, warm)?;
    Ok(OptimalityBackup { tq: backup(mg, &values), policy, values, max_stage_iterations })
}

/// T Q together with the per-state stage equilibria.
pub fn bellman_optimality(
    q: &QPair,
    mg: &MarkovGame,
    profile: &RiskProfile,
    stage_tol: f64,
) -> Result<(QPair, PolicyTable)> {
    let cfg = StageConfig { tol: stage_tol, ..Default::default() };
    let b = bellman_optimality_with(q, mg, profile, &cfg, None)?;
    Ok((b.tq, b.policy))
}

/// Relaxation weights α_t of Q ← (1 − α_t) Q + α_t T Q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Relaxation {
    Constant {
        alpha: f64,
    },
    /// α_t = alpha / (t + h), capped at 1.
    Harmonic {
        alpha: f64,
        h: f64,
    },
}

impl Relaxation {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Relaxation::Constant { alpha } => alpha,
            Relaxation::Harmonic { alpha, h } => (alpha / (t as f64 + h)).min(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Relaxation::Constant { alpha } => alpha > 0.0 && alpha <= 1.0,
            Relaxation::Harmonic { alpha, h } => alpha > 0.0 && h > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(RqeError::Config(format!("invalid relaxation schedule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueIterationOptions {
    pub relaxation: Relaxation,
    pub tol: f64,
    pub max_sweeps: usize,
    pub stage: StageConfig,
}

impl ValueIterationOptions {
    /// Plain iteration of T with stage tolerance tol/10.
    pub fn new(tol: f64) -> Self {
        Self {
            relaxation: Relaxation::Constant { alpha: 1.0 },
            tol,
            max_sweeps: 10_000,
            stage: StageConfig { tol: tol / 10.0, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    pub residual: f64,
    pub q_max_norm: f64,
    pub q_span: f64,
    pub max_stage_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ValueIterationReport {
    pub q: QPair,
    pub policy: PolicyTable,
    pub sweeps: usize,
    pub residual: f64,
    /// ||T Q − Q||_max at the returned Q.
    pub fixed_point_residual: f64,
    pub history: Vec<SweepRecord>,
}

/// Q ← (1 − α_t) Q + α_t T Q from Q = 0 until successive iterates differ by
/// at most `tol`; the returned policy is the stage equilibrium at the final Q.
pub fn value_iteration(
    mg: &MarkovGame,
    profile: &RiskProfile,
    opts: &ValueIterationOptions,
) -> Result<ValueIterationReport> {
    opts.relaxation.validate()?;
    if !(opts.tol > 0.0) {
        return Err(RqeError::Config("tol must be positive".into()));
    }
    let mut q = QPair::for_game(mg);
    let mut warm: Option<PolicyTable> = None;
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    for t in 0..opts.max_sweeps {
        let b = bellman_optimality_with(&q, mg, profile, &opts.stage, warm.as_ref())?;
        let mut next = q.clone();
        next.relax_towards(&b.tq, opts.relaxation.at(t));
        residual = next.max_diff(&q);
        q = next;
        warm = Some(b.policy);
        history.push(SweepRecord {
            sweep: t + 1,
            residual,
            q_max_norm: q.max_norm(),
            q_span: q.span(),
            max_stage_iterations: b.max_stage_iterations,
        });
        if residual <= opts.tol {
            let fin = bellman_optimality_with(&q, mg, profile, &opts.stage, warm.as_ref())?;
            return Ok(ValueIterationReport {
                fixed_point_residual: fin.tq.max_diff(&q),
                q,
                policy: fin.policy,
                sweeps: t + 1,
                residual,
                history,
            });
        }
    }
    Err(RqeError::NonConvergence { what: "value iteration".into(), iterations: opts.max_sweeps, residual })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QBounds {
    pub q_max: f64,
    pub q_span: f64,
    pub lipschitz_d: f64,
    pub lipschitz_nu: f64,
}

fn floored_vertex(n: usize, k: usize, floor: f64) -> Vec<f64> {
    let mut v = vec![floor; n];
    v[k] = 1.0 - floor * (n - 1) as f64;
    v
}

/// Largest gradient norm of ν over the vertices of the floored simplex.
pub fn lipschitz_nu(kind: NuKind, n: usize, floor: f64) -> f64 {
    let v = floored_vertex(n, 0, floor);
    v.iter().map(|&x| raw::nu_grad_entry(kind, x).powi(2)).sum::<f64>().sqrt()
}

/// Largest norm of the joint gradient (∇_p D, ∇_π D) over pairs of floored
/// vertices.
pub fn lipschitz_d(kind: DKind, n: usize, floor: f64) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..n.min(2) {
        let p = floored_vertex(n, j, floor);
        let pi = floored_vertex(n, 0, floor);
        let sq: f64 = p
            .iter()
            .zip(&pi)
            .map(|(&a, &b)| raw::d_grad_p_entry(kind, a, b).powi(2) + raw::d_grad_pi_entry(kind, a, b).powi(2))
            .sum();
        best = best.max(sq.sqrt());
    }
    best
}

/// Analytic bounds on the span and max-norm of critic iterates started at
/// zero, with Lipschitz constants taken on the simplex floored at `floor`.
pub fn q_bounds(mg: &MarkovGame, profile: &RiskProfile, floor: f64) -> QBounds {
    let g = mg.gamma;
    let (n1, n2) = mg.n_actions;
    let nu = profile.kind.nu_kind;
    let l_nu = lipschitz_nu(nu, n1, floor).max(lipschitz_nu(nu, n2, floor));
    let l_d = lipschitz_d(profile.kind.d_kind, n1, floor).max(lipschitz_d(profile.kind.d_kind, n2, floor));
    let nu_min_abs = [n1, n2]
        .iter()
        .map(|&n| {
            let n = n as f64;
            match nu {
                NuKind::NegativeEntropy => n.ln(),
                NuKind::LogBarrier => n * n.ln(),
            }
        })
        .fold(0.0, f64::max);
    let s2 = std::f64::consts::SQRT_2;
    let tau_min = profile.tau_min();
    let eps_max = profile.eps_max();
    QBounds {
        q_span: (1.0 + g * (2.0 * s2 * l_d / tau_min + s2 * eps_max * l_nu)) / (1.0 - g),
        q_max: 1.0 / (1.0 - g) + g / (1.0 - g) * ((2.0 * s2 * l_d) / tau_min + eps_max * (nu_min_abs + s2 * l_nu)),
        lipschitz_d: l_d,
        lipschitz_nu: l_nu,
    }
}

const MINIMAX_TOL: f64 = 1e-10;
const MINIMAX_MAX_ITER: usize = 200_000;

fn nu_as_penalty(kind: NuKind) -> DKind {
    // Σπ log π = KL(π, 1) and −Σ log π = reverse KL(π, 1)
    match kind {
        NuKind::NegativeEntropy => DKind::Kl,
        NuKind::LogBarrier => DKind::ReverseKl,
    }
}

/// min over π_i of max over p_i, and max over p_i of min over π_i, of player
/// i's stage objective at state `s` with the opponent fixed at `pi_other`.
pub fn minimax_check(
    q: &QPair,
    s: usize,
    player: usize,
    pi_other: &SimplexVector,
    profile: &RiskProfile,
    floor: f64,
) -> Result<(f64, f64)> {
    let (n1, n2) = q.n_actions;
    let (n_own, n_other) = if player == 0 { (n1, n2) } else { (n2, n1) };
    if pi_other.len() != n_other || player > 1 || s >= q.n_states {
        return Err(RqeError::InvalidInput("minimax arguments do not match the critic".into()));
    }
    let r = stage_game(q, s);
    let other = pi_other.as_slice();
    let eps = profile.eps[player];
    let tau = profile.tau[player];
    let nu = profile.kind.nu_kind;
    let dk = profile.kind.d_kind;
    let m = |a: usize, b: usize| -r.own(player, a, b);
    let mut err = None;

    // minimax: f(π) = max_p J is convex with gradient M p*(π) + ε∇ν(π)
    let outer = pgd_minimize(
        vec![1.0 / n_own as f64; n_own],
        floor,
        1.0,
        MINIMAX_TOL,
        MINIMAX_MAX_ITER,
        "minimax outer",
        |pi, g| match adversary_response(player, pi, other, &r, profile, floor) {
            Ok(resp) => {
                for a in 0..n_own {
                    let mp: f64 = (0..n_other).map(|b| m(a, b) * resp.p[b]).sum();
                    g[a] = mp + eps * raw::nu_grad_entry(nu, pi[a]);
                }
            }
            Err(e) => {
                err.get_or_insert(e);
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        },
    )?;
    if let Some(e) = err.take() {
        return Err(e);
    }
    let minimax = adversary_response(player, &outer.x, other, &r, profile, floor)?.value;

    // maximin: g(p) = −D(p, π')/τ + min_π [πᵀMp + εν(π)] is concave
    let ones = vec![1.0; n_own];
    let pen = nu_as_penalty(nu);
    let best_pi = |p: &[f64]| -> Result<Vec<f64>> {
        let c: Vec<f64> = (0..n_own).map(|a| (0..n_other).map(|b| m(a, b) * p[b]).sum()).collect();
        let mut x = adversary_closed_form(pen, &c, &ones, 1.0 / eps);
        let mut scratch = Vec::new();
        crate::simplex::project_in_place(&mut x, floor, &mut scratch);
        Ok(inner_descent(&c, &ones, pen, 1.0 / eps, floor, x)?.0)
    };
    let outer_p =
        pga_maximize(
            other.to_vec(),
            floor,
            1.0,
            MINIMAX_TOL,
            MINIMAX_MAX_ITER,
            "maximin outer",
            |p, g| match best_pi(p) {
                Ok(pi) => {
                    for b in 0..n_other {
                        let mp: f64 = (0..n_own).map(|a| m(a, b) * pi[a]).sum();
                        g[b] = mp - raw::d_grad_p_entry(dk, p[b], other[b]) / tau;
                    }
                }
                Err(e) => {
                    err.get_or_insert(e);
                    g.iter_mut().for_each(|v| *v = 0.0);
                }
            },
        )?;
    if let Some(e) = err.take() {
        return Err(e);
    }
    let p = outer_p.x;
    let pi = best_pi(&p)?;
    let mut bil = 0.0;
    for a in 0..n_own {
        for b in 0..n_other {
            bil += pi[a] * m(a, b) * p[b];
        }
    }
    let maximin = bil - raw::d_value(dk, &p, other) / tau + eps * raw::nu_value(nu, &pi);
    Ok((minimax, maximin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::RegularizerKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_reward_mg(n_states: usize, gamma: f64) -> MarkovGame {
        let n = n_states * 4;
        let row: Vec<(usize, f64)> = (0..n_states).map(|t| (t, 1.0 / n_states as f64)).collect();
        MarkovGame::new(n_states, (2, 2), vec![[0.0, 0.0]; n], vec![row; n], gamma, SimplexVector::uniform(n_states))
            .unwrap()
    }

    fn ne(eps: f64, tau: f64) -> RiskProfile {
        RiskProfile::symmetric(tau, eps, RegularizerKind::NEG_ENTROPY_REVERSE_KL).unwrap()
    }

    #[test]
    fn validation() {
        let bad = MarkovGame::new(1, (1, 1), vec![[1.5, 0.0]], vec![vec![(0, 1.0)]], 0.5, SimplexVector::uniform(1));
        assert!(bad.is_err());
        let bad = MarkovGame::new(1, (1, 1), vec![[0.5, 0.0]], vec![vec![(0, 0.9)]], 0.5, SimplexVector::uniform(1));
        assert!(bad.is_err());
        let bad = MarkovGame::new(1, (1, 1), vec![[0.5, 0.0]], vec![vec![(0, 1.0)]], 1.0, SimplexVector::uniform(1));
        assert!(matches!(bad, Err(RqeError::Config(_))));
    }

    #[test]
    fn stage_game_negates() {
        let mut q = QPair::zeros(2, (2, 3));
        assert_eq!(stage_game(&q, 1), PayoffPair::zeros(2, 3));
        q.q[0].iter_mut().for_each(|v| *v = 1.5);
        let r = stage_game(&q, 0);
        assert!(r.r1.iter().all(|&v| v == -1.5));
        q.set(1, 1, 1, 2, 0.25);
        assert_eq!(stage_game(&q, 1).r2[(1, 2)], -0.25);
    }

    #[test]
    fn evaluation_on_zero_reward_game() {
        let mg = zero_reward_mg(3, 0.9);
        let p = ne(0.2, 2.0);
        let z = PolicyTable::uniform(3, (2, 2));
        let c = 0.7;
        let q = QPair::zeros(3, (2, 2)).map(|_| c);
        let out = bellman_evaluate(&q, &z, &mg, &p).unwrap();
        let expect = 0.9 * (c - 0.2 * 2f64.ln());
        assert!(out.q.iter().flatten().all(|v| (v - expect).abs() < 1e-14));

        // T_z(Q + c) = T_z Q + γc
        let shifted = bellman_evaluate(&q.map(|v| v + 2.0), &z, &mg, &p).unwrap();
        assert!(shifted.q.iter().flatten().all(|v| (v - expect - 1.8).abs() < 1e-13));

        // scalar recursion c ← γ(c − ε log 2) has fixed point −γ ε log 2/(1 − γ)
        let fixed = -0.9 * 0.2 * 2f64.ln() / 0.1;
        assert!((fixed + 1.247665).abs() < 1e-6);
        let mut it = QPair::zeros(3, (2, 2));
        for _ in 0..400 {
            it = bellman_evaluate(&it, &z, &mg, &p).unwrap();
        }
        assert!(it.q.iter().flatten().all(|v| (v - fixed).abs() < 1e-10));
    }

    #[test]
    fn myopic_backup_is_negated_reward() {
        let mg = crate::environments::random_mg(3, (2, 3), 0.0, 4).unwrap();
        let p = ne(0.2, 5.0);
        let q = QPair::for_game(&mg).map(|_| 3.0);
        let out = bellman_evaluate(&q, &PolicyTable::uniform(3, (2, 3)), &mg, &p).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                for b in 0..3 {
                    assert_eq!(out.get(0, s, a, b), -mg.reward(s, a, b)[0]);
                }
            }
        }
        let (tq, pol) = bellman_optimality(&q, &mg, &p, 1e-10).unwrap();
        assert!(tq.max_diff(&out) == 0.0);
        assert_eq!(pol.len(), 3);
    }

    #[test]
    fn optimality_on_zero_reward_game() {
        let mg = zero_reward_mg(2, 0.9);
        let p = ne(0.2, 5.0);
        let (tq, pol) = bellman_optimality(&QPair::for_game(&mg), &mg, &p, 1e-11).unwrap();
        let expect = 0.9 * (-0.2 * 2f64.ln());
        assert!(tq.q.iter().flatten().all(|v| (v - expect).abs() < 1e-9));
        assert!(pol.max_distance(&PolicyTable::uniform(2, (2, 2))) < 1e-9);

        let rep = value_iteration(&mg, &p, &ValueIterationOptions::new(1e-9)).unwrap();
        let fixed = -0.9 * 0.2 * 2f64.ln() / 0.1;
        assert!(rep.q.q.iter().flatten().all(|v| (v - fixed).abs() < 1e-7));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mg = crate::environments::random_mg(4, (2, 3), 0.37, 9).unwrap();
        let text = mg.to_json().unwrap();
        let back = MarkovGame::from_json(&text).unwrap();
        assert_eq!(mg, back);
        assert!(text.contains("\"version\":1"));
        let tampered = text.replace("rqe-markov-game", "other");
        assert!(MarkovGame::from_json(&tampered).is_err());
    }

    #[test]
    fn q_bound_formulas() {
        let mg = crate::environments::random_mg(2, (2, 2), 0.0, 1).unwrap();
        let p = RiskProfile::symmetric(5.0, 0.2, RegularizerKind::LOG_BARRIER_KL).unwrap();
        let b = q_bounds(&mg, &p, 1e-3);
        assert_eq!((b.q_max, b.q_span), (1.0, 1.0));
        let mg = mg.with_gamma(0.9).unwrap();
        let lo = q_bounds(&mg, &p, 1e-3);
        let hi = q_bounds(&mg, &p, 1e-2);
        assert!(lo.q_max.is_finite() && lo.q_span.is_finite());
        assert!(hi.q_max < lo.q_max && hi.q_span < lo.q_span);
        assert!(hi.lipschitz_d < lo.lipschitz_d && hi.lipschitz_nu < lo.lipschitz_nu);
    }

    #[test]
    fn minimax_zero_critic() {
        let q = QPair::zeros(1, (3, 2));
        let p = ne(0.3, 2.0);
        let (a, b) = minimax_check(&q, 0, 0, &SimplexVector::uniform(2), &p, 1e-8).unwrap();
        let expect = -0.3 * 3f64.ln();
        assert!((a - expect).abs() < 1e-8 && (b - expect).abs() < 1e-8, "{a} {b}");
    }

    #[test]
    fn minimax_equals_maximin_and_survives_negation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in [RegularizerKind::LOG_BARRIER_KL, RegularizerKind::NEG_ENTROPY_REVERSE_KL] {
            let p = RiskProfile::symmetric(2.0, 0.3, kind).unwrap();
            for _ in 0..5 {
                let q1: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let q2: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let q = QPair::from_tables(1, (2, 2), q1, q2).unwrap();
                let other = crate::simplex::sample_dirichlet(&mut rng, 2, 1.0, 0.05);
                for qq in [q.clone(), q.map(|v| -v)] {
                    for i in 0..2 {
                        let (a, b) = minimax_check(&qq, 0, i, &other, &p, 1e-6).unwrap();
                        assert!((a - b).abs() <= 1e-6, "{a} {b}");
                    }
                }
            }
        }
    }
}
