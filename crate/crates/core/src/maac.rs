//! Tabular multi-agent risk-averse actor-critic: per episode one actor step
//! on every state, K environment samples, empirical soft targets and an
//! averaged critic update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{actor_step_flat, mode_stage_value, FlatPolicy};
use crate::error::{Result, RqeError};
use crate::markov::{markov_floor, MarkovGame, PolicyTable, QPair};
use crate::regularizers::RiskProfile;
use crate::simplex::BlockLayout;
use crate::solver::SolveMode;
use crate::two_timescale::{Oracle, StepSchedule};

/// Where the environment actions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    /// a_i ~ π_{i,t}(·|s)
    OnPolicy,
    /// a_i ~ π^r_i(·|s) for a fixed interior reference table.
    OffPolicy(PolicyTable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMode {
    Averse,
    /// Unregularized gradient play with adversaries pinned to the opponents.
    Neutral,
}

impl RiskMode {
    pub fn solve_mode(self) -> SolveMode {
        match self {
            RiskMode::Averse => SolveMode::RiskAverse,
            RiskMode::Neutral => SolveMode::RiskNeutral,
        }
    }
}

/// First state of each episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStart {
    /// s_0 of episode t + 1 is s_K of episode t.
    Continue,
    /// Every episode starts from a fresh draw of ρ₀.
    Reset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaacConfig {
    pub sched: StepSchedule,
    pub samples_per_update: usize,
    pub n_episodes: usize,
    pub sampling: Sampling,
    pub risk: RiskMode,
    pub start: EpisodeStart,
    pub seed: u64,
    /// Overrides the default floor ([`markov_floor`], or 0 in neutral mode).
    pub floor: Option<f64>,
}

impl MaacConfig {
    pub fn new(sched: StepSchedule, samples_per_update: usize, n_episodes: usize, seed: u64) -> Self {
        Self {
            sched,
            samples_per_update,
            n_episodes,
            sampling: Sampling::OnPolicy,
            risk: RiskMode::Averse,
            start: EpisodeStart::Continue,
            seed,
            floor: None,
        }
    }

    pub fn validate(&self, mg: &MarkovGame) -> Result<()> {
        self.sched.validate()?;
        if self.samples_per_update == 0 {
            return Err(RqeError::Config("samples_per_update must be at least 1".into()));
        }
        if let Sampling::OffPolicy(reference) = &self.sampling {
            if reference.len() != mg.n_states() || reference.states.iter().any(|p| p.n_actions() != mg.n_actions()) {
                return Err(RqeError::Config("reference policy does not match the game".into()));
            }
            let min = reference
                .states
                .iter()
                .map(|p| p.pi(0).min_entry().min(p.pi(1).min_entry()))
                .fold(f64::INFINITY, f64::min);
            if !(min > 0.0) {
                return Err(RqeError::Config("reference policy must be interior".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub actions: [usize; 2],
    pub reward: [f64; 2],
    pub next_state: usize,
}

/// Contiguous samples of one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionBatch {
    rows: Vec<Transition>,
}

impl TransitionBatch {
    pub fn new(rows: Vec<Transition>) -> Result<Self> {
        for (k, w) in rows.windows(2).enumerate() {
            if w[0].next_state != w[1].state {
                return Err(RqeError::InvalidInput(format!(
                    "transition {} does not continue from transition {k}",
                    k + 1
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Transition] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn check(&self, q: &QPair) -> Result<()> {
        let (n1, n2) = q.n_actions();
        for (k, t) in self.rows.iter().enumerate() {
            if t.state >= q.n_states() || t.next_state >= q.n_states() || t.actions[0] >= n1 || t.actions[1] >= n2 {
                return Err(RqeError::InvalidInput(format!("transition {k} out of bounds")));
            }
        }
        Ok(())
    }
}

fn targets_flat(
    batch: &TransitionBatch,
    z_next: &FlatPolicy,
    q: &QPair,
    profile: &RiskProfile,
    gamma: f64,
    mode: SolveMode,
) -> Vec<[f64; 2]> {
    let layout: BlockLayout = z_next.layout;
    batch
        .rows
        .iter()
        .map(|t| {
            let zs = z_next.state(t.next_state);
            let mut out = [0.0; 2];
            for (i, o) in out.iter_mut().enumerate() {
                *o = -t.reward[i] + gamma * mode_stage_value(i, q, t.next_state, zs, &layout, profile, mode);
            }
            out
        })
        .collect()
}

/// q̂_{i,k} = −r_{i,k} + γ [π_iᵀ Q_i(s_{k+1}, ·) p_i − D_i/τ_i + ε_i ν_i] at
/// s_{k+1}, evaluated with the updated policies.
pub fn build_targets(
    batch: &TransitionBatch,
    z_next: &PolicyTable,
    q: &QPair,
    profile: &RiskProfile,
    gamma: f64,
) -> Result<Vec<[f64; 2]>> {
    batch.check(q)?;
    if z_next.len() != q.n_states() {
        return Err(RqeError::InvalidInput("policy table does not match the critic".into()));
    }
    for (s, p) in z_next.states.iter().enumerate() {
        if !(p.min_entry() > 0.0) {
            return Err(RqeError::Domain { what: "target policy", index: s, value: p.min_entry() });
        }
    }
    Ok(targets_flat(batch, &FlatPolicy::from_table(z_next), q, profile, gamma, SolveMode::RiskAverse))
}

fn critic_in_place(q: &mut QPair, batch: &TransitionBatch, targets: &[[f64; 2]], alpha: f64) {
    let k = batch.len() as f64;
    let old = q.clone();
    for (t, target) in batch.rows.iter().zip(targets) {
        let idx = old.index(t.state, t.actions[0], t.actions[1]);
        for i in 0..2 {
            q.q[i][idx] += alpha / k * (target[i] - old.q[i][idx]);
        }
    }
}

/// Q ← Q + α δ̂ with δ̂(s, a) = (1/K) Σ_k (q̂_k − Q_t(s_k, a_k)) 1[(s, a) = (s_k, a_k)].
pub fn critic_step(q: &QPair, batch: &TransitionBatch, targets: &[[f64; 2]], alpha: f64) -> Result<QPair> {
    if targets.len() != batch.len() || batch.is_empty() {
        return Err(RqeError::InvalidInput("need one target pair per transition".into()));
    }
    batch.check(q)?;
    let mut out = q.clone();
    critic_in_place(&mut out, batch, targets, alpha);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// max over states of ||z_t(·|s) − z*(·|s)||₂
    pub z_distance: Option<f64>,
    /// ||Q_t − Q*||_max
    pub q_distance: Option<f64>,
    /// Average of player 1's reward over the episode's samples.
    pub mean_reward: f64,
}

#[derive(Debug, Clone)]
pub struct MaacReport {
    pub q: QPair,
    pub policy: PolicyTable,
    pub episodes: Vec<EpisodeRecord>,
    pub max_q_norm: f64,
    pub max_q_span: f64,
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Generator for episode `episode`: the seed's ChaCha8 stream number `episode`.
pub fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

/// Runs the configured number of episodes from Q = 0 and uniform policies.
pub fn train(
    mg: &MarkovGame,
    profile: &RiskProfile,
    cfg: &MaacConfig,
    oracle: Option<Oracle<'_>>,
) -> Result<MaacReport> {
    cfg.validate(mg)?;
    profile.validate()?;
    let mode = cfg.risk.solve_mode();
    let floor = cfg.floor.unwrap_or(match cfg.risk {
        RiskMode::Averse => markov_floor(mg, profile),
        RiskMode::Neutral => 0.0,
    });
    let reference = match &cfg.sampling {
        Sampling::OnPolicy => None,
        Sampling::OffPolicy(r) => Some(FlatPolicy::from_table(r)),
    };
    let oracle_flat = oracle.map(|o| (o.q, FlatPolicy::from_table(o.policy)));
    let gamma = mg.gamma();
    let mut q = QPair::for_game(mg);
    let mut z = FlatPolicy::uniform(mg.n_states(), mg.n_actions());
    let mut rows = Vec::with_capacity(cfg.samples_per_update);
    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    let (mut max_q_norm, mut max_q_span) = (0.0f64, 0.0f64);
    let mut state = None;
    for t in 0..cfg.n_episodes {
        let mut rng = episode_rng(cfg.seed, t);
        let mut s = match (state, cfg.start) {
            (Some(s), EpisodeStart::Continue) => s,
            _ => sample_index(&mut rng, mg.rho0().as_slice()),
        };
        let behaviour = match &reference {
            Some(r) => r.clone(),
            None => z.clone(),
        };
        actor_step_flat(&mut z, &q, cfg.sched.beta_at(t), profile, floor, mode);

        rows.clear();
        let mut reward_sum = 0.0;
        for _ in 0..cfg.samples_per_update {
            let a0 = sample_index(&mut rng, behaviour.pi(s, 0));
            let a1 = sample_index(&mut rng, behaviour.pi(s, 1));
            let reward = mg.reward(s, a0, a1);
            let next = mg.sample_next(&mut rng, s, a0, a1);
            reward_sum += reward[0];
            rows.push(Transition { state: s, actions: [a0, a1], reward, next_state: next });
            s = next;
        }
        state = Some(s);
        let batch = TransitionBatch { rows: std::mem::take(&mut rows) };
        let targets = targets_flat(&batch, &z, &q, profile, gamma, mode);
        critic_in_place(&mut q, &batch, &targets, cfg.sched.alpha_at(t));
        rows = batch.rows;

        max_q_norm = max_q_norm.max(q.max_norm());
        max_q_span = max_q_span.max(q.span());
        episodes.push(EpisodeRecord {
            episode: t + 1,
            z_distance: oracle_flat.as_ref().map(|(_, zo)| z.max_distance(zo)),
            q_distance: oracle_flat.as_ref().map(|(qo, _)| q.max_diff(qo)),
            mean_reward: reward_sum / cfg.samples_per_update as f64,
        });
    }
    Ok(MaacReport { q, policy: z.to_table()?, episodes, max_q_norm, max_q_span })
}
