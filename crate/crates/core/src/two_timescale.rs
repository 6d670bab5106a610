//! Deterministic two-timescale iteration: a fast projected policy step on
//! every stage game followed by a slow relaxed evaluation step on the critic.

use serde::{Deserialize, Serialize};

use crate::actor::{actor_step_flat, mode_stage_value, FlatPolicy};
use crate::error::{Result, RqeError};
use crate::markov::{backup, markov_floor, MarkovGame, PolicyTable, QPair};
use crate::regularizers::RiskProfile;
use crate::solver::SolveMode;

/// Rows kept at full resolution before decimation starts.
pub const FULL_ROWS: usize = 100_000;
pub const DECIMATION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Diminishing,
}

/// Critic step α_t and actor step β_t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub alpha: f64,
    pub beta: f64,
    /// Offset of the diminishing schedule; ignored for constant steps.
    pub h: u64,
}

#[derive(Deserialize)]
struct RawSchedule {
    kind: ScheduleKind,
    alpha: f64,
    beta: f64,
    #[serde(default = "default_h")]
    h: u64,
}

fn default_h() -> u64 {
    10
}

impl TryFrom<RawSchedule> for StepSchedule {
    type Error = RqeError;
    fn try_from(r: RawSchedule) -> Result<Self> {
        let s = StepSchedule { kind: r.kind, alpha: r.alpha, beta: r.beta, h: r.h };
        s.validate()?;
        Ok(s)
    }
}

impl StepSchedule {
    pub fn constant(alpha: f64, beta: f64) -> Result<Self> {
        let s = Self { kind: ScheduleKind::Constant, alpha, beta, h: 0 };
        s.validate()?;
        Ok(s)
    }

    /// α_t = alpha/(t + h), β_t = beta/(t + h).
    pub fn diminishing(alpha: f64, beta: f64, h: u64) -> Result<Self> {
        let s = Self { kind: ScheduleKind::Diminishing, alpha, beta, h };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(RqeError::Config(format!(
                "step sizes must be positive, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.alpha >= self.beta {
            return Err(RqeError::Config(format!(
                "critic step alpha={} must be below actor step beta={}",
                self.alpha, self.beta
            )));
        }
        if self.kind == ScheduleKind::Diminishing && self.h == 0 {
            return Err(RqeError::Config("diminishing schedule needs h >= 1".into()));
        }
        Ok(())
    }

    pub fn alpha_at(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.alpha,
            ScheduleKind::Diminishing => self.alpha / (t as f64 + self.h as f64),
        }
    }

    pub fn beta_at(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.beta,
            ScheduleKind::Diminishing => self.beta / (t as f64 + self.h as f64),
        }
    }

    /// Same schedule with critic step `alpha`.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let s = Self { alpha, ..*self };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimescaleRow {
    pub iter: usize,
    pub alpha_t: f64,
    pub beta_t: f64,
    /// ||T_{z_{t+1}} Q_t − Q_t||_max
    pub q_residual: f64,
    pub z_distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TimescaleReport {
    pub q: QPair,
    pub policy: PolicyTable,
    pub rows: Vec<TimescaleRow>,
    /// Largest ||Q_t||_max and span(Q_t) seen along the run.
    pub max_q_norm: f64,
    pub max_q_span: f64,
}

/// Oracle fixed point used for distance reporting.
#[derive(Debug, Clone, Copy)]
pub struct Oracle<'a> {
    pub q: &'a QPair,
    pub policy: &'a PolicyTable,
}

/// Whether row `t` (1-based) is kept: all of the first [`FULL_ROWS`], then
/// every [`DECIMATION`]-th.
pub fn keep_row(t: usize) -> bool {
    t <= FULL_ROWS || t % DECIMATION == 0
}

/// Runs `n_iter` iterations from Q = 0 and uniform policies.
pub fn run(
    mg: &MarkovGame,
    profile: &RiskProfile,
    sched: &StepSchedule,
    n_iter: usize,
    oracle: Option<Oracle<'_>>,
) -> Result<TimescaleReport> {
    run_with_floor(mg, profile, sched, n_iter, oracle, markov_floor(mg, profile))
}

pub fn run_with_floor(
    mg: &MarkovGame,
    profile: &RiskProfile,
    sched: &StepSchedule,
    n_iter: usize,
    oracle: Option<Oracle<'_>>,
    floor: f64,
) -> Result<TimescaleReport> {
    sched.validate()?;
    profile.validate()?;
    let n = mg.n_states();
    let oracle_flat = oracle.map(|o| FlatPolicy::from_table(o.policy));
    let mut q = QPair::for_game(mg);
    let mut z = FlatPolicy::uniform(n, mg.n_actions());
    let layout = z.layout;
    let mut rows = Vec::with_capacity(n_iter.min(FULL_ROWS + n_iter / DECIMATION + 1));
    let (mut max_q_norm, mut max_q_span) = (0.0f64, 0.0f64);
    for t in 0..n_iter {
        let (alpha, beta) = (sched.alpha_at(t), sched.beta_at(t));
        actor_step_flat(&mut z, &q, beta, profile, floor, SolveMode::RiskAverse);
        let min = z.min_entry();
        if !(min >= floor - 1e-12) {
            return Err(RqeError::Invariant(format!("policy left the floored simplex at iteration {t}: {min}")));
        }
        let mut v = [vec![0.0; n], vec![0.0; n]];
        for s in 0..n {
            for i in 0..2 {
                v[i][s] = mode_stage_value(i, &q, s, z.state(s), &layout, profile, SolveMode::RiskAverse);
            }
        }
        let tq = backup(mg, &v);
        let q_residual = tq.max_diff(&q);
        q.relax_towards(&tq, alpha);
        max_q_norm = max_q_norm.max(q.max_norm());
        max_q_span = max_q_span.max(q.span());
        if keep_row(t + 1) {
            rows.push(TimescaleRow {
                iter: t + 1,
                alpha_t: alpha,
                beta_t: beta,
                q_residual,
                z_distance: oracle_flat.as_ref().map(|o| z.max_distance(o)),
            });
        }
    }
    Ok(TimescaleReport { q, policy: z.to_table()?, rows, max_q_norm, max_q_span })
}
