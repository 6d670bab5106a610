use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rqe_core::markov::{markov_floor, q_bounds, stage_game, value_iteration, Relaxation, ValueIterationOptions};
use rqe_core::normal_form::{game_floor, rqe_gap_with_floor};
use rqe_core::solver::{lipschitz_probe, solve, SolveMode, SolveOptions};
use rqe_core::{
    certify, stats, train, EpisodeStart, JointProfile, MaacConfig, MarkovGame, Oracle, PolicyTable, QPair, RiskMode,
    RiskProfile, Sampling, ValueIterationReport,
};

use crate::config::{ExperimentConfig, Init, Kind, RiskChoice, SamplingChoice, StartChoice};
use crate::output::{Cell, Table};

/// Final metrics of one (variant, seed) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    pub metrics: Vec<(String, f64)>,
}

impl RunRecord {
    fn new(variant: impl Into<String>, seed: u64) -> Self {
        Self { variant: variant.into(), seed, metrics: Vec::new() }
    }

    fn put(&mut self, name: impl Into<String>, value: impl Into<f64>) -> &mut Self {
        self.metrics.push((name.into(), value.into()));
        self
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn tau_label(tau: f64) -> String {
    format!("tau_{tau}")
}

pub fn run_seed(kind: Kind, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunRecord>> {
    match kind {
        Kind::Certify => run_certify(cfg, seed, out),
        Kind::NormalFormDynamics => run_dynamics(cfg, seed, out),
        Kind::ValueIteration => run_value_iteration(cfg, seed, out),
        Kind::TwoTimescale => run_two_timescale(cfg, seed, out),
        Kind::Maac => run_maac(cfg, seed, out),
        Kind::LipschitzProbe => run_lipschitz(cfg, seed, out),
    }
}

fn profile(cfg: &ExperimentConfig) -> Result<RiskProfile> {
    cfg.profile.profile().map_err(|e| anyhow!(e))
}

fn markov(cfg: &ExperimentConfig, seed: u64) -> Result<MarkovGame> {
    cfg.environment.markov(seed).map_err(|e| anyhow!(e))
}

fn run_certify(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunRecord>> {
    let r = cfg.environment.normal_form().map_err(|e| anyhow!(e))?;
    let p = profile(cfg)?;
    let cert = certify(&p, r.n_actions(), game_floor(&r, &p), cfg.certify.n_samples, seed)?;
    let product = 16.0 * p.eps[0] * p.eps[1] * p.tau[0] * p.tau[1];
    println!(
        "seed {seed}: {:?} certificate with 16ε₁ε₂τ₁τ₂ = {}; strict={} strong={} mu={:.6e} lambda=({}, {}) min eigenvalue {:.6e}",
        cert.evidence,
        (product * 1e9).round() / 1e9,
        cert.is_strict,
        cert.is_strong, cert.mu, cert.lambda.lambda1, cert.lambda.lambda2, cert.min_eigenvalue
    );
    let mut t = Table::new([
        "evidence_closed_form",
        "is_strict",
        "is_strong",
        "mu",
        "lambda1",
        "lambda2",
        "min_eigenvalue",
        "product",
    ]);
    t.push(vec![
        Cell::Bool(cert.evidence == rqe_core::Evidence::ClosedForm),
        cert.is_strict.into(),
        cert.is_strong.into(),
        cert.mu.into(),
        cert.lambda.lambda1.into(),
        cert.lambda.lambda2.into(),
        cert.min_eigenvalue.into(),
        product.into(),
    ]);
    t.write(&out.join(format!("certificate_seed{seed}.csv")))?;
    let mut rec = RunRecord::new("certificate", seed);
    rec.put("is_strict", flag(cert.is_strict))
        .put("is_strong", flag(cert.is_strong))
        .put("mu", cert.mu)
        .put("min_eigenvalue", cert.min_eigenvalue)
        .put("product", product);
    Ok(vec![rec])
}

fn push_policy_metrics(rec: &mut RunRecord, z: &JointProfile) {
    for i in 0..2 {
        for (a, v) in z.pi(i).as_slice().iter().enumerate() {
            rec.put(format!("pi{}_{a}", i + 1), *v);
        }
    }
}

fn run_dynamics(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunRecord>> {
    let r = cfg.environment.normal_form().map_err(|e| anyhow!(e))?;
    let base = profile(cfg)?;
    let (n1, n2) = r.n_actions();
    let s = &cfg.solver;
    let z0 = |floor: f64| match cfg.dynamics.init {
        Init::Uniform => None,
        Init::Random => Some(JointProfile::random(&mut ChaCha8Rng::seed_from_u64(seed), n1, n2, 1.0, floor)),
    };
    let mut records = Vec::new();
    for &tau in &cfg.dynamics.taus {
        let p = RiskProfile { tau: [tau, tau], ..base };
        let floor = game_floor(&r, &p);
        let oracle = if cfg.oracle {
            let rep = solve(
                &r,
                &p,
                &SolveOptions { eta: s.eta, tol: 1e-12, max_iter: s.max_iter.max(1_000_000), ..Default::default() },
            )?;
            rep.converged.then_some(rep.z_star)
        } else {
            None
        };
        let rep = solve(
            &r,
            &p,
            &SolveOptions {
                eta: s.eta,
                tol: s.tol,
                max_iter: s.max_iter,
                z0: z0(floor),
                record_trajectory: true,
                oracle,
                ..Default::default()
            },
        )?;
        let label = tau_label(tau);
        write_solver_trajectory(&rep, &out.join(format!("{label}_seed{seed}.csv")))?;
        let mut rec = RunRecord::new(label, seed);
        rec.put("iterations", rep.iterations as f64)
            .put("converged", flag(rep.converged))
            .put("final_step_norm", rep.final_step_norm)
            .put("final_eta", rep.final_eta);
        push_policy_metrics(&mut rec, &rep.z_star);
        records.push(rec);
    }
    if cfg.dynamics.risk_neutral {
        let rep = solve(
            &r,
            &base,
            &SolveOptions {
                eta: s.eta,
                tol: s.tol,
                max_iter: s.max_iter,
                z0: z0(0.0),
                mode: SolveMode::RiskNeutral,
                record_trajectory: true,
                ..Default::default()
            },
        )?;
        write_solver_trajectory(&rep, &out.join(format!("neutral_seed{seed}.csv")))?;
        let mut rec = RunRecord::new("neutral", seed);
        rec.put("iterations", rep.iterations as f64)
            .put("converged", flag(rep.converged))
            .put("final_step_norm", rep.final_step_norm)
            .put("final_eta", rep.final_eta);
        push_policy_metrics(&mut rec, &rep.z_star);
        records.push(rec);
    }
    Ok(records)
}

fn write_solver_trajectory(rep: &rqe_core::SolveReport, path: &Path) -> Result<()> {
    let mut t = Table::new(["iteration", "step_norm", "distance_to_oracle"]);
    for pt in rep.trajectory.as_deref().unwrap_or_default() {
        t.push(vec![pt.iteration.into(), pt.step_norm.into(), pt.distance_to_oracle.into()]);
    }
    t.write(path)
}

fn write_policy(policy: &PolicyTable, path: &Path) -> Result<()> {
    let (n1, n2) = policy.states.first().map(|z| z.n_actions()).unwrap_or((0, 0));
    let mut header = vec!["state".to_string()];
    header.extend((0..n1).map(|a| format!("pi1_{a}")));
    header.extend((0..n2).map(|a| format!("pi2_{a}")));
    header.extend((0..n2).map(|a| format!("p1_{a}")));
    header.extend((0..n1).map(|a| format!("p2_{a}")));
    let mut t = Table::new(header);
    for (s, z) in policy.states.iter().enumerate() {
        let mut row = vec![Cell::from(s)];
        row.extend(z.to_flat().into_iter().map(Cell::Float));
        t.push(row);
    }
    t.write(path)
}

fn vi_options(cfg: &ExperimentConfig, tol: f64) -> ValueIterationOptions {
    let mut opts = ValueIterationOptions::new(tol);
    opts.relaxation = Relaxation::Constant { alpha: cfg.value_iteration.alpha };
    opts.max_sweeps = cfg.value_iteration.max_sweeps;
    opts
}

fn run_value_iteration(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunRecord>> {
    let mg = markov(cfg, seed)?;
    let p = profile(cfg)?;
    let rep = value_iteration(&mg, &p, &vi_options(cfg, cfg.value_iteration.tol))?;
    let mut t = Table::new(["sweep", "residual", "q_max_norm", "q_span", "max_stage_iterations"]);
    for h in &rep.history {
        t.push(vec![
            h.sweep.into(),
            h.residual.into(),
            h.q_max_norm.into(),
            h.q_span.into(),
            h.max_stage_iterations.into(),
        ]);
    }
    t.write(&out.join(format!("value_iteration_seed{seed}.csv")))?;
    write_policy(&rep.policy, &out.join(format!("policy_seed{seed}.csv")))?;
    let floor = markov_floor(&mg, &p);
    let bounds = q_bounds(&mg, &p, floor);
    let mut rec = RunRecord::new("value_iteration", seed);
    rec.put("sweeps", rep.sweeps as f64)
        .put("residual", rep.residual)
        .put("fixed_point_residual", rep.fixed_point_residual)
        .put("q_max_norm", rep.history.iter().map(|h| h.q_max_norm).fold(0.0, f64::max))
        .put("q_span", rep.history.iter().map(|h| h.q_span).fold(0.0, f64::max))
        .put("q_max_bound", bounds.q_max)
        .put("q_span_bound", bounds.q_span);
    if cfg.value_iteration.gap_probes > 0 {
        rec.put("worst_gap", worst_gap(&mg, &p, &rep, cfg.value_iteration.gap_probes, floor)?);
    }
    Ok(vec![rec])
}

fn worst_gap(mg: &MarkovGame, p: &RiskProfile, rep: &ValueIterationReport, probes: usize, floor: f64) -> Result<f64> {
    let gaps = (0..mg.n_states())
        .into_par_iter()
        .map(|s| rqe_gap_with_floor(&rep.policy.states[s], &stage_game(&rep.q, s), p, probes, s as u64, floor))
        .collect::<rqe_core::Result<Vec<f64>>>()?;
    Ok(gaps.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Tight value-iteration fixed point used as the reference for distances.
fn oracle_for(cfg: &ExperimentConfig, mg: &MarkovGame, p: &RiskProfile) -> Result<Option<(QPair, PolicyTable)>> {
    if !cfg.oracle {
        return Ok(None);
    }
    let rep = value_iteration(mg, p, &vi_options(cfg, 1e-10)).context("oracle value iteration")?;
    Ok(Some((rep.q, rep.policy)))
}

fn run_two_timescale(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunRecord>> {
    let mg = markov(cfg, seed)?;
    let p = profile(cfg)?;
    let reference = oracle_for(cfg, &mg, &p)?;
    let oracle = reference.as_ref().map(|(q, policy)| Oracle { q, policy });
    let rep = rqe_core::two_timescale::run(&mg, &p, &cfg.schedule, cfg.two_timescale.n_iter, oracle)?;
    let mut t = Table::new(["iteration", "alpha", "beta", "q_residual", "z_distance"]);
    for r in &rep.rows {
        t.push(vec![r.iter.into(), r.alpha_t.into(), r.beta_t.into(), r.q_residual.into(), r.z_distance.into()]);
    }
    t.write(&out.join(format!("two_timescale_seed{seed}.csv")))?;
    write_policy(&rep.policy, &out.join(format!("policy_seed{seed}.csv")))?;
    let last = rep.rows.last().ok_or_else(|| anyhow!("no iterations recorded"))?;
    let mut rec = RunRecord::new("two_timescale", seed);
    rec.put("final_q_residual", last.q_residual).put("max_q_norm", rep.max_q_norm).put("max_q_span", rep.max_q_span);
    if let Some(d) = last.z_distance {
        rec.put("final_z_distance", d);
    }
    if let Some((q, _)) = &reference {
        rec.put("final_q_distance", rep.q.max_diff(q));
    }
    Ok(vec![rec])
}

fn run_maac(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunRecord>> {
    let mg = markov(cfg, seed)?;
    let p = profile(cfg)?;
    let m = &cfg.maac;
    let reference = oracle_for(cfg, &mg, &p)?;
    let oracle = reference.as_ref().map(|(q, policy)| Oracle { q, policy });
    let mut records = Vec::new();
    for risk in &m.risk {
        let (label, mode) = match risk {
            RiskChoice::Averse => ("averse", RiskMode::Averse),
            RiskChoice::Neutral => ("neutral", RiskMode::Neutral),
        };
        let mut mc = MaacConfig::new(cfg.schedule, m.samples_per_update, m.n_episodes, seed);
        mc.risk = mode;
        mc.sampling = match m.sampling {
            SamplingChoice::OnPolicy => Sampling::OnPolicy,
            SamplingChoice::OffPolicy => Sampling::OffPolicy(PolicyTable::uniform(mg.n_states(), mg.n_actions())),
        };
        mc.start = match m.start {
            StartChoice::Continue => EpisodeStart::Continue,
            StartChoice::Reset => EpisodeStart::Reset,
        };
        let rep = train(&mg, &p, &mc, oracle)?;
        let rewards: Vec<f64> = rep.episodes.iter().map(|e| e.mean_reward).collect();
        let (ma, _) = stats::moving_average(&rewards, m.window);
        let mut t = Table::new([
            "episode".to_string(),
            "z_distance".to_string(),
            "q_distance".to_string(),
            "mean_reward".to_string(),
            format!("mean_reward_ma{}", m.window),
        ]);
        for (e, avg) in rep.episodes.iter().zip(&ma) {
            t.push(vec![
                e.episode.into(),
                e.z_distance.into(),
                e.q_distance.into(),
                e.mean_reward.into(),
                (*avg).into(),
            ]);
        }
        t.write(&out.join(format!("{label}_seed{seed}.csv")))?;
        let (fwm, clipped) = stats::final_window_mean(&rewards, m.window).ok_or_else(|| anyhow!("no episodes"))?;
        let mut rec = RunRecord::new(label, seed);
        rec.put("final_window_mean_reward", fwm)
            .put("window_clipped", flag(clipped))
            .put("max_q_norm", rep.max_q_norm)
            .put("max_q_span", rep.max_q_span);
        if let Some(last) = rep.episodes.last() {
            if let Some(d) = last.z_distance {
                rec.put("final_z_distance", d);
            }
            if let Some(d) = last.q_distance {
                rec.put("final_q_distance", d);
            }
        }
        records.push(rec);
    }
    Ok(records)
}

fn run_lipschitz(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunRecord>> {
    let r = cfg.environment.normal_form().map_err(|e| anyhow!(e))?;
    let p = profile(cfg)?;
    let cert = certify(&p, r.n_actions(), game_floor(&r, &p), cfg.certify.n_samples, seed)?;
    if !(cert.mu > 0.0) {
        bail!("profile is not certified strongly monotone (mu = {}); the bound needs mu > 0", cert.mu);
    }
    let l = &cfg.lipschitz_probe;
    let probe = lipschitz_probe(&r, l.delta, l.n_trials, &p, cert.mu, seed)?;
    let mut t = Table::new(["delta", "n_trials", "mu", "max_observed_ratio", "bound"]);
    t.push(vec![
        l.delta.into(),
        l.n_trials.into(),
        cert.mu.into(),
        probe.max_observed_ratio.into(),
        probe.bound.into(),
    ]);
    t.write(&out.join(format!("lipschitz_seed{seed}.csv")))?;
    let mut rec = RunRecord::new("lipschitz_probe", seed);
    rec.put("mu", cert.mu)
        .put("max_observed_ratio", probe.max_observed_ratio)
        .put("bound", probe.bound)
        .put("within_bound", flag(probe.max_observed_ratio <= probe.bound));
    Ok(vec![rec])
}

/// Long-format per-run metrics plus per-variant median and IQR across seeds.
pub fn write_summaries(records: &[RunRecord], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record(["variant", "seed", "metric", "value"])?;
    for r in records {
        for (name, v) in &r.metrics {
            w.write_record([r.variant.clone(), r.seed.to_string(), name.clone(), crate::output::format_float(*v)])?;
        }
    }
    w.flush()?;

    let mut groups: Vec<(&str, &str, Vec<f64>)> = Vec::new();
    for r in records {
        for (name, v) in &r.metrics {
            match groups.iter_mut().find(|g| g.0 == r.variant && g.1 == name) {
                Some(g) => g.2.push(*v),
                None => groups.push((&r.variant, name, vec![*v])),
            }
        }
    }
    let mut w = csv::Writer::from_path(out.join("aggregate.csv"))?;
    w.write_record(["variant", "metric", "n", "median", "iqr"])?;
    for (variant, metric, values) in &groups {
        let med = stats::median(values).unwrap_or(f64::NAN);
        let iqr = stats::iqr(values).unwrap_or(f64::NAN);
        w.write_record([
            variant.to_string(),
            metric.to_string(),
            values.len().to_string(),
            crate::output::format_float(med),
            crate::output::format_float(iqr),
        ])?;
    }
    w.flush()?;
    Ok(())
}
