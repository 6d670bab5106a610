//! Normal-form RQE computation by projected preconditioned gradient descent
//! on the four-player game, with a brute-force grid oracle for 2×2 games and
//! an empirical probe of the equilibrium's Lipschitz dependence on payoffs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, RqeError};
use crate::normal_form::{
    adversary_response, game_floor, gradient_into, risk_neutral_gradient_into, JointProfile, PayoffPair,
};
use crate::regularizers::RiskProfile;
use crate::simplex::{l2_distance, project_blocks, BlockLayout, SimplexVector, WeightVector};

pub const DEFAULT_ETA: f64 = 0.05;
const ADAPT_WINDOW: usize = 100;
const MAX_HALVINGS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    #[default]
    RiskAverse,
    /// Bilinear dynamics only; each adversary is pinned to the opponent's
    /// policy and no regularizer enters.
    RiskNeutral,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub z0: Option<JointProfile>,
    pub mode: SolveMode,
    /// Overrides the operating floor derived from the game.
    pub floor: Option<f64>,
    pub record_trajectory: bool,
    pub oracle: Option<JointProfile>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            tol: 1e-8,
            max_iter: 100_000,
            z0: None,
            mode: SolveMode::RiskAverse,
            floor: None,
            record_trajectory: false,
            oracle: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub step_norm: f64,
    pub distance_to_oracle: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub z_star: JointProfile,
    pub iterations: usize,
    /// Displacement of the last step rescaled to the initial step size.
    pub final_step_norm: f64,
    pub converged: bool,
    pub final_eta: f64,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

/// Reusable buffers for repeated solves of equally-sized games.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    grad: Vec<f64>,
    next: Vec<f64>,
    prev_step: Vec<f64>,
    scratch: Vec<f64>,
}

/// Outcome of a solve on a flat profile.
#[derive(Debug, Clone, Copy)]
pub struct FlatOutcome {
    pub iterations: usize,
    pub step_norm: f64,
    pub converged: bool,
    pub eta: f64,
}

pub(crate) fn preconditioned_step(
    z: &[f64],
    g: &[f64],
    lambda: &WeightVector,
    layout: &BlockLayout,
    eta: f64,
    out: &mut [f64],
) {
    for (b, r) in layout.ranges().into_iter().enumerate() {
        let w = eta * lambda.block(b);
        for k in r {
            out[k] = z[k] - w * g[k];
        }
    }
}

/// Iterates z ← Proj(z − ηΛF(z)) in place. Halves η when the step norm grows
/// tenfold over a window, or when the mean step norm of a window is no
/// smaller than that of the previous window. A halved η is doubled again
/// after a window whose steps never exceed its first step and whose mean
/// improves on the previous window, unless a stall followed such a
/// doubling within three windows, in which case the halved η becomes a cap.
#[allow(clippy::too_many_arguments)]
pub fn solve_flat(
    r: &PayoffPair,
    profile: &RiskProfile,
    layout: &BlockLayout,
    z: &mut [f64],
    eta0: f64,
    tol: f64,
    max_iter: usize,
    mode: SolveMode,
    floor: f64,
    ws: &mut Workspace,
    mut observe: impl FnMut(usize, f64, &[f64]),
) -> FlatOutcome {
    let n = z.len();
    ws.grad.resize(n, 0.0);
    ws.next.resize(n, 0.0);
    ws.prev_step.clear();
    ws.prev_step.resize(n, 0.0);
    let rg = layout.ranges();
    let lambda = profile.lambda;
    let mut eta = eta0;
    let mut halvings = 0;
    let mut window_start_step = f64::NAN;
    let mut window_sum = 0.0;
    let mut window_max = 0.0f64;
    let mut windows_since_recovery = usize::MAX;
    let mut cap = eta0;
    let mut prev_window_mean = f64::NAN;
    let mut normalized = f64::INFINITY;
    for t in 0..max_iter {
        match mode {
            SolveMode::RiskAverse => {
                gradient_into(z, layout, r, profile, &mut ws.grad);
                preconditioned_step(z, &ws.grad, &lambda, layout, eta, &mut ws.next);
                project_blocks(&mut ws.next, layout, floor, &mut ws.scratch);
            }
            SolveMode::RiskNeutral => {
                risk_neutral_gradient_into(z, layout, r, &mut ws.grad);
                preconditioned_step(z, &ws.grad, &lambda, layout, eta, &mut ws.next);
                for b in 0..2 {
                    crate::simplex::project_in_place(&mut ws.next[rg[b].clone()], floor, &mut ws.scratch);
                }
                let (head, tail) = ws.next.split_at_mut(rg[2].start);
                tail[..rg[1].len()].copy_from_slice(&head[rg[1].clone()]);
                tail[rg[1].len()..].copy_from_slice(&head[rg[0].clone()]);
            }
        }
        let mut step_sq = 0.0;
        for k in 0..n {
            let d = ws.next[k] - z[k];
            step_sq += d * d;
            ws.prev_step[k] = d;
        }
        z.copy_from_slice(&ws.next);
        let step = step_sq.sqrt();
        normalized = step * eta0 / eta;
        observe(t + 1, normalized, z);
        if normalized <= tol {
            return FlatOutcome { iterations: t + 1, step_norm: normalized, converged: true, eta };
        }
        let pos = t % ADAPT_WINDOW;
        if pos == 0 {
            window_start_step = normalized;
            window_sum = 0.0;
            window_max = 0.0;
        }
        window_sum += normalized;
        window_max = window_max.max(normalized);
        if pos == ADAPT_WINDOW - 1 {
            // window means rather than endpoints, so periodic orbits are not aliased
            let mean = window_sum / ADAPT_WINDOW as f64;
            let grew = normalized >= 10.0 * window_start_step;
            let stalled = mean >= prev_window_mean;
            windows_since_recovery = windows_since_recovery.saturating_add(1);
            if (grew || stalled) && halvings < MAX_HALVINGS {
                eta *= 0.5;
                halvings += 1;
                if windows_since_recovery <= 3 {
                    cap = eta;
                }
            } else if 2.0 * eta <= cap && window_max <= window_start_step && mean < prev_window_mean {
                eta *= 2.0;
                halvings -= 1;
                windows_since_recovery = 0;
            }
            prev_window_mean = mean;
        }
    }
    FlatOutcome { iterations: max_iter, step_norm: normalized, converged: false, eta }
}

fn resolve_floor(r: &PayoffPair, profile: &RiskProfile, opts: &SolveOptions) -> f64 {
    match (opts.floor, opts.mode) {
        (Some(f), _) => f,
        (None, SolveMode::RiskAverse) => game_floor(r, profile),
        (None, SolveMode::RiskNeutral) => 0.0,
    }
}

/// Computes the RQE of a normal-form game.
pub fn solve(r: &PayoffPair, profile: &RiskProfile, opts: &SolveOptions) -> Result<SolveReport> {
    if !(opts.eta > 0.0) || !(opts.tol > 0.0) {
        return Err(RqeError::Config("eta and tol must be positive".into()));
    }
    profile.validate()?;
    let (n1, n2) = r.n_actions();
    let layout = r.layout();
    let floor = resolve_floor(r, profile, opts);
    if floor * n1.max(n2) as f64 >= 1.0 {
        return Err(RqeError::Config(format!("floor {floor} infeasible")));
    }
    let mut z = match &opts.z0 {
        Some(z0) => {
            if z0.n_actions() != (n1, n2) {
                return Err(RqeError::InvalidInput("initial profile has wrong dimensions".into()));
            }
            z0.to_flat()
        }
        None => JointProfile::uniform(n1, n2).to_flat(),
    };
    let mut ws = Workspace::default();
    project_blocks(&mut z, &layout, floor, &mut ws.scratch);
    let oracle = opts.oracle.as_ref().map(|o| o.to_flat());
    let mut trajectory = opts.record_trajectory.then(Vec::new);
    let out = solve_flat(
        r,
        profile,
        &layout,
        &mut z,
        opts.eta,
        opts.tol,
        opts.max_iter,
        opts.mode,
        floor,
        &mut ws,
        |it, step, zt| {
            if let Some(tr) = trajectory.as_mut() {
                tr.push(TrajectoryPoint {
                    iteration: it,
                    step_norm: step,
                    distance_to_oracle: oracle.as_ref().map(|o| l2_distance(o, zt)),
                });
            }
        },
    );
    Ok(SolveReport {
        z_star: JointProfile::from_flat(&layout, &z)?,
        iterations: out.iterations,
        final_step_norm: out.step_norm,
        converged: out.converged,
        final_eta: out.eta,
        trajectory,
    })
}

/// ||Proj(z − ηΛF(z)) − z||₂ on the floored simplex product.
pub fn fixed_point_residual(z: &JointProfile, r: &PayoffPair, profile: &RiskProfile, eta: f64, floor: f64) -> f64 {
    let layout = z.layout();
    let flat = z.to_flat();
    let mut g = vec![0.0; flat.len()];
    let mut next = vec![0.0; flat.len()];
    let mut scratch = Vec::new();
    gradient_into(&flat, &layout, r, profile, &mut g);
    preconditioned_step(&flat, &g, &profile.lambda, &layout, eta, &mut next);
    project_blocks(&mut next, &layout, floor, &mut scratch);
    l2_distance(&next, &flat)
}

/// Exhaustive grid search for the RQE of a 2×2 game: every grid pair
/// (π₁, π₂) is scored by the larger of the two players' unilateral
/// improvements available on the grid.
pub fn brute_force_rqe(r: &PayoffPair, profile: &RiskProfile, grid_step: f64) -> Result<JointProfile> {
    if r.n_actions() != (2, 2) {
        return Err(RqeError::Unsupported(format!("grid oracle handles 2x2 games only, got {:?}", r.n_actions())));
    }
    if !(grid_step > 0.0 && grid_step <= 1e-2) {
        return Err(RqeError::Config(format!("grid_step must be in (0, 0.01], got {grid_step}")));
    }
    let floor = game_floor(r, profile);
    let span = 1.0 - 2.0 * floor;
    let m = (span / grid_step).round() as usize;
    let grid: Vec<f64> = (0..=m).map(|k| floor + span * k as f64 / m as f64).collect();
    let policy = |x: f64| [x, 1.0 - x];
    // f[i][own][other]
    let table = |i: usize| -> Result<Vec<Vec<f64>>> {
        grid.par_iter()
            .map(|&own| {
                grid.iter()
                    .map(|&other| Ok(adversary_response(i, &policy(own), &policy(other), r, profile, floor)?.value))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect()
    };
    let f1 = table(0)?;
    let f2 = table(1)?;
    let col_min = |f: &Vec<Vec<f64>>| -> Vec<f64> {
        (0..grid.len()).map(|o| f.iter().map(|row| row[o]).fold(f64::INFINITY, f64::min)).collect()
    };
    let best1 = col_min(&f1);
    let best2 = col_min(&f2);
    let mut best = (f64::INFINITY, 0, 0);
    for a in 0..grid.len() {
        for b in 0..grid.len() {
            let score = (f1[a][b] - best1[b]).max(f2[b][a] - best2[a]);
            if score < best.0 {
                best = (score, a, b);
            }
        }
    }
    let pi1 = policy(grid[best.1]);
    let pi2 = policy(grid[best.2]);
    let p1 = adversary_response(0, &pi1, &pi2, r, profile, floor)?.p;
    let p2 = adversary_response(1, &pi2, &pi1, r, profile, floor)?.p;
    JointProfile::new(
        SimplexVector::new(pi1.to_vec())?,
        SimplexVector::new(pi2.to_vec())?,
        SimplexVector::new(p1)?,
        SimplexVector::new(p2)?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzProbe {
    pub max_observed_ratio: f64,
    pub bound: f64,
}

/// Perturbs every payoff entry by U(−δ, δ), re-solves, and compares the
/// largest ||z* − z†||₂ / ||R − R'||_max with 2||λ||_∞(√|A₁| + √|A₂|)/μ.
pub fn lipschitz_probe(
    r: &PayoffPair,
    delta: f64,
    n_trials: usize,
    profile: &RiskProfile,
    mu: f64,
    seed: u64,
) -> Result<LipschitzProbe> {
    if !(delta >= 1e-6) {
        return Err(RqeError::Config(format!("delta must be at least 1e-6, got {delta}")));
    }
    if !(mu > 0.0) {
        return Err(RqeError::Config("a positive strong-monotonicity modulus is required".into()));
    }
    let floor = game_floor(r, profile);
    let opts = SolveOptions { tol: 1e-10, max_iter: 1_000_000, floor: Some(floor), ..Default::default() };
    let base = solve(r, profile, &opts)?;
    if !base.converged {
        return Err(RqeError::NonConvergence {
            what: "base game solve".into(),
            iterations: base.iterations,
            residual: base.final_step_norm,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturbed: Vec<PayoffPair> = (0..n_trials)
        .map(|_| {
            let mut p = r.clone();
            p.r1.iter_mut().for_each(|v| *v += rng.random_range(-delta..delta));
            p.r2.iter_mut().for_each(|v| *v += rng.random_range(-delta..delta));
            p
        })
        .collect();
    let ratios: Vec<f64> = perturbed
        .par_iter()
        .map(|rp| -> Result<f64> {
            let rep = solve(rp, profile, &opts)?;
            if !rep.converged {
                return Err(RqeError::NonConvergence {
                    what: "perturbed game solve".into(),
                    iterations: rep.iterations,
                    residual: rep.final_step_norm,
                });
            }
            Ok(base.z_star.distance(&rep.z_star) / r.max_abs_diff(rp))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (n1, n2) = r.n_actions();
    Ok(LipschitzProbe {
        max_observed_ratio: ratios.into_iter().fold(0.0, f64::max),
        bound: 2.0 * profile.lambda.max() * ((n1 as f64).sqrt() + (n2 as f64).sqrt()) / mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal_form::rqe_gap;
    use crate::regularizers::RegularizerKind;

    fn inspection() -> PayoffPair {
        PayoffPair::from_rows(&[vec![0.0, 5.0], vec![3.0, 3.0]], &[vec![-3.0, -5.0], vec![0.0, 3.0]]).unwrap()
    }

    #[test]
    fn zero_game_is_uniform() {
        let p = RiskProfile::new([0.7, 3.0], [0.4, 0.1], RegularizerKind::NEG_ENTROPY_REVERSE_KL).unwrap();
        let rep = solve(&PayoffPair::zeros(3, 2), &p, &SolveOptions::default()).unwrap();
        assert!(rep.converged);
        let u = JointProfile::uniform(3, 2);
        assert!(rep.z_star.distance(&u) < 1e-12);
    }

    #[test]
    fn inspection_converges_and_passes_gap() {
        let p = RiskProfile::symmetric(5.0, 0.2, RegularizerKind::LOG_BARRIER_KL).unwrap();
        let rep = solve(&inspection(), &p, &SolveOptions::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        let gap = rqe_gap(&rep.z_star, &inspection(), &p, 300, 9).unwrap();
        assert!(gap <= 1e-7, "gap {gap}");
        let res = fixed_point_residual(&rep.z_star, &inspection(), &p, 0.05, game_floor(&inspection(), &p));
        assert!(res <= 1e-8);
    }

    #[test]
    fn risk_neutral_cycles() {
        let p = RiskProfile::symmetric(5.0, 0.2, RegularizerKind::LOG_BARRIER_KL).unwrap();
        let opts = SolveOptions { mode: SolveMode::RiskNeutral, max_iter: 20_000, ..Default::default() };
        let rep = solve(&inspection(), &p, &opts).unwrap();
        assert!(!rep.converged);
    }

    #[test]
    fn grid_oracle_agrees_with_solver() {
        let p = RiskProfile::symmetric(5.0, 0.2, RegularizerKind::LOG_BARRIER_KL).unwrap();
        let step = 5e-3;
        let bf = brute_force_rqe(&inspection(), &p, step).unwrap();
        let rep = solve(&inspection(), &p, &SolveOptions::default()).unwrap();
        assert!((bf.pi1[0] - rep.z_star.pi1[0]).abs() <= 2.0 * step);
        assert!((bf.pi2[0] - rep.z_star.pi2[0]).abs() <= 2.0 * step);
        assert!(matches!(brute_force_rqe(&PayoffPair::zeros(3, 2), &p, step), Err(RqeError::Unsupported(_))));
    }

    #[test]
    fn symmetric_games_give_uniform_grid_point() {
        let p = RiskProfile::symmetric(1.0, 1.0, RegularizerKind::NEG_ENTROPY_REVERSE_KL).unwrap();
        let mp =
            PayoffPair::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]], &[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        for r in [PayoffPair::zeros(2, 2), mp] {
            let bf = brute_force_rqe(&r, &p, 1e-2).unwrap();
            assert!((bf.pi1[0] - 0.5).abs() <= 1e-2 && (bf.pi2[0] - 0.5).abs() <= 1e-2);
        }
    }

    #[test]
    fn lipschitz_probe_rejects_degenerate_inputs() {
        let p = RiskProfile::symmetric(5.0, 0.2, RegularizerKind::LOG_BARRIER_KL).unwrap();
        assert!(lipschitz_probe(&inspection(), 0.0, 3, &p, 0.1, 0).is_err());
        assert!(lipschitz_probe(&inspection(), 0.01, 3, &p, 0.0, 0).is_err());
    }
}
