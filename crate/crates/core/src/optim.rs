//! Projected gradient descent on a floored simplex for smooth convex
//! objectives given only through their gradient.

use crate::error::{Result, RqeError};
use crate::simplex::project_in_place;

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Scaled gradient-mapping norm at termination.
    pub residual: f64,
}

/// Minimizes a convex function over {x ≥ floor, Σx = 1} starting at `x0`.
///
/// Steps are accepted when ⟨∇f(x⁺) − ∇f(x), x⁺ − x⟩ ≤ ||x⁺ − x||²/s, a
/// curvature test that remains informative after objective differences drop
/// below rounding. Terminates when ||x − Proj(x − s∇f)||/s, relative to
/// max(1, ||∇f||_∞), is at most `tol`.
pub fn pgd_minimize(
    x0: Vec<f64>,
    floor: f64,
    s0: f64,
    tol: f64,
    max_iter: usize,
    what: &str,
    mut grad: impl FnMut(&[f64], &mut [f64]),
) -> Result<PgdOutcome> {
    let n = x0.len();
    let mut x = x0;
    let mut scratch = Vec::with_capacity(n);
    project_in_place(&mut x, floor, &mut scratch);
    let mut g = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut s = s0;
    let mut residual = f64::INFINITY;
    grad(&x, &mut g);
    for it in 0..max_iter {
        let gscale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        loop {
            trial.iter_mut().zip(&x).zip(&g).for_each(|((t, xi), gi)| *t = xi - s * gi);
            project_in_place(&mut trial, floor, &mut scratch);
            grad(&trial, &mut gt);
            let mut curv = 0.0;
            let mut sq = 0.0;
            for k in 0..n {
                let d = trial[k] - x[k];
                curv += (gt[k] - g[k]) * d;
                sq += d * d;
            }
            if curv <= sq / s || sq == 0.0 {
                residual = sq.sqrt() / s / gscale;
                break;
            }
            s *= 0.5;
            if s < 1e-300 {
                return Err(RqeError::NonConvergence { what: format!("{what} line search"), iterations: it, residual });
            }
        }
        if residual <= tol {
            return Ok(PgdOutcome { x, iterations: it, residual });
        }
        x.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut gt);
        s *= 2.0;
    }
    Err(RqeError::NonConvergence { what: what.to_string(), iterations: max_iter, residual })
}

/// Maximizes a concave function by minimizing its negation.
pub fn pga_maximize(
    x0: Vec<f64>,
    floor: f64,
    s0: f64,
    tol: f64,
    max_iter: usize,
    what: &str,
    mut grad: impl FnMut(&[f64], &mut [f64]),
) -> Result<PgdOutcome> {
    pgd_minimize(x0, floor, s0, tol, max_iter, what, |x, g| {
        grad(x, g);
        g.iter_mut().for_each(|v| *v = -*v);
    })
}
