//! Monotonicity certificates for the four-player game: the closed-form
//! product test, the per-player block matrices M_i and their sampled minimum
//! eigenvalue, and a direct empirical check of the monotonicity inequality.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RqeError};
use crate::normal_form::{gradient_into, JointProfile, PayoffPair};
use crate::regularizers::{raw, DKind, RiskProfile};
use crate::simplex::{l2_distance, weighted_inner, SimplexVector, WeightVector};

pub const DEFAULT_CERT_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evidence {
    ClosedForm,
    BlockPsd,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityCertificate {
    pub is_strict: bool,
    pub is_strong: bool,
    pub mu: f64,
    pub lambda: WeightVector,
    pub evidence: Evidence,
    /// Smallest eigenvalue of M_i seen over all evaluated profiles.
    pub min_eigenvalue: f64,
    /// Profile attaining `min_eigenvalue`.
    pub witness: Option<JointProfile>,
}

/// 16 ε₁ ε₂ τ₁ τ₂ > 1.
pub fn closed_form_test(profile: &RiskProfile) -> bool {
    16.0 * profile.eps[0] * profile.eps[1] * profile.tau[0] * profile.tau[1] > 1.0
}

/// λ = (1, √(lo·hi)) where [lo, hi] = [1/(4ε₂τ₁), 4ε₁τ₂] is the interval of
/// ratios λ₂/λ₁ admitted by the block conditions.
pub fn certified_lambda(profile: &RiskProfile) -> WeightVector {
    let lo = 1.0 / (4.0 * profile.eps[1] * profile.tau[0]);
    let hi = 4.0 * profile.eps[0] * profile.tau[1];
    WeightVector { lambda1: 1.0, lambda2: (lo * hi).sqrt() }
}

/// Per-coordinate entries (a, b, d) of the 2×2 block [[a, b], [b, d]] of M_i
/// at π_i[k] = `x`, p_{-i}[k] = `y`.
#[inline]
fn block_entries(i: usize, lambda: &WeightVector, profile: &RiskProfile, x: f64, y: f64) -> (f64, f64, f64) {
    let j = 1 - i;
    let li = lambda.player(i);
    let lj = lambda.player(j);
    let c = lj / profile.tau[j];
    let [hpp, hppi, _] = raw::d_hess_entry(profile.kind.d_kind, y, x);
    (2.0 * li * profile.eps[i] * raw::nu_hess(profile.kind.nu_kind, x), c * hppi, 2.0 * c * hpp)
}

#[inline]
fn min_eig_2x2(a: f64, b: f64, d: f64) -> f64 {
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let hi = mean + rad;
    if hi > 0.0 {
        // det / λ_max avoids cancellation in mean − rad
        (a * d - b * b) / hi
    } else {
        mean - rad
    }
}

/// M_i(λ, z) over the variables (π_i, p_{-i}), both indexed by A_i. It takes
/// no payoffs: the bilinear coupling cancels under the λ weighting.
pub fn block_matrix_m(
    i: usize,
    lambda: &WeightVector,
    z: &JointProfile,
    profile: &RiskProfile,
) -> Result<DMatrix<f64>> {
    if i > 1 {
        return Err(RqeError::InvalidInput(format!("player index {i} out of range")));
    }
    let pi = z.pi(i).as_slice();
    let p = z.p(1 - i).as_slice();
    for (what, v) in [("pi", pi), ("p", p)] {
        if let Some(index) = v.iter().position(|&x| !(x > 0.0)) {
            return Err(RqeError::Domain { what, index, value: v[index] });
        }
    }
    let n = pi.len();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        let (a, b, d) = block_entries(i, lambda, profile, pi[k], p[k]);
        m[(k, k)] = a;
        m[(k, n + k)] = b;
        m[(n + k, k)] = b;
        m[(n + k, n + k)] = d;
    }
    Ok(m)
}

/// min over i of λ_min(M_i(λ, z)), using the per-coordinate 2×2 decoupling.
pub fn min_block_eigenvalue(lambda: &WeightVector, z: &JointProfile, profile: &RiskProfile) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..2 {
        let pi = z.pi(i).as_slice();
        let p = z.p(1 - i).as_slice();
        for k in 0..pi.len() {
            let (a, b, d) = block_entries(i, lambda, profile, pi[k], p[k]);
            best = best.min(min_eig_2x2(a, b, d));
        }
    }
    best
}

fn concentrated(n: usize, k: usize, x: f64, floor: f64) -> SimplexVector {
    if n == 1 {
        return SimplexVector::uniform(1);
    }
    let rest = ((1.0 - x) / (n - 1) as f64).max(floor);
    let mut v = vec![rest; n];
    v[k] = 1.0 - rest * (n - 1) as f64;
    SimplexVector::new(v).expect("concentrated profile is a probability vector")
}

/// Profiles that put chosen masses on coordinate 0 of (π_i, p_{-i}) across a
/// grid spanning the floored box, including its corners.
fn structured_samples(n_actions: (usize, usize), floor: f64) -> Vec<JointProfile> {
    let (n1, n2) = n_actions;
    let mut out = Vec::new();
    let grid = |n: usize| -> Vec<f64> {
        let hi = 1.0 - floor * (n - 1) as f64;
        let lo = floor.max(1e-300);
        let g = 24;
        (0..=g)
            .map(|t| {
                let s = t as f64 / g as f64;
                (lo.ln() + s * (hi.ln() - lo.ln())).exp()
            })
            .collect()
    };
    for i in 0..2 {
        let n = if i == 0 { n1 } else { n2 };
        if n < 2 {
            continue;
        }
        let g = grid(n);
        for &x in &g {
            for &y in &g {
                let a = concentrated(n, 0, x, floor);
                let b = concentrated(n, 0, y, floor);
                let z = if i == 0 {
                    JointProfile { pi1: a, pi2: SimplexVector::uniform(n2), p1: SimplexVector::uniform(n2), p2: b }
                } else {
                    JointProfile { pi1: SimplexVector::uniform(n1), pi2: a, p1: b, p2: SimplexVector::uniform(n1) }
                };
                out.push(z);
            }
        }
    }
    out
}

/// Mixture of Dirichlet(1), Dirichlet(0.1) and near-vertex draws on the
/// floored simplex.
pub fn stratified_profile<R: Rng + ?Sized>(
    rng: &mut R,
    n1: usize,
    n2: usize,
    floor: f64,
    stratum: usize,
) -> JointProfile {
    match stratum % 3 {
        0 => JointProfile::random(rng, n1, n2, 1.0, floor),
        1 => JointProfile::random(rng, n1, n2, 0.1, floor),
        _ => {
            let mut near = |n: usize| {
                let k = rng.random_range(0..n);
                let x = 1.0 - rng.random::<f64>() * 0.05;
                concentrated(n, k, x.max(1.0 / n as f64), floor)
            };
            JointProfile { pi1: near(n1), pi2: near(n2), p1: near(n2), p2: near(n1) }
        }
    }
}

/// Decides strict/strong monotonicity. With the product condition satisfied
/// the certificate is analytic; otherwise the block eigenvalues are sampled.
pub fn certify(
    profile: &RiskProfile,
    n_actions: (usize, usize),
    floor: f64,
    n_samples: usize,
    seed: u64,
) -> Result<MonotonicityCertificate> {
    if n_samples == 0 {
        return Err(RqeError::InvalidInput("n_samples must be at least 1".into()));
    }
    let (n1, n2) = n_actions;
    let lambda = certified_lambda(profile);
    let mut candidates = structured_samples(n_actions, floor);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.extend((0..n_samples).map(|s| stratified_profile(&mut rng, n1, n2, floor, s)));
    let (min_eig, at) = candidates
        .par_iter()
        .enumerate()
        .map(|(k, z)| (min_block_eigenvalue(&lambda, z, profile), k))
        .reduce(|| (f64::INFINITY, usize::MAX), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    let witness = candidates.get(at).cloned();

    if closed_form_test(profile) {
        let strong = profile.kind.d_kind == DKind::Kl;
        return Ok(MonotonicityCertificate {
            is_strict: true,
            is_strong: strong && min_eig > 0.0,
            mu: if strong { (min_eig / 2.0).max(0.0) } else { 0.0 },
            lambda,
            evidence: Evidence::ClosedForm,
            min_eigenvalue: min_eig,
            witness,
        });
    }
    let strict = min_eig >= 0.0;
    let strong = min_eig > 0.0;
    Ok(MonotonicityCertificate {
        is_strict: strict,
        is_strong: strong,
        mu: if strong { min_eig / 2.0 } else { 0.0 },
        lambda,
        evidence: Evidence::Sampled,
        min_eigenvalue: min_eig,
        witness,
    })
}

/// Pointwise block test at one profile.
pub fn check_at(profile: &RiskProfile, lambda: &WeightVector, z: &JointProfile) -> MonotonicityCertificate {
    let e = min_block_eigenvalue(lambda, z, profile);
    MonotonicityCertificate {
        is_strict: e >= 0.0,
        is_strong: e > 0.0,
        mu: (e / 2.0).max(0.0),
        lambda: *lambda,
        evidence: Evidence::BlockPsd,
        min_eigenvalue: e,
        witness: Some(z.clone()),
    }
}

/// min over random interior pairs of ⟨z − z', F(z) − F(z')⟩_λ / ||z − z'||².
pub fn empirical_monotonicity(
    r: &PayoffPair,
    profile: &RiskProfile,
    lambda: &WeightVector,
    n_pairs: usize,
    floor: f64,
    seed: u64,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(RqeError::InvalidInput("n_pairs must be at least 1".into()));
    }
    let (n1, n2) = r.n_actions();
    let layout = r.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fa = vec![0.0; layout.total()];
    let mut fb = vec![0.0; layout.total()];
    let mut best = f64::INFINITY;
    for k in 0..n_pairs {
        let za = stratified_profile(&mut rng, n1, n2, floor, k).to_flat();
        let zb = stratified_profile(&mut rng, n1, n2, floor, k + 1).to_flat();
        let dist = l2_distance(&za, &zb);
        if dist < 1e-9 {
            continue;
        }
        gradient_into(&za, &layout, r, profile, &mut fa);
        gradient_into(&zb, &layout, r, profile, &mut fb);
        let dz: Vec<f64> = za.iter().zip(&zb).map(|(a, b)| a - b).collect();
        let df: Vec<f64> = fa.iter().zip(&fb).map(|(a, b)| a - b).collect();
        let ratio = weighted_inner(&dz, &df, lambda, &layout)? / (dist * dist);
        best = best.min(ratio);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::RegularizerKind;

    fn prof(eps: f64, tau: f64, kind: RegularizerKind) -> RiskProfile {
        RiskProfile::symmetric(tau, eps, kind).unwrap()
    }

    #[test]
    fn product_test_examples() {
        assert!(closed_form_test(&prof(0.2, 5.0, RegularizerKind::LOG_BARRIER_KL)));
        assert!(!closed_form_test(&prof(0.1, 1.0, RegularizerKind::LOG_BARRIER_KL)));
        let edge = RiskProfile::new([1.0, 1.0], [0.25, 0.25], RegularizerKind::LOG_BARRIER_KL).unwrap();
        assert!(!closed_form_test(&edge));
    }

    #[test]
    fn block_matrix_example_and_eigen_oracle() {
        let p = prof(0.2, 5.0, RegularizerKind::LOG_BARRIER_KL);
        let m = block_matrix_m(0, &WeightVector::ones(), &JointProfile::uniform(2, 2), &p).unwrap();
        let expect = [[1.6, 0.0, -0.4, 0.0], [0.0, 1.6, 0.0, -0.4], [-0.4, 0.0, 0.8, 0.0], [0.0, -0.4, 0.0, 0.8]];
        for r in 0..4 {
            for c in 0..4 {
                assert!((m[(r, c)] - expect[r][c]).abs() < 1e-14);
            }
        }
        assert_eq!((&m - m.transpose()).amax(), 0.0);
        let eig = m.clone().symmetric_eigen().eigenvalues.min();
        let ours = min_block_eigenvalue(&WeightVector::ones(), &JointProfile::uniform(2, 2), &p);
        assert!((eig - ours).abs() < 1e-12);
        let m3 = block_matrix_m(0, &WeightVector::new(3.0, 3.0).unwrap(), &JointProfile::uniform(2, 2), &p).unwrap();
        assert!((&m3 - &m * 3.0).amax() < 1e-14);
    }

    #[test]
    fn certify_examples() {
        let c = certify(&prof(0.2, 5.0, RegularizerKind::LOG_BARRIER_KL), (2, 2), 1e-6, 100, 0).unwrap();
        assert!(c.is_strict && c.is_strong && c.mu > 0.0);
        assert_eq!(c.evidence, Evidence::ClosedForm);
        assert!((c.lambda.lambda2 / c.lambda.lambda1 - 1.0).abs() < 1e-15);

        let c = certify(&prof(0.2, 5.0, RegularizerKind::NEG_ENTROPY_REVERSE_KL), (2, 2), 1e-6, 100, 0).unwrap();
        assert!(c.is_strict && !c.is_strong);

        let c = certify(&prof(0.01, 1.0, RegularizerKind::LOG_BARRIER_KL), (2, 2), 1e-6, 100, 0).unwrap();
        assert!(!c.is_strict);
        assert_eq!(c.evidence, Evidence::Sampled);
        let w = c.witness.unwrap();
        assert!(min_block_eigenvalue(&c.lambda, &w, &prof(0.01, 1.0, RegularizerKind::LOG_BARRIER_KL)) < 0.0);
    }

    #[test]
    fn blocks_ignore_payoffs_and_grow_with_parameters() {
        // closed-form certification is monotone in (ε, τ)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let e: [f64; 2] = [rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)];
            let t: [f64; 2] = [rng.random_range(0.1..10.0), rng.random_range(0.1..10.0)];
            let a = RiskProfile::new(t, e, RegularizerKind::LOG_BARRIER_KL).unwrap();
            let b = RiskProfile::new([t[0] * 1.5, t[1]], [e[0], e[1] * 1.1], RegularizerKind::LOG_BARRIER_KL).unwrap();
            if closed_form_test(&a) {
                assert!(closed_form_test(&b));
            }
        }
    }

    #[test]
    fn bilinear_limit_has_zero_ratio() {
        let r = PayoffPair::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]], &[vec![-1.0, 4.0], vec![2.0, 0.0]]).unwrap();
        let p = RiskProfile::symmetric(1e6, 1e-6, RegularizerKind::NEG_ENTROPY_REVERSE_KL).unwrap();
        let m = empirical_monotonicity(&r, &p, &WeightVector::ones(), 1000, 0.01, 5).unwrap();
        assert!(m.abs() < 1e-4, "{m}");
    }

    #[test]
    fn strong_certificate_consistent_with_empirical_ratio() {
        let r = PayoffPair::from_rows(&[vec![0.0, 5.0], vec![3.0, 3.0]], &[vec![-3.0, -5.0], vec![0.0, 3.0]]).unwrap();
        let p = prof(0.2, 5.0, RegularizerKind::LOG_BARRIER_KL);
        let c = certify(&p, (2, 2), 1e-6, 500, 1).unwrap();
        let m = empirical_monotonicity(&r, &p, &c.lambda, 1000, 1e-6, 2).unwrap();
        assert!(m > 0.0);
        // the sampled mu is a lower-end estimate of the same curvature
        assert!(m >= c.mu / 10.0, "ratio {m}, mu {}", c.mu);
    }
}
