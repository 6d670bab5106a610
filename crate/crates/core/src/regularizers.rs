//! Player regularizers ν, adversary penalties D, their derivatives, and the
//! theoretical lower bounds on equilibrium policies.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RqeError};
use crate::simplex::{SimplexVector, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuKind {
    NegativeEntropy,
    LogBarrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DKind {
    ReverseKl,
    Kl,
}

/// A legal (ν, D) pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawKind")]
pub struct RegularizerKind {
    pub nu_kind: NuKind,
    pub d_kind: DKind,
}

#[derive(Deserialize)]
struct RawKind {
    nu_kind: NuKind,
    d_kind: DKind,
}

impl TryFrom<RawKind> for RegularizerKind {
    type Error = RqeError;
    fn try_from(r: RawKind) -> Result<Self> {
        RegularizerKind::new(r.nu_kind, r.d_kind)
    }
}

impl RegularizerKind {
    pub const LOG_BARRIER_KL: Self = Self { nu_kind: NuKind::LogBarrier, d_kind: DKind::Kl };
    pub const NEG_ENTROPY_REVERSE_KL: Self = Self { nu_kind: NuKind::NegativeEntropy, d_kind: DKind::ReverseKl };

    pub fn new(nu_kind: NuKind, d_kind: DKind) -> Result<Self> {
        match (nu_kind, d_kind) {
            (NuKind::LogBarrier, DKind::Kl) | (NuKind::NegativeEntropy, DKind::ReverseKl) => {
                Ok(Self { nu_kind, d_kind })
            }
            _ => Err(RqeError::Config(format!(
                "illegal regularizer pairing ({nu_kind:?}, {d_kind:?}); use (log_barrier, kl) or (negative_entropy, reverse_kl)"
            ))),
        }
    }

    pub fn is_kl(&self) -> bool {
        self.d_kind == DKind::Kl
    }

    pub fn label(&self) -> &'static str {
        match self.d_kind {
            DKind::Kl => "logbarrier_kl",
            DKind::ReverseKl => "negentropy_reversekl",
        }
    }
}

/// Behavioral parameters of both players.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub tau: [f64; 2],
    pub eps: [f64; 2],
    pub kind: RegularizerKind,
    #[serde(default)]
    pub lambda: WeightVector,
}

impl RiskProfile {
    pub fn new(tau: [f64; 2], eps: [f64; 2], kind: RegularizerKind) -> Result<Self> {
        Self::with_lambda(tau, eps, kind, WeightVector::ones())
    }

    pub fn symmetric(tau: f64, eps: f64, kind: RegularizerKind) -> Result<Self> {
        Self::new([tau, tau], [eps, eps], kind)
    }

    pub fn with_lambda(tau: [f64; 2], eps: [f64; 2], kind: RegularizerKind, lambda: WeightVector) -> Result<Self> {
        let p = Self { tau, eps, kind, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau1", self.tau[0]), ("tau2", self.tau[1]), ("eps1", self.eps[0]), ("eps2", self.eps[1])] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RqeError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        WeightVector::new(self.lambda.lambda1, self.lambda.lambda2)?;
        Ok(())
    }

    pub fn tau_min(&self) -> f64 {
        self.tau[0].min(self.tau[1])
    }

    pub fn eps_max(&self) -> f64 {
        self.eps[0].max(self.eps[1])
    }
}

fn check_positive(what: &'static str, v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| !(x > 0.0)) {
        Some(index) => Err(RqeError::Domain { what, index, value: v[index] }),
        None => Ok(()),
    }
}

fn check_same_len(p: &[f64], pi: &[f64]) -> Result<()> {
    if p.len() != pi.len() {
        return Err(RqeError::InvalidInput(format!(
            "penalty arguments differ in length ({} vs {})",
            p.len(),
            pi.len()
        )));
    }
    Ok(())
}

pub fn nu_value(kind: NuKind, pi: &SimplexVector) -> Result<f64> {
    check_positive("pi", pi.as_slice())?;
    Ok(raw::nu_value(kind, pi.as_slice()))
}

pub fn nu_grad(kind: NuKind, pi: &SimplexVector) -> Result<Vec<f64>> {
    check_positive("pi", pi.as_slice())?;
    let mut out = vec![0.0; pi.len()];
    raw::nu_grad(kind, pi.as_slice(), &mut out);
    Ok(out)
}

pub fn nu_hess_diag(kind: NuKind, pi: &SimplexVector) -> Result<Vec<f64>> {
    check_positive("pi", pi.as_slice())?;
    Ok(pi.as_slice().iter().map(|&x| raw::nu_hess(kind, x)).collect())
}

pub fn d_value(kind: DKind, p: &SimplexVector, pi: &SimplexVector) -> Result<f64> {
    check_same_len(p.as_slice(), pi.as_slice())?;
    check_positive("p", p.as_slice())?;
    check_positive("pi", pi.as_slice())?;
    Ok(raw::d_value(kind, p.as_slice(), pi.as_slice()))
}

pub fn d_grad_p(kind: DKind, p: &SimplexVector, pi: &SimplexVector) -> Result<Vec<f64>> {
    check_same_len(p.as_slice(), pi.as_slice())?;
    check_positive("p", p.as_slice())?;
    check_positive("pi", pi.as_slice())?;
    let mut out = vec![0.0; p.len()];
    raw::d_grad_p(kind, p.as_slice(), pi.as_slice(), &mut out);
    Ok(out)
}

pub fn d_grad_pi(kind: DKind, p: &SimplexVector, pi: &SimplexVector) -> Result<Vec<f64>> {
    check_same_len(p.as_slice(), pi.as_slice())?;
    check_positive("p", p.as_slice())?;
    check_positive("pi", pi.as_slice())?;
    Ok(p.as_slice().iter().zip(pi.as_slice()).map(|(&a, &b)| raw::d_grad_pi_entry(kind, a, b)).collect())
}

/// Diagonals of the Hessian blocks of D(p, π).
#[derive(Debug, Clone, PartialEq)]
pub struct DHessian {
    pub pp: Vec<f64>,
    pub ppi: Vec<f64>,
    pub pipi: Vec<f64>,
}

pub fn d_hess_blocks(kind: DKind, p: &SimplexVector, pi: &SimplexVector) -> Result<DHessian> {
    check_same_len(p.as_slice(), pi.as_slice())?;
    check_positive("p", p.as_slice())?;
    check_positive("pi", pi.as_slice())?;
    let n = p.len();
    let mut h = DHessian { pp: Vec::with_capacity(n), ppi: Vec::with_capacity(n), pipi: Vec::with_capacity(n) };
    for (&a, &b) in p.as_slice().iter().zip(pi.as_slice()) {
        let [pp, ppi, pipi] = raw::d_hess_entry(kind, a, b);
        h.pp.push(pp);
        h.ppi.push(ppi);
        h.pipi.push(pipi);
    }
    Ok(h)
}

/// Unchecked slice kernels used inside solver loops; callers guarantee
/// strictly positive entries.
pub mod raw {
    use super::{DKind, NuKind};

    pub fn nu_value(kind: NuKind, pi: &[f64]) -> f64 {
        match kind {
            NuKind::NegativeEntropy => pi.iter().map(|&x| x * x.ln()).sum(),
            NuKind::LogBarrier => -pi.iter().map(|&x| x.ln()).sum::<f64>(),
        }
    }

    #[inline]
    pub fn nu_grad_entry(kind: NuKind, x: f64) -> f64 {
        match kind {
            NuKind::NegativeEntropy => x.ln() + 1.0,
            NuKind::LogBarrier => -1.0 / x,
        }
    }

    pub fn nu_grad(kind: NuKind, pi: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(pi) {
            *o = nu_grad_entry(kind, x);
        }
    }

    #[inline]
    pub fn nu_hess(kind: NuKind, x: f64) -> f64 {
        match kind {
            NuKind::NegativeEntropy => 1.0 / x,
            NuKind::LogBarrier => 1.0 / (x * x),
        }
    }

    pub fn d_value(kind: DKind, p: &[f64], pi: &[f64]) -> f64 {
        match kind {
            DKind::Kl => p.iter().zip(pi).map(|(&a, &b)| a * (a / b).ln()).sum(),
            DKind::ReverseKl => p.iter().zip(pi).map(|(&a, &b)| b * (b / a).ln()).sum(),
        }
    }

    #[inline]
    pub fn d_grad_p_entry(kind: DKind, p: f64, pi: f64) -> f64 {
        match kind {
            DKind::Kl => (p / pi).ln() + 1.0,
            DKind::ReverseKl => -pi / p,
        }
    }

    pub fn d_grad_p(kind: DKind, p: &[f64], pi: &[f64], out: &mut [f64]) {
        for ((o, &a), &b) in out.iter_mut().zip(p).zip(pi) {
            *o = d_grad_p_entry(kind, a, b);
        }
    }

    #[inline]
    pub fn d_grad_pi_entry(kind: DKind, p: f64, pi: f64) -> f64 {
        match kind {
            DKind::Kl => -p / pi,
            DKind::ReverseKl => (pi / p).ln() + 1.0,
        }
    }

    /// (∂²/∂p², ∂²/∂p∂π, ∂²/∂π²) of the per-coordinate summand.
    #[inline]
    pub fn d_hess_entry(kind: DKind, p: f64, pi: f64) -> [f64; 3] {
        match kind {
            DKind::Kl => [1.0 / p, -1.0 / pi, p / (pi * pi)],
            DKind::ReverseKl => [pi / (p * p), -1.0 / p, 1.0 / pi],
        }
    }
}

/// Lower bounds on equilibrium policies: `pi[i]` bounds π_i, `p[i]` bounds p_i.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyFloors {
    pub pi: [f64; 2],
    pub p: [f64; 2],
}

impl PolicyFloors {
    pub fn min(&self) -> f64 {
        self.pi.iter().chain(&self.p).cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Theoretical policy lower bounds for a game whose payoff span is
/// `payoff_span`. The log-barrier adversary bound reuses the player formula
/// with the roles of the action sets swapped.
pub fn policy_floor(profile: &RiskProfile, payoff_span: f64, n_actions: (usize, usize)) -> PolicyFloors {
    let n = [n_actions.0 as f64, n_actions.1 as f64];
    let sp = payoff_span.max(0.0);
    let mut out = PolicyFloors { pi: [0.0; 2], p: [0.0; 2] };
    for i in 0..2 {
        let own = n[i];
        let other = n[1 - i];
        let eps = profile.eps[i];
        match profile.kind.d_kind {
            DKind::Kl => {
                out.pi[i] = eps / (eps * own + sp);
                out.p[i] = eps / (eps * other + sp);
            }
            DKind::ReverseKl => {
                let e = (-sp).exp();
                out.pi[i] = e / own;
                out.p[i] = e / (own * (other + profile.tau[i] * sp));
            }
        }
    }
    out
}

/// Floor of the shrunken simplex the solvers iterate on.
pub fn operating_floor(floors: &PolicyFloors) -> f64 {
    (0.5 * floors.min()).min(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::sample_dirichlet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-6;

    fn sv(v: &[f64]) -> SimplexVector {
        SimplexVector::new(v.to_vec()).unwrap()
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[k] += H;
                b[k] -= H;
                (f(&a) - f(&b)) / (2.0 * H)
            })
            .collect()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn nu_examples() {
        let u = sv(&[0.5, 0.5]);
        let v = nu_value(NuKind::NegativeEntropy, &u).unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-15);
        let g = nu_grad(NuKind::NegativeEntropy, &u).unwrap();
        let fd = fd_grad(|x| raw::nu_value(NuKind::NegativeEntropy, x), u.as_slice());
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - 0.306853).abs() < 1e-6);
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(nu_grad(NuKind::LogBarrier, &u).unwrap(), vec![-2.0, -2.0]);
        assert_eq!(nu_hess_diag(NuKind::LogBarrier, &u).unwrap(), vec![4.0, 4.0]);
        for n in 1..8 {
            let v = nu_value(NuKind::NegativeEntropy, &SimplexVector::uniform(n)).unwrap();
            assert!((v + (n as f64).ln()).abs() < 1e-14);
        }
        assert!(matches!(nu_value(NuKind::LogBarrier, &sv(&[1.0, 0.0])), Err(RqeError::Domain { index: 1, .. })));
    }

    #[test]
    fn d_examples() {
        let a = sv(&[0.3, 0.7]);
        assert_eq!(d_value(DKind::Kl, &a, &a).unwrap(), 0.0);
        let v = d_value(DKind::Kl, &sv(&[0.5, 0.5]), &sv(&[0.25, 0.75])).unwrap();
        let direct = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.143841).abs() < 1e-6);
        let u = sv(&[0.5, 0.5]);
        assert_eq!(d_grad_p(DKind::ReverseKl, &u, &u).unwrap(), vec![-1.0, -1.0]);
        assert!(d_value(DKind::Kl, &sv(&[1.0, 0.0]), &u).is_err());
    }

    #[test]
    fn pairing_validation() {
        assert!(RegularizerKind::new(NuKind::LogBarrier, DKind::ReverseKl).is_err());
        assert!(RegularizerKind::new(NuKind::NegativeEntropy, DKind::Kl).is_err());
        assert!(RegularizerKind::new(NuKind::LogBarrier, DKind::Kl).is_ok());
        let bad: std::result::Result<RegularizerKind, _> =
            serde_json::from_str(r#"{"nu_kind":"log_barrier","d_kind":"reverse_kl"}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn floor_examples() {
        let kl = RiskProfile::symmetric(5.0, 0.2, RegularizerKind::LOG_BARRIER_KL).unwrap();
        let f = policy_floor(&kl, 5.0, (2, 2));
        assert!((f.pi[0] - 0.2 / 5.4).abs() < 1e-15);
        assert!((f.pi[0] - 0.037037).abs() < 1e-6);
        assert_eq!(policy_floor(&kl, 0.0, (2, 2)).pi, [0.5, 0.5]);
        let ne = RiskProfile::symmetric(5.0, 0.2, RegularizerKind::NEG_ENTROPY_REVERSE_KL).unwrap();
        assert_eq!(policy_floor(&ne, 0.0, (2, 2)).pi, [0.5, 0.5]);
        let f = policy_floor(&ne, 2.0, (2, 3));
        assert!((f.p[0] - (-2f64).exp() / (2.0 * (3.0 + 10.0))).abs() < 1e-15);
        assert!(operating_floor(&f) <= 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in 0..200 {
            let n = 2 + t % 4;
            let p = sample_dirichlet(&mut rng, n, 1.0, 0.02);
            let q = sample_dirichlet(&mut rng, n, 1.0, 0.02);
            for kind in [NuKind::NegativeEntropy, NuKind::LogBarrier] {
                let g = nu_grad(kind, &p).unwrap();
                let fd = fd_grad(|x| raw::nu_value(kind, x), p.as_slice());
                for (a, b) in g.iter().zip(&fd) {
                    assert!(rel_close(*a, *b, 1e-5), "{kind:?}: {a} vs {b}");
                }
            }
            for kind in [DKind::Kl, DKind::ReverseKl] {
                let gp = d_grad_p(kind, &p, &q).unwrap();
                let fd = fd_grad(|x| raw::d_value(kind, x, q.as_slice()), p.as_slice());
                for (a, b) in gp.iter().zip(&fd) {
                    assert!(rel_close(*a, *b, 1e-5));
                }
                let gq = d_grad_pi(kind, &p, &q).unwrap();
                let fd = fd_grad(|x| raw::d_value(kind, p.as_slice(), x), q.as_slice());
                for (a, b) in gq.iter().zip(&fd) {
                    assert!(rel_close(*a, *b, 1e-5));
                }
            }
        }
    }

    #[test]
    fn hessians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for t in 0..100 {
            let n = 2 + t % 3;
            let p = sample_dirichlet(&mut rng, n, 1.0, 0.02);
            let q = sample_dirichlet(&mut rng, n, 1.0, 0.02);
            for kind in [NuKind::NegativeEntropy, NuKind::LogBarrier] {
                let h = nu_hess_diag(kind, &p).unwrap();
                let fd = fd_grad(
                    |x| {
                        let mut g = vec![0.0; n];
                        raw::nu_grad(kind, x, &mut g);
                        g[0]
                    },
                    p.as_slice(),
                );
                assert!(rel_close(h[0], fd[0], 1e-4));
                assert!(fd[1..].iter().all(|v| v.abs() < 1e-6));
            }
            for kind in [DKind::Kl, DKind::ReverseKl] {
                let h = d_hess_blocks(kind, &p, &q).unwrap();
                for k in 0..n {
                    let dpp = fd_grad(|x| raw::d_grad_p_entry(kind, x[0], q[k]), &[p[k]])[0];
                    let dppi = fd_grad(|x| raw::d_grad_p_entry(kind, p[k], x[0]), &[q[k]])[0];
                    let dpipi = fd_grad(|x| raw::d_grad_pi_entry(kind, p[k], x[0]), &[q[k]])[0];
                    assert!(rel_close(h.pp[k], dpp, 1e-4));
                    assert!(rel_close(h.ppi[k], dppi, 1e-4));
                    assert!(rel_close(h.pipi[k], dpipi, 1e-4));
                }
            }
        }
    }

    #[test]
    fn penalty_jointly_convex_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let n = 3;
            let (p, q) = (sample_dirichlet(&mut rng, n, 1.0, 1e-3), sample_dirichlet(&mut rng, n, 1.0, 1e-3));
            let (p2, q2) = (sample_dirichlet(&mut rng, n, 1.0, 1e-3), sample_dirichlet(&mut rng, n, 1.0, 1e-3));
            let t: f64 = rand::Rng::random(&mut rng);
            for kind in [DKind::Kl, DKind::ReverseKl] {
                let mix = |a: &SimplexVector, b: &SimplexVector| -> Vec<f64> {
                    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| t * x + (1.0 - t) * y).collect()
                };
                let lhs = raw::d_value(kind, &mix(&p, &p2), &mix(&q, &q2));
                let rhs = t * raw::d_value(kind, p.as_slice(), q.as_slice())
                    + (1.0 - t) * raw::d_value(kind, p2.as_slice(), q2.as_slice());
                assert!(lhs <= rhs + 1e-10);
                assert!(raw::d_value(kind, p.as_slice(), q.as_slice()) > 1e-10 || p.distance(&q) < 1e-4);
                assert!(raw::d_value(kind, p.as_slice(), p.as_slice()).abs() <= 1e-10);
            }
        }
    }
}
