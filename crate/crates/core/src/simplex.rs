//! Probability simplices, Euclidean projection onto (floored) simplices and
//! the λ-weighted geometry of the four-block joint profile.

use std::ops::{Index, Range};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RqeError};

/// Sum tolerance accepted without touching the entries.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Largest violation that is silently repaired by renormalization.
pub const REPAIR_TOL: f64 = 1e-9;

/// A probability vector over a finite action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector {
    probs: Vec<f64>,
}

impl SimplexVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(RqeError::InvalidInput("empty probability vector".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite()) {
            return Err(RqeError::InvalidInput(format!("non-finite probability at index {i}")));
        }
        let min = probs.iter().cloned().fold(f64::INFINITY, f64::min);
        let sum: f64 = probs.iter().sum();
        if min >= 0.0 && (sum - 1.0).abs() <= SIMPLEX_TOL {
            return Ok(Self { probs });
        }
        if min < -REPAIR_TOL || (sum - 1.0).abs() > REPAIR_TOL {
            return Err(RqeError::InvalidInput(format!("not a probability vector (sum {sum}, min entry {min})")));
        }
        let mut probs = probs;
        for p in probs.iter_mut() {
            *p = p.max(0.0);
        }
        let s: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= s;
        }
        Ok(Self { probs })
    }

    /// Caller guarantees the simplex invariants.
    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over zero actions");
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn vertex(n: usize, k: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[k] = 1.0;
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn min_entry(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn distance(&self, other: &SimplexVector) -> f64 {
        l2_distance(&self.probs, &other.probs)
    }

    /// Samples index `k` with probability `probs[k]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // u landed in the rounding gap above the cumulative sum
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = RqeError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexVector::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(s: SimplexVector) -> Vec<f64> {
        s.probs
    }
}

/// The weight vector (λ₁, λ₂); expands to (λ₁, λ₂, λ₁, λ₂) over the blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl WeightVector {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda2 > 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
            return Err(RqeError::InvalidInput(format!(
                "weights must be positive and finite, got ({lambda1}, {lambda2})"
            )));
        }
        Ok(Self { lambda1, lambda2 })
    }

    pub fn ones() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0 }
    }

    /// Weight of player `i` (0 or 1).
    pub fn player(&self, i: usize) -> f64 {
        if i == 0 {
            self.lambda1
        } else {
            self.lambda2
        }
    }

    /// Weight attached to block `b` of the (π₁, π₂, p₁, p₂) layout.
    pub fn block(&self, b: usize) -> f64 {
        self.player(b % 2)
    }

    pub fn max(&self) -> f64 {
        self.lambda1.max(self.lambda2)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { lambda1: self.lambda1 * c, lambda2: self.lambda2 * c }
    }
}

impl Default for WeightVector {
    fn default() -> Self {
        Self::ones()
    }
}

/// Block sizes of a flattened joint profile, in the order (π₁, π₂, p₁, p₂).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub sizes: [usize; 4],
}

impl BlockLayout {
    pub fn new(sizes: [usize; 4]) -> Self {
        Self { sizes }
    }

    /// Layout of a two-player game with `n1` and `n2` actions.
    pub fn for_actions(n1: usize, n2: usize) -> Self {
        Self { sizes: [n1, n2, n2, n1] }
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn range(&self, b: usize) -> Range<usize> {
        let start: usize = self.sizes[..b].iter().sum();
        start..start + self.sizes[b]
    }

    pub fn ranges(&self) -> [Range<usize>; 4] {
        [self.range(0), self.range(1), self.range(2), self.range(3)]
    }
}

/// Σ λ_block(i) u_i v_i.
pub fn weighted_inner(u: &[f64], v: &[f64], lambda: &WeightVector, layout: &BlockLayout) -> Result<f64> {
    if u.len() != v.len() || u.len() != layout.total() {
        return Err(RqeError::InvalidInput(format!(
            "length mismatch: {} vs {} with layout total {}",
            u.len(),
            v.len(),
            layout.total()
        )));
    }
    let mut acc = 0.0;
    for (b, r) in layout.ranges().into_iter().enumerate() {
        let s: f64 = u[r.clone()].iter().zip(&v[r]).map(|(a, b)| a * b).sum();
        acc += lambda.block(b) * s;
    }
    Ok(acc)
}

pub fn weighted_norm(u: &[f64], lambda: &WeightVector, layout: &BlockLayout) -> Result<f64> {
    Ok(weighted_inner(u, u, lambda, layout)?.sqrt())
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_floor(n: usize, floor: f64) -> Result<()> {
    if !(floor >= 0.0) || !floor.is_finite() {
        return Err(RqeError::Config(format!("floor must be a non-negative number, got {floor}")));
    }
    if floor * n as f64 >= 1.0 {
        return Err(RqeError::Config(format!("floor {floor} is infeasible for {n} actions (floor * n must be < 1)")));
    }
    Ok(())
}

/// Euclidean projection of `x` onto {v : Σv = 1, v ≥ floor}.
pub fn project_simplex(x: &[f64], floor: f64) -> Result<SimplexVector> {
    if x.is_empty() {
        return Err(RqeError::InvalidInput("cannot project an empty vector".into()));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(RqeError::InvalidInput(format!("non-finite entry at index {i}")));
    }
    check_floor(x.len(), floor)?;
    let mut v = x.to_vec();
    let mut scratch = Vec::with_capacity(x.len());
    project_in_place(&mut v, floor, &mut scratch);
    Ok(SimplexVector::from_vec_unchecked(v))
}

/// In-place projection without input validation; `scratch` is reused between
/// calls to avoid allocation in solver loops.
pub fn project_in_place(v: &mut [f64], floor: f64, scratch: &mut Vec<f64>) {
    let n = v.len();
    let mass = 1.0 - floor * n as f64;
    if floor > 0.0 {
        for x in v.iter_mut() {
            *x = (*x - floor) / mass;
        }
    }
    project_standard(v, scratch);
    if floor > 0.0 {
        for x in v.iter_mut() {
            *x = floor + mass * *x;
        }
    }
}

// Sort-based projection onto the standard simplex.
fn project_standard(v: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(v);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Projects each block of a flattened profile onto its floored simplex.
pub fn project_blocks(z: &mut [f64], layout: &BlockLayout, floor: f64, scratch: &mut Vec<f64>) {
    for r in layout.ranges() {
        project_in_place(&mut z[r], floor, scratch);
    }
}

/// Draws from a symmetric Dirichlet(alpha) and maps the draw onto the floored
/// simplex by the affine shrink v = floor + (1 - n floor) w.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, n: usize, alpha: f64, floor: f64) -> SimplexVector {
    let gamma = Gamma::new(alpha, 1.0).expect("positive Dirichlet concentration");
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let mut s: f64 = w.iter().sum();
    if !(s > 0.0) {
        // every gamma draw underflowed; fall back to a uniformly chosen vertex
        let k = rng.random_range(0..n);
        w = vec![0.0; n];
        w[k] = 1.0;
        s = 1.0;
    }
    let mass = 1.0 - floor * n as f64;
    let probs = w.iter().map(|x| floor + mass * x / s).collect();
    SimplexVector::new(probs).expect("dirichlet draw is a probability vector")
}
