//! Fixtures shared by the `kernels` benchmarks.

use rqe_core::environments::random_mg;
use rqe_core::markov::PolicyTable;
use rqe_core::{MarkovGame, PayoffPair, QPair, RegularizerKind, RiskProfile};

/// A deterministic, unsorted vector of length `n` with mixed signs.
pub fn spread_vector(n: usize) -> Vec<f64> {
    (0..n).map(|k| ((k * 7919) % 97) as f64 / 40.0 - 1.0).collect()
}

/// An `n1 × n2` general-sum game with payoffs in [-1, 1].
pub fn payoff_pair(n1: usize, n2: usize) -> PayoffPair {
    let cell = |i: usize, j: usize, salt: usize| (((i * 31 + j * 17 + salt) * 2654435761) % 1000) as f64 / 500.0 - 1.0;
    let r1: Vec<Vec<f64>> = (0..n1).map(|i| (0..n2).map(|j| cell(i, j, 1)).collect()).collect();
    let r2: Vec<Vec<f64>> = (0..n1).map(|i| (0..n2).map(|j| cell(i, j, 2)).collect()).collect();
    PayoffPair::from_rows(&r1, &r2).expect("finite payoffs")
}

pub fn profile() -> RiskProfile {
    RiskProfile::symmetric(5.0, 0.2, RegularizerKind::LOG_BARRIER_KL).expect("valid profile")
}

/// A random Markov game with a critic from one backup of the zero values
/// and the uniform policy table.
pub fn markov_fixture(n_states: usize, n_actions: usize) -> (MarkovGame, QPair, PolicyTable) {
    let mg = random_mg(n_states, (n_actions, n_actions), 0.5, 7).expect("valid game");
    let q = rqe_core::markov::backup(&mg, &[vec![0.0; n_states], vec![0.0; n_states]]);
    let z = PolicyTable::uniform(n_states, mg.n_actions());
    (mg, q, z)
}
