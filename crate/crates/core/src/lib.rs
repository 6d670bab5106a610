//! Risk-averse quantal response equilibria for two-player normal-form and
//! discounted Markov games: projected-gradient solvers, monotonicity
//! certificates, value iteration, a two-timescale iteration and a tabular
//! actor-critic learner.

pub mod actor;
pub mod environments;
pub mod error;
pub mod maac;
pub mod markov;
pub mod monotonicity;
pub mod normal_form;
pub(crate) mod optim;
pub mod regularizers;
pub mod simplex;
pub mod solver;
pub mod stats;
pub mod two_timescale;

pub use error::{Result, RqeError};
pub use maac::{train, EpisodeRecord, EpisodeStart, MaacConfig, MaacReport, RiskMode, Sampling, TransitionBatch};
pub use markov::{MarkovGame, PolicyTable, QPair, ValueIterationOptions, ValueIterationReport};
pub use monotonicity::{certify, Evidence, MonotonicityCertificate};
pub use normal_form::{JointProfile, PayoffPair};
pub use regularizers::{DKind, NuKind, RegularizerKind, RiskProfile};
pub use simplex::{SimplexVector, WeightVector};
pub use solver::{solve, SolveMode, SolveOptions, SolveReport};
pub use two_timescale::{Oracle, ScheduleKind, StepSchedule};
