use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rqe_core::environments::{gridworld_mg, inspection_game, inspection_mg, normal_form_mg, random_mg};
use rqe_core::{MarkovGame, PayoffPair, RegularizerKind, RiskProfile, StepSchedule, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Certify,
    NormalFormDynamics,
    ValueIteration,
    TwoTimescale,
    Maac,
    LipschitzProbe,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Certify => "certify",
            Kind::NormalFormDynamics => "normal_form_dynamics",
            Kind::ValueIteration => "value_iteration",
            Kind::TwoTimescale => "two_timescale",
            Kind::Maac => "maac",
            Kind::LipschitzProbe => "lipschitz_probe",
        }
    }

    fn needs_normal_form(self) -> bool {
        matches!(self, Kind::Certify | Kind::NormalFormDynamics | Kind::LipschitzProbe)
    }
}

/// Everything needed to reproduce a run. Every field has a default so a
/// manifest written after resolution is itself a complete config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Compute a value-iteration oracle and report distances to it.
    #[serde(default = "yes")]
    pub oracle: bool,
    #[serde(default)]
    pub environment: Environment,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default = "default_schedule")]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub value_iteration: ValueIterationConfig,
    #[serde(default)]
    pub two_timescale: TwoTimescaleConfig,
    #[serde(default)]
    pub maac: MaacSection,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub lipschitz_probe: LipschitzConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub library_version: String,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("rqe-out")
}

fn yes() -> bool {
    true
}

fn default_schedule() -> StepSchedule {
    StepSchedule::constant(0.02, 0.2).expect("valid default schedule")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Environment {
    Inspection {
        #[serde(default = "gamma_short")]
        gamma: f64,
    },
    Gridworld {
        #[serde(default = "gamma_long")]
        gamma: f64,
    },
    Random {
        n_states: usize,
        n_actions: [usize; 2],
        #[serde(default = "gamma_short")]
        gamma: f64,
        /// Falls back to the run seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Matrix {
        r1: Vec<Vec<f64>>,
        r2: Vec<Vec<f64>>,
        #[serde(default = "gamma_short")]
        gamma: f64,
    },
    File {
        path: PathBuf,
    },
}

impl Default for Environment {
    fn default() -> Self {
        Environment::Inspection { gamma: gamma_short() }
    }
}

fn gamma_short() -> f64 {
    0.3
}

fn gamma_long() -> f64 {
    0.9
}

impl Environment {
    pub fn normal_form(&self) -> Result<PayoffPair, String> {
        match self {
            Environment::Inspection { .. } => Ok(inspection_game()),
            Environment::Matrix { r1, r2, .. } => PayoffPair::from_rows(r1, r2).map_err(|e| e.to_string()),
            other => Err(format!("environment `{}` is not a normal-form game", other.name())),
        }
    }

    pub fn markov(&self, run_seed: u64) -> Result<MarkovGame, String> {
        let mg = match self {
            Environment::Inspection { gamma } => inspection_mg(*gamma),
            Environment::Gridworld { gamma } => gridworld_mg(*gamma),
            Environment::Random { n_states, n_actions, gamma, seed } => {
                random_mg(*n_states, (n_actions[0], n_actions[1]), *gamma, seed.unwrap_or(run_seed))
            }
            Environment::Matrix { gamma, .. } => normal_form_mg(&self.normal_form()?, *gamma),
            Environment::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                MarkovGame::from_json(&text)
            }
        };
        mg.map_err(|e| e.to_string())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Environment::Inspection { .. } => "inspection",
            Environment::Gridworld { .. } => "gridworld",
            Environment::Random { .. } => "random",
            Environment::Matrix { .. } => "matrix",
            Environment::File { .. } => "file",
        }
    }

    /// Environments whose game does not depend on the run seed.
    pub fn seed_independent(&self) -> bool {
        !matches!(self, Environment::Random { seed: None, .. })
    }
}

/// `tau = 5.0` or `tau = [5.0, 2.0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScalarOrPair", into = "[f64; 2]")]
pub struct Pair(pub [f64; 2]);

#[derive(Deserialize)]
#[serde(untagged)]
enum ScalarOrPair {
    Scalar(f64),
    Pair([f64; 2]),
}

impl From<ScalarOrPair> for Pair {
    fn from(v: ScalarOrPair) -> Self {
        match v {
            ScalarOrPair::Scalar(x) => Pair([x, x]),
            ScalarOrPair::Pair(p) => Pair(p),
        }
    }
}

impl From<Pair> for [f64; 2] {
    fn from(p: Pair) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    LogbarrierKl,
    NegentropyReversekl,
}

impl Regularizer {
    pub fn kind(self) -> RegularizerKind {
        match self {
            Regularizer::LogbarrierKl => RegularizerKind::LOG_BARRIER_KL,
            Regularizer::NegentropyReversekl => RegularizerKind::NEG_ENTROPY_REVERSE_KL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    #[serde(default = "default_tau")]
    pub tau: Pair,
    #[serde(default = "default_eps")]
    pub eps: Pair,
    #[serde(default = "default_regularizer")]
    pub regularizer: Regularizer,
    #[serde(default = "default_lambda")]
    pub lambda: Pair,
}

fn default_tau() -> Pair {
    Pair([5.0, 5.0])
}

fn default_eps() -> Pair {
    Pair([0.2, 0.2])
}

fn default_regularizer() -> Regularizer {
    Regularizer::LogbarrierKl
}

fn default_lambda() -> Pair {
    Pair([1.0, 1.0])
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self { tau: default_tau(), eps: default_eps(), regularizer: default_regularizer(), lambda: default_lambda() }
    }
}

impl ProfileConfig {
    pub fn profile(&self) -> Result<RiskProfile, String> {
        let lambda = WeightVector::new(self.lambda.0[0], self.lambda.0[1]).map_err(|e| e.to_string())?;
        RiskProfile::with_lambda(self.tau.0, self.eps.0, self.regularizer.kind(), lambda).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_eta() -> f64 {
    rqe_core::solver::DEFAULT_ETA
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    100_000
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { eta: default_eta(), tol: default_tol(), max_iter: default_max_iter() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Uniform,
    /// Dirichlet(1) draw from the run seed.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Symmetric τ values, one trajectory each; ε and the regularizer come
    /// from `[profile]`.
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "yes")]
    pub risk_neutral: bool,
    #[serde(default = "default_init")]
    pub init: Init,
}

fn default_taus() -> Vec<f64> {
    vec![1.0, 2.0, 5.0]
}

fn default_init() -> Init {
    Init::Uniform
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { taus: default_taus(), risk_neutral: true, init: default_init() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueIterationConfig {
    #[serde(default = "default_vi_tol")]
    pub tol: f64,
    /// Relaxation weight α of Q ← (1 − α)Q + αTQ.
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    /// Probes per state for the final gap check; 0 skips it.
    #[serde(default = "default_gap_probes")]
    pub gap_probes: usize,
}

fn default_vi_tol() -> f64 {
    1e-6
}

fn one() -> f64 {
    1.0
}

fn default_max_sweeps() -> usize {
    10_000
}

fn default_gap_probes() -> usize {
    200
}

impl Default for ValueIterationConfig {
    fn default() -> Self {
        Self { tol: default_vi_tol(), alpha: one(), max_sweeps: default_max_sweeps(), gap_probes: default_gap_probes() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTimescaleConfig {
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
}

fn default_n_iter() -> usize {
    3000
}

impl Default for TwoTimescaleConfig {
    fn default() -> Self {
        Self { n_iter: default_n_iter() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingChoice {
    OnPolicy,
    /// Behaviour policy uniform in every state.
    OffPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskChoice {
    Averse,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartChoice {
    Continue,
    Reset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaacSection {
    #[serde(default = "default_k")]
    pub samples_per_update: usize,
    #[serde(default = "default_episodes")]
    pub n_episodes: usize,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingChoice,
    #[serde(default = "default_risk")]
    pub risk: Vec<RiskChoice>,
    #[serde(default = "default_start")]
    pub start: StartChoice,
    /// Moving-average window for the reward summary.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_k() -> usize {
    64
}

fn default_episodes() -> usize {
    1000
}

fn default_sampling() -> SamplingChoice {
    SamplingChoice::OnPolicy
}

fn default_risk() -> Vec<RiskChoice> {
    vec![RiskChoice::Averse]
}

fn default_start() -> StartChoice {
    StartChoice::Continue
}

pub fn default_window() -> usize {
    100
}

impl Default for MaacSection {
    fn default() -> Self {
        Self {
            samples_per_update: default_k(),
            n_episodes: default_episodes(),
            sampling: default_sampling(),
            risk: default_risk(),
            start: default_start(),
            window: default_window(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
}

fn default_samples() -> usize {
    500
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { n_samples: default_samples() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzConfig {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
}

fn default_delta() -> f64 {
    0.01
}

fn default_trials() -> usize {
    20
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self { delta: default_delta(), n_trials: default_trials() }
    }
}

/// A configuration problem, optionally tied to a line of the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// 1-based line of `key` inside `[table]` (top level when `table` is empty),
/// falling back to the table header.
pub fn locate(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (k, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if current == table {
                header = Some(k + 1);
            }
            continue;
        }
        if current != table {
            continue;
        }
        let name = line.split('=').next().unwrap_or("").trim();
        if !key.is_empty() && name == key {
            return Some(k + 1);
        }
    }
    header
}

impl ExperimentConfig {
    pub fn parse(src: &str, path: Option<&Path>) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| ConfigError {
            path: path.map(Path::to_path_buf),
            line: e.span().map(|s| line_of_offset(src, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate().map_err(|(table, key, message)| ConfigError {
            path: path.map(Path::to_path_buf),
            line: locate(src, table, key),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&src, Some(path))
    }

    /// Semantic checks; errors name the offending table and key.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        if self.seeds.is_empty() {
            return Err(("", "seeds", "seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(("", "seeds", "seeds must be distinct".into()));
        }
        self.profile.profile().map_err(|e| ("profile", "tau", e))?;
        if let Some(kind) = self.kind {
            self.validate_for(kind)?;
        }
        Ok(())
    }

    pub fn validate_for(&self, kind: Kind) -> Result<(), (&'static str, &'static str, String)> {
        let env = |e: String| ("environment", "name", e);
        if kind.needs_normal_form() {
            self.environment.normal_form().map_err(env)?;
        } else if self.environment.seed_independent() {
            self.environment.markov(0).map_err(env)?;
        } else {
            for &s in &self.seeds {
                self.environment.markov(s).map_err(env)?;
            }
        }
        match kind {
            Kind::NormalFormDynamics | Kind::LipschitzProbe => {
                let s = &self.solver;
                if !(s.eta > 0.0) || !(s.tol > 0.0) || s.max_iter == 0 {
                    return Err(("solver", "eta", "eta, tol and max_iter must be positive".into()));
                }
                if kind == Kind::NormalFormDynamics {
                    if self.dynamics.taus.is_empty() && !self.dynamics.risk_neutral {
                        return Err((
                            "dynamics",
                            "taus",
                            "nothing to run: no taus and no risk-neutral baseline".into(),
                        ));
                    }
                    if let Some(t) = self.dynamics.taus.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
                        return Err(("dynamics", "taus", format!("tau must be positive, got {t}")));
                    }
                }
                if kind == Kind::LipschitzProbe
                    && (!(self.lipschitz_probe.delta >= 1e-6) || self.lipschitz_probe.n_trials == 0)
                {
                    return Err((
                        "lipschitz_probe",
                        "delta",
                        "delta must be at least 1e-6 and n_trials positive".into(),
                    ));
                }
            }
            Kind::ValueIteration => {
                let v = &self.value_iteration;
                if !(v.tol > 0.0) || !(v.alpha > 0.0 && v.alpha <= 1.0) || v.max_sweeps == 0 {
                    return Err((
                        "value_iteration",
                        "tol",
                        "tol and max_sweeps must be positive and alpha in (0, 1]".into(),
                    ));
                }
            }
            Kind::TwoTimescale => {
                self.schedule.validate().map_err(|e| ("schedule", "alpha", e.to_string()))?;
                if self.two_timescale.n_iter == 0 {
                    return Err(("two_timescale", "n_iter", "n_iter must be positive".into()));
                }
            }
            Kind::Maac => {
                self.schedule.validate().map_err(|e| ("schedule", "alpha", e.to_string()))?;
                let m = &self.maac;
                if m.samples_per_update == 0 || m.n_episodes == 0 || m.window == 0 {
                    return Err((
                        "maac",
                        "samples_per_update",
                        "samples_per_update, n_episodes and window must be positive".into(),
                    ));
                }
                if m.risk.is_empty() {
                    return Err(("maac", "risk", "risk must list at least one mode".into()));
                }
            }
            Kind::Certify => {
                if self.certify.n_samples == 0 {
                    return Err(("certify", "n_samples", "n_samples must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = ExperimentConfig::parse("", None).unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.profile.tau, Pair([5.0, 5.0]));
        assert!(matches!(c.environment, Environment::Inspection { gamma } if gamma == 0.3));
    }

    #[test]
    fn scalar_tau_expands() {
        let c = ExperimentConfig::parse("[profile]\ntau = 2.0\neps = [0.1, 0.3]\n", None).unwrap();
        assert_eq!(c.profile.tau, Pair([2.0, 2.0]));
        assert_eq!(c.profile.eps, Pair([0.1, 0.3]));
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = ExperimentConfig::parse("seeds = [1]\n\n[profile]\ntua = 5.0\n", None).unwrap_err();
        assert_eq!(e.line, Some(4), "{e}");
        assert!(e.message.contains("tua"));
    }

    #[test]
    fn schedule_order_reports_line() {
        let src = "kind = \"maac\"\n[schedule]\nkind = \"constant\"\nalpha = 0.5\nbeta = 0.1\n";
        let e = ExperimentConfig::parse(src, None).unwrap_err();
        assert!(e.line.is_some_and(|l| (2..=5).contains(&l)), "{e}");
        assert!(e.message.contains("alpha"));
    }

    #[test]
    fn semantic_errors_point_at_key() {
        let e = ExperimentConfig::parse("out_dir = \"x\"\nseeds = []\n", None).unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = ExperimentConfig::parse("[profile]\ntau = 1.0\neps = -0.2\n", None).unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = ExperimentConfig::parse("kind = \"certify\"\n[environment]\nname = \"gridworld\"\n", None).unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn manifest_round_trips() {
        let src = "kind = \"maac\"\nseeds = [3, 4]\n[environment]\nname = \"random\"\nn_states = 3\nn_actions = [2, 2]\n[maac]\nrisk = [\"averse\", \"neutral\"]\n";
        let c = ExperimentConfig::parse(src, None).unwrap();
        let text = c.to_toml();
        let back = ExperimentConfig::parse(&text, None).unwrap();
        assert_eq!(back.to_toml(), text);
    }
}
