//! Off-policy evaluation for preference-labeled data.
//!
//! The pipeline has two stages. Stage one fits a per-step reward function by
//! maximum likelihood on softmax choice data in which an anchor pair of known
//! zero reward is always the third candidate. Stage two runs backward fitted
//! Q-evaluation with the learned reward and integrates the step-1 Q-function
//! against the initial distribution to estimate the target policy's value.
//!
//! Everything is deterministic given a seed. Ground truth comes from exact
//! dynamic programming on the tabular latent model, so every estimator here
//! can be scored against an oracle.

// Indexed loops mirror the math and keep parallel tables in lockstep.
#![allow(clippy::needless_range_loop)]

pub mod divergence;
pub mod fqe;
pub mod mdp;
pub mod net;
pub mod preference;
pub mod reward;
pub mod seeding;
pub mod synthetic;

pub use divergence::{FiniteDistribution, KappaProfile, ProbeClass};
pub use fqe::{EvalReport, FittedQ, PipelineConfig, PipelineRun};
pub use mdp::{Initial, Policy, TabularMdp, Trajectory};
pub use net::{NetConfig, OptimizerConfig, ReluNetwork};
pub use preference::ChoiceProbabilities;
pub use reward::LearnedReward;
pub use synthetic::{EmbeddedMdp, EnvConfig, EtaSampler, PreferenceDataset, TransitionDataset};

/// Crate-wide error type. Variants carry the step index and indices involved
/// so callers can report exactly which entry violated a contract.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("step {h}: transition row (s={s}, a={a}) sums to {sum:e}, must be 1 within 1e-12")]
    BadTransitionRow {
        h: usize,
        s: usize,
        a: usize,
        sum: f64,
    },
    #[error("step {h}: negative transition probability at (s={s}, a={a}, s'={sp})")]
    NegativeTransition {
        h: usize,
        s: usize,
        a: usize,
        sp: usize,
    },
    #[error("step {h}: reward r({s},{a}) = {value} outside [0,1]")]
    RewardOutOfRange {
        h: usize,
        s: usize,
        a: usize,
        value: f64,
    },
    #[error("step {h}: anchor reward is {value:e}, must be exactly 0")]
    AnchorRewardNonzero { h: usize, value: f64 },
    #[error("step {h}: action distribution for state {s} sums to {sum:e}, must be 1 within 1e-12")]
    BadPolicyRow { h: usize, s: usize, sum: f64 },
    #[error("distribution sums to {sum:e}, must be 1 within 1e-12")]
    BadDistribution { sum: f64 },
    #[error("step {h}: {context} dimension mismatch: {detail}")]
    StepDimension {
        h: usize,
        context: &'static str,
        detail: String,
    },
    #[error("{context} dimension mismatch: {detail}")]
    Dimension {
        context: &'static str,
        detail: String,
    },
    #[error("step {h} out of range 1..={horizon}")]
    StepOutOfRange { h: usize, horizon: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("{what} must be nonempty")]
    Empty { what: &'static str },
    #[error("training diverged in {context}: loss {loss}")]
    Diverged { context: String, loss: f64 },
    #[error("support violation at atom {atom}: q = 0 but p = {p}")]
    SupportViolation { atom: String, p: f64 },
    #[error("embedded points {i} and {j} at distance {dist:e}, below the configured gap {gap:e}")]
    EmbeddingGap {
        i: usize,
        j: usize,
        dist: f64,
        gap: f64,
    },
    #[error("{context}: {detail}")]
    Format {
        context: &'static str,
        detail: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
