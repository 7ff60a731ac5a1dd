//! Early rollout gating for group-relative policy optimization on
//! multi-turn agent tasks.
//!
//! Groups whose sampled trajectories have converged after `K` steps tend
//! to end with identical rewards, which gives them zero advantage and no
//! gradient. The gate measures prefix divergence at step `K` and stops
//! such groups before they spend the rest of the horizon.

pub mod cli;
pub mod config;
pub mod divergence;
pub mod error;
pub mod gate;
pub mod grpo;
pub mod report;
pub mod simenv;
pub mod stats;
pub mod toytrain;
pub mod types;

pub use divergence::{annotate, signals_at, DivergenceVector};
pub use error::{Error, Result};
pub use gate::{GateDecision, GateRule};
pub use grpo::{advantages, dilution_ratio, AdvantageVector};
pub use simenv::{
    generate_corpus, rollout_group, supervised_rollout, CorpusSpec, GateSupervisorConfig, SearchWorld, SyntheticPolicy,
};
pub use types::{GroupLabel, GroupRecord, TaskType, TrajectoryRecord};
