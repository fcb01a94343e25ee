//! Crash-safe trial management for human-subject experiments.
//!
//! A session walks a participant through a pre-generated CSV trial plan,
//! hands each trial's inputs to a stimulus engine, and persists the outputs
//! after every trial. Restarting picks up at the first trial whose outputs
//! are not filled. Plans can be generated with seeded shuffles, blocked
//! shuffles, or Latin-square counterbalancing.

pub mod cli;
pub mod codec;
pub mod error;
pub mod fault;
pub mod generator;
pub mod persistence;
pub mod plan;
pub mod protocol;
pub mod rng;
pub mod session;

pub use error::{Error, Result};
pub use plan::{ColumnSchema, PlanShape, ResumePoint, TrialPlan, TrialRecord, ValidationReport};
pub use session::{CurrentTrial, Session, SessionConfig, SessionStatus};
