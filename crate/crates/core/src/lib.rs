//! Desk-scale training engine for multi-teacher on-policy distillation over
//! tabular softmax policies.
//!
//! A student policy distills from two fixed teachers (a broad "general" teacher
//! and a sharp "domain" teacher) by generating its own rollouts and regressing
//! onto teacher log-probability gaps. Three update modes are provided:
//!
//! * `Vanilla` — both branch gradients are summed into one mixed update per step;
//! * `CaMOPD` — branches alternate on an n_g:1 schedule, each step trains on a
//!   gap-mass-selected subset of its batch with a per-branch advantage scale;
//! * `DecoupledOnly` — the alternating schedule alone (full batches, unit scale).
//!
//! The crate also ships the measurement kit used to study the regime: gradient
//! coherence and its selection gain, cross-branch gradient conflict, rollout-based
//! KL evaluation, a finite-difference gradient checker, and a synthetic
//! forgetting/recovery scenario generator with deterministic seeding throughout.
//!
//! Modules:
//! * [`config`] — run configuration, file/flag loading, validation
//! * [`context`] — tokens, fixed-order contexts, positional row encoding
//! * [`rng`] — labelled deterministic random streams
//! * [`math`] — categorical KL and log-space helpers
//! * [`policy`] — tabular teachers and the softmax student, checkpoints
//! * [`rollout`] — student rollout generation and gap records
//! * [`selection`] — gap scores and mass-prefix batch selection
//! * [`gradient`] — flat parameter-gradient records
//! * [`trainer`] — branch/mixed steps, schedule, specialization, training loop
//! * [`diagnostics`] — coherence, selection gain, conflict, eval KL, grad check
//! * [`scenario`] — synthetic two-teacher world and prompt families
//! * [`metrics`] — JSONL metrics rows, summaries
//! * [`plots`] — dependency-free SVG line charts
//! * [`runner`] — run/compare orchestration and output directories
//! * [`checks`] — self-check suite backing the `check` subcommand

pub mod checks;
pub mod config;
pub mod context;
pub mod diagnostics;
pub mod error;
pub mod gradient;
pub mod math;
pub mod metrics;
pub mod plots;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod runner;
pub mod scenario;
pub mod selection;
pub mod trainer;

pub use config::{Mode, RunConfig};
pub use context::{Branch, Context, Prompt, Token};
pub use error::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
