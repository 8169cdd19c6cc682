//! Run configuration: defaults, file loading, and validation.
//!
//! Configs live in a flat TOML file; every field can also be set from the CLI.
//! Defaults are the desk-scale operating point the testbed is tuned around.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, FieldViolation};
use crate::Result;

/// Update rule used by the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Both branch gradients summed into one mixed update per step.
    #[serde(rename = "vanilla")]
    Vanilla,
    /// Alternating schedule + gap-mass selection + per-branch advantage scale.
    #[serde(rename = "camopd")]
    Camopd,
    /// Alternating schedule only: full batches, unit scale.
    #[serde(rename = "decoupled-only")]
    DecoupledOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Vanilla => write!(f, "vanilla"),
            Mode::Camopd => write!(f, "camopd"),
            Mode::DecoupledOnly => write!(f, "decoupled-only"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(Mode::Vanilla),
            "camopd" => Ok(Mode::Camopd),
            "decoupled-only" | "decoupledonly" | "decoupled_only" => Ok(Mode::DecoupledOnly),
            other => Err(Error::ConfigParse(format!(
                "unknown mode {other:?}; expected vanilla, camopd, or decoupled-only"
            ))),
        }
    }
}

fn d_vocab() -> usize {
    12
}
fn d_order() -> usize {
    2
}
fn d_t_roll() -> usize {
    16
}
fn d_batch_size() -> usize {
    64
}
fn d_n_g() -> u64 {
    3
}
fn d_rho() -> f64 {
    0.8
}
fn d_r_g() -> f64 {
    2.0
}
fn d_r_d() -> f64 {
    1.0
}
fn d_eta() -> f64 {
    2.0
}
fn d_steps() -> u64 {
    400
}
fn d_coverage() -> f64 {
    0.5
}
fn d_seed() -> u64 {
    1
}
fn d_eval_interval() -> u64 {
    10
}
fn d_mode() -> Mode {
    Mode::Camopd
}
fn d_kappa() -> f64 {
    0.3
}
fn d_spec_max_steps() -> u64 {
    400
}
fn d_n_eval() -> usize {
    32
}
fn d_reuse_epochs() -> u64 {
    1
}
fn d_mix_ratio() -> f64 {
    1.0
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Vocabulary size V. The top three ids form the domain token set.
    #[serde(default = "d_vocab")]
    pub vocab: usize,
    /// Context order m; policies are tables over all V^m contexts.
    #[serde(default = "d_order")]
    pub order: usize,
    /// Tokens generated per rollout.
    #[serde(default = "d_t_roll")]
    pub t_roll: usize,
    /// Rollouts per training batch.
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    /// General steps per domain step in the alternating schedule.
    #[serde(default = "d_n_g")]
    pub n_g: u64,
    /// Gap-mass selection target for the general branch, in [0, 1].
    #[serde(default = "d_rho")]
    pub rho_g: f64,
    /// Gap-mass selection target for the domain branch, in [0, 1].
    #[serde(default = "d_rho")]
    pub rho_d: f64,
    /// Advantage scale applied on general steps.
    #[serde(default = "d_r_g")]
    pub r_g: f64,
    /// Advantage scale applied on domain steps.
    #[serde(default = "d_r_d")]
    pub r_d: f64,
    /// SGD learning rate.
    #[serde(default = "d_eta")]
    pub eta: f64,
    /// Optimizer steps (single run) or training-batch budget (compare).
    #[serde(default = "d_steps")]
    pub steps: u64,
    /// Fraction of true general start contexts the proxy prompt set covers.
    #[serde(default = "d_coverage")]
    pub coverage: f64,
    /// Master seed; all random streams derive from it.
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Steps between KL evaluations (and checkpoints).
    #[serde(default = "d_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "d_mode")]
    pub mode: Mode,
    /// General-KL threshold (nats) at which specialization counts as done.
    #[serde(default = "d_kappa")]
    pub kappa: f64,
    /// Step cap for the specialization pre-phase.
    #[serde(default = "d_spec_max_steps")]
    pub spec_max_steps: u64,
    /// Teacher rollouts per KL evaluation.
    #[serde(default = "d_n_eval")]
    pub n_eval: usize,
    /// Optimizer steps taken per generated batch; > 1 reuses batches with
    /// clipped importance weights and advantages re-scored at current params.
    #[serde(default = "d_reuse_epochs")]
    pub reuse_epochs: u64,
    /// General:domain rollout ratio inside a vanilla mixed step.
    #[serde(default = "d_mix_ratio")]
    pub mix_ratio: f64,
    /// Write per-token rollout records alongside metrics.
    #[serde(default)]
    pub dump_rollouts: bool,
    /// Write per-sample gradient matrices alongside metrics.
    #[serde(default)]
    pub dump_grads: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        // Round-trips through an empty TOML table to reuse the field defaults.
        toml::from_str("").expect("empty config must deserialize")
    }
}

/// Largest parameter table the desk-scale engine will allocate.
const MAX_PARAMS: usize = 10_000_000;

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Rows in the policy tables: V^m.
    pub fn rows(&self) -> usize {
        self.vocab.pow(self.order as u32)
    }

    /// Flat parameter count: V^m * V.
    pub fn dim(&self) -> usize {
        self.rows() * self.vocab
    }

    /// Check every field; all violations are reported at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<FieldViolation> = Vec::new();
        let mut bad = |field: &'static str, message: String| {
            errs.push(FieldViolation { field, message });
        };

        if self.vocab < 6 {
            bad(
                "vocab",
                format!(
                    "must be >= 6 so general tokens remain beside the 3 domain tokens, got {}",
                    self.vocab
                ),
            );
        }
        if self.order == 0 {
            bad("order", "must be >= 1".into());
        }
        match self
            .vocab
            .checked_pow(self.order as u32)
            .and_then(|r| r.checked_mul(self.vocab))
        {
            Some(dim) if dim <= MAX_PARAMS => {}
            _ => bad(
                "order",
                format!(
                    "table of {}^{} rows exceeds the {MAX_PARAMS}-parameter desk-scale cap",
                    self.vocab, self.order
                ),
            ),
        }
        if self.t_roll == 0 {
            bad("t_roll", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be >= 1".into());
        }
        if self.n_g == 0 {
            bad("n_g", "must be >= 1".into());
        }
        for (field, rho) in [("rho_g", self.rho_g), ("rho_d", self.rho_d)] {
            if !(0.0..=1.0).contains(&rho) || !rho.is_finite() {
                bad(field, format!("must lie in [0, 1], got {rho}"));
            }
        }
        for (field, r) in [("r_g", self.r_g), ("r_d", self.r_d)] {
            if !(r.is_finite() && r > 0.0) {
                bad(field, format!("must be a positive finite scale, got {r}"));
            }
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            bad(
                "eta",
                format!("must be a positive finite learning rate, got {}", self.eta),
            );
        }
        if !(self.coverage.is_finite() && self.coverage > 0.0 && self.coverage <= 1.0) {
            bad(
                "coverage",
                format!("must lie in (0, 1], got {}", self.coverage),
            );
        }
        if self.eval_interval == 0 {
            bad("eval_interval", "must be >= 1".into());
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            bad(
                "kappa",
                format!("must be a positive threshold in nats, got {}", self.kappa),
            );
        }
        if self.spec_max_steps == 0 {
            bad("spec_max_steps", "must be >= 1".into());
        }
        if self.n_eval == 0 {
            bad("n_eval", "must be >= 1".into());
        }
        if self.reuse_epochs == 0 {
            bad("reuse_epochs", "must be >= 1".into());
        }
        if !(self.mix_ratio.is_finite() && self.mix_ratio > 0.0) {
            bad(
                "mix_ratio",
                format!(
                    "must be a positive general:domain ratio, got {}",
                    self.mix_ratio
                ),
            );
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}
