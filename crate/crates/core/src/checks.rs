//! Self-verification suite behind the `check` subcommand.
//!
//! Each check recomputes a quantity through an independent slow path (finite
//! differences, selection-sort plus linear scan, repeated runs) and compares
//! it against the production implementation. The oracles here deliberately
//! share no code with the fast paths they audit.

use crate::config::RunConfig;
use crate::context::Branch;
use crate::diagnostics::{self, coherence};
use crate::error::Error;
use crate::gradient::GradientRecord;
use crate::policy::StudentPolicy;
use crate::rng::RngStream;
use crate::rollout::generate_batch;
use crate::scenario::{build_scenario, sample_prompts};
use crate::selection::{select_mass_prefix, SampleScore};
use crate::trainer::{self, NoHooks};
use crate::Result;

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Reference mass-prefix selection: selection-sort by descending score
/// (ascending index on ties), then walk the prefix until the covered mass
/// reaches `rho` of the total. Quadratic and obvious by construction.
pub fn select_mass_prefix_bruteforce(scores: &[SampleScore], rho: f64) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for s in scores {
        if !s.score.is_finite() || s.score < 0.0 {
            return Err(Error::InvalidScore {
                index: s.batch_index,
                value: s.score,
            });
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    for i in 0..order.len() {
        let mut best = i;
        for j in i + 1..order.len() {
            let (a, b) = (&scores[order[j]], &scores[order[best]]);
            if a.score > b.score || (a.score == b.score && a.batch_index < b.batch_index) {
                best = j;
            }
        }
        order.swap(i, best);
    }
    let total: f64 = order.iter().map(|&i| scores[i].score).sum();
    if total == 0.0 {
        return Ok(scores.iter().map(|s| s.batch_index).collect());
    }
    let need = rho * total;
    let mut mass = 0.0;
    let mut picked = Vec::new();
    for &i in &order {
        if mass >= need {
            break;
        }
        // A zero-score sample can never help reach the target.
        if scores[i].score == 0.0 {
            break;
        }
        mass += scores[i].score;
        picked.push(scores[i].batch_index);
    }
    if picked.is_empty() {
        picked.push(scores[order[0]].batch_index);
    }
    Ok(picked)
}

fn check_selection_oracle() -> CheckOutcome {
    let mut stream = RngStream::new(20_250_101, "check/selection");
    let mut trials = 0usize;
    for case in 0..200 {
        let n = 1 + stream.below(12);
        let scores: Vec<SampleScore> = (0..n)
            .map(|i| SampleScore {
                batch_index: i,
                // Quantized scores so exact ties occur often.
                score: (stream.below(6) as f64) * 0.5,
            })
            .collect();
        let rho = [0.0, 0.25, 0.5, 0.8, 1.0][stream.below(5)];
        let fast = match select_mass_prefix(&scores, rho) {
            Ok(r) => r,
            Err(e) => {
                return CheckOutcome {
                    name: "selection_oracle",
                    passed: false,
                    detail: format!("case {case}: fast path errored: {e}"),
                }
            }
        };
        let slow = select_mass_prefix_bruteforce(&scores, rho).unwrap();
        if fast.selected != slow {
            return CheckOutcome {
                name: "selection_oracle",
                passed: false,
                detail: format!(
                    "case {case}: fast {:?} != brute-force {slow:?} (scores {:?}, rho {rho})",
                    fast.selected,
                    scores.iter().map(|s| s.score).collect::<Vec<_>>()
                ),
            };
        }
        trials += 1;
    }
    CheckOutcome {
        name: "selection_oracle",
        passed: true,
        detail: format!("{trials} randomized cases matched the brute-force reference"),
    }
}

fn check_fd_gradient(cfg: &RunConfig) -> Result<CheckOutcome> {
    let scenario = build_scenario(cfg, 0)?;
    let student = StudentPolicy::init_from(&scenario.domain_teacher);
    let base = RngStream::new(cfg.seed, "check/fd");
    let prompts = sample_prompts(
        scenario.training_family(Branch::General),
        cfg.batch_size.min(16),
        &mut base.derive("prompts"),
    );
    let batch = generate_batch(
        &student,
        &scenario.general_teacher,
        &prompts,
        cfg.t_roll,
        &base.derive("gen"),
    )?;
    let mut coord_stream = base.derive("coords");
    let report =
        diagnostics::finite_diff_check(&student, &batch, cfg.r_g, 1e-5, 200, &mut coord_stream)?;
    let tol = 1e-5;
    Ok(CheckOutcome {
        name: "fd_gradient",
        passed: report.max_rel_err < tol,
        detail: format!(
            "max rel err {:.3e} over {} coordinates (tolerance {tol:.0e})",
            report.max_rel_err, report.coords_checked
        ),
    })
}

fn check_coherence_bounds() -> CheckOutcome {
    let mut stream = RngStream::new(99, "check/coherence");
    for case in 0..100 {
        let n = 2 + stream.below(6);
        let dim = 8;
        let grads: Vec<GradientRecord> = (0..n)
            .map(|_| {
                GradientRecord::from_flat((0..dim).map(|_| stream.uniform() * 2.0 - 1.0).collect())
            })
            .collect();
        match coherence(&grads) {
            Ok(Some(c)) => {
                if !(0.0..=1.0).contains(&c) {
                    return CheckOutcome {
                        name: "coherence_bounds",
                        passed: false,
                        detail: format!("case {case}: coherence {c} escaped [0, 1]"),
                    };
                }
            }
            Ok(None) => {}
            Err(e) => {
                return CheckOutcome {
                    name: "coherence_bounds",
                    passed: false,
                    detail: format!("case {case}: {e}"),
                }
            }
        }
    }
    CheckOutcome {
        name: "coherence_bounds",
        passed: true,
        detail: "100 random gradient sets stayed in [0, 1]".into(),
    }
}

fn check_determinism(cfg: &RunConfig) -> Result<CheckOutcome> {
    let short = RunConfig {
        steps: 4,
        batch_size: cfg.batch_size.min(8),
        t_roll: cfg.t_roll.min(8),
        n_eval: cfg.n_eval.min(8),
        ..cfg.clone()
    };
    let scenario = build_scenario(&short, 0)?;
    let run = || -> Result<Vec<String>> {
        let student = StudentPolicy::init_from(&scenario.general_teacher);
        let report = trainer::run_training(&short, &scenario, student, &mut NoHooks)?;
        Ok(report.rows.iter().map(|r| r.to_json_line()).collect())
    };
    let a = run()?;
    let b = run()?;
    let passed = a == b;
    Ok(CheckOutcome {
        name: "determinism",
        passed,
        detail: if passed {
            format!("two {}-step runs produced byte-identical rows", short.steps)
        } else {
            let first = a
                .iter()
                .zip(&b)
                .position(|(x, y)| x != y)
                .unwrap_or(a.len().min(b.len()));
            format!("row {first} differs between repeat runs")
        },
    })
}

fn check_teacher_rows(cfg: &RunConfig) -> Result<CheckOutcome> {
    let scenario = build_scenario(cfg, 0)?;
    for (label, teacher) in [
        ("general", &scenario.general_teacher),
        ("domain", &scenario.domain_teacher),
    ] {
        for row in 0..teacher.rows() {
            let probs = teacher.row(row);
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Ok(CheckOutcome {
                    name: "teacher_rows",
                    passed: false,
                    detail: format!("{label} teacher row {row} sums to {sum}"),
                });
            }
            if let Some(&bad) = probs.iter().find(|&&p| p < 1e-6) {
                return Ok(CheckOutcome {
                    name: "teacher_rows",
                    passed: false,
                    detail: format!("{label} teacher row {row} has entry {bad} below the floor"),
                });
            }
        }
    }
    Ok(CheckOutcome {
        name: "teacher_rows",
        passed: true,
        detail: "all teacher rows sum to 1 within 1e-9 with entries at or above 1e-6".into(),
    })
}

/// Run the whole suite. Failures are reported, not raised; callers decide the
/// exit status.
pub fn run_all_checks(cfg: &RunConfig) -> Result<Vec<CheckOutcome>> {
    cfg.validate()?;
    Ok(vec![
        check_fd_gradient(cfg)?,
        check_selection_oracle(),
        check_coherence_bounds(),
        check_determinism(cfg)?,
        check_teacher_rows(cfg)?,
    ])
}
