//! Update steps, the alternating schedule, the specialization pre-phase, and
//! the full training loop.
//!
//! The per-token objective is
//!     loss_i = -(1/T) * sum_t w_t * (r * gap_t) * log pi_theta(y_t | ctx_t)
//! with the gap frozen at generation time. In the default fully-fresh regime
//! (one update per generated batch) w_t = 1; batch reuse re-scores the
//! advantage at the current parameters and applies a clipped importance
//! weight, treated as a stop-gradient constant.

use crate::config::{Mode, RunConfig};
use crate::context::Branch;
use crate::diagnostics::{
    self, coherence_over, cross_domain_conflict, gcg_from_coherence, ConflictReport, Ema,
};
use crate::error::{Error, FieldViolation};
use crate::gradient::{add_scaled, l2_norm, mean_over, GradientRecord};
use crate::metrics::{MetricsRow, RowKind, StepBranch};
use crate::policy::StudentPolicy;
use crate::rng::RngStream;
use crate::rollout::{generate_batch, Rollout};
use crate::scenario::{sample_prompts, Scenario};
use crate::selection::{score_batch, select_mass_prefix, SelectionResult};
use crate::Result;

/// Importance-weight clip band used when a batch is reused.
pub const REUSE_CLIP: (f64, f64) = (0.8, 1.2);

/// Which teacher the given optimizer step trains against: n_g general steps,
/// then one domain step, repeating.
pub fn schedule_branch(step: u64, n_g: u64) -> Result<Branch> {
    if n_g == 0 {
        return Err(Error::Validation(vec![FieldViolation {
            field: "n_g",
            message: "schedule needs at least one general step per cycle".into(),
        }]));
    }
    if step % (n_g + 1) < n_g {
        Ok(Branch::General)
    } else {
        Ok(Branch::Domain)
    }
}

/// Frozen-gap loss and gradient of one rollout at the current parameters.
/// Zero-gap tokens contribute exactly zero to both.
fn per_sample_frozen(
    student: &StudentPolicy,
    rollout: &Rollout,
    scale: f64,
) -> (f64, GradientRecord) {
    let vocab = student.vocab();
    let inv_t = 1.0 / rollout.len().max(1) as f64;
    let mut loss = 0.0;
    let mut flat = vec![0.0; student.dim()];
    for rec in &rollout.records {
        let coeff = scale * rec.gap;
        if coeff == 0.0 {
            continue;
        }
        loss += coeff * student.logprob(rec.ctx_row, rec.token);
        let dist = student.next_dist(rec.ctx_row);
        let base = rec.ctx_row * vocab;
        // d/dlogits of coeff * logprob: coeff * (one-hot - softmax).
        let w = -inv_t * coeff;
        for (v, &p) in dist.iter().enumerate() {
            flat[base + v] += w * -p;
        }
        flat[base + rec.token.id()] += w;
    }
    (-inv_t * loss, GradientRecord::from_flat(flat))
}

/// Loss and gradient of one fresh rollout, advantage scaled by `scale`.
/// Rejects rollouts generated under older student parameters.
pub fn per_sample_loss_and_grad(
    student: &StudentPolicy,
    rollout: &Rollout,
    scale: f64,
) -> Result<(f64, GradientRecord)> {
    if rollout.student_version != student.version() {
        return Err(Error::StaleRollout {
            rollout_version: rollout.student_version,
            student_version: student.version(),
        });
    }
    if rollout.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(per_sample_frozen(student, rollout, scale))
}

/// Mean frozen-gap loss across a batch, evaluated at the current parameters
/// with no staleness check — this is the objective the finite-difference
/// checker differentiates, so it must be callable on perturbed copies.
pub fn batch_loss_frozen(student: &StudentPolicy, rollouts: &[Rollout], scale: f64) -> Result<f64> {
    if rollouts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = 0.0;
    for r in rollouts {
        acc += per_sample_frozen(student, r, scale).0;
    }
    Ok(acc / rollouts.len() as f64)
}

/// Mean frozen-gap gradient across a batch (analytic counterpart of
/// [`batch_loss_frozen`]).
pub fn batch_grad_frozen(
    student: &StudentPolicy,
    rollouts: &[Rollout],
    scale: f64,
) -> Result<Vec<f64>> {
    if rollouts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = vec![0.0; student.dim()];
    for r in rollouts {
        let (_, g) = per_sample_frozen(student, r, scale);
        add_scaled(&mut acc, g.flat(), 1.0);
    }
    let inv = 1.0 / rollouts.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

/// Everything one branch step computes before the parameters move.
#[derive(Debug, Clone)]
pub struct BranchStepPlan {
    pub branch: Branch,
    /// Per-sample scale-1 losses and gradients, batch order.
    pub losses: Vec<f64>,
    pub grads: Vec<GradientRecord>,
    pub selection: SelectionResult,
    pub advantage_scale: f64,
    /// Batch loss over the selected subset, advantage scale applied.
    pub loss: f64,
    /// Update direction: scale * mean gradient over the selected subset.
    pub update: Vec<f64>,
    /// Scale-1 full-batch mean gradient (the branch gradient proper; this is
    /// what conflict diagnostics compare across branches).
    pub full_mean: GradientRecord,
    pub coh_full: Option<f64>,
    pub coh_selected: Option<f64>,
    pub gcg_percent: Option<f64>,
}

/// Score, select, and assemble one branch update without applying it.
/// `select_full` bypasses selection (the schedule-only mode).
pub fn plan_branch_step(
    student: &StudentPolicy,
    rollouts: &[Rollout],
    branch: Branch,
    rho: f64,
    advantage_scale: f64,
    select_full: bool,
) -> Result<BranchStepPlan> {
    if rollouts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for r in rollouts {
        if r.branch != branch {
            return Err(Error::BranchMismatch {
                expected: branch,
                found: r.branch,
            });
        }
    }
    let mut losses = Vec::with_capacity(rollouts.len());
    let mut grads = Vec::with_capacity(rollouts.len());
    for r in rollouts {
        let (l, g) = per_sample_loss_and_grad(student, r, 1.0)?;
        losses.push(l);
        grads.push(g);
    }

    let scores = score_batch(rollouts, branch)?;
    let selection = if select_full {
        SelectionResult {
            selected: (0..rollouts.len()).collect(),
            k: rollouts.len(),
            mass_covered: 1.0,
            total_mass: scores.iter().map(|s| s.score).sum(),
        }
    } else {
        select_mass_prefix(&scores, rho)?
    };

    let mut update = mean_over(&grads, &selection.selected)?;
    for u in &mut update {
        *u *= advantage_scale;
    }
    let loss = advantage_scale * selection.selected.iter().map(|&i| losses[i]).sum::<f64>()
        / selection.k as f64;

    let full_idx: Vec<usize> = (0..grads.len()).collect();
    let coh_full = coherence_over(&grads, &full_idx)?;
    let coh_selected = coherence_over(&grads, &selection.selected)?;
    let gcg_percent = gcg_from_coherence(coh_selected, coh_full);
    let full_mean = GradientRecord::from_flat(mean_over(&grads, &full_idx)?);

    Ok(BranchStepPlan {
        branch,
        losses,
        grads,
        selection,
        advantage_scale,
        loss,
        update,
        full_mean,
        coh_full,
        coh_selected,
        gcg_percent,
    })
}

/// One selection-aware branch step: plan, then apply theta <- theta - eta * update.
pub fn branch_step_camopd(
    student: &mut StudentPolicy,
    rollouts: &[Rollout],
    branch: Branch,
    rho: f64,
    advantage_scale: f64,
    eta: f64,
) -> Result<BranchStepPlan> {
    let plan = plan_branch_step(student, rollouts, branch, rho, advantage_scale, false)?;
    student.apply_grad(&plan.update, eta)?;
    Ok(plan)
}

/// Outcome of one vanilla mixed update.
#[derive(Debug, Clone)]
pub struct MixedStepOutcome {
    pub loss: f64,
    pub loss_general: f64,
    pub loss_domain: f64,
    /// g_general + g_domain (full-batch means, unit scale).
    pub update: Vec<f64>,
    pub grad_general: GradientRecord,
    pub grad_domain: GradientRecord,
    pub conflict: ConflictReport,
}

/// One mixed update: both branch gradients are computed on their own batches
/// and summed. Both component gradients are retained for conflict logging.
pub fn mixed_step_vanilla(
    student: &mut StudentPolicy,
    batch_general: &[Rollout],
    batch_domain: &[Rollout],
    eta: f64,
) -> Result<MixedStepOutcome> {
    for (expected, batch) in [
        (Branch::General, batch_general),
        (Branch::Domain, batch_domain),
    ] {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for r in batch {
            if r.branch != expected {
                return Err(Error::BranchMismatch {
                    expected,
                    found: r.branch,
                });
            }
        }
    }
    let mean_of = |batch: &[Rollout]| -> Result<(f64, Vec<f64>)> {
        let mut loss = 0.0;
        let mut acc = vec![0.0; student.dim()];
        for r in batch {
            let (l, g) = per_sample_loss_and_grad(student, r, 1.0)?;
            loss += l;
            add_scaled(&mut acc, g.flat(), 1.0);
        }
        let inv = 1.0 / batch.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
        Ok((loss * inv, acc))
    };
    let (loss_general, g_g) = mean_of(batch_general)?;
    let (loss_domain, g_d) = mean_of(batch_domain)?;
    let grad_general = GradientRecord::from_flat(g_g);
    let grad_domain = GradientRecord::from_flat(g_d);
    let conflict = cross_domain_conflict(&grad_general, &grad_domain)?;
    let mut update = grad_general.flat().to_vec();
    add_scaled(&mut update, grad_domain.flat(), 1.0);
    student.apply_grad(&update, eta)?;
    Ok(MixedStepOutcome {
        loss: loss_general + loss_domain,
        loss_general,
        loss_domain,
        update,
        grad_general,
        grad_domain,
        conflict,
    })
}

/// Extra optimizer update reusing an already-consumed batch: the advantage is
/// re-scored at the current parameters and weighted by a clipped probability
/// ratio (stop-gradient). Used only when `reuse_epochs > 1`.
fn stale_update(
    student: &mut StudentPolicy,
    rollouts: &[Rollout],
    selected: &[usize],
    scale: f64,
    eta: f64,
) -> Result<()> {
    let (lo, hi) = REUSE_CLIP;
    let mut acc = vec![0.0; student.dim()];
    let vocab = student.vocab();
    for &i in selected {
        let r = &rollouts[i];
        let inv_t = 1.0 / r.len().max(1) as f64;
        for rec in &r.records {
            let lp_now = student.logprob(rec.ctx_row, rec.token);
            let w = (lp_now - rec.student_logprob).exp().clamp(lo, hi);
            let adv = rec.teacher_logprob - lp_now;
            let coeff = -inv_t * w * scale * adv / selected.len() as f64;
            if coeff == 0.0 {
                continue;
            }
            let dist = student.next_dist(rec.ctx_row);
            let base = rec.ctx_row * vocab;
            for (v, &p) in dist.iter().enumerate() {
                acc[base + v] += coeff * -p;
            }
            acc[base + rec.token.id()] += coeff;
        }
    }
    student.apply_grad(&acc, eta)
}

/// Result of the specialization pre-phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecializeReport {
    pub steps: u64,
    pub target: f64,
    pub initial_kl_general: f64,
    pub final_kl_general: f64,
    pub initial_kl_domain: f64,
    pub final_kl_domain: f64,
}

/// Rollout horizon for the specialization pre-phase. Short chains keep the
/// updates concentrated on the domain rows that the domain eval actually
/// visits, which is what lets the stop condition on domain KL be reached.
const SPEC_T_ROLL_CAP: usize = 4;

/// Step size for the specialization pre-phase, independent of the run's
/// `eta`. Per-row movement is diluted by horizon averaging and row
/// visitation, so manufacturing a `kappa`-sized general regression needs a
/// far larger rate than the recovery phase; this value reaches the stop
/// condition well inside the step cap across seeds.
const SPEC_ETA: f64 = 3.0;

/// Manufacture forgetting: starting from the general teacher, distill toward
/// the domain teacher on domain prompts (full batches, unit scale) until the
/// student has both drifted at least `kappa` nats away from the general
/// teacher and moved strictly closer to the domain teacher than where it
/// started, or fail at the step cap. Both gates are scored on fixed eval
/// streams so the stopping decision is deterministic.
pub fn specialize_student(
    scenario: &Scenario,
    cfg: &RunConfig,
) -> Result<(StudentPolicy, SpecializeReport)> {
    let base = RngStream::new(cfg.seed, &format!("specialize/{}", scenario.attempt));
    let gate_g = base.derive("gate/general");
    let gate_d = base.derive("gate/domain");
    let mut student = StudentPolicy::init_from(&scenario.general_teacher);

    let eval_general = |student: &StudentPolicy| -> Result<f64> {
        diagnostics::eval_kl(
            student,
            &scenario.general_teacher,
            &scenario.prompts_general_true,
            cfg.t_roll,
            cfg.n_eval,
            &gate_g,
        )
    };
    let eval_domain = |student: &StudentPolicy| -> Result<f64> {
        diagnostics::eval_kl(
            student,
            &scenario.domain_teacher,
            &scenario.prompts_domain,
            cfg.t_roll,
            cfg.n_eval,
            &gate_d,
        )
    };

    let initial_kl_general = eval_general(&student)?;
    let initial_kl_domain = eval_domain(&student)?;
    let t_spec = SPEC_T_ROLL_CAP.min(cfg.t_roll);
    for step in 0..cfg.spec_max_steps {
        let kl_general = eval_general(&student)?;
        let kl_domain = eval_domain(&student)?;
        if kl_general >= cfg.kappa && kl_domain < initial_kl_domain {
            return Ok((
                student.clone(),
                SpecializeReport {
                    steps: step,
                    target: cfg.kappa,
                    initial_kl_general,
                    final_kl_general: kl_general,
                    initial_kl_domain,
                    final_kl_domain: kl_domain,
                },
            ));
        }
        let prompts = sample_prompts(
            &scenario.prompts_domain,
            cfg.batch_size,
            &mut base.derive(&format!("s/{step}/p")),
        );
        let rollouts = generate_batch(
            &student,
            &scenario.domain_teacher,
            &prompts,
            t_spec,
            &base.derive(&format!("s/{step}/g")),
        )?;
        let grad = batch_grad_frozen(&student, &rollouts, 1.0)?;
        student.apply_grad(&grad, SPEC_ETA)?;
    }
    Err(Error::SpecializationFailed {
        achieved: eval_general(&student)?,
        target: cfg.kappa,
        steps: cfg.spec_max_steps,
    })
}

/// Observer hooks for checkpoints and optional debug dumps. All default to
/// no-ops; the training loop's metrics do not depend on them.
pub trait RunHooks {
    fn on_row(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _completed_steps: u64, _student: &StudentPolicy) -> Result<()> {
        Ok(())
    }
    fn on_rollouts(
        &mut self,
        _step: u64,
        _branch: StepBranch,
        _rollouts: &[Rollout],
    ) -> Result<()> {
        Ok(())
    }
    fn on_grads(
        &mut self,
        _step: u64,
        _branch: StepBranch,
        _grads: &[GradientRecord],
    ) -> Result<()> {
        Ok(())
    }
}

/// Hook implementation that does nothing.
pub struct NoHooks;

impl RunHooks for NoHooks {}

/// Mutable state the training loop threads through its steps.
pub struct TrainState {
    pub student: StudentPolicy,
    pub step: u64,
    pub consumed_rollouts: u64,
    cfg: RunConfig,
    ema: Ema,
}

/// Full training run summary.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    pub student: StudentPolicy,
    /// Training rollouts generated (probe and eval rollouts excluded).
    pub consumed_rollouts: u64,
    pub final_kl_general: f64,
    pub final_kl_domain: f64,
    pub best_kl_general: f64,
}

fn eval_pair(
    cfg: &RunConfig,
    scenario: &Scenario,
    student: &StudentPolicy,
    completed: u64,
) -> Result<(f64, f64)> {
    let kg = diagnostics::eval_kl(
        student,
        &scenario.general_teacher,
        scenario.eval_family(Branch::General),
        cfg.t_roll,
        cfg.n_eval,
        &RngStream::new(cfg.seed, &format!("eval/{completed}/general")),
    )?;
    let kd = diagnostics::eval_kl(
        student,
        &scenario.domain_teacher,
        scenario.eval_family(Branch::Domain),
        cfg.t_roll,
        cfg.n_eval,
        &RngStream::new(cfg.seed, &format!("eval/{completed}/domain")),
    )?;
    Ok((kg, kd))
}

/// Split 2 * batch_size rollouts between the branches of one mixed step
/// according to the general:domain mix ratio.
pub fn vanilla_split(batch_size: usize, mix_ratio: f64) -> (usize, usize) {
    let total = 2 * batch_size;
    let g = ((total as f64 * mix_ratio / (mix_ratio + 1.0)).round() as usize).clamp(1, total - 1);
    (g, total - g)
}

/// Drive a full training run in the configured mode, starting from the given
/// (typically specialized) student. Emits one train row per step and eval
/// rows at step 0, every `eval_interval` steps, and at termination.
pub fn run_training(
    cfg: &RunConfig,
    scenario: &Scenario,
    student: StudentPolicy,
    hooks: &mut dyn RunHooks,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut state = TrainState {
        student,
        step: 0,
        consumed_rollouts: 0,
        cfg: cfg.clone(),
        ema: Ema::with_half_life(10.0),
    };
    let base = RngStream::new(cfg.seed, "train");
    let mut rows: Vec<MetricsRow> = Vec::new();

    let emit_eval = |state: &TrainState,
                     completed: u64,
                     rows: &mut Vec<MetricsRow>,
                     hooks: &mut dyn RunHooks|
     -> Result<(f64, f64)> {
        let (kg, kd) = eval_pair(&state.cfg, scenario, &state.student, completed)?;
        let mut row = MetricsRow::blank(completed, RowKind::Eval, state.cfg.mode);
        row.kl_general = Some(kg);
        row.kl_domain = Some(kd);
        hooks.on_row(&row)?;
        rows.push(row);
        Ok((kg, kd))
    };

    emit_eval(&state, 0, &mut rows, hooks)?;
    let mut last_eval_step = 0u64;

    // Cache for reuse_epochs > 1: each scheduled step generates one fresh
    // batch and takes reuse_epochs optimizer updates on it.
    for step in 0..cfg.steps {
        state.step = step;
        match cfg.mode {
            Mode::Vanilla => {
                let (n_g, n_d) = vanilla_split(cfg.batch_size, cfg.mix_ratio);
                let pg = sample_prompts(
                    scenario.training_family(Branch::General),
                    n_g,
                    &mut base.derive(&format!("step/{step}/prompts/general")),
                );
                let pd = sample_prompts(
                    scenario.training_family(Branch::Domain),
                    n_d,
                    &mut base.derive(&format!("step/{step}/prompts/domain")),
                );
                let bg = generate_batch(
                    &state.student,
                    &scenario.general_teacher,
                    &pg,
                    cfg.t_roll,
                    &base.derive(&format!("step/{step}/gen/general")),
                )?;
                let bd = generate_batch(
                    &state.student,
                    &scenario.domain_teacher,
                    &pd,
                    cfg.t_roll,
                    &base.derive(&format!("step/{step}/gen/domain")),
                )?;
                state.consumed_rollouts += (n_g + n_d) as u64;
                hooks.on_rollouts(step, StepBranch::Mixed, &bg)?;
                hooks.on_rollouts(step, StepBranch::Mixed, &bd)?;
                let out = mixed_step_vanilla(&mut state.student, &bg, &bd, cfg.eta)?;
                for _ in 1..cfg.reuse_epochs {
                    let all_g: Vec<usize> = (0..bg.len()).collect();
                    let all_d: Vec<usize> = (0..bd.len()).collect();
                    // Two half-updates so each branch keeps unit scale.
                    stale_update(&mut state.student, &bg, &all_g, 1.0, cfg.eta)?;
                    stale_update(&mut state.student, &bd, &all_d, 1.0, cfg.eta)?;
                }
                let ema_v = state.ema.update(out.conflict.cosine);
                let mut row = MetricsRow::blank(step, RowKind::Train, cfg.mode);
                row.branch = Some(StepBranch::Mixed);
                row.loss = Some(out.loss);
                row.grad_norm = Some(l2_norm(&out.update));
                row.batch = Some(n_g + n_d);
                row.cross_dot = Some(out.conflict.dot);
                row.cross_cosine = Some(out.conflict.cosine);
                row.cross_cosine_ema = Some(ema_v);
                hooks.on_row(&row)?;
                rows.push(row);
            }
            Mode::Camopd | Mode::DecoupledOnly => {
                let branch = schedule_branch(step, cfg.n_g)?;
                let (rho, scale) = match (cfg.mode, branch) {
                    (Mode::Camopd, Branch::General) => (cfg.rho_g, cfg.r_g),
                    (Mode::Camopd, Branch::Domain) => (cfg.rho_d, cfg.r_d),
                    (_, _) => (1.0, 1.0),
                };
                let select_full = cfg.mode == Mode::DecoupledOnly;
                let prompts = sample_prompts(
                    scenario.training_family(branch),
                    cfg.batch_size,
                    &mut base.derive(&format!("step/{step}/prompts")),
                );
                let rollouts = generate_batch(
                    &state.student,
                    scenario.teacher(branch),
                    &prompts,
                    cfg.t_roll,
                    &base.derive(&format!("step/{step}/gen")),
                )?;
                state.consumed_rollouts += cfg.batch_size as u64;

                // Probe the other branch at the same parameters; measurement
                // only, never applied, excluded from budget accounting.
                let other = match branch {
                    Branch::General => Branch::Domain,
                    Branch::Domain => Branch::General,
                };
                let probe_prompts = sample_prompts(
                    scenario.training_family(other),
                    cfg.batch_size,
                    &mut base.derive(&format!("step/{step}/probe/prompts")),
                );
                let probe = generate_batch(
                    &state.student,
                    scenario.teacher(other),
                    &probe_prompts,
                    cfg.t_roll,
                    &base.derive(&format!("step/{step}/probe/gen")),
                )?;
                let probe_mean =
                    GradientRecord::from_flat(batch_grad_frozen(&state.student, &probe, 1.0)?);

                let step_branch = match branch {
                    Branch::General => StepBranch::General,
                    Branch::Domain => StepBranch::Domain,
                };
                hooks.on_rollouts(step, step_branch, &rollouts)?;
                let plan =
                    plan_branch_step(&state.student, &rollouts, branch, rho, scale, select_full)?;
                hooks.on_grads(step, step_branch, &plan.grads)?;
                let conflict = match branch {
                    Branch::General => cross_domain_conflict(&plan.full_mean, &probe_mean)?,
                    Branch::Domain => cross_domain_conflict(&probe_mean, &plan.full_mean)?,
                };
                state.student.apply_grad(&plan.update, cfg.eta)?;
                for _ in 1..cfg.reuse_epochs {
                    stale_update(
                        &mut state.student,
                        &rollouts,
                        &plan.selection.selected,
                        scale,
                        cfg.eta,
                    )?;
                }

                let ema_v = state.ema.update(conflict.cosine);
                let mut row = MetricsRow::blank(step, RowKind::Train, cfg.mode);
                row.branch = Some(step_branch);
                row.loss = Some(plan.loss);
                row.grad_norm = Some(l2_norm(&plan.update));
                row.batch = Some(cfg.batch_size);
                row.k_selected = Some(plan.selection.k);
                row.selected_fraction = Some(diagnostics::selected_fraction(
                    plan.selection.k,
                    cfg.batch_size,
                )?);
                row.mass_covered = Some(plan.selection.mass_covered);
                row.coh_full = plan.coh_full;
                row.coh_selected = plan.coh_selected;
                row.gcg_percent = plan.gcg_percent;
                row.cross_dot = Some(conflict.dot);
                row.cross_cosine = Some(conflict.cosine);
                row.cross_cosine_ema = Some(ema_v);
                hooks.on_row(&row)?;
                rows.push(row);
            }
        }

        let completed = step + 1;
        if completed % cfg.eval_interval == 0 {
            emit_eval(&state, completed, &mut rows, hooks)?;
            hooks.on_checkpoint(completed, &state.student)?;
            last_eval_step = completed;
        }
    }

    if last_eval_step != cfg.steps {
        emit_eval(&state, cfg.steps, &mut rows, hooks)?;
        hooks.on_checkpoint(cfg.steps, &state.student)?;
    }

    let evals: Vec<&MetricsRow> = rows.iter().filter(|r| r.kind == RowKind::Eval).collect();
    let last = evals.last().expect("at least the step-0 eval row");
    let best_kl_general = evals
        .iter()
        .filter_map(|r| r.kl_general)
        .fold(f64::INFINITY, f64::min);
    Ok(TrainReport {
        final_kl_general: last.kl_general.unwrap_or(f64::NAN),
        final_kl_domain: last.kl_domain.unwrap_or(f64::NAN),
        best_kl_general,
        rows,
        student: state.student,
        consumed_rollouts: state.consumed_rollouts,
    })
}
