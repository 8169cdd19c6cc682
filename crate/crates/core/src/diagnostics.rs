//! Measurement kit: gradient coherence and its selection gain, cross-branch
//! conflict, rollout-based KL evaluation, and a finite-difference gradient
//! checker. Everything here observes training; nothing feeds back into it.

use std::collections::BTreeSet;

use crate::context::Prompt;
use crate::error::Error;
use crate::gradient::{add_scaled, dot, l2_norm, GradientRecord};
use crate::math::{floor_renorm, kl_categorical, KL_Q_FLOOR};
use crate::policy::{StudentPolicy, TabularTeacher};
use crate::rng::RngStream;
use crate::rollout::Rollout;
use crate::trainer;
use crate::Result;

/// Norm threshold below which a gradient counts as zero for cosine purposes.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Gradient coherence of a set: ||sum g_i|| / sum ||g_i||, in [0, 1].
///
/// Returns `Ok(None)` when every gradient is zero — the ratio is undefined and
/// callers log a flagged (null) value rather than fail the run.
pub fn coherence(grads: &[GradientRecord]) -> Result<Option<f64>> {
    let all: Vec<usize> = (0..grads.len()).collect();
    coherence_over(grads, &all)
}

/// Coherence of the subset `grads[idxs]` (e.g. a selected batch prefix).
pub fn coherence_over(grads: &[GradientRecord], idxs: &[usize]) -> Result<Option<f64>> {
    if idxs.is_empty() || grads.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dim = grads[0].dim();
    let mut sum = vec![0.0; dim];
    let mut norm_sum = 0.0;
    for &i in idxs {
        let g = &grads[i];
        if g.dim() != dim {
            return Err(Error::LengthMismatch {
                left: g.dim(),
                right: dim,
            });
        }
        add_scaled(&mut sum, g.flat(), 1.0);
        norm_sum += g.norm();
    }
    if norm_sum == 0.0 {
        return Ok(None);
    }
    // Triangle inequality bounds the true value by 1; clamp the float crumbs.
    Ok(Some((l2_norm(&sum) / norm_sum).min(1.0)))
}

/// Gradient coherence gain of selection, in percent:
/// (Coh(selected) - Coh(full)) / Coh(full) * 100.
pub fn gcg(selected: &[GradientRecord], full: &[GradientRecord]) -> Result<Option<f64>> {
    let sel = coherence(selected)?;
    let ful = coherence(full)?;
    Ok(gcg_from_coherence(sel, ful))
}

/// GCG from precomputed coherences; `None` when the baseline is zero or
/// either side is undefined.
pub fn gcg_from_coherence(selected: Option<f64>, full: Option<f64>) -> Option<f64> {
    match (selected, full) {
        (Some(s), Some(f)) if f > 0.0 => Some((s - f) / f * 100.0),
        _ => None,
    }
}

/// Dot/cosine geometry between the two branch gradients at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictReport {
    pub dot: f64,
    /// Zero (flagged degenerate) when either norm is below [`DEGENERATE_NORM`].
    pub cosine: f64,
    pub norm_general: f64,
    pub norm_domain: f64,
    pub degenerate: bool,
}

pub fn cross_domain_conflict(
    g_general: &GradientRecord,
    g_domain: &GradientRecord,
) -> Result<ConflictReport> {
    if g_general.dim() != g_domain.dim() {
        return Err(Error::LengthMismatch {
            left: g_general.dim(),
            right: g_domain.dim(),
        });
    }
    let d = dot(g_general.flat(), g_domain.flat());
    let (ng, nd) = (g_general.norm(), g_domain.norm());
    let degenerate = ng < DEGENERATE_NORM || nd < DEGENERATE_NORM;
    let cosine = if degenerate {
        0.0
    } else {
        (d / (ng * nd)).clamp(-1.0, 1.0)
    };
    Ok(ConflictReport {
        dot: d,
        cosine,
        norm_general: ng,
        norm_domain: nd,
        degenerate,
    })
}

/// Mean KL(teacher row || student row) over contexts visited by `n_eval`
/// rollouts generated by the *teacher*. Teacher visitation makes the measure
/// independent of the student and of the training method under test.
pub fn eval_kl(
    student: &StudentPolicy,
    teacher: &TabularTeacher,
    prompts: &[Prompt],
    t_roll: usize,
    n_eval: usize,
    base: &RngStream,
) -> Result<f64> {
    if prompts.is_empty() || n_eval == 0 || t_roll == 0 {
        return Err(Error::EmptyBatch);
    }
    let vocab = teacher.vocab();
    let order = teacher.order();
    if student.vocab() != vocab || student.order() != order {
        return Err(Error::ShapeMismatch(
            "student/teacher table shapes differ".into(),
        ));
    }
    let mut pick = base.derive("pick");
    let mut acc = 0.0;
    for i in 0..n_eval {
        let prompt = &prompts[pick.below(prompts.len())];
        let mut walk = base.derive_index(i as u64);
        let mut row = crate::context::encode_context(&prompt.seed, vocab, order)?;
        for _ in 0..t_roll {
            // The student row is floored before the KL call: untrained corners
            // of the logit table can softmax-underflow past the q floor.
            let q = floor_renorm(&student.next_dist(row), KL_Q_FLOOR);
            acc += kl_categorical(teacher.row(row), &q)?;
            let tok = teacher.sample_next(row, &mut walk);
            row = crate::context::advance_row(row, tok, vocab, order);
        }
    }
    Ok(acc / (n_eval * t_roll) as f64)
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Relative error with a floored denominator: near-zero coordinates compare at
/// an effective absolute tolerance instead of amplifying cancellation noise.
pub fn fd_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Compare `analytic` (a full flat gradient) against central finite
/// differences of the frozen-gap batch loss at the given coordinates.
pub fn fd_compare(
    student: &StudentPolicy,
    rollouts: &[Rollout],
    scale: f64,
    h: f64,
    coords: &[usize],
    analytic: &[f64],
) -> Result<f64> {
    if analytic.len() != student.dim() {
        return Err(Error::LengthMismatch {
            left: analytic.len(),
            right: student.dim(),
        });
    }
    let mut worst = 0.0f64;
    let mut probe = student.clone();
    for &idx in coords {
        let base = probe.logits()[idx];
        probe.set_logit(idx, base + h);
        let up = trainer::batch_loss_frozen(&probe, rollouts, scale)?;
        probe.set_logit(idx, base - h);
        let down = trainer::batch_loss_frozen(&probe, rollouts, scale)?;
        probe.set_logit(idx, base);
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(fd_rel_err(analytic[idx], numeric));
    }
    Ok(worst)
}

/// Check the analytic batch gradient on `n_coords` random coordinates drawn
/// from rows the batch actually visits (plus the token axis).
pub fn finite_diff_check(
    student: &StudentPolicy,
    rollouts: &[Rollout],
    scale: f64,
    h: f64,
    n_coords: usize,
    stream: &mut RngStream,
) -> Result<FdReport> {
    if rollouts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let analytic = trainer::batch_grad_frozen(student, rollouts, scale)?;
    let visited: BTreeSet<usize> = rollouts
        .iter()
        .flat_map(|r| r.records.iter().map(|rec| rec.ctx_row))
        .collect();
    let rows: Vec<usize> = visited.into_iter().collect();
    let vocab = student.vocab();
    let coords: Vec<usize> = (0..n_coords)
        .map(|_| rows[stream.below(rows.len())] * vocab + stream.below(vocab))
        .collect();
    let max_rel_err = fd_compare(student, rollouts, scale, h, &coords, &analytic)?;
    Ok(FdReport {
        max_rel_err,
        coords_checked: coords.len(),
    })
}

/// Fraction of the batch that survived selection.
pub fn selected_fraction(k: usize, batch_size: usize) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    if k > batch_size {
        return Err(Error::Runtime(format!(
            "selected count {k} exceeds batch size {batch_size}"
        )));
    }
    Ok(k as f64 / batch_size as f64)
}

/// Exponential moving average parameterized by half-life in steps.
#[derive(Debug, Clone, Copy)]
pub struct Ema {
    decay: f64,
    value: Option<f64>,
}

impl Ema {
    pub fn with_half_life(steps: f64) -> Self {
        debug_assert!(steps > 0.0);
        Ema {
            decay: (-std::f64::consts::LN_2 / steps).exp(),
            value: None,
        }
    }

    /// Feed one sample; the first sample initializes the average.
    pub fn update(&mut self, x: f64) -> f64 {
        let v = match self.value {
            None => x,
            Some(prev) => self.decay * prev + (1.0 - self.decay) * x,
        };
        self.value = Some(v);
        v
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }
}
