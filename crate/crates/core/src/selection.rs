//! Gap scores and mass-prefix batch selection.
//!
//! Each rollout gets a nonnegative score from its generation-time gaps: mean
//! absolute gap on the general branch (any mismatch is signal) and mean
//! positive part on the domain branch (only under-covered teacher mass
//! counts). Selection sorts a batch by score and keeps the smallest prefix
//! holding at least a fraction `rho` of the total score mass.

use crate::context::Branch;
use crate::error::Error;
use crate::rollout::Rollout;
use crate::Result;

/// Score of one batch member, tagged with its position in the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleScore {
    pub batch_index: usize,
    pub score: f64,
}

/// Outcome of mass-prefix selection over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected batch indices, highest score first (ties by batch index).
    pub selected: Vec<usize>,
    pub k: usize,
    /// Fraction of total score mass inside the prefix; 1.0 for an all-zero batch.
    pub mass_covered: f64,
    pub total_mass: f64,
}

/// General-branch score: mean |gap| over the rollout.
pub fn score_general(rollout: &Rollout) -> Result<f64> {
    if rollout.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let s: f64 = rollout.records.iter().map(|r| r.gap.abs()).sum();
    Ok(s / rollout.len() as f64)
}

/// Domain-branch score: mean positive-part gap over the rollout.
pub fn score_domain(rollout: &Rollout) -> Result<f64> {
    if rollout.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let s: f64 = rollout.records.iter().map(|r| r.gap.max(0.0)).sum();
    Ok(s / rollout.len() as f64)
}

/// Score every rollout in a batch with its branch's score function.
pub fn score_batch(rollouts: &[Rollout], branch: Branch) -> Result<Vec<SampleScore>> {
    rollouts
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let score = match branch {
                Branch::General => score_general(r)?,
                Branch::Domain => score_domain(r)?,
            };
            Ok(SampleScore {
                batch_index: i,
                score,
            })
        })
        .collect()
}

/// Keep the smallest descending-score prefix with at least `rho` of the total
/// score mass.
///
/// Ties break toward the lower batch index. Both the total and the prefix are
/// accumulated over the sorted order, so at `rho = 1` the boundary "all
/// nonzero scores, zero tail excluded" is exact in floating point. An all-zero
/// batch carries no signal to rank by: the entire batch is selected and
/// coverage reported as 1.
pub fn select_mass_prefix(scores: &[SampleScore], rho: f64) -> Result<SelectionResult> {
    if scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    debug_assert!((0.0..=1.0).contains(&rho), "rho = {rho} outside [0, 1]");
    for s in scores {
        if !s.score.is_finite() || s.score < 0.0 {
            return Err(Error::InvalidScore {
                index: s.batch_index,
                value: s.score,
            });
        }
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .score
            .total_cmp(&scores[a].score)
            .then(scores[a].batch_index.cmp(&scores[b].batch_index))
    });

    let total_mass: f64 = order.iter().map(|&i| scores[i].score).sum();
    if total_mass <= 0.0 {
        return Ok(SelectionResult {
            selected: order.iter().map(|&i| scores[i].batch_index).collect(),
            k: scores.len(),
            mass_covered: 1.0,
            total_mass,
        });
    }

    let target = rho * total_mass;
    let mut acc = 0.0;
    let mut k = scores.len();
    for (pos, &i) in order.iter().enumerate() {
        acc += scores[i].score;
        if acc >= target {
            k = pos + 1;
            break;
        }
    }
    let mass_covered = order[..k].iter().map(|&i| scores[i].score).sum::<f64>() / total_mass;
    Ok(SelectionResult {
        selected: order[..k].iter().map(|&i| scores[i].batch_index).collect(),
        k,
        mass_covered,
        total_mass,
    })
}
