//! Categorical KL divergence and log-space helpers shared by policies,
//! evaluation, and the scenario builders.

use crate::error::Error;
use crate::Result;

/// Support floor expected of the q argument in [`kl_categorical`].
pub const KL_Q_FLOOR: f64 = 1e-12;

/// KL(p || q) = sum_v p_v ln(p_v / q_v), with the 0 ln 0 = 0 convention.
///
/// `q` must sit above [`KL_Q_FLOOR`] wherever `p` carries mass; smoothed
/// policy rows guarantee this, and raw callers get a divergence-undefined
/// error instead of an infinity.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    debug_assert!(p.iter().all(|&x| x >= 0.0) && q.iter().all(|&x| x >= 0.0));
    debug_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    debug_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let mut acc = 0.0;
    for (i, (&pv, &qv)) in p.iter().zip(q).enumerate() {
        if pv == 0.0 {
            continue;
        }
        if qv < KL_Q_FLOOR {
            return Err(Error::DivergenceUndefined {
                index: i,
                p_mass: pv,
            });
        }
        acc += pv * (pv / qv).ln();
    }
    Ok(acc)
}

/// log(sum_i exp(x_i)) with max-subtraction for stability.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Softmax of a logit row.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
    }
    out
}

/// Floor a probability row at `eps`, renormalize, then re-floor.
///
/// The final elementwise max guarantees every entry is >= `eps` exactly; it
/// perturbs the row sum by < V * eps^2 * V, far inside the 1e-9 sum budget.
pub fn floor_renorm(row: &[f64], eps: f64) -> Vec<f64> {
    debug_assert!(eps > 0.0);
    let mut out: Vec<f64> = row.iter().map(|&p| p.max(eps)).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
        *o = o.max(eps);
    }
    out
}
