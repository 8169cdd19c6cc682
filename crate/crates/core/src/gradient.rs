//! Flat parameter-gradient records and the little linear algebra they need.
//!
//! Gradients over the student's logit table are dense V^m * V vectors. The
//! record caches its L2 norm because coherence and conflict diagnostics read
//! norms far more often than entries. Reductions run in caller-given index
//! order so results never depend on scheduling.

use crate::error::Error;
use crate::Result;

/// One parameter gradient (per-sample or aggregated) with its cached L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    flat: Vec<f64>,
    norm: f64,
}

impl GradientRecord {
    pub fn from_flat(flat: Vec<f64>) -> Self {
        let norm = l2_norm(&flat);
        GradientRecord { flat, norm }
    }

    pub fn zeros(dim: usize) -> Self {
        GradientRecord {
            flat: vec![0.0; dim],
            norm: 0.0,
        }
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.flat.len()
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// acc += scale * g, in place.
pub fn add_scaled(acc: &mut [f64], g: &[f64], scale: f64) {
    debug_assert_eq!(acc.len(), g.len());
    for (a, &x) in acc.iter_mut().zip(g) {
        *a += scale * x;
    }
}

/// Mean of `records[idxs]`, accumulated in the order given.
pub fn mean_over(records: &[GradientRecord], idxs: &[usize]) -> Result<Vec<f64>> {
    if idxs.is_empty() || records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dim = records[0].dim();
    let mut acc = vec![0.0; dim];
    for &i in idxs {
        let r = &records[i];
        if r.dim() != dim {
            return Err(Error::LengthMismatch {
                left: r.dim(),
                right: dim,
            });
        }
        add_scaled(&mut acc, r.flat(), 1.0);
    }
    let inv = 1.0 / idxs.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}
