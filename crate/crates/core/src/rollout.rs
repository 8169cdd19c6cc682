//! Student rollout generation with per-token teacher gap records.
//!
//! The student samples its own trajectories; the branch teacher only scores
//! them. Each generated token keeps the context row it was produced from, both
//! log-probabilities at generation time, and their gap (teacher minus student),
//! which later serves as the frozen advantage and the selection signal.
//!
//! Batch generation derives one child RNG stream per batch position, so a
//! batch is bitwise identical whether it is produced sequentially or fanned
//! out across any number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{advance_row, encode_context, Branch, Prompt, Token};
use crate::error::Error;
use crate::policy::{StudentPolicy, TabularTeacher};
use crate::rng::RngStream;
use crate::Result;

/// One generated token and everything the trainer needs to know about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token: Token,
    /// Table row (context) this token was sampled from.
    pub ctx_row: usize,
    /// Student log-probability of `token` at generation time.
    pub student_logprob: f64,
    /// Branch-teacher log-probability of the same token.
    pub teacher_logprob: f64,
    /// teacher_logprob - student_logprob; frozen advantage for this token.
    pub gap: f64,
}

/// One student trajectory scored by a branch teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub prompt_id: usize,
    pub branch: Branch,
    pub records: Vec<TokenRecord>,
    /// Student parameter version the trajectory was generated under.
    pub student_version: u64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn check_shapes(student: &StudentPolicy, teacher: &TabularTeacher) -> Result<()> {
    if student.vocab() != teacher.vocab() || student.order() != teacher.order() {
        return Err(Error::ShapeMismatch(format!(
            "student is {}^{} table, teacher is {}^{}",
            student.vocab(),
            student.order(),
            teacher.vocab(),
            teacher.order()
        )));
    }
    Ok(())
}

/// Roll `t_roll` tokens from the student starting at the prompt's seed
/// context, scoring each sampled token with the branch teacher.
pub fn generate_rollout(
    student: &StudentPolicy,
    teacher: &TabularTeacher,
    prompt: &Prompt,
    t_roll: usize,
    stream: &mut RngStream,
) -> Result<Rollout> {
    check_shapes(student, teacher)?;
    let vocab = student.vocab();
    let order = student.order();
    let mut row = encode_context(&prompt.seed, vocab, order)?;
    let mut records = Vec::with_capacity(t_roll);
    for _ in 0..t_roll {
        let token = student.sample_next(row, stream);
        let student_logprob = student.logprob(row, token);
        let teacher_logprob = teacher.logprob(row, token);
        records.push(TokenRecord {
            token,
            ctx_row: row,
            student_logprob,
            teacher_logprob,
            gap: teacher_logprob - student_logprob,
        });
        row = advance_row(row, token, vocab, order);
    }
    Ok(Rollout {
        prompt_id: prompt.id,
        branch: prompt.branch,
        records,
        student_version: student.version(),
    })
}

/// Generate one rollout per prompt. Position `i` always uses the child stream
/// `base.derive_index(i)`, so output is independent of worker count and
/// identical to a sequential loop. An empty prompt list is an empty batch.
pub fn generate_batch(
    student: &StudentPolicy,
    teacher: &TabularTeacher,
    prompts: &[Prompt],
    t_roll: usize,
    base: &RngStream,
) -> Result<Vec<Rollout>> {
    check_shapes(student, teacher)?;
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            let mut stream = base.derive_index(i as u64);
            generate_rollout(student, teacher, prompt, t_roll, &mut stream)
        })
        .collect()
}
