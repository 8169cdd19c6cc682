//! Tabular policies: fixed smoothed teachers and the trainable softmax student.
//!
//! Both kinds are dense V^m x V tables addressed by context row. Teachers store
//! probabilities directly (floor-smoothed so every log is finite); the student
//! stores logits, and its parameter vector *is* the flattened logit table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::context::Token;
use crate::error::Error;
use crate::math::{floor_renorm, log_sum_exp, softmax};
use crate::rng::RngStream;
use crate::Result;

/// Probability floor applied to every teacher row.
pub const ROW_FLOOR: f64 = 1e-6;

const CKPT_MAGIC: &[u8; 8] = b"MOPDTBL\x01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    TeacherProbs,
    StudentLogits,
}

impl PolicyKind {
    fn tag(self) -> u8 {
        match self {
            PolicyKind::TeacherProbs => 0,
            PolicyKind::StudentLogits => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(PolicyKind::TeacherProbs),
            1 => Ok(PolicyKind::StudentLogits),
            other => Err(Error::Checkpoint(format!(
                "unknown policy kind tag {other}"
            ))),
        }
    }
}

/// Sample from a categorical distribution with one uniform draw via the
/// inverse CDF: the first token whose cumulative mass exceeds `u` wins.
pub fn token_from_uniform(dist: &[f64], u: f64) -> Token {
    debug_assert!(!dist.is_empty());
    let mut cum = 0.0;
    for (v, &p) in dist.iter().enumerate() {
        cum += p;
        if u < cum {
            return Token(v as u16);
        }
    }
    // Rounding can leave cum a hair under 1; the draw belongs to the tail.
    Token((dist.len() - 1) as u16)
}

/// A frozen teacher: smoothed probability table plus cached logs.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularTeacher {
    vocab: usize,
    order: usize,
    probs: Vec<f64>,
    logs: Vec<f64>,
}

impl TabularTeacher {
    /// Build from raw per-row distributions; rows are floor-smoothed at
    /// [`ROW_FLOOR`] so every entry has a finite log.
    pub fn from_rows(vocab: usize, order: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let expect = vocab.pow(order as u32);
        if rows.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "teacher needs {expect} rows, got {}",
                rows.len()
            )));
        }
        let mut probs = Vec::with_capacity(expect * vocab);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != vocab {
                return Err(Error::ShapeMismatch(format!(
                    "row {r} has {} entries, expected {vocab}",
                    row.len()
                )));
            }
            probs.extend(floor_renorm(row, ROW_FLOOR));
        }
        Ok(Self::from_flat(vocab, order, probs))
    }

    /// Wrap rows that are already smoothed (no re-flooring, no renorm); used
    /// by the scenario builder to share unmodified rows bit-for-bit.
    pub(crate) fn from_flat(vocab: usize, order: usize, probs: Vec<f64>) -> Self {
        let logs = probs.iter().map(|&p| p.ln()).collect();
        TabularTeacher {
            vocab,
            order,
            probs,
            logs,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.probs.len() / self.vocab
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.probs[row * self.vocab..(row + 1) * self.vocab]
    }

    pub fn flat(&self) -> &[f64] {
        &self.probs
    }

    pub fn logprob(&self, row: usize, tok: Token) -> f64 {
        self.logs[row * self.vocab + tok.id()]
    }

    pub fn sample_next(&self, row: usize, stream: &mut RngStream) -> Token {
        token_from_uniform(self.row(row), stream.uniform())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_table(
            path,
            PolicyKind::TeacherProbs,
            self.vocab,
            self.order,
            &self.probs,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (kind, vocab, order, data) = read_table(path)?;
        if kind != PolicyKind::TeacherProbs {
            return Err(Error::Checkpoint("expected a teacher table".into()));
        }
        for (r, row) in data.chunks(vocab).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < ROW_FLOOR) {
                return Err(Error::Checkpoint(format!(
                    "teacher row {r} is not a smoothed distribution"
                )));
            }
        }
        Ok(Self::from_flat(vocab, order, data))
    }
}

/// The trainable policy: a logit table with softmax rows.
///
/// `version` increments on every parameter change; rollouts carry the version
/// they were generated under so stale reuse is detected, not silent.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentPolicy {
    vocab: usize,
    order: usize,
    logits: Vec<f64>,
    version: u64,
}

impl StudentPolicy {
    pub fn new(vocab: usize, order: usize, logits: Vec<f64>) -> Result<Self> {
        let dim = vocab.pow(order as u32) * vocab;
        if logits.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "student needs {dim} logits, got {}",
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite logit".into()));
        }
        Ok(StudentPolicy {
            vocab,
            order,
            logits,
            version: 0,
        })
    }

    /// Student whose every row reproduces the teacher row: logits = ln(probs).
    pub fn init_from(teacher: &TabularTeacher) -> Self {
        let logits = teacher.flat().iter().map(|&p| p.ln()).collect();
        StudentPolicy {
            vocab: teacher.vocab(),
            order: teacher.order(),
            logits,
            version: 0,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.logits.len() / self.vocab
    }

    pub fn dim(&self) -> usize {
        self.logits.len()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn logit_row(&self, row: usize) -> &[f64] {
        &self.logits[row * self.vocab..(row + 1) * self.vocab]
    }

    /// Softmax distribution over the next token.
    pub fn next_dist(&self, row: usize) -> Vec<f64> {
        softmax(self.logit_row(row))
    }

    pub fn logprob(&self, row: usize, tok: Token) -> f64 {
        let r = self.logit_row(row);
        r[tok.id()] - log_sum_exp(r)
    }

    /// d logprob(tok) / d logits[row]: one-hot minus softmax. Zero elsewhere.
    pub fn grad_logprob(&self, row: usize, tok: Token) -> Vec<f64> {
        let mut g: Vec<f64> = self.next_dist(row).iter().map(|p| -p).collect();
        g[tok.id()] += 1.0;
        g
    }

    pub fn sample_next(&self, row: usize, stream: &mut RngStream) -> Token {
        token_from_uniform(&self.next_dist(row), stream.uniform())
    }

    /// SGD step: logits <- logits - eta * grad. Bumps the parameter version.
    pub fn apply_grad(&mut self, grad: &[f64], eta: f64) -> Result<()> {
        if grad.len() != self.logits.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient has {} entries, parameters have {}",
                grad.len(),
                self.logits.len()
            )));
        }
        for (l, g) in self.logits.iter_mut().zip(grad) {
            *l -= eta * g;
        }
        self.version += 1;
        Ok(())
    }

    /// Direct logit overwrite (tests, perturbation probes). Bumps the version.
    pub fn set_logit(&mut self, index: usize, value: f64) {
        self.logits[index] = value;
        self.version += 1;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_table(
            path,
            PolicyKind::StudentLogits,
            self.vocab,
            self.order,
            &self.logits,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (kind, vocab, order, data) = read_table(path)?;
        if kind != PolicyKind::StudentLogits {
            return Err(Error::Checkpoint("expected a student table".into()));
        }
        StudentPolicy::new(vocab, order, data)
    }
}

/// On-disk layout: magic, kind tag, V and m as u32 LE, then the flat table as
/// f64 LE. Raw bit round-trip, so loads are bit-exact.
fn write_table(
    path: &Path,
    kind: PolicyKind,
    vocab: usize,
    order: usize,
    data: &[f64],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&[kind.tag()])?;
    w.write_all(&(vocab as u32).to_le_bytes())?;
    w.write_all(&(order as u32).to_le_bytes())?;
    for &x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(PolicyKind, usize, usize, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint("bad magic; not a policy table".into()));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let kind = PolicyKind::from_tag(tag[0])?;
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let vocab = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let order = u32::from_le_bytes(u32buf) as usize;
    let dim = vocab
        .checked_pow(order as u32)
        .and_then(|rows| rows.checked_mul(vocab))
        .ok_or_else(|| Error::Checkpoint(format!("implausible shape V={vocab} m={order}")))?;
    let mut data = Vec::with_capacity(dim);
    let mut f64buf = [0u8; 8];
    for _ in 0..dim {
        r.read_exact(&mut f64buf)
            .map_err(|_| Error::Checkpoint("table truncated".into()))?;
        data.push(f64::from_le_bytes(f64buf));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Checkpoint("trailing bytes after table".into()));
    }
    Ok((kind, vocab, order, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::kl_categorical;

    fn uniform_teacher(vocab: usize, order: usize) -> TabularTeacher {
        let rows = vec![vec![1.0 / vocab as f64; vocab]; vocab.pow(order as u32)];
        TabularTeacher::from_rows(vocab, order, &rows).unwrap()
    }

    #[test]
    fn smoothing_gives_finite_logs_and_unit_rows() {
        let mut rows = vec![vec![0.25; 4]; 16];
        rows[3] = vec![1.0, 0.0, 0.0, 0.0]; // hard zero before smoothing
        let t = TabularTeacher::from_rows(4, 2, &rows).unwrap();
        for r in 0..16 {
            let row = t.row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= ROW_FLOOR));
            for v in 0..4u16 {
                assert!(t.logprob(r, Token(v)).is_finite());
            }
        }
        assert!(t.logprob(3, Token(1)) < (2.0 * ROW_FLOOR).ln());
    }

    #[test]
    fn student_uniform_logits_give_uniform_dist() {
        let s = StudentPolicy::new(4, 1, vec![0.0; 16]).unwrap();
        for &p in &s.next_dist(2) {
            assert_eq!(p, 0.25);
        }
        assert!((s.logprob(2, Token(1)) - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logprob_matches_log_of_next_dist() {
        let logits: Vec<f64> = (0..32)
            .map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.5)
            .collect();
        let s = StudentPolicy::new(4, 1, logits[..16].to_vec()).unwrap();
        for row in 0..4 {
            let dist = s.next_dist(row);
            for v in 0..4u16 {
                let lp = s.logprob(row, Token(v));
                assert!((lp - dist[v as usize].ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_logprob_uniform_row_known_value() {
        let s = StudentPolicy::new(4, 1, vec![0.0; 16]).unwrap();
        let g = s.grad_logprob(0, Token(2));
        assert_eq!(g, vec![-0.25, -0.25, 0.75, -0.25]);
    }

    #[test]
    fn grad_rows_sum_to_zero_exhaustively_at_default_shape() {
        let mut logits = vec![0.0; 144 * 12];
        for (i, l) in logits.iter_mut().enumerate() {
            *l = ((i * 29) % 17) as f64 * 0.21 - 1.7;
        }
        let s = StudentPolicy::new(12, 2, logits).unwrap();
        for row in 0..144 {
            for v in 0..12u16 {
                let sum: f64 = s.grad_logprob(row, Token(v)).iter().sum();
                assert!(sum.abs() <= 1e-12, "row {row} tok {v}: sum {sum}");
            }
        }
    }

    /// Oracle: central finite differences of logprob w.r.t. each logit in the
    /// touched row, h = 1e-5, on 100+ random (row, token) coordinates.
    #[test]
    fn grad_logprob_matches_central_finite_differences() {
        let mut stream = RngStream::new(71, "policy-fd");
        let mut logits = vec![0.0; 144 * 12];
        for l in logits.iter_mut() {
            *l = stream.uniform() * 4.0 - 2.0;
        }
        let s = StudentPolicy::new(12, 2, logits.clone()).unwrap();
        let h = 1e-5;
        for _ in 0..120 {
            let row = stream.below(144);
            let tok = Token(stream.below(12) as u16);
            let analytic = s.grad_logprob(row, tok);
            let j = stream.below(12);
            let idx = row * 12 + j;
            let mut hi = logits.clone();
            hi[idx] += h;
            let mut lo = logits.clone();
            lo[idx] -= h;
            let s_hi = StudentPolicy::new(12, 2, hi).unwrap();
            let s_lo = StudentPolicy::new(12, 2, lo).unwrap();
            let fd = (s_hi.logprob(row, tok) - s_lo.logprob(row, tok)) / (2.0 * h);
            let denom = analytic[j].abs().max(fd.abs()).max(1e-4);
            assert!(
                ((analytic[j] - fd) / denom).abs() < 1e-5,
                "row {row} tok {:?} coord {j}: analytic {} vs fd {fd}",
                tok,
                analytic[j]
            );
        }
    }

    #[test]
    fn init_from_teacher_reproduces_rows() {
        let mut rows = Vec::new();
        for r in 0..16 {
            let mut row = vec![0.1; 4];
            row[r % 4] = 0.7;
            rows.push(row);
        }
        let t = TabularTeacher::from_rows(4, 2, &rows).unwrap();
        let s = StudentPolicy::init_from(&t);
        for r in 0..16 {
            let kl = kl_categorical(t.row(r), &s.next_dist(r)).unwrap();
            assert!(kl.abs() < 1e-12, "row {r}: kl {kl}");
        }
    }

    #[test]
    fn inverse_cdf_sampling_known_draws() {
        let dist = [0.7, 0.3];
        assert_eq!(token_from_uniform(&dist, 0.2), Token(0));
        assert_eq!(token_from_uniform(&dist, 0.9), Token(1));
        assert_eq!(token_from_uniform(&dist, 0.0), Token(0));
        // Tail guard: u at (or past) the accumulated mass lands on last token.
        assert_eq!(token_from_uniform(&[0.5, 0.5], 1.0 - 1e-16), Token(1));
    }

    #[test]
    fn sample_next_is_deterministic_and_unbiased() {
        let row = [(0.7f64).ln(), (0.3f64).ln()];
        let s = StudentPolicy::new(2, 1, row.iter().chain(&row).copied().collect()).unwrap();
        let mut a = RngStream::new(5, "draws");
        let mut b = RngStream::new(5, "draws");
        let n = 100_000;
        let mut ones = 0usize;
        for _ in 0..n {
            let ta = s.sample_next(0, &mut a);
            let tb = s.sample_next(0, &mut b);
            assert_eq!(ta, tb);
            if ta == Token(1) {
                ones += 1;
            }
        }
        let freq = ones as f64 / n as f64;
        let se = (0.3 * 0.7 / n as f64).sqrt();
        assert!(
            (freq - 0.3).abs() < 3.0 * se,
            "freq {freq} outside 3 standard errors of 0.3"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut stream = RngStream::new(9, "ckpt");
        let logits: Vec<f64> = (0..144 * 12)
            .map(|_| (stream.uniform() - 0.5) * 40.0)
            .collect();
        let s = StudentPolicy::new(12, 2, logits).unwrap();
        let path = dir.path().join("student.bin");
        s.save(&path).unwrap();
        let back = StudentPolicy::load(&path).unwrap();
        assert_eq!(back.vocab(), 12);
        assert_eq!(back.order(), 2);
        for (a, b) in s.logits().iter().zip(back.logits()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let t = uniform_teacher(6, 2);
        let tpath = dir.path().join("teacher.bin");
        t.save(&tpath).unwrap();
        let tback = TabularTeacher::load(&tpath).unwrap();
        for (a, b) in t.flat().iter().zip(tback.flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a table").unwrap();
        assert!(matches!(
            StudentPolicy::load(&path),
            Err(Error::Checkpoint(_))
        ));

        let s = StudentPolicy::new(6, 1, vec![0.0; 36]).unwrap();
        let good = dir.path().join("good.bin");
        s.save(&good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            StudentPolicy::load(&path),
            Err(Error::Checkpoint(_))
        ));
        // Kind mismatch: a student table is not a teacher.
        assert!(matches!(
            TabularTeacher::load(&good),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn apply_grad_updates_and_bumps_version() {
        let mut s = StudentPolicy::new(6, 1, vec![0.0; 36]).unwrap();
        assert_eq!(s.version(), 0);
        let mut g = vec![0.0; 36];
        g[7] = 2.0;
        s.apply_grad(&g, 0.5).unwrap();
        assert_eq!(s.version(), 1);
        assert_eq!(s.logits()[7], -1.0);
        assert_eq!(s.logits()[8], 0.0);
        assert!(s.apply_grad(&[0.0; 3], 0.5).is_err());
    }
}
