//! Synthetic forgetting/recovery world: two teachers over a shared vocabulary
//! plus three prompt families.
//!
//! The top three token ids form the domain set V_d. The general teacher is a
//! broad Dirichlet table that keeps V_d rare (<= 0.1 mass per row); the domain
//! teacher copies it and overwrites every row whose context mentions a V_d
//! token with a sharp distribution concentrated on V_d. Because those sharp
//! rows keep emitting V_d tokens, a student that has specialized toward the
//! domain teacher gets trapped in V_d contexts, which is exactly the conflict
//! the training modes are compared on.
//!
//! Prompt families:
//! * true general — every context built only from non-V_d tokens;
//! * proxy general — the first ceil(coverage * n) of a seeded shuffle of the
//!   true set (the recovery data is an incomplete stand-in);
//! * domain — every context whose first token is in V_d.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::context::{decode_context, Branch, Prompt, Token};
use crate::error::{Error, FieldViolation};
use crate::math::floor_renorm;
use crate::policy::{TabularTeacher, ROW_FLOOR};
use crate::rng::RngStream;
use crate::Result;

/// Number of domain tokens at the top of the vocabulary.
pub const N_DOMAIN_TOKENS: usize = 3;

/// Per-row cap on general-teacher mass over V_d.
pub const GENERAL_VD_CAP: f64 = 0.1;

/// V_d mass the domain teacher's overwritten rows are re-weighted to. Sits
/// above the required 0.9 so the row still clears it after smoothing.
pub const DOMAIN_VD_MASS: f64 = 0.95;

/// The domain token set: the top [`N_DOMAIN_TOKENS`] ids.
pub fn domain_token_set(vocab: usize) -> Vec<Token> {
    (vocab - N_DOMAIN_TOKENS..vocab)
        .map(|v| Token(v as u16))
        .collect()
}

fn is_domain_token(id: usize, vocab: usize) -> bool {
    id >= vocab - N_DOMAIN_TOKENS
}

/// Which prompt family to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    GeneralTrue,
    GeneralProxy,
    Domain,
}

/// A fully built world: both teachers and all three prompt families.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub vocab: usize,
    pub order: usize,
    pub seed: u64,
    /// Re-seed attempt the world was built under (0 unless specialization
    /// rejected earlier draws).
    pub attempt: u32,
    pub coverage: f64,
    pub general_teacher: TabularTeacher,
    pub domain_teacher: TabularTeacher,
    pub prompts_general_true: Vec<Prompt>,
    pub prompts_general_proxy: Vec<Prompt>,
    pub prompts_domain: Vec<Prompt>,
}

impl Scenario {
    pub fn family(&self, f: Family) -> &[Prompt] {
        match f {
            Family::GeneralTrue => &self.prompts_general_true,
            Family::GeneralProxy => &self.prompts_general_proxy,
            Family::Domain => &self.prompts_domain,
        }
    }

    /// Family a branch trains on: the general branch only sees the proxy set.
    pub fn training_family(&self, branch: Branch) -> &[Prompt] {
        match branch {
            Branch::General => &self.prompts_general_proxy,
            Branch::Domain => &self.prompts_domain,
        }
    }

    /// Family a branch is evaluated on: the general branch is scored on the
    /// full true set, coverage gaps included.
    pub fn eval_family(&self, branch: Branch) -> &[Prompt] {
        match branch {
            Branch::General => &self.prompts_general_true,
            Branch::Domain => &self.prompts_domain,
        }
    }

    pub fn teacher(&self, branch: Branch) -> &TabularTeacher {
        match branch {
            Branch::General => &self.general_teacher,
            Branch::Domain => &self.domain_teacher,
        }
    }
}

/// Uniform with-replacement prompt draw for one batch.
pub fn sample_prompts(family: &[Prompt], n: usize, stream: &mut RngStream) -> Vec<Prompt> {
    (0..n)
        .map(|_| family[stream.below(family.len())].clone())
        .collect()
}

fn dirichlet_row(vocab: usize, alpha: f64, stream: &mut RngStream) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("valid gamma shape");
    let mut row: Vec<f64> = (0..vocab).map(|_| gamma.sample(stream.raw())).collect();
    let sum: f64 = row.iter().sum();
    if sum < 1e-300 {
        // Sharp shapes can underflow every coordinate; fall back to uniform.
        return vec![1.0 / vocab as f64; vocab];
    }
    for x in &mut row {
        *x /= sum;
    }
    row
}

/// Broad Dirichlet(0.5) table with the V_d mass of every row capped at
/// [`GENERAL_VD_CAP`].
pub fn build_general_teacher(
    vocab: usize,
    order: usize,
    stream: &mut RngStream,
) -> Result<TabularTeacher> {
    if vocab < N_DOMAIN_TOKENS + 3 {
        return Err(Error::Validation(vec![FieldViolation {
            field: "vocab",
            message: format!(
                "need at least {} tokens to hold {N_DOMAIN_TOKENS} domain tokens plus general ones, got {vocab}",
                N_DOMAIN_TOKENS + 3
            ),
        }]));
    }
    let rows_n = vocab.pow(order as u32);
    let mut rows = Vec::with_capacity(rows_n);
    for _ in 0..rows_n {
        // Smooth before capping: the floor pass adds mass, so a pre-smoothing
        // cap would end up slightly violated in the stored table.
        let mut row = floor_renorm(&dirichlet_row(vocab, 0.5, stream), ROW_FLOOR);
        let vd_mass: f64 = row.iter().skip(vocab - N_DOMAIN_TOKENS).sum();
        if vd_mass > GENERAL_VD_CAP {
            let rest: f64 = row.iter().take(vocab - N_DOMAIN_TOKENS).sum();
            for x in row.iter_mut().take(vocab - N_DOMAIN_TOKENS) {
                *x *= (1.0 - GENERAL_VD_CAP) / rest;
            }
            // Shrink V_d onto the cap exactly, pinning entries that would
            // fall below the floor (a later floor pass would lift them and
            // push the V_d mass back over the cap).
            let dom = vocab - N_DOMAIN_TOKENS..vocab;
            let mut pinned = [false; N_DOMAIN_TOKENS];
            loop {
                let mut free_mass = 0.0;
                let mut pinned_mass = 0.0;
                for (j, v) in dom.clone().enumerate() {
                    if pinned[j] {
                        pinned_mass += ROW_FLOOR;
                    } else {
                        free_mass += row[v];
                    }
                }
                let f = (GENERAL_VD_CAP - pinned_mass) / free_mass;
                let mut clean = true;
                for (j, v) in dom.clone().enumerate() {
                    if !pinned[j] && row[v] * f < ROW_FLOOR {
                        pinned[j] = true;
                        row[v] = ROW_FLOOR;
                        clean = false;
                    }
                }
                if clean {
                    for (j, v) in dom.clone().enumerate() {
                        if !pinned[j] {
                            row[v] *= f;
                        }
                    }
                    break;
                }
            }
        }
        rows.push(row);
    }
    TabularTeacher::from_rows(vocab, order, &rows)
}

/// Copy of the general teacher with every V_d-mentioning context overwritten
/// by a sharp Dirichlet(0.05) row re-weighted onto V_d.
pub fn build_domain_teacher(general: &TabularTeacher, stream: &mut RngStream) -> TabularTeacher {
    let vocab = general.vocab();
    let order = general.order();
    let mut flat = general.flat().to_vec();
    for row in 0..general.rows() {
        let ctx = decode_context(row, vocab, order).expect("row in range");
        let mentions_vd = ctx.tokens().iter().any(|t| is_domain_token(t.id(), vocab));
        if !mentions_vd {
            continue; // untouched rows stay bit-identical to the general teacher
        }
        let raw = dirichlet_row(vocab, 0.05, stream);
        let vd_sum: f64 = raw.iter().skip(vocab - N_DOMAIN_TOKENS).sum();
        let rest_sum: f64 = raw.iter().take(vocab - N_DOMAIN_TOKENS).sum();
        let mut sharp = vec![0.0; vocab];
        for (v, s) in sharp.iter_mut().enumerate() {
            if is_domain_token(v, vocab) {
                *s = if vd_sum < 1e-300 {
                    DOMAIN_VD_MASS / N_DOMAIN_TOKENS as f64
                } else {
                    raw[v] * DOMAIN_VD_MASS / vd_sum
                };
            } else {
                *s = if rest_sum < 1e-300 {
                    (1.0 - DOMAIN_VD_MASS) / (vocab - N_DOMAIN_TOKENS) as f64
                } else {
                    raw[v] * (1.0 - DOMAIN_VD_MASS) / rest_sum
                };
            }
        }
        let smoothed = floor_renorm(&sharp, ROW_FLOOR);
        flat[row * vocab..(row + 1) * vocab].copy_from_slice(&smoothed);
    }
    TabularTeacher::from_flat(vocab, order, flat)
}

/// Build (true general, proxy general, domain) prompt families.
pub fn build_prompt_sets(
    vocab: usize,
    order: usize,
    coverage: f64,
    stream: &mut RngStream,
) -> (Vec<Prompt>, Vec<Prompt>, Vec<Prompt>) {
    let rows_n = vocab.pow(order as u32);
    let mut general_ctx = Vec::new();
    let mut domain_ctx = Vec::new();
    for row in 0..rows_n {
        let ctx = decode_context(row, vocab, order).expect("row in range");
        if ctx.tokens().iter().all(|t| !is_domain_token(t.id(), vocab)) {
            general_ctx.push(ctx);
        } else if is_domain_token(ctx.tokens()[0].id(), vocab) {
            domain_ctx.push(ctx);
        }
    }

    // Proxy support: seeded shuffle, then the first ceil(coverage * n) starts.
    let mut shuffled = general_ctx.clone();
    for i in (1..shuffled.len()).rev() {
        let j = stream.below(i + 1);
        shuffled.swap(i, j);
    }
    let take = ((coverage * shuffled.len() as f64).ceil() as usize).clamp(1, shuffled.len());

    let tag = |ctxs: Vec<crate::context::Context>, branch: Branch| -> Vec<Prompt> {
        ctxs.into_iter()
            .enumerate()
            .map(|(id, seed)| Prompt { id, seed, branch })
            .collect()
    };
    (
        tag(general_ctx, Branch::General),
        tag(shuffled.into_iter().take(take).collect(), Branch::General),
        tag(domain_ctx, Branch::Domain),
    )
}

/// Build the whole world from a config. `attempt` feeds the stream labels so
/// a rejected scenario can be deterministically re-drawn.
pub fn build_scenario(cfg: &RunConfig, attempt: u32) -> Result<Scenario> {
    let mut g_stream = RngStream::new(cfg.seed, &format!("scenario/a{attempt}/general"));
    let general_teacher = build_general_teacher(cfg.vocab, cfg.order, &mut g_stream)?;
    let mut d_stream = RngStream::new(cfg.seed, &format!("scenario/a{attempt}/domain"));
    let domain_teacher = build_domain_teacher(&general_teacher, &mut d_stream);
    let mut p_stream = RngStream::new(cfg.seed, &format!("scenario/a{attempt}/prompts"));
    let (prompts_general_true, prompts_general_proxy, prompts_domain) =
        build_prompt_sets(cfg.vocab, cfg.order, cfg.coverage, &mut p_stream);
    Ok(Scenario {
        vocab: cfg.vocab,
        order: cfg.order,
        seed: cfg.seed,
        attempt,
        coverage: cfg.coverage,
        general_teacher,
        domain_teacher,
        prompts_general_true,
        prompts_general_proxy,
        prompts_domain,
    })
}

/// Content-addressed description of a built scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub seed: u64,
    pub attempt: u32,
    pub vocab: usize,
    pub order: usize,
    pub coverage: f64,
    pub domain_tokens: Vec<u16>,
    pub n_general_true: usize,
    pub n_general_proxy: usize,
    pub n_domain: usize,
    pub general_teacher_sha256: String,
    pub domain_teacher_sha256: String,
    pub prompts_sha256: String,
}

fn hash_table(table: &[f64]) -> String {
    let mut h = Sha256::new();
    for &x in table {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn hash_prompts(families: &[&[Prompt]], vocab: usize, order: usize) -> String {
    let mut h = Sha256::new();
    for (fi, family) in families.iter().enumerate() {
        h.update((fi as u32).to_le_bytes());
        for p in family.iter() {
            let row = crate::context::encode_context(&p.seed, vocab, order).expect("valid seed");
            h.update((row as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl ScenarioManifest {
    pub fn of(s: &Scenario) -> Self {
        ScenarioManifest {
            seed: s.seed,
            attempt: s.attempt,
            vocab: s.vocab,
            order: s.order,
            coverage: s.coverage,
            domain_tokens: domain_token_set(s.vocab).iter().map(|t| t.0).collect(),
            n_general_true: s.prompts_general_true.len(),
            n_general_proxy: s.prompts_general_proxy.len(),
            n_domain: s.prompts_domain.len(),
            general_teacher_sha256: hash_table(s.general_teacher.flat()),
            domain_teacher_sha256: hash_table(s.domain_teacher.flat()),
            prompts_sha256: hash_prompts(
                &[
                    &s.prompts_general_true,
                    &s.prompts_general_proxy,
                    &s.prompts_domain,
                ],
                s.vocab,
                s.order,
            ),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigParse(format!("bad manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::kl_categorical;

    fn default_scenario(seed: u64) -> Scenario {
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        build_scenario(&cfg, 0).unwrap()
    }

    #[test]
    fn build_is_deterministic_per_seed_and_attempt() {
        let a = default_scenario(5);
        let b = default_scenario(5);
        for (x, y) in a
            .general_teacher
            .flat()
            .iter()
            .zip(b.general_teacher.flat())
        {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.domain_teacher.flat().iter().zip(b.domain_teacher.flat()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.prompts_general_proxy, b.prompts_general_proxy);

        let c = default_scenario(6);
        assert_ne!(
            ScenarioManifest::of(&a).general_teacher_sha256,
            ScenarioManifest::of(&c).general_teacher_sha256
        );
        let cfg = RunConfig {
            seed: 5,
            ..RunConfig::default()
        };
        let re = build_scenario(&cfg, 1).unwrap();
        assert_ne!(
            ScenarioManifest::of(&a).general_teacher_sha256,
            ScenarioManifest::of(&re).general_teacher_sha256,
            "re-seed attempt must draw a different world"
        );
    }

    #[test]
    fn general_teacher_rows_are_smoothed_and_vd_capped() {
        let s = default_scenario(1);
        let t = &s.general_teacher;
        for r in 0..t.rows() {
            let row = t.row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9, "row {r} sum");
            assert!(row.iter().all(|&p| p >= ROW_FLOOR), "row {r} floor");
            let vd: f64 = row.iter().skip(12 - N_DOMAIN_TOKENS).sum();
            assert!(vd <= GENERAL_VD_CAP + 1e-9, "row {r} vd mass {vd}");
        }
    }

    #[test]
    fn domain_teacher_overwrites_exactly_the_vd_contexts() {
        let s = default_scenario(2);
        let mut modified_kls = Vec::new();
        let mut untouched = 0usize;
        for r in 0..144 {
            let ctx = decode_context(r, 12, 2).unwrap();
            let mentions = ctx.tokens().iter().any(|t| t.id() >= 9);
            let g = s.general_teacher.row(r);
            let d = s.domain_teacher.row(r);
            if mentions {
                let vd: f64 = d.iter().skip(9).sum();
                assert!(vd >= 0.9, "modified row {r} vd mass {vd}");
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                modified_kls.push(kl_categorical(d, g).unwrap());
            } else {
                untouched += 1;
                for (a, b) in g.iter().zip(d) {
                    assert_eq!(a.to_bits(), b.to_bits(), "row {r} should be untouched");
                }
            }
        }
        // V = 12, m = 2: 81 contexts avoid V_d entirely, 63 mention it.
        assert_eq!(untouched, 81);
        assert_eq!(modified_kls.len(), 63);
        // Divergence concentrates on the modified rows by construction:
        // untouched rows have KL exactly 0, modified far above.
        let mean_mod: f64 = modified_kls.iter().sum::<f64>() / modified_kls.len() as f64;
        assert!(mean_mod > 0.5, "mean KL over modified rows {mean_mod}");
    }

    #[test]
    fn prompt_families_have_documented_sizes_and_supports() {
        let s = default_scenario(3);
        assert_eq!(s.prompts_general_true.len(), 81); // 9^2
        assert_eq!(s.prompts_general_proxy.len(), 41); // ceil(0.5 * 81)
        assert_eq!(s.prompts_domain.len(), 36); // 3 * 12

        let true_rows: std::collections::HashSet<usize> = s
            .prompts_general_true
            .iter()
            .map(|p| crate::context::encode_context(&p.seed, 12, 2).unwrap())
            .collect();
        for p in &s.prompts_general_proxy {
            let row = crate::context::encode_context(&p.seed, 12, 2).unwrap();
            assert!(true_rows.contains(&row), "proxy start outside the true set");
            assert_eq!(p.branch, Branch::General);
        }
        for p in &s.prompts_domain {
            assert!(p.seed.tokens()[0].id() >= 9);
            assert_eq!(p.branch, Branch::Domain);
            let row = crate::context::encode_context(&p.seed, 12, 2).unwrap();
            assert!(
                !true_rows.contains(&row),
                "domain start leaked into general set"
            );
        }
        // True general starts never touch V_d at all.
        for p in &s.prompts_general_true {
            assert!(p.seed.tokens().iter().all(|t| t.id() < 9));
        }
    }

    #[test]
    fn coverage_one_spans_the_full_start_set() {
        let cfg = RunConfig {
            coverage: 1.0,
            ..RunConfig::default()
        };
        let s = build_scenario(&cfg, 0).unwrap();
        assert_eq!(s.prompts_general_proxy.len(), 81);
        let mut rows: Vec<usize> = s
            .prompts_general_proxy
            .iter()
            .map(|p| crate::context::encode_context(&p.seed, 12, 2).unwrap())
            .collect();
        rows.sort_unstable();
        rows.dedup();
        assert_eq!(
            rows.len(),
            81,
            "coverage 1 must be a permutation, not a resample"
        );
    }

    #[test]
    fn tiny_vocab_is_rejected() {
        let mut stream = RngStream::new(0, "tiny");
        assert!(matches!(
            build_general_teacher(5, 2, &mut stream),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn manifest_round_trips_and_pins_content() {
        let s = default_scenario(9);
        let m = ScenarioManifest::of(&s);
        let back = ScenarioManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.domain_tokens, vec![9, 10, 11]);
        // Rebuild hashes to the same content.
        let again = ScenarioManifest::of(&default_scenario(9));
        assert_eq!(again, m);
    }

    #[test]
    fn sample_prompts_is_deterministic() {
        let s = default_scenario(4);
        let a = sample_prompts(&s.prompts_domain, 16, &mut RngStream::new(1, "p"));
        let b = sample_prompts(&s.prompts_domain, 16, &mut RngStream::new(1, "p"));
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
    }
}
