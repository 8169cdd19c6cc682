//! Acceptance gates for the training engine.
//!
//! Each test covers one numbered criterion and prints a single PASS/FAIL line
//! (visible under `--nocapture`, or on failure). Criteria 5, 6, 7 and 9 share
//! one set of budget-matched comparison runs — three modes over seeds 1..=5 at
//! the default configuration — built once and reused.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use camopd::checks::select_mass_prefix_bruteforce;
use camopd::config::{Mode, RunConfig};
use camopd::context::Branch;
use camopd::diagnostics::{coherence, finite_diff_check, gcg};
use camopd::gradient::{l2_norm, GradientRecord};
use camopd::metrics::{RowKind, StepBranch};
use camopd::policy::StudentPolicy;
use camopd::rng::RngStream;
use camopd::rollout::generate_batch;
use camopd::runner::{budget_steps, build_ready_world, cmd_run};
use camopd::scenario::{build_scenario, sample_prompts};
use camopd::selection::{select_mass_prefix, SampleScore};
use camopd::trainer::{branch_step_camopd, run_training, schedule_branch, NoHooks, TrainReport};

fn verdict(criterion: u32, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {status} — {detail}");
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

// ---------------------------------------------------------------------------
// Shared comparison runs for criteria 5, 6, 7 and 9.

struct ModeCells {
    reports: Vec<TrainReport>,
    wall: Duration,
}

struct Shared {
    camopd: ModeCells,
    vanilla: ModeCells,
    decoupled: ModeCells,
}

fn run_mode(mode: Mode) -> ModeCells {
    let started = Instant::now();
    let budget = RunConfig::default().steps;
    let reports = (1..=5u64)
        .map(|seed| {
            let cfg = RunConfig {
                seed,
                mode,
                steps: budget_steps(mode, budget),
                ..RunConfig::default()
            };
            let (scenario, student, _) = build_ready_world(&cfg).expect("specialization");
            run_training(&cfg, &scenario, student, &mut NoHooks).expect("training")
        })
        .collect();
    ModeCells {
        reports,
        wall: started.elapsed(),
    }
}

fn shared() -> &'static Shared {
    static CELLS: OnceLock<Shared> = OnceLock::new();
    CELLS.get_or_init(|| Shared {
        camopd: run_mode(Mode::Camopd),
        vanilla: run_mode(Mode::Vanilla),
        decoupled: run_mode(Mode::DecoupledOnly),
    })
}

fn median_final_kl_general(cells: &ModeCells) -> f64 {
    let mut v: Vec<f64> = cells.reports.iter().map(|r| r.final_kl_general).collect();
    median(&mut v)
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_matches_finite_differences() {
    let started = Instant::now();
    let cfg = RunConfig::default();
    let scenario = build_scenario(&cfg, 0).unwrap();
    let mut stream = RngStream::new(4242, "acceptance/fd");
    let dim = cfg.vocab.pow(cfg.order as u32) * cfg.vocab;

    let mut worst = 0.0f64;
    let mut coords = 0usize;
    for batch_i in 0..10u64 {
        let logits: Vec<f64> = (0..dim).map(|_| stream.uniform() * 2.0 - 1.0).collect();
        let student = StudentPolicy::new(cfg.vocab, cfg.order, logits).unwrap();
        let (teacher, family) = if batch_i % 2 == 0 {
            (&scenario.general_teacher, &scenario.prompts_general_true)
        } else {
            (&scenario.domain_teacher, &scenario.prompts_domain)
        };
        let prompts = sample_prompts(
            family,
            cfg.batch_size,
            &mut stream.derive(&format!("prompts/{batch_i}")),
        );
        let rollouts = generate_batch(
            &student,
            teacher,
            &prompts,
            cfg.t_roll,
            &stream.derive(&format!("gen/{batch_i}")),
        )
        .unwrap();
        let scale = if batch_i % 3 == 0 { 2.0 } else { 1.0 };
        let fd = finite_diff_check(
            &student,
            &rollouts,
            scale,
            1e-5,
            100,
            &mut stream.derive(&format!("coords/{batch_i}")),
        )
        .unwrap();
        worst = worst.max(fd.max_rel_err);
        coords += fd.coords_checked;
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        1,
        worst < 1e-5 && coords >= 1000 && secs < 10.0,
        &format!(
            "max relative error {worst:.3e} over {coords} coordinates, 10 batches, {secs:.2}s"
        ),
    );
}

#[test]
fn criterion_2_selection_agrees_with_bruteforce() {
    let started = Instant::now();
    let mut stream = RngStream::new(77, "acceptance/selection");
    let rho_grid = [0.0, 0.2, 0.5, 0.8, 1.0];
    let mut checked = 0usize;
    for case in 0..1000usize {
        let n = stream.below(256) + 1;
        let values: Vec<f64> = match case % 5 {
            // Continuous scores.
            0 => (0..n).map(|_| stream.uniform() * 10.0).collect(),
            // Heavy ties on a coarse grid.
            1 => (0..n).map(|_| stream.below(5) as f64).collect(),
            // Zeros mixed into continuous scores.
            2 => (0..n)
                .map(|_| {
                    if stream.below(3) == 0 {
                        0.0
                    } else {
                        stream.uniform()
                    }
                })
                .collect(),
            // Degenerate all-zero batches.
            3 => vec![0.0; n],
            // A single spike in a zero background.
            _ => {
                let mut v = vec![0.0; n];
                let hot = stream.below(n);
                v[hot] = 1.0 + stream.uniform();
                v
            }
        };
        let scores: Vec<SampleScore> = values
            .iter()
            .enumerate()
            .map(|(batch_index, &score)| SampleScore { batch_index, score })
            .collect();
        for &rho in &rho_grid {
            let fast = select_mass_prefix(&scores, rho).unwrap();
            let brute = select_mass_prefix_bruteforce(&scores, rho).unwrap();
            assert_eq!(
                fast.selected, brute,
                "disagreement on case {case} (n = {n}, rho = {rho})"
            );
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        2,
        checked == 5000 && secs < 5.0,
        &format!("1000 score vectors x 5 rho values match brute force, {secs:.2}s"),
    );
}

#[test]
fn criterion_3_exact_small_cases() {
    // Mass-prefix selection on (4, 3, 2, 1) at rho = 0.8 keeps the top 3.
    let scores: Vec<SampleScore> = [4.0, 3.0, 2.0, 1.0]
        .iter()
        .enumerate()
        .map(|(batch_index, &score)| SampleScore { batch_index, score })
        .collect();
    let sel = select_mass_prefix(&scores, 0.8).unwrap();
    let k_ok = sel.k == 3 && sel.selected == vec![0, 1, 2];

    // Alternating schedule with three general steps per domain step.
    let pattern: String = (0u64..8)
        .map(|step| match schedule_branch(step, 3).unwrap() {
            Branch::General => 'G',
            Branch::Domain => 'D',
        })
        .collect();
    let schedule_ok = pattern == "GGGDGGGD";

    // Antiparallel equal-norm gradients cancel to exactly zero coherence.
    let g: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
    let pair = [GradientRecord::from_flat(g), GradientRecord::from_flat(neg)];
    let coh = coherence(&pair).unwrap();
    let coh_ok = coh == Some(0.0);

    // Selecting the full batch leaves the coherence gain at exactly zero.
    let full = [
        GradientRecord::from_flat(vec![1.0, 2.0, 3.0]),
        GradientRecord::from_flat(vec![0.5, -1.0, 2.0]),
    ];
    let gain = gcg(&full, &full).unwrap();
    let gcg_ok = gain == Some(0.0);

    verdict(
        3,
        k_ok && schedule_ok && coh_ok && gcg_ok,
        &format!(
            "k = {k} (want 3), schedule {pattern}, antiparallel Coh = {coh:?}, full-batch GCG = {gain:?}",
            k = sel.k
        ),
    );
}

#[test]
fn criterion_4_teacher_equal_student_is_fixed_point() {
    let cfg = RunConfig::default();
    let scenario = build_scenario(&cfg, 0).unwrap();
    let mut student = StudentPolicy::init_from(&scenario.general_teacher);
    let before = student.logits().to_vec();
    let prompts = sample_prompts(
        &scenario.prompts_general_true,
        cfg.batch_size,
        &mut RngStream::new(9, "acceptance/fixed/prompts"),
    );
    let rollouts = generate_batch(
        &student,
        &scenario.general_teacher,
        &prompts,
        cfg.t_roll,
        &RngStream::new(9, "acceptance/fixed/gen"),
    )
    .unwrap();
    branch_step_camopd(
        &mut student,
        &rollouts,
        Branch::General,
        cfg.rho_g,
        cfg.r_g,
        cfg.eta,
    )
    .unwrap();
    let delta: Vec<f64> = student
        .logits()
        .iter()
        .zip(&before)
        .map(|(a, b)| a - b)
        .collect();
    let norm = l2_norm(&delta);
    verdict(
        4,
        norm < 1e-12,
        &format!("parameter delta norm {norm:.3e} after one branch step"),
    );
}

#[test]
fn criterion_5_vanilla_conflict_is_persistently_negative() {
    let cells = shared();
    let mut fracs: Vec<f64> = cells
        .vanilla
        .reports
        .iter()
        .map(|r| {
            let first: Vec<&camopd::metrics::MetricsRow> = r
                .rows
                .iter()
                .filter(|row| row.kind == RowKind::Train && row.step < 100)
                .collect();
            let neg = first
                .iter()
                .filter(|row| row.cross_cosine.is_some_and(|c| c < 0.0))
                .count();
            neg as f64 / first.len() as f64
        })
        .collect();
    let med = median(&mut fracs);
    let secs = cells.vanilla.wall.as_secs_f64();
    verdict(
        5,
        med > 0.5 && secs < 300.0,
        &format!(
            "median negative cross-cosine fraction {med:.2} over first 100 vanilla steps, runs took {secs:.1}s"
        ),
    );
}

#[test]
fn criterion_6_camopd_recovers_more_while_preserving_domain() {
    let cells = shared();
    let c_gen = median_final_kl_general(&cells.camopd);
    let v_gen = median_final_kl_general(&cells.vanilla);
    let mut c_dom: Vec<f64> = cells
        .camopd
        .reports
        .iter()
        .map(|r| r.final_kl_domain)
        .collect();
    let mut v_dom: Vec<f64> = cells
        .vanilla
        .reports
        .iter()
        .map(|r| r.final_kl_domain)
        .collect();
    let c_dom = median(&mut c_dom);
    let v_dom = median(&mut v_dom);

    let rel_gain = (v_gen - c_gen) / v_gen;
    let dom_excess = c_dom - v_dom;
    let secs = (cells.camopd.wall + cells.vanilla.wall).as_secs_f64();
    verdict(
        6,
        rel_gain >= 0.10 && dom_excess <= 0.05 && secs < 600.0,
        &format!(
            "median final kl_general {c_gen:.4} vs {v_gen:.4} ({:+.1}% relative), kl_domain excess {dom_excess:+.4} nats, runs took {secs:.1}s",
            -100.0 * rel_gain
        ),
    );
}

#[test]
fn criterion_7_general_branch_gcg_is_positive() {
    let cells = shared();
    let mut positive = 0usize;
    let mut medians = Vec::new();
    for r in &cells.camopd.reports {
        let mut gains: Vec<f64> = r
            .rows
            .iter()
            .filter(|row| {
                row.kind == RowKind::Train
                    && row.branch == Some(StepBranch::General)
                    && (10..=100).contains(&row.step)
            })
            .filter_map(|row| row.gcg_percent)
            .collect();
        let med = median(&mut gains);
        if med > 0.0 {
            positive += 1;
        }
        medians.push(format!("{med:+.1}%"));
    }
    verdict(
        7,
        positive >= 4,
        &format!(
            "{positive}/5 seeds with positive median general-branch coherence gain over steps 10-100 ({})",
            medians.join(", ")
        ),
    );
}

#[test]
fn criterion_8_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        steps: 60,
        ..RunConfig::default()
    };
    cmd_run(&cfg, &tmp.path().join("a"), false).unwrap();
    cmd_run(&cfg, &tmp.path().join("b"), false).unwrap();
    let a = std::fs::read(tmp.path().join("a/metrics.jsonl")).unwrap();
    let b = std::fs::read(tmp.path().join("b/metrics.jsonl")).unwrap();
    verdict(
        8,
        a == b && !a.is_empty(),
        &format!("two runs wrote identical metrics files ({} bytes)", a.len()),
    );
}

#[test]
fn criterion_9_ablation_sits_between_the_endpoints() {
    let cells = shared();
    let c = median_final_kl_general(&cells.camopd);
    let v = median_final_kl_general(&cells.vanilla);
    let d = median_final_kl_general(&cells.decoupled);
    let ok = d >= 0.95 * c && d <= 1.05 * v;
    verdict(
        9,
        ok,
        &format!(
            "decoupled-only median final kl_general {d:.4} against bounds [0.95 x {c:.4}, 1.05 x {v:.4}]"
        ),
    );
}
