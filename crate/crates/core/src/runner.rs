//! Run orchestration: output directories, artifact writing, budget-matched
//! comparisons, and chart emission.
//!
//! A single run directory contains
//!   config.toml       resolved configuration actually used
//!   scenario/         teacher tables and the content-hash manifest
//!   metrics.jsonl     one JSON record per train/eval row (byte-stable)
//!   timings.tsv       wall-clock sidecar, intentionally outside metrics
//!   checkpoints/      student tables at every eval boundary
//!   student_final.bin final student table
//!   summary.txt       flat key = value digest
//!   plots/            self-contained SVG charts

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checks;
use crate::config::{Mode, RunConfig};
use crate::error::{Error, FieldViolation};
use crate::gradient::GradientRecord;
use crate::metrics::{self, MetricsRow, MetricsWriter, RowKind, StepBranch};
use crate::plots::{Band, LinePlot, Series};
use crate::policy::StudentPolicy;
use crate::rollout::Rollout;
use crate::scenario::{build_scenario, Scenario, ScenarioManifest};
use crate::trainer::{self, RunHooks, SpecializeReport, TrainReport};
use crate::Result;

/// How many re-seeded scenario draws a run will try when specialization
/// cannot reach its forgetting threshold.
pub const MAX_SCENARIO_ATTEMPTS: u32 = 5;

/// Everything `cmd_run` produces, for callers that keep going (compare).
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub cfg: RunConfig,
    pub scenario_attempt: u32,
    pub specialize: SpecializeReport,
    pub report: TrainReport,
}

/// Create `dir` for exclusive use. An existing non-empty directory is an
/// error unless `force`, which clears it first.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| Error::Io(format!("cannot inspect {}: {e}", dir.display())))?
            .next()
            .is_some();
        if occupied {
            if !force {
                return Err(Error::OutputExists(dir.display().to_string()));
            }
            fs::remove_dir_all(dir)
                .map_err(|e| Error::Io(format!("cannot clear {}: {e}", dir.display())))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

/// Build a scenario and push it through specialization, re-seeding the world
/// (bounded) when the forgetting threshold cannot be reached.
pub fn build_ready_world(cfg: &RunConfig) -> Result<(Scenario, StudentPolicy, SpecializeReport)> {
    let mut last: Option<Error> = None;
    for attempt in 0..MAX_SCENARIO_ATTEMPTS {
        let scenario = build_scenario(cfg, attempt)?;
        match trainer::specialize_student(&scenario, cfg) {
            Ok((student, report)) => return Ok((scenario, student, report)),
            Err(e @ Error::SpecializationFailed { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("loop ran at least once"))
}

/// Hooks implementation that streams artifacts to a run directory.
struct FileHooks {
    metrics: MetricsWriter,
    timings: String,
    row_index: usize,
    started: Instant,
    ckpt_dir: PathBuf,
    rollout_dump: Option<String>,
    grad_dump: Option<String>,
}

impl FileHooks {
    fn new(out_dir: &Path, cfg: &RunConfig) -> Result<Self> {
        let ckpt_dir = out_dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir)
            .map_err(|e| Error::Io(format!("cannot create {}: {e}", ckpt_dir.display())))?;
        Ok(FileHooks {
            metrics: MetricsWriter::create(&out_dir.join("metrics.jsonl"))?,
            timings: String::from("row\tstep\twall_ms\n"),
            row_index: 0,
            started: Instant::now(),
            ckpt_dir,
            rollout_dump: cfg.dump_rollouts.then(String::new),
            grad_dump: cfg.dump_grads.then(String::new),
        })
    }
}

impl RunHooks for FileHooks {
    fn on_row(&mut self, row: &MetricsRow) -> Result<()> {
        self.metrics.write_row(row)?;
        self.timings.push_str(&format!(
            "{}\t{}\t{}\n",
            self.row_index,
            row.step,
            self.started.elapsed().as_millis()
        ));
        self.row_index += 1;
        Ok(())
    }

    fn on_checkpoint(&mut self, completed_steps: u64, student: &StudentPolicy) -> Result<()> {
        student.save(&self.ckpt_dir.join(format!("step_{completed_steps:06}.bin")))
    }

    fn on_rollouts(&mut self, step: u64, branch: StepBranch, rollouts: &[Rollout]) -> Result<()> {
        if let Some(buf) = &mut self.rollout_dump {
            for r in rollouts {
                let toks: Vec<usize> = r.records.iter().map(|t| t.token.id()).collect();
                let gaps: Vec<String> = r.records.iter().map(|t| format!("{:.6}", t.gap)).collect();
                buf.push_str(&format!(
                    "{step}\t{branch}\t{}\t{:?}\t[{}]\n",
                    r.prompt_id,
                    toks,
                    gaps.join(",")
                ));
            }
        }
        Ok(())
    }

    fn on_grads(&mut self, step: u64, branch: StepBranch, grads: &[GradientRecord]) -> Result<()> {
        if let Some(buf) = &mut self.grad_dump {
            for (i, g) in grads.iter().enumerate() {
                buf.push_str(&format!("{step}\t{branch}\t{i}\t{:.9e}\n", g.norm()));
            }
        }
        Ok(())
    }
}

/// Execute one full run into `out_dir`.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path, force: bool) -> Result<RunSummary> {
    cfg.validate()?;
    prepare_out_dir(out_dir, force)?;
    write_text(&out_dir.join("config.toml"), &cfg.to_toml_string())?;

    let (scenario, student, specialize) = build_ready_world(cfg)?;
    let scen_dir = out_dir.join("scenario");
    fs::create_dir_all(&scen_dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", scen_dir.display())))?;
    scenario
        .general_teacher
        .save(&scen_dir.join("general_teacher.bin"))?;
    scenario
        .domain_teacher
        .save(&scen_dir.join("domain_teacher.bin"))?;
    write_text(
        &scen_dir.join("manifest.json"),
        &ScenarioManifest::of(&scenario).to_json(),
    )?;
    student.save(&out_dir.join("student_specialized.bin"))?;

    let mut hooks = FileHooks::new(out_dir, cfg)?;
    let report = trainer::run_training(cfg, &scenario, student, &mut hooks)?;
    report.student.save(&out_dir.join("student_final.bin"))?;
    write_text(&out_dir.join("timings.tsv"), &hooks.timings)?;
    if let Some(buf) = &hooks.rollout_dump {
        write_text(&out_dir.join("rollouts.tsv"), buf)?;
    }
    if let Some(buf) = &hooks.grad_dump {
        write_text(&out_dir.join("grad_norms.tsv"), buf)?;
    }

    let first_eval = report
        .rows
        .iter()
        .find(|r| r.kind == RowKind::Eval)
        .expect("run_training always emits the step-0 eval");
    let pairs: Vec<(String, String)> = vec![
        ("mode".into(), cfg.mode.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("steps".into(), cfg.steps.to_string()),
        ("scenario_attempt".into(), scenario.attempt.to_string()),
        ("specialize_steps".into(), specialize.steps.to_string()),
        (
            "specialize_kl_general".into(),
            format!("{:.9}", specialize.final_kl_general),
        ),
        (
            "initial_kl_general".into(),
            format!("{:.9}", first_eval.kl_general.unwrap_or(f64::NAN)),
        ),
        (
            "initial_kl_domain".into(),
            format!("{:.9}", first_eval.kl_domain.unwrap_or(f64::NAN)),
        ),
        (
            "final_kl_general".into(),
            format!("{:.9}", report.final_kl_general),
        ),
        (
            "final_kl_domain".into(),
            format!("{:.9}", report.final_kl_domain),
        ),
        (
            "best_kl_general".into(),
            format!("{:.9}", report.best_kl_general),
        ),
        (
            "consumed_rollouts".into(),
            report.consumed_rollouts.to_string(),
        ),
    ];
    metrics::write_summary(&out_dir.join("summary.txt"), &pairs)?;
    emit_plots(&report.rows, &out_dir.join("plots"))?;

    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        cfg: cfg.clone(),
        scenario_attempt: scenario.attempt,
        specialize,
        report,
    })
}

fn series_from<F>(rows: &[MetricsRow], name: &str, keep: F) -> Series
where
    F: Fn(&MetricsRow) -> Option<(f64, f64)>,
{
    Series {
        name: name.to_string(),
        points: rows.iter().filter_map(&keep).collect(),
    }
}

/// Write the standard chart set for one run's rows.
pub fn emit_plots(rows: &[MetricsRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;

    let eval = |r: &MetricsRow| r.kind == RowKind::Eval;
    let train = |r: &MetricsRow| r.kind == RowKind::Train;

    let mut kl = LinePlot::new("Evaluation KL vs step", "step", "mean KL (nats)");
    kl.log_y = true;
    kl.series.push(series_from(rows, "kl_general", |r| {
        (eval(r))
            .then(|| r.kl_general.map(|v| (r.step as f64, v)))
            .flatten()
    }));
    kl.series.push(series_from(rows, "kl_domain", |r| {
        (eval(r))
            .then(|| r.kl_domain.map(|v| (r.step as f64, v)))
            .flatten()
    }));
    write_text(&dir.join("kl.svg"), &kl.render())?;

    let mut conflict = LinePlot::new("Cross-domain gradient cosine", "step", "cosine");
    conflict.series.push(series_from(rows, "cosine", |r| {
        (train(r))
            .then(|| r.cross_cosine.map(|v| (r.step as f64, v)))
            .flatten()
    }));
    conflict.series.push(series_from(rows, "cosine (EMA)", |r| {
        (train(r))
            .then(|| r.cross_cosine_ema.map(|v| (r.step as f64, v)))
            .flatten()
    }));
    write_text(&dir.join("conflict.svg"), &conflict.render())?;

    let mut gcg = LinePlot::new("Gradient coherence gain by branch", "step", "GCG (%)");
    for (name, want) in [
        ("general", StepBranch::General),
        ("domain", StepBranch::Domain),
    ] {
        gcg.series.push(series_from(rows, name, |r| {
            (train(r) && r.branch == Some(want))
                .then(|| r.gcg_percent.map(|v| (r.step as f64, v)))
                .flatten()
        }));
    }
    write_text(&dir.join("gcg.svg"), &gcg.render())?;

    let mut sel = LinePlot::new("Selected fraction by branch", "step", "fraction of batch");
    for (name, want) in [
        ("general", StepBranch::General),
        ("domain", StepBranch::Domain),
    ] {
        sel.series.push(series_from(rows, name, |r| {
            (train(r) && r.branch == Some(want))
                .then(|| r.selected_fraction.map(|v| (r.step as f64, v)))
                .flatten()
        }));
    }
    write_text(&dir.join("selection.svg"), &sel.render())?;
    Ok(())
}

/// Regenerate charts from an existing metrics file.
pub fn cmd_plot(metrics_path: &Path, out_dir: &Path) -> Result<()> {
    let rows = metrics::read_metrics(metrics_path)?;
    emit_plots(&rows, out_dir)
}

/// One (mode, n_g, seed) comparison cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub label: String,
    pub mode: Mode,
    pub n_g: u64,
    pub seed: u64,
    pub steps: u64,
    pub outcome: std::result::Result<CellStats, String>,
}

/// The numbers the comparison table reports per cell.
#[derive(Debug, Clone)]
pub struct CellStats {
    pub final_kl_general: f64,
    pub final_kl_domain: f64,
    pub best_kl_general: f64,
    pub consumed_rollouts: u64,
    /// Eval-KL curve as (training batches consumed, kl_general, kl_domain).
    pub curve: Vec<(f64, f64, f64)>,
}

/// Comparison settings beyond the base config.
#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// Extra camopd cells at these schedule widths (ablation sweep).
    pub sweep_n_g: Vec<u64>,
}

/// Full comparison outcome.
#[derive(Debug)]
pub struct CompareOutcome {
    pub out_dir: PathBuf,
    pub cells: Vec<CellResult>,
    pub findings: Vec<String>,
    pub failed_cells: usize,
}

/// Training batches a single optimizer step consumes in each mode.
pub fn batches_per_step(mode: Mode) -> u64 {
    match mode {
        Mode::Vanilla => 2,
        Mode::Camopd | Mode::DecoupledOnly => 1,
    }
}

/// Steps a mode gets under a budget of `budget` training batches.
pub fn budget_steps(mode: Mode, budget: u64) -> u64 {
    budget / batches_per_step(mode)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN medians"));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median of per-seed stats for one cell label, None if every seed failed.
fn label_median<F>(cells: &[CellResult], label: &str, pick: F) -> Option<f64>
where
    F: Fn(&CellStats) -> f64,
{
    let mut vals: Vec<f64> = cells
        .iter()
        .filter(|c| c.label == label)
        .filter_map(|c| c.outcome.as_ref().ok().map(&pick))
        .collect();
    median(&mut vals)
}

/// Run every (mode, seed) cell budget-matched and aggregate.
///
/// The base config's `steps` is read as the rollout-batch budget shared by
/// all cells: alternating modes take `steps` optimizer steps, the mixed
/// baseline takes half as many since each of its steps consumes two batches.
pub fn cmd_compare(
    cfg: &RunConfig,
    out_dir: &Path,
    force: bool,
    opts: &CompareOptions,
) -> Result<CompareOutcome> {
    cfg.validate()?;
    let mut violations = Vec::new();
    if opts.modes.is_empty() {
        violations.push(FieldViolation {
            field: "modes",
            message: "need at least one mode".into(),
        });
    }
    if opts.seeds.is_empty() {
        violations.push(FieldViolation {
            field: "seeds",
            message: "need at least one seed".into(),
        });
    }
    if !cfg.steps.is_multiple_of(2) {
        violations.push(FieldViolation {
            field: "steps",
            message: "comparison budget must be even so the mixed baseline can match it exactly"
                .into(),
        });
    }
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    prepare_out_dir(out_dir, force)?;
    write_text(&out_dir.join("compare_config.toml"), &cfg.to_toml_string())?;

    let budget = cfg.steps;
    let mut specs: Vec<(String, Mode, u64)> = Vec::new();
    for &mode in &opts.modes {
        if mode == Mode::Camopd && !opts.sweep_n_g.is_empty() {
            for &n_g in &opts.sweep_n_g {
                specs.push((format!("{mode}_ng{n_g}"), mode, n_g));
            }
        } else {
            specs.push((mode.to_string(), mode, cfg.n_g));
        }
    }

    let mut cells: Vec<CellResult> = Vec::new();
    for (label, mode, n_g) in &specs {
        for &seed in &opts.seeds {
            let steps = budget_steps(*mode, budget);
            let cell_cfg = RunConfig {
                mode: *mode,
                n_g: *n_g,
                seed,
                steps,
                ..cfg.clone()
            };
            let cell_dir = out_dir
                .join("cells")
                .join(label)
                .join(format!("seed_{seed}"));
            let outcome = match cmd_run(&cell_cfg, &cell_dir, force) {
                Ok(summary) => {
                    let bps = batches_per_step(*mode) as f64;
                    let curve = summary
                        .report
                        .rows
                        .iter()
                        .filter(|r| r.kind == RowKind::Eval)
                        .map(|r| {
                            (
                                r.step as f64 * bps,
                                r.kl_general.unwrap_or(f64::NAN),
                                r.kl_domain.unwrap_or(f64::NAN),
                            )
                        })
                        .collect();
                    Ok(CellStats {
                        final_kl_general: summary.report.final_kl_general,
                        final_kl_domain: summary.report.final_kl_domain,
                        best_kl_general: summary.report.best_kl_general,
                        consumed_rollouts: summary.report.consumed_rollouts,
                        curve,
                    })
                }
                Err(e) => Err(e.to_string()),
            };
            cells.push(CellResult {
                label: label.clone(),
                mode: *mode,
                n_g: *n_g,
                seed,
                steps,
                outcome,
            });
        }
    }

    // Per-cell table.
    let mut table = String::from(
        "label\tmode\tn_g\tseed\tsteps\tfinal_kl_general\tfinal_kl_domain\tbest_kl_general\tconsumed_rollouts\tstatus\n",
    );
    for c in &cells {
        match &c.outcome {
            Ok(s) => table.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.9}\t{:.9}\t{:.9}\t{}\tok\n",
                c.label,
                c.mode,
                c.n_g,
                c.seed,
                c.steps,
                s.final_kl_general,
                s.final_kl_domain,
                s.best_kl_general,
                s.consumed_rollouts
            )),
            Err(msg) => table.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t-\t-\t-\t-\tfailed: {}\n",
                c.label,
                c.mode,
                c.n_g,
                c.seed,
                c.steps,
                msg.replace(['\t', '\n'], " ")
            )),
        }
    }
    write_text(&out_dir.join("per_cell.tsv"), &table)?;

    // Per-label medians.
    let mut medians = String::from(
        "label\tseeds_ok\tmedian_final_kl_general\tmedian_final_kl_domain\tmedian_best_kl_general\n",
    );
    for (label, _, _) in &specs {
        let ok = cells
            .iter()
            .filter(|c| &c.label == label && c.outcome.is_ok())
            .count();
        let fg = label_median(&cells, label, |s| s.final_kl_general);
        let fd = label_median(&cells, label, |s| s.final_kl_domain);
        let bg = label_median(&cells, label, |s| s.best_kl_general);
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.9}"));
        medians.push_str(&format!(
            "{label}\t{ok}\t{}\t{}\t{}\n",
            fmt(fg),
            fmt(fd),
            fmt(bg)
        ));
    }
    write_text(&out_dir.join("medians.tsv"), &medians)?;

    // Findings: surfaced observations, led by the ablation ordering check.
    let mut findings = Vec::new();
    let med = |label: &str| label_median(&cells, label, |s| s.final_kl_general);
    if let (Some(v), Some(c)) = (med("vanilla"), med("camopd")) {
        let rel = (v - c) / v * 100.0;
        findings.push(format!(
            "recovery: camopd median final kl_general {c:.6} vs vanilla {v:.6} ({rel:+.1}% relative improvement)"
        ));
        if let (Some(vd), Some(cd)) = (
            label_median(&cells, "vanilla", |s| s.final_kl_domain),
            label_median(&cells, "camopd", |s| s.final_kl_domain),
        ) {
            findings.push(format!(
                "preservation: camopd median final kl_domain {cd:.6} vs vanilla {vd:.6} ({:+.6} nats)",
                cd - vd
            ));
        }
        if let Some(d) = med("decoupled-only") {
            // Ablation ordering with a 5% tolerance band on both boundaries.
            let ordered = d >= c * 0.95 && d <= v * 1.05;
            if ordered {
                findings.push(format!(
                    "ablation_ordering: ok (camopd {c:.6} <= decoupled-only {d:.6} <= vanilla {v:.6}, 5% band)"
                ));
            } else {
                findings.push(format!(
                    "FLAG ablation_ordering: violated (camopd {c:.6}, decoupled-only {d:.6}, vanilla {v:.6}; expected camopd <= decoupled-only <= vanilla within a 5% band)"
                ));
            }
        }
    }
    let failed_cells = cells.iter().filter(|c| c.outcome.is_err()).count();
    if failed_cells > 0 {
        findings.push(format!(
            "FLAG failed_cells: {failed_cells} of {} cells errored",
            cells.len()
        ));
    }
    write_text(
        &out_dir.join("findings.txt"),
        &(findings
            .iter()
            .map(|f| format!("{f}\n"))
            .collect::<String>()),
    )?;

    emit_compare_plots(&specs, &cells, &out_dir.join("plots"))?;

    Ok(CompareOutcome {
        out_dir: out_dir.to_path_buf(),
        cells,
        findings,
        failed_cells,
    })
}

/// Median curves with min/max bands across seeds, x = batches consumed.
fn emit_compare_plots(
    specs: &[(String, Mode, u64)],
    cells: &[CellResult],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
    for (which, file, title) in [
        (
            1usize,
            "kl_general.svg",
            "Median general KL vs training batches",
        ),
        (
            2usize,
            "kl_domain.svg",
            "Median domain KL vs training batches",
        ),
    ] {
        let mut plot = LinePlot::new(title, "training batches", "mean KL (nats)");
        plot.log_y = true;
        for (label, _, _) in specs {
            let curves: Vec<&Vec<(f64, f64, f64)>> = cells
                .iter()
                .filter(|c| &c.label == label)
                .filter_map(|c| c.outcome.as_ref().ok().map(|s| &s.curve))
                .collect();
            if curves.is_empty() {
                continue;
            }
            // All seeds of a label share the eval grid; index-align them.
            let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
            let mut mid = Vec::with_capacity(len);
            let mut band = Vec::with_capacity(len);
            for i in 0..len {
                let x = curves[0][i].0;
                let mut ys: Vec<f64> = curves
                    .iter()
                    .map(|c| if which == 1 { c[i].1 } else { c[i].2 })
                    .filter(|v| v.is_finite())
                    .collect();
                let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if let Some(m) = median(&mut ys) {
                    mid.push((x, m));
                    band.push((x, lo, hi));
                }
            }
            plot.bands.push(Band {
                name: label.clone(),
                points: band,
            });
            plot.series.push(Series {
                name: label.clone(),
                points: mid,
            });
        }
        write_text(&dir.join(file), &plot.render())?;
    }
    Ok(())
}

/// Run the self-check suite, printing one line per check.
pub fn cmd_check(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let outcomes = checks::run_all_checks(cfg)?;
    let mut failed = 0usize;
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} {}: {}", o.name, o.detail).map_err(|e| Error::Io(e.to_string()))?;
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::CheckFailed(format!(
            "{failed} of {} checks failed",
            outcomes.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            batch_size: 8,
            t_roll: 8,
            steps: 6,
            n_eval: 8,
            eval_interval: 3,
            ..RunConfig::default()
        }
    }

    #[test]
    fn run_writes_the_full_artifact_set() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("run");
        let cfg = tiny_cfg();
        let summary = cmd_run(&cfg, &dir, false).unwrap();
        for f in [
            "config.toml",
            "metrics.jsonl",
            "timings.tsv",
            "summary.txt",
            "student_final.bin",
            "student_specialized.bin",
            "scenario/manifest.json",
            "scenario/general_teacher.bin",
            "scenario/domain_teacher.bin",
            "plots/kl.svg",
            "plots/conflict.svg",
            "plots/gcg.svg",
            "plots/selection.svg",
            "checkpoints/step_000003.bin",
            "checkpoints/step_000006.bin",
        ] {
            assert!(dir.join(f).exists(), "missing artifact {f}");
        }
        assert!(summary.specialize.steps > 0);
        // Summary parses back and repeats the report numbers.
        let pairs = metrics::read_summary(&dir.join("summary.txt")).unwrap();
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .unwrap_or_else(|| panic!("summary missing {k}"))
                .1
                .clone()
        };
        assert_eq!(get("mode"), "camopd");
        let fg: f64 = get("final_kl_general").parse().unwrap();
        assert!((fg - summary.report.final_kl_general).abs() < 1e-8);
        // Config round-trips.
        let loaded = RunConfig::from_file(&dir.join("config.toml")).unwrap();
        assert_eq!(loaded, cfg);
    }

    #[test]
    fn rerun_without_force_is_refused_and_with_force_succeeds() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("run");
        let cfg = tiny_cfg();
        cmd_run(&cfg, &dir, false).unwrap();
        match cmd_run(&cfg, &dir, false) {
            Err(Error::OutputExists(p)) => assert!(p.contains("run")),
            other => panic!("expected OutputExists, got {other:?}"),
        }
        cmd_run(&cfg, &dir, true).unwrap();
    }

    #[test]
    fn reruns_write_byte_identical_metrics() {
        let tmp = TempDir::new().unwrap();
        let cfg = tiny_cfg();
        cmd_run(&cfg, &tmp.path().join("a"), false).unwrap();
        cmd_run(&cfg, &tmp.path().join("b"), false).unwrap();
        let a = std::fs::read(tmp.path().join("a/metrics.jsonl")).unwrap();
        let b = std::fs::read(tmp.path().join("b/metrics.jsonl")).unwrap();
        assert_eq!(a, b);
        let sa = std::fs::read(tmp.path().join("a/summary.txt")).unwrap();
        let sb = std::fs::read(tmp.path().join("b/summary.txt")).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn zero_step_run_has_only_the_initial_eval() {
        let tmp = TempDir::new().unwrap();
        let cfg = RunConfig {
            steps: 0,
            ..tiny_cfg()
        };
        let dir = tmp.path().join("run");
        cmd_run(&cfg, &dir, false).unwrap();
        let rows = metrics::read_metrics(&dir.join("metrics.jsonl")).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].kind, RowKind::Eval);
    }

    #[test]
    fn metrics_round_trip_through_the_run_artifacts() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("run");
        let summary = cmd_run(&tiny_cfg(), &dir, false).unwrap();
        let rows = metrics::read_metrics(&dir.join("metrics.jsonl")).unwrap();
        assert_eq!(rows.len(), summary.report.rows.len());
        for (a, b) in rows.iter().zip(&summary.report.rows) {
            assert_eq!(a.to_json_line(), b.to_json_line());
        }
    }

    #[test]
    fn plot_command_reproduces_charts_from_metrics() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("run");
        cmd_run(&tiny_cfg(), &dir, false).unwrap();
        let replot = tmp.path().join("replot");
        cmd_plot(&dir.join("metrics.jsonl"), &replot).unwrap();
        let orig = std::fs::read(dir.join("plots/kl.svg")).unwrap();
        let again = std::fs::read(replot.join("kl.svg")).unwrap();
        assert_eq!(
            orig, again,
            "replotting the same rows must be byte-identical"
        );
    }

    #[test]
    fn plot_command_reports_parse_errors_with_line_numbers() {
        let tmp = TempDir::new().unwrap();
        let bad = tmp.path().join("bad.jsonl");
        let good =
            metrics::MetricsRow::blank(0, metrics::RowKind::Eval, Mode::Camopd).to_json_line();
        std::fs::write(&bad, format!("{good}\nnot json\n")).unwrap();
        match cmd_plot(&bad, &tmp.path().join("out")) {
            Err(Error::MetricsParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MetricsParse, got {other:?}"),
        }
    }

    #[test]
    fn empty_metrics_still_emit_axes_only_charts() {
        let tmp = TempDir::new().unwrap();
        let empty = tmp.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        let out = tmp.path().join("plots");
        cmd_plot(&empty, &out).unwrap();
        let svg = std::fs::read_to_string(out.join("kl.svg")).unwrap();
        assert!(svg.contains("no data"));
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn budget_matching_gives_every_mode_the_same_rollout_count() {
        assert_eq!(budget_steps(Mode::Camopd, 400), 400);
        assert_eq!(budget_steps(Mode::DecoupledOnly, 400), 400);
        assert_eq!(budget_steps(Mode::Vanilla, 400), 200);
    }

    #[test]
    fn compare_produces_tables_medians_and_findings() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("cmp");
        let cfg = tiny_cfg();
        let opts = CompareOptions {
            modes: vec![Mode::Vanilla, Mode::Camopd, Mode::DecoupledOnly],
            seeds: vec![1, 2],
            sweep_n_g: vec![],
        };
        let out = cmd_compare(&cfg, &dir, false, &opts).unwrap();
        assert_eq!(out.cells.len(), 6);
        assert_eq!(out.failed_cells, 0);
        // Budget matched: every cell consumed the same rollout count.
        let counts: Vec<u64> = out
            .cells
            .iter()
            .map(|c| c.outcome.as_ref().unwrap().consumed_rollouts)
            .collect();
        assert!(
            counts.iter().all(|&c| c == counts[0]),
            "budgets diverged: {counts:?}"
        );
        let per_cell = std::fs::read_to_string(dir.join("per_cell.tsv")).unwrap();
        assert_eq!(per_cell.lines().count(), 7);
        let medians = std::fs::read_to_string(dir.join("medians.tsv")).unwrap();
        assert!(medians.contains("camopd"));
        assert!(dir.join("plots/kl_general.svg").exists());
        assert!(dir.join("findings.txt").exists());
        assert!(out.findings.iter().any(|f| f.contains("ablation_ordering")));
        assert!(dir.join("cells/vanilla/seed_1/metrics.jsonl").exists());
        assert!(dir.join("cells/camopd/seed_2/summary.txt").exists());
    }

    #[test]
    fn compare_rejects_an_odd_budget() {
        let tmp = TempDir::new().unwrap();
        let cfg = RunConfig {
            steps: 7,
            ..tiny_cfg()
        };
        let opts = CompareOptions {
            modes: vec![Mode::Vanilla],
            seeds: vec![1],
            sweep_n_g: vec![],
        };
        match cmd_compare(&cfg, &tmp.path().join("cmp"), false, &opts) {
            Err(Error::Validation(v)) => assert!(v.iter().any(|f| f.field == "steps")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn sweep_expands_camopd_cells_only() {
        let tmp = TempDir::new().unwrap();
        let cfg = RunConfig {
            steps: 4,
            ..tiny_cfg()
        };
        let opts = CompareOptions {
            modes: vec![Mode::Vanilla, Mode::Camopd],
            seeds: vec![1],
            sweep_n_g: vec![1, 3],
        };
        let out = cmd_compare(&cfg, &tmp.path().join("cmp"), false, &opts).unwrap();
        let labels: Vec<&str> = out.cells.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, vec!["vanilla", "camopd_ng1", "camopd_ng3"]);
    }

    #[test]
    fn check_command_prints_one_line_per_check() {
        let cfg = RunConfig {
            batch_size: 8,
            t_roll: 8,
            n_eval: 8,
            steps: 4,
            ..RunConfig::default()
        };
        let mut buf = Vec::new();
        cmd_check(&cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().all(|l| l.starts_with("PASS")));
        for name in [
            "fd_gradient",
            "selection_oracle",
            "coherence_bounds",
            "determinism",
            "teacher_rows",
        ] {
            assert!(text.contains(name), "missing check {name}");
        }
    }
}
