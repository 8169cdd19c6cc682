//! `camopd` — counteraction-aware multi-teacher on-policy distillation at
//! desk scale.
//!
//! Subcommands: `run` (one training run), `compare` (budget-matched mode
//! grid across seeds), `check` (self-verification suite), `plot` (regenerate
//! charts from a metrics file).

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use camopd::config::{Mode, RunConfig};
use camopd::runner::{self, CompareOptions};
use camopd::Error;

use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default parent directory for outputs.
const OUT_ROOT_ENV: &str = "CAMOPD_OUT_ROOT";

#[derive(Parser)]
#[command(
    name = "camopd",
    version,
    about = "Desk-scale on-policy distillation trainer with selection-aware recovery",
    propagate_version = true
)]
struct Cli {
    /// Thread pool size for rollout generation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-field overrides; flags win over the file.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML config file; omitted fields fall back to defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training mode: vanilla, camopd, or decoupled-only.
    #[arg(long)]
    mode: Option<Mode>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Optimizer steps (run) or training-batch budget (compare).
    #[arg(long)]
    steps: Option<u64>,
    /// General steps per domain step in the alternating schedule.
    #[arg(long = "n-g")]
    n_g: Option<u64>,
    /// Gap-mass selection target on the general branch.
    #[arg(long = "rho-g")]
    rho_g: Option<f64>,
    /// Gap-mass selection target on the domain branch.
    #[arg(long = "rho-d")]
    rho_d: Option<f64>,
    /// Advantage scale on general steps.
    #[arg(long = "r-g")]
    r_g: Option<f64>,
    /// Advantage scale on domain steps.
    #[arg(long = "r-d")]
    r_d: Option<f64>,
    /// Fraction of the true general start contexts covered by proxy prompts.
    #[arg(long)]
    coverage: Option<f64>,
    /// SGD learning rate.
    #[arg(long)]
    eta: Option<f64>,
    /// Rollouts per training batch.
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Tokens per rollout.
    #[arg(long = "t-roll")]
    t_roll: Option<usize>,
    /// Steps between KL evaluations.
    #[arg(long = "eval-interval")]
    eval_interval: Option<u64>,
    /// Forgetting threshold (nats) for the specialization pre-phase.
    #[arg(long)]
    kappa: Option<f64>,
    /// Teacher rollouts per KL evaluation.
    #[arg(long = "n-eval")]
    n_eval: Option<usize>,
    /// General:domain rollout ratio inside a vanilla mixed step.
    #[arg(long = "mix-ratio")]
    mix_ratio: Option<f64>,
    /// Optimizer updates per generated batch (>1 reuses batches with
    /// clipped importance weights).
    #[arg(long = "reuse-epochs")]
    reuse_epochs: Option<u64>,
    /// Vocabulary size.
    #[arg(long)]
    vocab: Option<usize>,
    /// Context order (tokens of history per table row).
    #[arg(long)]
    order: Option<usize>,
    /// Also write per-token rollout records.
    #[arg(long = "dump-rollouts")]
    dump_rollouts: bool,
    /// Also write per-sample gradient norms.
    #[arg(long = "dump-grads")]
    dump_grads: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            mode,
            seed,
            steps,
            n_g,
            rho_g,
            rho_d,
            r_g,
            r_d,
            coverage,
            eta,
            batch_size,
            t_roll,
            eval_interval,
            kappa,
            n_eval,
            mix_ratio,
            reuse_epochs,
            vocab,
            order
        );
        if self.dump_rollouts {
            cfg.dump_rollouts = true;
        }
        if self.dump_grads {
            cfg.dump_grads = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the scenario, specialize the student, train, write artifacts.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: $CAMOPD_OUT_ROOT/run-<mode>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Clear and reuse an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run a budget-matched (mode x seed) grid and aggregate medians.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: $CAMOPD_OUT_ROOT/compare-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Modes to include.
        #[arg(long, value_delimiter = ',', default_values = ["vanilla", "camopd", "decoupled-only"])]
        modes: Vec<Mode>,
        /// Seeds to include (default: five consecutive seeds from the base).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Extra camopd cells at these n_g values (ablation sweep).
        #[arg(long = "sweep-n-g", value_delimiter = ',')]
        sweep_n_g: Vec<u64>,
    },
    /// Run the self-verification suite (finite differences, selection
    /// oracle, coherence bounds, determinism, teacher rows).
    Check {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Regenerate charts from an existing metrics file.
    Plot {
        /// Path to a metrics.jsonl file.
        #[arg(long)]
        metrics: PathBuf,
        /// Directory to write charts into.
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn real_main() -> Result<(), Error> {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        // Ignore failure: the pool can only be configured once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Run { cfg, out, force } => {
            let cfg = cfg.resolve()?;
            let dir = out
                .unwrap_or_else(|| out_root().join(format!("run-{}-seed{}", cfg.mode, cfg.seed)));
            let summary = runner::cmd_run(&cfg, &dir, force)?;
            println!(
                "run complete: mode={} seed={} steps={} (scenario attempt {}, specialize {} steps)",
                cfg.mode, cfg.seed, cfg.steps, summary.scenario_attempt, summary.specialize.steps
            );
            println!(
                "final kl_general={:.6} kl_domain={:.6} best kl_general={:.6}",
                summary.report.final_kl_general,
                summary.report.final_kl_domain,
                summary.report.best_kl_general
            );
            println!("artifacts: {}", summary.out_dir.display());
            Ok(())
        }
        Command::Compare {
            cfg,
            out,
            force,
            modes,
            seeds,
            sweep_n_g,
        } => {
            let cfg = cfg.resolve()?;
            let seeds = seeds.unwrap_or_else(|| (cfg.seed..cfg.seed + 5).collect());
            let dir = out.unwrap_or_else(|| out_root().join(format!("compare-seed{}", cfg.seed)));
            let opts = CompareOptions {
                modes,
                seeds,
                sweep_n_g,
            };
            let outcome = runner::cmd_compare(&cfg, &dir, force, &opts)?;
            for f in &outcome.findings {
                println!("{f}");
            }
            println!(
                "{} cells ({} failed); tables and charts in {}",
                outcome.cells.len(),
                outcome.failed_cells,
                outcome.out_dir.display()
            );
            if outcome.failed_cells > 0 {
                return Err(Error::Runtime(format!(
                    "{} comparison cells failed; see per_cell.tsv",
                    outcome.failed_cells
                )));
            }
            Ok(())
        }
        Command::Check { cfg } => {
            let cfg = cfg.resolve()?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            runner::cmd_check(&cfg, &mut lock)?;
            let _ = lock.flush();
            Ok(())
        }
        Command::Plot { metrics, out } => {
            runner::cmd_plot(&metrics, &out)?;
            println!("charts written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
