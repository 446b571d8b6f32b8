use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use belief_mpc::controllers::{ControllerKind, ControllerSpec};
use belief_mpc::experiments::{self, stats, validate, ExperimentConfig, ExperimentKind};
use belief_mpc::rng::{self, StreamTag};
use belief_mpc::system::SystemKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "belief-mpc", version, about = "Belief-space MPC experiments for bilinear-observation systems")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Benchmark system.
    #[arg(long, global = true, value_enum)]
    system: Option<SystemArg>,
    /// Master seed (also seeds the random system's matrices).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Fixed planning horizon (defaults: 10 random, 15 double integrator).
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Episode length (default 300; 100 for init-study).
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Output directory for CSVs and the run manifest.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Key-value (TOML) config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for trials (0 = all cores).
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[arg(long, global = true)]
    lbfgs_iters: Option<usize>,
    #[arg(long, global = true)]
    lbfgs_step: Option<f64>,
    #[arg(long, global = true)]
    lbfgs_memory: Option<usize>,
    /// Controller for the `rollout` subcommand.
    #[arg(long, global = true, value_enum, default_value = "b-mpc")]
    controller: ControllerArg,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Total cost versus planning horizon.
    HSweep,
    /// State / input / total cost decomposition at a fixed horizon.
    Decompose,
    /// Per-step estimation error and covariance trace.
    KfDiag,
    /// B-MPC actions along a Sep-MPC trajectory.
    Counterfactual,
    /// B-MPC vs Sep-MPC action gap at synthetic beliefs.
    SyntheticGap,
    /// B-MPC gain over Sep across the R_scale x c0 grid.
    Heatmap,
    /// Total cost versus spectral radius.
    RhoSweep,
    /// Wall-clock time per trajectory.
    Runtime,
    /// B-MPC cost versus L-BFGS iterations for both initializations.
    InitStudy,
    /// Run numerical self-checks on the configured system.
    Validate,
    /// Closed-loop trials of a single controller (see --controller).
    Rollout,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SystemArg {
    Random,
    DoubleIntegrator,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ControllerArg {
    Sep,
    SepMpc,
    SepMpcLbfgs,
    BMpc,
}

impl From<ControllerArg> for ControllerKind {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Sep => ControllerKind::Sep,
            ControllerArg::SepMpc => ControllerKind::SepMpc,
            ControllerArg::SepMpcLbfgs => ControllerKind::SepMpcLbfgs,
            ControllerArg::BMpc => ControllerKind::BMpc,
        }
    }
}

fn build_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let kind = match g.system {
        Some(SystemArg::DoubleIntegrator) => SystemKind::DoubleIntegrator,
        _ => SystemKind::Random,
    };
    let mut cfg = ExperimentConfig::baseline(kind);
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_file(&text)?;
    }
    if let Some(sys) = g.system {
        let kind = match sys {
            SystemArg::Random => SystemKind::Random,
            SystemArg::DoubleIntegrator => SystemKind::DoubleIntegrator,
        };
        if kind != cfg.system.system {
            bail!("--system {} conflicts with the config file's system", kind.name());
        }
    }
    if let Some(seed) = g.seed {
        cfg.system.seed = seed;
    }
    if let Some(t) = g.trials {
        cfg.trials = t;
    }
    if g.horizon.is_some() {
        cfg.horizon = g.horizon;
    }
    if g.steps.is_some() {
        cfg.steps = g.steps;
    }
    if let Some(p) = g.parallel {
        cfg.parallel = p;
    }
    if let Some(v) = g.lbfgs_iters {
        cfg.lbfgs.max_iters = v;
    }
    if let Some(v) = g.lbfgs_step {
        cfg.lbfgs.step_size = v;
    }
    if let Some(v) = g.lbfgs_memory {
        cfg.lbfgs.memory = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn experiment_kind(cmd: Command) -> Option<ExperimentKind> {
    Some(match cmd {
        Command::HSweep => ExperimentKind::HSweep,
        Command::Decompose => ExperimentKind::Decompose,
        Command::KfDiag => ExperimentKind::KfDiag,
        Command::Counterfactual => ExperimentKind::Counterfactual,
        Command::SyntheticGap => ExperimentKind::SyntheticGap,
        Command::Heatmap => ExperimentKind::Heatmap,
        Command::RhoSweep => ExperimentKind::RhoSweep,
        Command::Runtime => ExperimentKind::Runtime,
        Command::InitStudy => ExperimentKind::InitStudy,
        Command::Validate | Command::Rollout => return None,
    })
}

fn run_validate(cfg: &ExperimentConfig) -> Result<bool> {
    let sys = cfg.system.build()?;
    println!("config ok: {} system, n={} p={} m={}", cfg.system.system.name(), sys.n(), sys.p(), sys.m());
    let checks = validate::run_checks(&sys, cfg.fixed_horizon(), cfg.master_seed())?;
    let mut all = true;
    for c in &checks {
        println!("[{}] {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.passed;
    }
    Ok(all)
}

fn run_rollouts(cfg: &ExperimentConfig, controller: ControllerKind, out: &std::path::Path) -> Result<()> {
    let sys = cfg.system.build()?;
    let steps = cfg.steps_or(300);
    let spec = ControllerSpec::new(controller, cfg.fixed_horizon()).with_lbfgs(cfg.lbfgs);
    let mut totals = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials as u64 {
        let seed = rng::trial_seed(cfg.master_seed(), "rollout", trial);
        let noise = sys.sample_noise(steps, seed)?;
        let rec = experiments::rollout(&sys, &spec, steps, &noise, rng::stream(seed, 0, StreamTag::PlannerInit))?;
        let name = format!("rollout_{}_{}_trial{:02}", cfg.system.system.name(), controller, trial);
        experiments::raw_table(name, &rec).write(&out.join("raw"))?;
        println!(
            "trial {trial}: total {:.4} (state {:.4}, input {:.4}, terminal {:.4}) in {:.3}s",
            rec.total_cost, rec.state_cost_sum, rec.input_cost_sum, rec.terminal_cost, rec.wall_clock_seconds
        );
        totals.push(rec.total_cost);
    }
    let s = stats::summarize(&totals);
    println!("{controller}: mean total cost {:.4} ± {:.4} (95% CI)", s.mean, s.ci95);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main(cli: Cli) -> Result<bool> {
    let cfg = build_config(&cli.global)?;
    match cli.command {
        Command::Validate => run_validate(&cfg),
        Command::Rollout => run_rollouts(&cfg, cli.global.controller.into(), &cli.global.out).map(|_| true),
        cmd => {
            let kind = experiment_kind(cmd).expect("experiment subcommand");
            let result = experiments::run(kind, &cfg)?;
            let manifest = result.write(&cfg, &cli.global.out)?;
            print!("{}", result.summary().to_csv(false)?);
            eprintln!(
                "wrote {} artifacts to {} ({} optimizer flags)",
                manifest.artifacts.len(),
                cli.global.out.display(),
                manifest.optimizer_flags
            );
            Ok(true)
        }
    }
}
