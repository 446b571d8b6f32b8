//! Matched-noise closed-loop experiments and their CSV artifacts.

mod procedures;
pub mod output;
pub mod rollout;
pub mod stats;
pub mod validate;

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::ControllerSpec;
use crate::error::{Error, Result};
use crate::optimizer::LbfgsConfig;
use crate::rng::{self, StreamTag};
use crate::system::{SystemConfig, SystemKind, SystemModel};

pub use output::{Cell, Manifest, Table};
pub use procedures::*;
pub use rollout::{rollout, RolloutRecord};

pub const DEFAULT_HORIZONS: [usize; 6] = [5, 10, 15, 20, 25, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    HSweep,
    Decompose,
    KfDiag,
    Counterfactual,
    SyntheticGap,
    Heatmap,
    RhoSweep,
    Runtime,
    InitStudy,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::HSweep,
        ExperimentKind::Decompose,
        ExperimentKind::KfDiag,
        ExperimentKind::Counterfactual,
        ExperimentKind::SyntheticGap,
        ExperimentKind::Heatmap,
        ExperimentKind::RhoSweep,
        ExperimentKind::Runtime,
        ExperimentKind::InitStudy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::HSweep => "h-sweep",
            ExperimentKind::Decompose => "decompose",
            ExperimentKind::KfDiag => "kf-diag",
            ExperimentKind::Counterfactual => "counterfactual",
            ExperimentKind::SyntheticGap => "synthetic-gap",
            ExperimentKind::Heatmap => "heatmap",
            ExperimentKind::RhoSweep => "rho-sweep",
            ExperimentKind::Runtime => "runtime",
            ExperimentKind::InitStudy => "init-study",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything an experiment needs. `system.seed` is the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub trials: usize,
    /// Episode length; each experiment has its own default when unset.
    pub steps: Option<usize>,
    /// Fixed planning horizon; defaults to 10 (random) or 15 (double integrator).
    pub horizon: Option<usize>,
    /// Horizon grid for sweeps.
    pub horizons: Vec<usize>,
    pub lbfgs: LbfgsConfig,
    /// Worker threads for trials; 0 uses all cores.
    #[serde(default)]
    pub parallel: usize,
}

impl ExperimentConfig {
    pub fn baseline(kind: SystemKind) -> Self {
        Self {
            system: SystemConfig::baseline(kind),
            trials: 10,
            steps: None,
            horizon: None,
            horizons: DEFAULT_HORIZONS.to_vec(),
            lbfgs: LbfgsConfig::default(),
            parallel: 0,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.system.seed
    }

    pub fn steps_or(&self, default: usize) -> usize {
        self.steps.unwrap_or(default)
    }

    pub fn fixed_horizon(&self) -> usize {
        self.horizon.unwrap_or(match self.system.system {
            SystemKind::Random => 10,
            SystemKind::DoubleIntegrator => 15,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.steps == Some(0) || self.horizon == Some(0) || self.horizons.contains(&0) {
            return Err(Error::Config("steps and horizons must be at least 1".into()));
        }
        self.lbfgs.validate()?;
        self.system.build()?;
        Ok(())
    }

    /// Applies a key-value config document on top of `self`.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.apply(self)
    }
}

/// On-disk configuration. Every key is optional and overrides the baseline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: Option<SystemKind>,
    pub rho: Option<f64>,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
    pub h: Option<f64>,
    pub r_scale: Option<f64>,
    pub sigma_w: Option<f64>,
    pub sigma_z: Option<f64>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub steps: Option<usize>,
    pub horizon: Option<usize>,
    pub horizons: Option<Vec<usize>>,
    pub lbfgs_iters: Option<usize>,
    pub lbfgs_step: Option<f64>,
    pub lbfgs_memory: Option<usize>,
}

impl ConfigFile {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(kind) = self.system {
            if kind != cfg.system.system {
                let seed = cfg.system.seed;
                cfg.system = SystemConfig { seed, ..SystemConfig::baseline(kind) };
            }
        }
        let s = &mut cfg.system;
        macro_rules! set {
            ($field:ident, $target:expr) => {
                if let Some(v) = self.$field.clone() {
                    $target = v;
                }
            };
        }
        set!(rho, s.rho);
        set!(c0, s.c0);
        set!(c1, s.c1);
        set!(h, s.h);
        set!(r_scale, s.r_scale);
        set!(sigma_w, s.sigma_w);
        set!(sigma_z, s.sigma_z);
        set!(seed, s.seed);
        set!(trials, cfg.trials);
        set!(horizons, cfg.horizons);
        set!(lbfgs_iters, cfg.lbfgs.max_iters);
        set!(lbfgs_step, cfg.lbfgs.step_size);
        set!(lbfgs_memory, cfg.lbfgs.memory);
        if self.steps.is_some() {
            cfg.steps = self.steps;
        }
        if self.horizon.is_some() {
            cfg.horizon = self.horizon;
        }
        Ok(())
    }
}

/// Output of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub system: SystemKind,
    /// Summary tables; the first is the primary summary.
    pub tables: Vec<Table>,
    /// Per-trial raw tables.
    pub raw: Vec<Table>,
    pub trial_seeds: Vec<u64>,
    pub optimizer_flags: usize,
}

impl ExperimentResult {
    pub fn summary(&self) -> &Table {
        &self.tables[0]
    }

    pub fn table(&self, name_suffix: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name.ends_with(name_suffix))
    }

    /// Writes summary tables, raw tables under `raw/`, and a JSON manifest.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
        let mut artifacts = Vec::new();
        for t in &self.tables {
            artifacts.push(t.write(dir)?.display().to_string());
        }
        let raw_dir = dir.join("raw");
        for t in &self.raw {
            artifacts.push(t.write(&raw_dir)?.display().to_string());
        }
        let manifest = Manifest {
            experiment: self.kind.name().into(),
            system: self.system.name().into(),
            master_seed: cfg.master_seed(),
            trial_seeds: self.trial_seeds.clone(),
            config: serde_json::to_value(cfg)?,
            artifacts,
            optimizer_flags: self.optimizer_flags,
        };
        manifest.write(&dir.join(format!("{}_{}_manifest.json", self.kind, self.system.name())))?;
        Ok(manifest)
    }
}

/// Runs `kind` under `cfg`, using `cfg.parallel` worker threads.
pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let go = || match kind {
        ExperimentKind::HSweep => run_h_sweep(cfg),
        ExperimentKind::Decompose => run_cost_decomposition(cfg),
        ExperimentKind::KfDiag => run_kf_diagnostics(cfg),
        ExperimentKind::Counterfactual => run_counterfactual(cfg),
        ExperimentKind::SyntheticGap => run_synthetic_gap(cfg),
        ExperimentKind::Heatmap => run_heatmap(cfg),
        ExperimentKind::RhoSweep => run_rho_sweep(cfg),
        ExperimentKind::Runtime => run_runtime_study(cfg),
        ExperimentKind::InitStudy => run_init_study(cfg),
    };
    if cfg.parallel > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(go)
    } else {
        go()
    }
}

/// One closed-loop trial.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Job<'a> {
    pub sys: &'a SystemModel,
    pub spec: ControllerSpec,
    pub steps: usize,
    pub trial: usize,
    /// Distinguishes planner-init streams of different cells and controllers.
    pub planner_index: u64,
}

impl Job<'_> {
    fn execute(&self, experiment: ExperimentKind, master_seed: u64) -> Result<RolloutRecord> {
        let seed = rng::trial_seed(master_seed, experiment.name(), self.trial as u64);
        let noise = self.sys.sample_noise(self.steps, seed)?;
        let planner = rng::stream(seed, self.planner_index, StreamTag::PlannerInit);
        rollout(self.sys, &self.spec, self.steps, &noise, planner)
    }
}

/// Runs jobs on the current rayon pool; output order matches input order.
pub(crate) fn run_jobs(jobs: &[Job<'_>], experiment: ExperimentKind, master_seed: u64, parallel: bool) -> Result<Vec<RolloutRecord>> {
    if parallel {
        jobs.par_iter().map(|j| j.execute(experiment, master_seed)).collect()
    } else {
        jobs.iter().map(|j| j.execute(experiment, master_seed)).collect()
    }
}

pub(crate) fn trial_seeds(cfg: &ExperimentConfig, kind: ExperimentKind) -> Vec<u64> {
    (0..cfg.trials as u64)
        .map(|i| rng::trial_seed(cfg.master_seed(), kind.name(), i))
        .collect()
}

/// Raw per-step table: `t, state_cost, input_cost, tr_sigma, est_err, u_1..u_p`.
/// A final row `t = T` carries the terminal cost in `state_cost`.
pub fn raw_table(name: String, rec: &RolloutRecord) -> Table {
    let p = rec.inputs.first().map_or(0, |u| u.len());
    let mut header: Vec<String> = ["t", "state_cost", "input_cost", "tr_sigma", "est_err"]
        .into_iter()
        .map(String::from)
        .collect();
    header.extend((1..=p).map(|i| format!("u_{i}")));
    let mut table = Table::new(name, header);
    let errs = rec.estimation_errors();
    for t in 0..rec.steps() {
        let mut row = vec![
            Cell::from(t),
            rec.state_costs[t].into(),
            rec.input_costs[t].into(),
            rec.tr_sigma[t].into(),
            errs[t].into(),
        ];
        row.extend(rec.inputs[t].iter().map(|v| Cell::Float(*v)));
        table.push(row);
    }
    let mut last = vec![
        Cell::from(rec.steps()),
        rec.terminal_cost.into(),
        0.0.into(),
        rec.terminal_belief.cov.trace().into(),
        (&rec.terminal_state - &rec.terminal_belief.mean).norm().into(),
    ];
    last.extend((0..p).map(|_| Cell::Empty));
    table.push(last);
    table
}
