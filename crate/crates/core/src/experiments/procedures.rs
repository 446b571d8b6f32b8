//! The experiment procedures. Each builds a grid of (system, controller)
//! cells, runs every cell on the same per-trial noise, and summarizes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::output::summary_header;
use super::stats::{logspace, quantile, summarize, Summary};
use super::{raw_table, run_jobs, trial_seeds, Cell, ExperimentConfig, ExperimentKind, ExperimentResult, Job, RolloutRecord, Table};
use crate::controllers::{bmpc_action, sep_mpc_action, ControllerKind, ControllerSpec};
use crate::error::Result;
use crate::estimation::Belief;
use crate::optimizer::{InitScheme, LbfgsConfig};
use crate::rng::{self, StreamTag};
use crate::system::{standard_normal_vector, SystemConfig, SystemModel};

pub const RHO_GRID: [f64; 6] = [0.85, 0.9, 0.95, 1.0, 1.05, 1.1];
pub const R_SCALE_GRID: [f64; 3] = [1.0, 10.0, 100.0];
pub const C0_GRID: [f64; 3] = [0.01, 0.1, 1.0];
pub const INIT_ITER_GRID: [usize; 6] = [0, 1, 2, 5, 10, 20];
pub const SYNTHETIC_BELIEFS: usize = 10;
pub const SYNTHETIC_ALPHAS: usize = 20;
/// `tr(Σ) = n α` spans roughly `[0.06, 190]` for `n = 6`.
pub const SYNTHETIC_ALPHA_RANGE: (f64, f64) = (0.01, 190.0 / 6.0);
pub const SYNTHETIC_MEAN_VARIANCE: f64 = 0.25;

/// One grid cell: a controller on one of the experiment's systems.
struct GridCell {
    system: usize,
    spec: ControllerSpec,
    /// Short key used in raw file names.
    key: String,
}

fn spec(kind: ControllerKind, horizon: usize, lbfgs: &LbfgsConfig) -> ControllerSpec {
    ControllerSpec::new(kind, horizon).with_lbfgs(*lbfgs)
}

/// Runs every cell for every trial. Returns per-cell trial records, in order.
fn run_grid(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    systems: &[SystemModel],
    cells: &[GridCell],
    steps: usize,
    parallel: bool,
) -> Result<Vec<Vec<RolloutRecord>>> {
    let jobs: Vec<Job<'_>> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            (0..cfg.trials).map(move |trial| Job {
                sys: &systems[c.system],
                spec: c.spec,
                steps,
                trial,
                planner_index: i as u64,
            })
        })
        .collect();
    let mut records = run_jobs(&jobs, kind, cfg.master_seed(), parallel)?.into_iter();
    Ok(cells
        .iter()
        .map(|_| records.by_ref().take(cfg.trials).collect())
        .collect())
}

fn raw_tables(kind: ExperimentKind, cfg: &ExperimentConfig, cells: &[GridCell], records: &[Vec<RolloutRecord>]) -> Vec<Table> {
    let mut out = Vec::new();
    for (cell, recs) in cells.iter().zip(records) {
        for (trial, rec) in recs.iter().enumerate() {
            let name = format!(
                "{}_{}_{}_{}_trial{:02}",
                kind,
                cfg.system.system.name(),
                cell.spec.kind,
                cell.key,
                trial
            );
            out.push(raw_table(name, rec));
        }
    }
    out
}

fn flag_count(records: &[Vec<RolloutRecord>]) -> usize {
    records.iter().flatten().map(|r| r.flags.len()).sum()
}

fn summary_row(kind: ExperimentKind, cfg: &ExperimentConfig, controller: &str, axes: Vec<Cell>, s: Summary) -> Vec<Cell> {
    let mut row = vec![
        Cell::from(kind.name()),
        Cell::from(cfg.system.system.name()),
        Cell::from(controller),
    ];
    row.extend(axes);
    row.extend([s.mean.into(), s.stderr.into(), s.ci95.into()]);
    row
}

fn totals(recs: &[RolloutRecord]) -> Vec<f64> {
    recs.iter().map(|r| r.total_cost).collect()
}

fn result(kind: ExperimentKind, cfg: &ExperimentConfig, tables: Vec<Table>, raw: Vec<Table>, flags: usize) -> ExperimentResult {
    ExperimentResult {
        kind,
        system: cfg.system.system,
        tables,
        raw,
        trial_seeds: trial_seeds(cfg, kind),
        optimizer_flags: flags,
    }
}

fn table_name(kind: ExperimentKind, cfg: &ExperimentConfig) -> String {
    format!("{}_{}", kind, cfg.system.system.name())
}

/// Total cost of `Sep`, `Sep-MPC` and `B-MPC` over the horizon grid.
/// `Sep` does not plan, so its single result is repeated on every row.
pub fn run_h_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let kind = ExperimentKind::HSweep;
    let steps = cfg.steps_or(300);
    let systems = vec![cfg.system.build()?];
    let mut cells = vec![GridCell { system: 0, spec: ControllerSpec::sep(), key: "all".into() }];
    for &h in &cfg.horizons {
        for ck in [ControllerKind::SepMpc, ControllerKind::BMpc] {
            cells.push(GridCell { system: 0, spec: spec(ck, h, &cfg.lbfgs), key: format!("h{h}") });
        }
    }
    let records = run_grid(kind, cfg, &systems, &cells, steps, true)?;
    let mut table = Table::new(table_name(kind, cfg), summary_header(&["h"]));
    let sep = summarize(&totals(&records[0]));
    for (i, &h) in cfg.horizons.iter().enumerate() {
        table.push(summary_row(kind, cfg, "sep", vec![h.into()], sep));
        for (j, ck) in [ControllerKind::SepMpc, ControllerKind::BMpc].into_iter().enumerate() {
            let s = summarize(&totals(&records[1 + 2 * i + j]));
            table.push(summary_row(kind, cfg, ck.name(), vec![h.into()], s));
        }
    }
    let raw = raw_tables(kind, cfg, &cells, &records);
    Ok(result(kind, cfg, vec![table], raw, flag_count(&records)))
}

fn baseline_cells(h: usize, lbfgs: &LbfgsConfig) -> Vec<GridCell> {
    [ControllerKind::Sep, ControllerKind::SepMpc, ControllerKind::BMpc]
        .into_iter()
        .map(|ck| GridCell { system: 0, spec: spec(ck, h, lbfgs), key: format!("h{h}") })
        .collect()
}

type Metric = fn(&RolloutRecord) -> f64;

/// State, input, terminal and total cost at a fixed horizon.
pub fn run_cost_decomposition(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let kind = ExperimentKind::Decompose;
    let steps = cfg.steps_or(300);
    let h = cfg.fixed_horizon();
    let systems = vec![cfg.system.build()?];
    let cells = baseline_cells(h, &cfg.lbfgs);
    let records = run_grid(kind, cfg, &systems, &cells, steps, true)?;
    let mut table = Table::new(table_name(kind, cfg), summary_header(&["h", "metric"]));
    for (cell, recs) in cells.iter().zip(&records) {
        let metrics: [(&str, Metric); 4] = [
            ("state_cost", |r| r.state_cost_sum),
            ("input_cost", |r| r.input_cost_sum),
            ("terminal_cost", |r| r.terminal_cost),
            ("total_cost", |r| r.total_cost),
        ];
        for (name, get) in metrics {
            let values: Vec<f64> = recs.iter().map(get).collect();
            table.push(summary_row(kind, cfg, cell.spec.kind.name(), vec![h.into(), name.into()], summarize(&values)));
        }
    }
    let raw = raw_tables(kind, cfg, &cells, &records);
    Ok(result(kind, cfg, vec![table], raw, flag_count(&records)))
}

/// Per-step estimation error and covariance trace, `t = 0..=T`.
pub fn run_kf_diagnostics(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let kind = ExperimentKind::KfDiag;
    let steps = cfg.steps_or(300);
    let h = cfg.fixed_horizon();
    let systems = vec![cfg.system.build()?];
    let cells = baseline_cells(h, &cfg.lbfgs);
    let records = run_grid(kind, cfg, &systems, &cells, steps, true)?;
    let mut table = Table::new(table_name(kind, cfg), summary_header(&["t", "metric"]));
    for (cell, recs) in cells.iter().zip(&records) {
        let errs: Vec<Vec<f64>> = recs
            .iter()
            .map(|r| {
                let mut e = r.estimation_errors();
                e.push((&r.terminal_state - &r.terminal_belief.mean).norm());
                e
            })
            .collect();
        let traces: Vec<Vec<f64>> = recs
            .iter()
            .map(|r| {
                let mut tr = r.tr_sigma.clone();
                tr.push(r.terminal_belief.cov.trace());
                tr
            })
            .collect();
        for t in 0..=steps {
            for (metric, series) in [("est_err", &errs), ("tr_sigma", &traces)] {
                let at_t: Vec<f64> = series.iter().map(|s| s[t]).collect();
                table.push(summary_row(kind, cfg, cell.spec.kind.name(), vec![t.into(), metric.into()], summarize(&at_t)));
            }
        }
    }
    let raw = raw_tables(kind, cfg, &cells, &records);
    Ok(result(kind, cfg, vec![table], raw, flag_count(&records)))
}

/// Runs one `Sep-MPC` trajectory and solves `B-MPC` from each visited belief.
/// Emits one row per `(t, coordinate)`.
pub fn run_counterfactual(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let kind = ExperimentKind::Counterfactual;
    let steps = cfg.steps_or(300);
    let h = cfg.fixed_horizon();
    let sys = cfg.system.build()?;
    let seed = rng::trial_seed(cfg.master_seed(), kind.name(), 0);
    let noise = sys.sample_noise(steps, seed)?;
    let sep_mpc = spec(ControllerKind::SepMpc, h, &cfg.lbfgs);
    let rec = super::rollout(&sys, &sep_mpc, steps, &noise, rng::stream(seed, 0, StreamTag::PlannerInit))?;

    let mut planner = rng::stream(seed, 1, StreamTag::PlannerInit);
    let mut table = Table::new(
        table_name(kind, cfg),
        ["experiment", "system", "t", "coord", "u_sep_mpc", "u_b_mpc"],
    );
    let mut flags = 0;
    for t in 0..steps {
        let horizon = h.min(steps - t);
        let out = bmpc_action(&sys, &rec.belief(t), horizon, &cfg.lbfgs, InitScheme::RandomGaussian, &mut planner)?;
        flags += usize::from(out.flag.is_some());
        for i in 0..sys.p() {
            table.push(vec![
                kind.name().into(),
                cfg.system.system.name().into(),
                t.into(),
                (i + 1).into(),
                rec.inputs[t][i].into(),
                out.u[i].into(),
            ]);
        }
    }
    let raw = vec![raw_table(format!("{}_{}_sep-mpc_h{}_trial00", kind, cfg.system.system.name(), h), &rec)];
    Ok(ExperimentResult {
        kind,
        system: cfg.system.system,
        tables: vec![table],
        raw,
        trial_seeds: vec![seed],
        optimizer_flags: flags,
    })
}

/// `‖u^B-MPC − u^Sep-MPC‖₂` at synthetic beliefs `(x̂, αI)`.
pub fn run_synthetic_gap(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let kind = ExperimentKind::SyntheticGap;
    let h = cfg.fixed_horizon();
    let sys = cfg.system.build()?;
    let n = sys.n();
    let mut aux = rng::stream(cfg.master_seed(), 0, StreamTag::Auxiliary);
    let means: Vec<DVector<f64>> = (0..SYNTHETIC_BELIEFS)
        .map(|_| standard_normal_vector(&mut aux, n) * SYNTHETIC_MEAN_VARIANCE.sqrt())
        .collect();
    let alphas = logspace(SYNTHETIC_ALPHA_RANGE.0, SYNTHETIC_ALPHA_RANGE.1, SYNTHETIC_ALPHAS);

    let points: Vec<(usize, usize)> = (0..SYNTHETIC_BELIEFS)
        .flat_map(|i| (0..SYNTHETIC_ALPHAS).map(move |j| (i, j)))
        .collect();
    let gaps: Vec<(f64, bool)> = points
        .par_iter()
        .map(|&(i, j)| {
            let belief = Belief { mean: means[i].clone(), cov: DMatrix::identity(n, n) * alphas[j] };
            let mut planner = rng::stream(cfg.master_seed(), i as u64, StreamTag::PlannerInit);
            let u_sep = sep_mpc_action(&sys, &belief, h)?;
            let out = bmpc_action(&sys, &belief, h, &cfg.lbfgs, InitScheme::RandomGaussian, &mut planner)?;
            Ok(((out.u - u_sep).norm(), out.flag.is_some()))
        })
        .collect::<Result<_>>()?;

    let sys_name = cfg.system.system.name();
    let mut pts = Table::new(
        format!("{kind}_{sys_name}_points"),
        ["experiment", "system", "belief", "alpha", "tr_sigma", "gap"],
    );
    for (&(i, j), (gap, _)) in points.iter().zip(&gaps) {
        pts.push(vec![
            kind.name().into(),
            sys_name.into(),
            i.into(),
            alphas[j].into(),
            (alphas[j] * n as f64).into(),
            (*gap).into(),
        ]);
    }
    let mut header = summary_header(&["alpha", "tr_sigma"]);
    header.extend(["median", "q25", "q75"].map(String::from));
    let mut table = Table::new(table_name(kind, cfg), header);
    for (j, alpha) in alphas.iter().enumerate() {
        let at_alpha: Vec<f64> = points
            .iter()
            .zip(&gaps)
            .filter(|((_, jj), _)| *jj == j)
            .map(|(_, (g, _))| *g)
            .collect();
        let mut row = summary_row(
            kind,
            cfg,
            "b-mpc-vs-sep-mpc",
            vec![(*alpha).into(), (alpha * n as f64).into()],
            summarize(&at_alpha),
        );
        row.extend([
            quantile(&at_alpha, 0.5).into(),
            quantile(&at_alpha, 0.25).into(),
            quantile(&at_alpha, 0.75).into(),
        ]);
        table.push(row);
    }
    let flags = gaps.iter().filter(|(_, f)| *f).count();
    Ok(ExperimentResult {
        kind,
        system: cfg.system.system,
        tables: vec![table, pts],
        raw: Vec::new(),
        trial_seeds: Vec::new(),
        optimizer_flags: flags,
    })
}

/// Percentage gain of `B-MPC` (best horizon by mean cost) over `Sep` across
/// the `R_scale × c0` grid.
pub fn run_heatmap(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let kind = ExperimentKind::Heatmap;
    let steps = cfg.steps_or(300);
    let mut grid = Vec::new();
    let mut systems = Vec::new();
    for &r_scale in &R_SCALE_GRID {
        for &c0 in &C0_GRID {
            systems.push(SystemConfig { r_scale, c0, ..cfg.system }.build()?);
            grid.push((r_scale, c0));
        }
    }
    let mut cells = Vec::new();
    for (s, (r_scale, c0)) in grid.iter().enumerate() {
        let key = format!("r{r_scale}_c{c0}");
        cells.push(GridCell { system: s, spec: ControllerSpec::sep(), key: key.clone() });
        for &h in &cfg.horizons {
            cells.push(GridCell { system: s, spec: spec(ControllerKind::BMpc, h, &cfg.lbfgs), key: format!("{key}_h{h}") });
        }
    }
    let records = run_grid(kind, cfg, &systems, &cells, steps, true)?;

    let mut table = Table::new(table_name(kind, cfg), summary_header(&["r_scale", "c0", "h"]));
    let mut gains = Table::new(
        format!("{}_cells", table_name(kind, cfg)),
        ["experiment", "system", "r_scale", "c0", "best_h", "sep_mean", "b_mpc_mean", "gain_pct"],
    );
    let per_system = 1 + cfg.horizons.len();
    for (s, (r_scale, c0)) in grid.iter().enumerate() {
        let base = s * per_system;
        let sep = summarize(&totals(&records[base]));
        table.push(summary_row(kind, cfg, "sep", vec![(*r_scale).into(), (*c0).into(), Cell::Empty], sep));
        let mut best: Option<(usize, f64)> = None;
        for (i, &h) in cfg.horizons.iter().enumerate() {
            let b = summarize(&totals(&records[base + 1 + i]));
            table.push(summary_row(kind, cfg, "b-mpc", vec![(*r_scale).into(), (*c0).into(), h.into()], b));
            if best.is_none_or(|(_, m)| b.mean < m) {
                best = Some((h, b.mean));
            }
        }
        let (best_h, best_mean) = best.expect("non-empty horizon grid");
        gains.push(vec![
            kind.name().into(),
            cfg.system.system.name().into(),
            (*r_scale).into(),
            (*c0).into(),
            best_h.into(),
            sep.mean.into(),
            best_mean.into(),
            (100.0 * (sep.mean - best_mean) / sep.mean).into(),
        ]);
    }
    let raw = raw_tables(kind, cfg, &cells, &records);
    Ok(result(kind, cfg, vec![table, gains], raw, flag_count(&records)))
}

/// Total cost across spectral radii at a fixed horizon.
pub fn run_rho_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let kind = ExperimentKind::RhoSweep;
    let steps = cfg.steps_or(300);
    let h = cfg.fixed_horizon();
    let systems = RHO_GRID
        .iter()
        .map(|&rho| SystemConfig { rho, ..cfg.system }.build())
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for (s, rho) in RHO_GRID.iter().enumerate() {
        for ck in [ControllerKind::Sep, ControllerKind::SepMpc, ControllerKind::BMpc] {
            cells.push(GridCell { system: s, spec: spec(ck, h, &cfg.lbfgs), key: format!("rho{rho}") });
        }
    }
    let records = run_grid(kind, cfg, &systems, &cells, steps, true)?;
    let mut table = Table::new(table_name(kind, cfg), summary_header(&["rho", "h"]));
    for (i, cell) in cells.iter().enumerate() {
        let rho = RHO_GRID[cell.system];
        table.push(summary_row(kind, cfg, cell.spec.kind.name(), vec![rho.into(), h.into()], summarize(&totals(&records[i]))));
    }
    let raw = raw_tables(kind, cfg, &cells, &records);
    Ok(result(kind, cfg, vec![table], raw, flag_count(&records)))
}

/// Wall-clock seconds per closed-loop trajectory, all four controllers.
/// Runs strictly sequentially.
pub fn run_runtime_study(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let kind = ExperimentKind::Runtime;
    let steps = cfg.steps_or(300);
    let systems = vec![cfg.system.build()?];
    let mut cells = Vec::new();
    for &h in &cfg.horizons {
        for ck in ControllerKind::ALL {
            cells.push(GridCell { system: 0, spec: spec(ck, h, &cfg.lbfgs), key: format!("h{h}") });
        }
    }
    let records = run_grid(kind, cfg, &systems, &cells, steps, false)?;
    let mut header = summary_header(&["h"]);
    header.push("total_cost_mean".into());
    let mut table = Table::new(table_name(kind, cfg), header);
    table.volatile = ["mean", "stderr", "ci95"].map(String::from).to_vec();
    for (cell, recs) in cells.iter().zip(&records) {
        let secs: Vec<f64> = recs.iter().map(|r| r.wall_clock_seconds).collect();
        let mut row = summary_row(kind, cfg, cell.spec.kind.name(), vec![cell.spec.horizon.into()], summarize(&secs));
        row.push(summarize(&totals(recs)).mean.into());
        table.push(row);
    }
    let raw = raw_tables(kind, cfg, &cells, &records);
    Ok(result(kind, cfg, vec![table], raw, flag_count(&records)))
}

/// `B-MPC` cost versus the L-BFGS iteration budget for both initializations.
pub fn run_init_study(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let kind = ExperimentKind::InitStudy;
    let steps = cfg.steps_or(100);
    let h = cfg.horizon.unwrap_or(15);
    let systems = vec![cfg.system.build()?];
    let schemes = [("random", InitScheme::RandomGaussian), ("sep-mpc", InitScheme::SepMpcWarmStart)];
    let mut cells = Vec::new();
    for (label, scheme) in schemes {
        for &iters in &INIT_ITER_GRID {
            let lbfgs = LbfgsConfig { max_iters: iters, ..cfg.lbfgs };
            cells.push(GridCell {
                system: 0,
                spec: spec(ControllerKind::BMpc, h, &lbfgs).with_init(scheme),
                key: format!("{label}_it{iters}"),
            });
        }
    }
    let records = run_grid(kind, cfg, &systems, &cells, steps, true)?;
    let mut table = Table::new(table_name(kind, cfg), summary_header(&["h", "init", "max_iters"]));
    for (cell, recs) in cells.iter().zip(&records) {
        let label = match cell.spec.init {
            InitScheme::RandomGaussian => "random",
            InitScheme::SepMpcWarmStart => "sep-mpc",
        };
        table.push(summary_row(
            kind,
            cfg,
            "b-mpc",
            vec![h.into(), label.into(), cell.spec.lbfgs.max_iters.into()],
            summarize(&totals(recs)),
        ));
    }
    let raw = raw_tables(kind, cfg, &cells, &records);
    Ok(result(kind, cfg, vec![table], raw, flag_count(&records)))
}
