//! Separation-principle baselines and the belief-space MPC controller.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimation::Belief;
use crate::linalg;
use crate::optimizer::{self, minimize, InitScheme, LbfgsConfig, OptimizerFlag};
use crate::planning::{flat_to_plan, plan_to_flat, CostMode, PlanningProblem};
use crate::system::SystemModel;

/// Finite-horizon LQR gains `L_0 … L_{T-1}` and cost-to-go `K_0 … K_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiTable {
    pub gains: Vec<DMatrix<f64>>,
    pub values: Vec<DMatrix<f64>>,
}

impl RiccatiTable {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }
}

/// Backward Riccati recursion from `K_T = Q_T`:
/// `L_t = -(BᵀK_{t+1}B + R)⁻¹ BᵀK_{t+1}A`, `K_t = AᵀK_{t+1}A + AᵀK_{t+1}B L_t + Q`.
pub fn riccati_backward(sys: &SystemModel, horizon: usize) -> Result<RiccatiTable> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("Riccati horizon must be at least 1".into()));
    }
    let (a, b) = (sys.a(), sys.b());
    let mut values = vec![sys.q_t().clone(); horizon + 1];
    let mut gains = vec![DMatrix::zeros(sys.p(), sys.n()); horizon];
    for t in (0..horizon).rev() {
        let k_next = &values[t + 1];
        let bt_k = b.transpose() * k_next;
        let mut s = &bt_k * b + sys.r();
        linalg::symmetrize(&mut s);
        let gain = -linalg::spd_solve("BᵀKB + R", &s, &(&bt_k * a))?;
        let at_k = a.transpose() * k_next;
        let mut k = &at_k * a + &at_k * b * &gain + sys.q();
        linalg::symmetrize(&mut k);
        gains[t] = gain;
        values[t] = k;
    }
    Ok(RiccatiTable { gains, values })
}

/// `u_t = L_t x̂`.
pub fn sep_action(table: &RiccatiTable, t: usize, mean: &DVector<f64>) -> Result<DVector<f64>> {
    let gain = table
        .gains
        .get(t)
        .ok_or(Error::TimeOutOfRange { t, horizon: table.horizon() })?;
    check_dim("belief mean", gain.ncols(), mean.len())?;
    Ok(gain * mean)
}

/// First input of the H-step deterministic LQ problem rooted at the belief mean.
pub fn sep_mpc_action(sys: &SystemModel, belief: &Belief, horizon: usize) -> Result<DVector<f64>> {
    let table = riccati_backward(sys, horizon)?;
    sep_action(&table, 0, &belief.mean)
}

/// Result of one receding-horizon optimization.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub u: DVector<f64>,
    pub plan: DMatrix<f64>,
    /// Surrogate objective at the returned plan.
    pub value: f64,
    pub iters: usize,
    pub flag: Option<OptimizerFlag>,
}

fn optimize_plan(problem: &PlanningProblem<'_>, cfg: &LbfgsConfig, init: &DMatrix<f64>) -> Result<PlanOutcome> {
    let (h, p) = (problem.horizon(), problem.inputs());
    crate::error::check_shape("initial plan", (h, p), init.shape())?;
    let objective = |flat: &DVector<f64>| {
        let plan = flat_to_plan(flat, h, p);
        match problem.value_and_gradient(&plan) {
            Ok((v, g)) => (v, plan_to_flat(&g)),
            Err(_) => (f64::NAN, DVector::zeros(h * p)),
        }
    };
    let res = minimize(objective, plan_to_flat(init), cfg);
    let plan = flat_to_plan(&res.x, h, p);
    Ok(PlanOutcome {
        u: plan.row(0).transpose(),
        plan,
        value: res.value,
        iters: res.iters,
        flag: res.flag,
    })
}

/// Deterministic LQ problem solved by L-BFGS over the plan (covariance terms dropped).
pub fn sep_mpc_action_lbfgs(
    sys: &SystemModel,
    belief: &Belief,
    horizon: usize,
    cfg: &LbfgsConfig,
    init: &DMatrix<f64>,
) -> Result<PlanOutcome> {
    let problem = PlanningProblem::with_mode(sys, belief.clone(), horizon, CostMode::MeanOnly)?;
    optimize_plan(&problem, cfg, init)
}

/// Belief-space MPC from an explicit initial plan.
pub fn bmpc_action_from(
    sys: &SystemModel,
    belief: &Belief,
    horizon: usize,
    cfg: &LbfgsConfig,
    init: &DMatrix<f64>,
) -> Result<PlanOutcome> {
    let problem = PlanningProblem::new(sys, belief.clone(), horizon)?;
    optimize_plan(&problem, cfg, init)
}

/// Initial plan for a planning step.
pub fn initial_plan<R: Rng + ?Sized>(
    sys: &SystemModel,
    belief: &Belief,
    horizon: usize,
    scheme: InitScheme,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    match scheme {
        InitScheme::RandomGaussian => Ok(optimizer::random_init(horizon, sys.p(), rng)),
        InitScheme::SepMpcWarmStart => optimizer::sep_mpc_warm_start(sys, belief, horizon),
    }
}

/// Belief-space MPC: initialize per `scheme`, minimize the surrogate
/// objective, return the first input together with the plan.
pub fn bmpc_action<R: Rng + ?Sized>(
    sys: &SystemModel,
    belief: &Belief,
    horizon: usize,
    cfg: &LbfgsConfig,
    scheme: InitScheme,
    rng: &mut R,
) -> Result<PlanOutcome> {
    let init = initial_plan(sys, belief, horizon, scheme, rng)?;
    bmpc_action_from(sys, belief, horizon, cfg, &init)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Sep,
    SepMpc,
    SepMpcLbfgs,
    BMpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::Sep,
        ControllerKind::SepMpc,
        ControllerKind::SepMpcLbfgs,
        ControllerKind::BMpc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Sep => "sep",
            ControllerKind::SepMpc => "sep-mpc",
            ControllerKind::SepMpcLbfgs => "sep-mpc-lbfgs",
            ControllerKind::BMpc => "b-mpc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller '{s}'")))
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Controller selection plus its planning parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    /// Planning horizon; ignored by `Sep`.
    pub horizon: usize,
    pub lbfgs: LbfgsConfig,
    pub init: InitScheme,
}

impl ControllerSpec {
    pub fn sep() -> Self {
        Self::new(ControllerKind::Sep, 1)
    }

    pub fn new(kind: ControllerKind, horizon: usize) -> Self {
        Self {
            kind,
            horizon,
            lbfgs: LbfgsConfig::default(),
            init: InitScheme::RandomGaussian,
        }
    }

    pub fn with_lbfgs(mut self, lbfgs: LbfgsConfig) -> Self {
        self.lbfgs = lbfgs;
        self
    }

    pub fn with_init(mut self, init: InitScheme) -> Self {
        self.init = init;
        self
    }

    /// Instantiates the controller for an episode of `total_steps` steps.
    pub fn build<'a>(&self, sys: &'a SystemModel, total_steps: usize, planner_rng: ChaCha20Rng) -> Result<Controller<'a>> {
        if total_steps == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon and episode length must be at least 1".into()));
        }
        if self.kind != ControllerKind::Sep && self.kind != ControllerKind::SepMpc {
            self.lbfgs.validate()?;
        }
        let table = match self.kind {
            ControllerKind::Sep => Some(riccati_backward(sys, total_steps)?),
            _ => None,
        };
        Ok(Controller { spec: *self, sys, total_steps, table, rng: planner_rng })
    }
}

/// One applied input.
#[derive(Debug, Clone)]
pub struct Action {
    pub u: DVector<f64>,
    pub planned_value: Option<f64>,
    pub flag: Option<OptimizerFlag>,
}

/// A controller bound to a system and episode. The planner-init stream is
/// owned here, so distinct rollouts never share randomness.
pub struct Controller<'a> {
    spec: ControllerSpec,
    sys: &'a SystemModel,
    total_steps: usize,
    table: Option<RiccatiTable>,
    rng: ChaCha20Rng,
}

impl Controller<'_> {
    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    /// Planning horizon at step `t`, clamped to the remaining episode.
    pub fn horizon_at(&self, t: usize) -> usize {
        self.spec.horizon.min(self.total_steps.saturating_sub(t)).max(1)
    }

    pub fn act(&mut self, t: usize, belief: &Belief) -> Result<Action> {
        let h = self.horizon_at(t);
        match self.spec.kind {
            ControllerKind::Sep => {
                let table = self.table.as_ref().expect("Sep controller holds its table");
                Ok(Action { u: sep_action(table, t, &belief.mean)?, planned_value: None, flag: None })
            }
            ControllerKind::SepMpc => Ok(Action {
                u: sep_mpc_action(self.sys, belief, h)?,
                planned_value: None,
                flag: None,
            }),
            ControllerKind::SepMpcLbfgs => {
                let init = initial_plan(self.sys, belief, h, self.spec.init, &mut self.rng)?;
                let out = sep_mpc_action_lbfgs(self.sys, belief, h, &self.spec.lbfgs, &init)?;
                Ok(Action { u: out.u, planned_value: Some(out.value), flag: out.flag })
            }
            ControllerKind::BMpc => {
                let out = bmpc_action(self.sys, belief, h, &self.spec.lbfgs, self.spec.init, &mut self.rng)?;
                Ok(Action { u: out.u, planned_value: Some(out.value), flag: out.flag })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{make_double_integrator, DoubleIntegratorParams, SystemMatrices};

    fn scalar_sys() -> SystemModel {
        let one = DMatrix::from_element(1, 1, 1.0);
        SystemModel::new(SystemMatrices {
            a: one.clone(),
            b: one.clone(),
            cs: vec![one.clone(), DMatrix::zeros(1, 1)],
            sigma_w: one.clone(),
            sigma_z: one.clone(),
            q: one.clone(),
            q_t: one.clone(),
            r: one.clone(),
            x0_mean: DVector::zeros(1),
            sigma0: one,
        })
        .unwrap()
    }

    fn belief1(x: f64) -> Belief {
        Belief::new(DVector::from_element(1, x), DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    #[test]
    fn scalar_riccati_closed_form() {
        let table = riccati_backward(&scalar_sys(), 1).unwrap();
        assert!((table.values[1][(0, 0)] - 1.0).abs() < 1e-12);
        assert!((table.gains[0][(0, 0)] + 0.5).abs() < 1e-12);
        assert!((table.values[0][(0, 0)] - 1.5).abs() < 1e-12);
        let u = sep_action(&table, 0, &DVector::from_element(1, 2.0)).unwrap();
        assert!((u[0] + 1.0).abs() < 1e-12);
        let u = sep_mpc_action(&scalar_sys(), &belief1(1.0), 1).unwrap();
        assert!((u[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn uncontrollable_system_is_lyapunov_sum() {
        let mut m = make_double_integrator(&DoubleIntegratorParams::default()).unwrap().to_matrices();
        m.b = DMatrix::zeros(6, 3);
        let sys = SystemModel::new(m).unwrap();
        let table = riccati_backward(&sys, 4).unwrap();
        assert!(table.gains.iter().all(|g| g.iter().all(|v| *v == 0.0)));
        let mut expected = sys.q_t().clone();
        for _ in 0..4 {
            expected = sys.a().transpose() * expected * sys.a() + sys.q();
        }
        assert!((&table.values[0] - expected).amax() < 1e-12);
    }

    #[test]
    fn sep_action_errors_and_linearity() {
        let sys = make_double_integrator(&DoubleIntegratorParams::default()).unwrap();
        let table = riccati_backward(&sys, 10).unwrap();
        assert!(matches!(
            sep_action(&table, 10, &DVector::zeros(6)),
            Err(Error::TimeOutOfRange { .. })
        ));
        let x = DVector::from_fn(6, |i, _| 0.3 * i as f64 - 0.5);
        assert!(sep_action(&table, 3, &DVector::zeros(6)).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(sep_action(&table, 3, &(&x * 2.0)).unwrap(), sep_action(&table, 3, &x).unwrap() * 2.0);
    }

    #[test]
    fn lbfgs_scalar_case() {
        let sys = scalar_sys();
        let out = sep_mpc_action_lbfgs(&sys, &belief1(1.0), 1, &LbfgsConfig::default(), &DMatrix::zeros(1, 1)).unwrap();
        assert!((out.u[0] + 0.5).abs() < 1e-6);
        let zero = Belief::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let out = sep_mpc_action_lbfgs(&sys, &zero, 3, &LbfgsConfig::default(), &DMatrix::zeros(3, 1)).unwrap();
        assert_eq!(out.u[0], 0.0);
    }

    #[test]
    fn warm_start_from_zero_mean_is_zero() {
        let sys = make_double_integrator(&DoubleIntegratorParams::default()).unwrap();
        let plan = optimizer::sep_mpc_warm_start(&sys, &Belief::prior(&sys), 7).unwrap();
        assert_eq!(plan.shape(), (7, 3));
        assert!(plan.iter().all(|v| *v == 0.0));
        let plan = optimizer::sep_mpc_warm_start(&scalar_sys(), &belief1(1.0), 1).unwrap();
        assert!((plan[(0, 0)] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn controller_names_round_trip() {
        for k in ControllerKind::ALL {
            assert_eq!(ControllerKind::parse(k.name()).unwrap(), k);
        }
        assert!(ControllerKind::parse("lqr").is_err());
    }

    #[test]
    fn horizon_is_clamped_near_the_end() {
        let sys = scalar_sys();
        let c = ControllerSpec::new(ControllerKind::SepMpc, 10)
            .build(&sys, 12, crate::rng::stream(0, 0, crate::rng::StreamTag::PlannerInit))
            .unwrap();
        assert_eq!(c.horizon_at(0), 10);
        assert_eq!(c.horizon_at(5), 7);
        assert_eq!(c.horizon_at(11), 1);
    }
}
