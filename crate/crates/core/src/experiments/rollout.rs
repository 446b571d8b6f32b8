//! Closed-loop simulation of one controller against one noise realization.

use std::time::Instant;

use nalgebra::DVector;
use rand_chacha::ChaCha20Rng;

use crate::controllers::ControllerSpec;
use crate::error::{Error, Result};
use crate::estimation::{kalman_update, Belief};
use crate::linalg::quad_form;
use crate::system::{NoiseRealization, SystemModel};

/// Per-step log of one closed-loop trajectory. Costs are charged on the true state.
#[derive(Debug, Clone)]
pub struct RolloutRecord {
    pub states: Vec<DVector<f64>>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<nalgebra::DMatrix<f64>>,
    pub tr_sigma: Vec<f64>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub state_costs: Vec<f64>,
    pub input_costs: Vec<f64>,
    pub terminal_state: DVector<f64>,
    /// Belief after the last update, `(x̂_{T|T-1}, Σ_{T|T-1})`.
    pub terminal_belief: Belief,
    pub terminal_cost: f64,
    pub state_cost_sum: f64,
    pub input_cost_sum: f64,
    pub total_cost: f64,
    pub wall_clock_seconds: f64,
    /// `(t, reason)` for every step whose action came from an aborted or failed solve.
    pub flags: Vec<(usize, String)>,
}

impl RolloutRecord {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// `‖x_t − x̂_{t|t−1}‖₂` for `t = 0..T−1`.
    /// Belief the controller saw at step `t`.
    pub fn belief(&self, t: usize) -> Belief {
        Belief { mean: self.means[t].clone(), cov: self.covariances[t].clone() }
    }

    pub fn estimation_errors(&self) -> Vec<f64> {
        self.states.iter().zip(&self.means).map(|(x, m)| (x - m).norm()).collect()
    }
}

/// Runs `spec` on `sys` for `steps` steps using the shared `noise`.
pub fn rollout(
    sys: &SystemModel,
    spec: &ControllerSpec,
    steps: usize,
    noise: &NoiseRealization,
    planner_rng: ChaCha20Rng,
) -> Result<RolloutRecord> {
    if noise.len() < steps {
        return Err(Error::InvalidParameter(format!(
            "noise realization has {} steps, rollout needs {steps}",
            noise.len()
        )));
    }
    let started = Instant::now();
    let mut controller = spec.build(sys, steps, planner_rng)?;
    let mut belief = Belief::prior(sys);
    let mut x = noise.x0.clone();

    let mut rec = RolloutRecord {
        states: Vec::with_capacity(steps),
        means: Vec::with_capacity(steps),
        covariances: Vec::with_capacity(steps),
        tr_sigma: Vec::with_capacity(steps),
        inputs: Vec::with_capacity(steps),
        outputs: Vec::with_capacity(steps),
        state_costs: Vec::with_capacity(steps),
        input_costs: Vec::with_capacity(steps),
        terminal_state: DVector::zeros(0),
        terminal_belief: belief.clone(),
        terminal_cost: 0.0,
        state_cost_sum: 0.0,
        input_cost_sum: 0.0,
        total_cost: 0.0,
        wall_clock_seconds: 0.0,
        flags: Vec::new(),
    };

    for t in 0..steps {
        let u = match controller.act(t, &belief) {
            Ok(action) => {
                if let Some(flag) = action.flag {
                    rec.flags.push((t, format!("{flag:?}")));
                }
                action.u
            }
            Err(e) => {
                rec.flags.push((t, e.to_string()));
                DVector::zeros(sys.p())
            }
        };
        let (x_next, y) = sys.simulate_step(&x, &u, &noise.ws[t], &noise.zs[t])?;
        let state_cost = quad_form(sys.q(), &x);
        let input_cost = quad_form(sys.r(), &u);
        rec.state_cost_sum += state_cost;
        rec.input_cost_sum += input_cost;
        rec.states.push(x);
        rec.means.push(belief.mean.clone());
        rec.tr_sigma.push(belief.cov.trace());
        rec.covariances.push(belief.cov.clone());
        rec.state_costs.push(state_cost);
        rec.input_costs.push(input_cost);

        belief = kalman_update(sys, &belief, &u, &y)?;
        rec.inputs.push(u);
        rec.outputs.push(y);
        x = x_next;
    }
    rec.wall_clock_seconds = started.elapsed().as_secs_f64();
    rec.terminal_cost = quad_form(sys.q_t(), &x);
    rec.terminal_state = x;
    rec.terminal_belief = belief;
    rec.total_cost = rec.state_cost_sum + rec.input_cost_sum + rec.terminal_cost;
    Ok(rec)
}
