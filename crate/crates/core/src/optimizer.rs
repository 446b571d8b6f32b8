//! Bounded-iteration L-BFGS with a backtracking Armijo line search, plus the
//! two plan initializations used by the belief-space controller.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controllers::riccati_backward;
use crate::error::{Error, Result};
use crate::estimation::Belief;
use crate::system::SystemModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    /// Accepted line-search steps. Zero returns the initial point unchanged.
    pub max_iters: usize,
    /// First trial step of each line search.
    pub step_size: f64,
    pub memory: usize,
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            step_size: 0.8,
            memory: 10,
            grad_tol: 1e-8,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 || !(self.step_size > 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid L-BFGS configuration {self:?}")));
        }
        Ok(())
    }
}

/// How a planning step seeds its input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Entries i.i.d. `N(0, 1/H)` from the planner-init stream.
    RandomGaussian,
    /// Open-loop deterministic LQ plan from the belief mean.
    SepMpcWarmStart,
}

/// Why a minimization stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerFlag {
    /// The objective or its gradient was not finite; the best finite iterate
    /// was returned.
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub iters: usize,
    pub evaluations: usize,
    pub flag: Option<OptimizerFlag>,
}

const ARMIJO_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;
const CONTRACTION: f64 = 0.5;
const MAX_LINE_SEARCH: usize = 40;
const CURVATURE_EPS: f64 = 1e-12;

fn finite(value: f64, grad: &DVector<f64>) -> bool {
    value.is_finite() && grad.iter().all(|g| g.is_finite())
}

/// Two-loop recursion: returns `-H g`.
fn lbfgs_direction(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let alpha = rho * s.dot(&q);
        q.axpy(-alpha, y, 1.0);
        alphas.push(alpha);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), alpha) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * y.dot(&q);
        q.axpy(alpha - beta, s, 1.0);
    }
    -q
}

/// Minimizes `f` (returning value and gradient) from `init`.
///
/// Each iteration tries `step_size` along the quasi-Newton direction and
/// bisects (or expands) until the weak Wolfe conditions hold, then tries the
/// minimizer of the 1-D quadratic through the accepted point and keeps it if
/// it is lower. Accepted steps always decrease `f`, so the final iterate is
/// also the best one seen.
pub fn minimize<F>(mut f: F, init: DVector<f64>, cfg: &LbfgsConfig) -> Minimum
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (mut value, mut grad) = f(&init);
    let mut evaluations = 1;
    if !finite(value, &grad) {
        return Minimum { x: init, value, iters: 0, evaluations, flag: Some(OptimizerFlag::NonFinite) };
    }
    let mut x = init;
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iters = 0;

    while iters < cfg.max_iters && grad.norm() > cfg.grad_tol {
        let mut dir = lbfgs_direction(&grad, &history);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            history.clear();
            dir = -&grad;
            slope = grad.dot(&dir);
        }
        let mut step = cfg.step_size;
        if history.is_empty() {
            step *= (1.0 / grad.lp_norm(1)).min(1.0);
        }

        // Weak Wolfe search: halve the bracket on sufficient-decrease
        // failure, double while the slope is still too steep.
        let mut lo: Option<(f64, DVector<f64>, f64, DVector<f64>)> = None;
        let mut hi = f64::INFINITY;
        let mut accepted = None;
        for _ in 0..MAX_LINE_SEARCH {
            let trial = &x + &dir * step;
            let (tv, tg) = f(&trial);
            evaluations += 1;
            if !finite(tv, &tg) {
                return Minimum { x, value, iters, evaluations, flag: Some(OptimizerFlag::NonFinite) };
            }
            if tv > value + ARMIJO_C1 * step * slope {
                hi = step;
            } else if tg.dot(&dir) < WOLFE_C2 * slope {
                lo = Some((step, trial, tv, tg));
            } else {
                accepted = Some((step, trial, tv, tg));
                break;
            }
            let lo_step = lo.as_ref().map_or(0.0, |l| l.0);
            step = if hi.is_finite() { lo_step + CONTRACTION * (hi - lo_step) } else { 2.0 * step };
        }
        let Some((step, mut x_new, mut v_new, mut g_new)) = accepted.or(lo) else {
            break;
        };

        // Quadratic model through φ(0), φ'(0), φ(step); exact on quadratics.
        let curvature = (v_new - value - slope * step) / (step * step);
        if curvature > 0.0 {
            let best_step = -slope / (2.0 * curvature);
            if (best_step - step).abs() > 1e-3 * step && best_step < 10.0 * step {
                let trial = &x + &dir * best_step;
                let (tv, tg) = f(&trial);
                evaluations += 1;
                if finite(tv, &tg)
                    && tv < v_new
                    && tv <= value + ARMIJO_C1 * best_step * slope
                    && tg.dot(&dir) > slope
                {
                    x_new = trial;
                    v_new = tv;
                    g_new = tg;
                }
            }
        }

        let s = &x_new - &x;
        let y = &g_new - &grad;
        let sy = s.dot(&y);
        if sy > CURVATURE_EPS {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        } else {
            // No usable curvature along this step; stale pairs would keep
            // producing the same poorly scaled direction.
            history.clear();
        }
        x = x_new;
        value = v_new;
        grad = g_new;
        iters += 1;
    }
    Minimum { x, value, iters, evaluations, flag: None }
}

/// `H × p` plan with entries i.i.d. `N(0, 1/H)`.
pub fn random_init<R: Rng + ?Sized>(horizon: usize, inputs: usize, rng: &mut R) -> DMatrix<f64> {
    let std = (1.0 / horizon as f64).sqrt();
    let data: Vec<f64> = (0..horizon * inputs)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DMatrix::from_row_slice(horizon, inputs, &data)
}

/// Open-loop input sequence of the deterministic LQ problem from the belief
/// mean; the covariance is ignored.
pub fn sep_mpc_warm_start(sys: &SystemModel, belief: &Belief, horizon: usize) -> Result<DMatrix<f64>> {
    let table = riccati_backward(sys, horizon)?;
    let mut plan = DMatrix::zeros(horizon, sys.p());
    let mut x = belief.mean.clone();
    for (tau, gain) in table.gains.iter().enumerate() {
        let u = gain * &x;
        plan.row_mut(tau).copy_from(&u.transpose());
        x = sys.a() * &x + sys.b() * &u;
    }
    Ok(plan)
}
