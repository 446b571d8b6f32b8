//! Deterministic belief-space planning objective.
//!
//! Future observations are replaced by their nominal values, so the planned
//! mean follows the open-loop prediction while the covariance still follows
//! the input-dependent filter recursion. The gradient is obtained by a
//! reverse (adjoint) sweep over that recursion.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_shape, Error, Result};
use crate::estimation::{covariance_step, Belief};
use crate::linalg::{quad_form, trace_product};
use crate::system::SystemModel;

/// `x̂ᵀQx̂ + tr(QΣ) + uᵀRu`.
pub fn stage_cost(sys: &SystemModel, belief: &Belief, u: &DVector<f64>) -> f64 {
    quad_form(sys.q(), &belief.mean) + trace_product(sys.q(), &belief.cov) + quad_form(sys.r(), u)
}

/// `x̂ᵀQ_T x̂ + tr(Q_T Σ)`.
pub fn terminal_cost(sys: &SystemModel, belief: &Belief) -> f64 {
    quad_form(sys.q_t(), &belief.mean) + trace_product(sys.q_t(), &belief.cov)
}

/// Surrogate belief transition `F(b̄, u)`.
pub fn surrogate_step(sys: &SystemModel, belief: &Belief, u: &DVector<f64>) -> Result<Belief> {
    check_dim("belief mean", sys.n(), belief.mean.len())?;
    let c = sys.observation_matrix(u)?;
    let step = covariance_step(sys, &belief.cov, &c)?;
    Ok(Belief {
        mean: sys.a() * &belief.mean + sys.b() * u,
        cov: step.next_cov,
    })
}

/// Which terms of the planning objective are charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    /// Mean and covariance terms.
    Belief,
    /// Mean terms only; the deterministic LQ problem.
    MeanOnly,
}

/// H-step planning problem rooted at a belief. The decision variable is an
/// `H × p` plan whose row `τ` is the input applied at step `τ`.
#[derive(Debug, Clone)]
pub struct PlanningProblem<'a> {
    sys: &'a SystemModel,
    root: Belief,
    horizon: usize,
    mode: CostMode,
}

impl<'a> PlanningProblem<'a> {
    pub fn new(sys: &'a SystemModel, root: Belief, horizon: usize) -> Result<Self> {
        Self::with_mode(sys, root, horizon, CostMode::Belief)
    }

    pub fn with_mode(sys: &'a SystemModel, root: Belief, horizon: usize, mode: CostMode) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("planning horizon must be at least 1".into()));
        }
        check_dim("root mean", sys.n(), root.mean.len())?;
        check_shape("root covariance", (sys.n(), sys.n()), root.cov.shape())?;
        Ok(Self { sys, root, horizon, mode })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn inputs(&self) -> usize {
        self.sys.p()
    }

    pub fn root(&self) -> &Belief {
        &self.root
    }

    pub fn mode(&self) -> CostMode {
        self.mode
    }

    fn check_plan(&self, plan: &DMatrix<f64>) -> Result<()> {
        check_shape("plan", (self.horizon, self.sys.p()), plan.shape())
    }

    /// Planned belief trajectory `b̄_0 … b̄_H`.
    pub fn rollout(&self, plan: &DMatrix<f64>) -> Result<Vec<Belief>> {
        self.check_plan(plan)?;
        let mut out = Vec::with_capacity(self.horizon + 1);
        out.push(self.root.clone());
        for tau in 0..self.horizon {
            let u = plan.row(tau).transpose();
            let next = surrogate_step(self.sys, &out[tau], &u)?;
            out.push(next);
        }
        Ok(out)
    }

    /// `φ(b̄_H) + Σ_τ ℓ(b̄_τ, u_τ)`, including the constant root terms.
    pub fn objective(&self, plan: &DMatrix<f64>) -> Result<f64> {
        self.check_plan(plan)?;
        let sys = self.sys;
        let mut x = self.root.mean.clone();
        let mut cov = self.root.cov.clone();
        let mut total = 0.0;
        for tau in 0..self.horizon {
            let u = plan.row(tau).transpose();
            total += quad_form(sys.q(), &x) + quad_form(sys.r(), &u);
            if self.mode == CostMode::Belief {
                total += trace_product(sys.q(), &cov);
                let c = sys.observation_matrix_unchecked(u.as_slice());
                cov = covariance_step(sys, &cov, &c)?.next_cov;
            }
            x = sys.a() * &x + sys.b() * &u;
        }
        total += quad_form(sys.q_t(), &x);
        if self.mode == CostMode::Belief {
            total += trace_product(sys.q_t(), &cov);
        }
        Ok(total)
    }

    pub fn gradient(&self, plan: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.value_and_gradient(plan)?.1)
    }

    /// Objective and its exact gradient with respect to the plan.
    pub fn value_and_gradient(&self, plan: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self.check_plan(plan)?;
        let sys = self.sys;
        let (h, p, n) = (self.horizon, sys.p(), sys.n());
        let a = sys.a();
        let belief_terms = self.mode == CostMode::Belief;

        let inputs: Vec<DVector<f64>> = (0..h).map(|tau| plan.row(tau).transpose()).collect();

        // Forward sweep.
        let mut means = Vec::with_capacity(h + 1);
        means.push(self.root.mean.clone());
        let mut total = 0.0;
        let mut cov = self.root.cov.clone();
        // (C_τ, K_τ = Σ Cᵀ S⁻¹, P_τ = Σ - K C Σ)
        let mut tape: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> =
            Vec::with_capacity(if belief_terms { h } else { 0 });
        for (tau, u) in inputs.iter().enumerate() {
            let x = &means[tau];
            total += quad_form(sys.q(), x) + quad_form(sys.r(), u);
            if belief_terms {
                total += trace_product(sys.q(), &cov);
                let c = sys.observation_matrix_unchecked(u.as_slice());
                let step = covariance_step(sys, &cov, &c)?;
                let k = step.filter_gain_t.transpose();
                let posterior = &cov - &k * &c * &cov;
                tape.push((c, k, posterior));
                cov = step.next_cov;
            }
            let next = a * x + sys.b() * u;
            means.push(next);
        }
        total += quad_form(sys.q_t(), &means[h]);
        if belief_terms {
            total += trace_product(sys.q_t(), &cov);
        }

        // Reverse sweep, mean path: λ_H = 2 Q_T x_H, λ_τ = 2 Q x_τ + Aᵀ λ_{τ+1}.
        let mut grad = DMatrix::zeros(h, p);
        let mut lambda = sys.q_t() * &means[h] * 2.0;
        for tau in (0..h).rev() {
            let g = sys.r() * &inputs[tau] * 2.0 + sys.b().transpose() * &lambda;
            grad.row_mut(tau).copy_from(&g.transpose());
            lambda = sys.q() * &means[tau] * 2.0 + a.transpose() * &lambda;
        }

        // Reverse sweep, covariance path. With Σ' = A P Aᵀ + Σw and P written
        // in Joseph form around the optimal gain K, the K-sensitivity vanishes:
        //   ∂J/∂Σ_τ = Q + (I - KC)ᵀ M (I - KC),  ∂J/∂C_τ = -2 Kᵀ M P,
        // with M = Aᵀ Λ_{τ+1} A.
        if belief_terms {
            let eye = DMatrix::<f64>::identity(n, n);
            let mut adj = sys.q_t().clone();
            for tau in (0..h).rev() {
                let (c, k, posterior) = &tape[tau];
                let m = a.transpose() * &adj * a;
                let d_c = -2.0 * (k.transpose() * &m * posterior);
                for (kk, ck) in sys.cs()[1..].iter().enumerate() {
                    grad[(tau, kk)] += d_c.dot(ck);
                }
                let resid = &eye - k * c;
                adj = sys.q() + resid.transpose() * m * resid;
            }
        }
        Ok((total, grad))
    }
}

/// Row-major flattening of an `H × p` plan.
pub fn plan_to_flat(plan: &DMatrix<f64>) -> DVector<f64> {
    let (h, p) = plan.shape();
    DVector::from_iterator(h * p, (0..h).flat_map(|r| (0..p).map(move |c| plan[(r, c)])))
}

pub fn flat_to_plan(flat: &DVector<f64>, horizon: usize, inputs: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(horizon, inputs, flat.as_slice())
}
