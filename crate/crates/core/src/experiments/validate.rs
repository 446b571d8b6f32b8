//! Quick numerical self-checks on a configured system, used by the
//! `validate` subcommand.

use nalgebra::{DMatrix, DVector};

use crate::controllers::{riccati_backward, sep_action, sep_mpc_action};
use crate::error::Result;
use crate::estimation::{kalman_update, Belief};
use crate::linalg;
use crate::optimizer::random_init;
use crate::planning::{surrogate_step, PlanningProblem};
use crate::rng::{self, StreamTag};
use crate::system::{standard_normal_vector, SystemModel};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Central-difference gradient of the planning objective.
pub fn finite_difference_gradient(prob: &PlanningProblem<'_>, plan: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>> {
    let mut grad = DMatrix::zeros(plan.nrows(), plan.ncols());
    for i in 0..plan.nrows() {
        for j in 0..plan.ncols() {
            let mut plus = plan.clone();
            plus[(i, j)] += step;
            let mut minus = plan.clone();
            minus[(i, j)] -= step;
            grad[(i, j)] = (prob.objective(&plus)? - prob.objective(&minus)?) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// Gradient, Riccati, and filter consistency checks on `sys`.
pub fn run_checks(sys: &SystemModel, horizon: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = rng::stream(seed, 0, StreamTag::Auxiliary);

    let root = Belief::prior(sys);
    let prob = PlanningProblem::new(sys, root.clone(), horizon)?;
    let plan = random_init(horizon, sys.p(), &mut rng);
    let analytic = prob.gradient(&plan)?;
    let numeric = finite_difference_gradient(&prob, &plan, 1e-5)?;
    let worst = analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| {
            let diff = (a - n).abs();
            if diff <= 1e-7 { 0.0 } else { diff / a.abs().max(n.abs()) }
        })
        .fold(0.0, f64::max);
    out.push(check("gradient vs finite differences", worst <= 1e-4, format!("max relative error {worst:.2e}")));

    let total = 3 * horizon;
    let table = riccati_backward(sys, total)?;
    let x = standard_normal_vector(&mut rng, sys.n());
    let belief = Belief { mean: x.clone(), cov: root.cov.clone() };
    let mut exact = true;
    for t in 0..total {
        exact &= sep_mpc_action(sys, &belief, total - t)? == sep_action(&table, t, &x)?;
    }
    out.push(check("receding-horizon Riccati tail identity", exact, format!("{total} steps")));

    let min_eig = table
        .values
        .iter()
        .map(linalg::min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    out.push(check("Riccati cost-to-go PSD", min_eig >= -1e-9, format!("min eigenvalue {min_eig:.2e}")));

    let u = DVector::from_iterator(sys.p(), plan.row(0).iter().copied());
    let y = standard_normal_vector(&mut rng, sys.m());
    let filtered = kalman_update(sys, &root, &u, &y)?;
    let planned = surrogate_step(sys, &root, &u)?;
    out.push(check(
        "surrogate covariance equals filter covariance",
        filtered.cov == planned.cov,
        "bit-identical".into(),
    ));
    Ok(out)
}
