//! Input-dependent Kalman filter in one-step prediction form.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_shape, Result};
use crate::linalg;
use crate::system::SystemModel;

/// Predicted state mean and error covariance, `(x̂_{t|t-1}, Σ_{t|t-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Belief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_shape("belief covariance", (mean.len(), mean.len()), cov.shape())?;
        linalg::check_psd("belief covariance", &cov, 1e-9)?;
        Ok(Self { mean, cov })
    }

    /// The prior `(x̂0, Σ0)` of `sys`.
    pub fn prior(sys: &SystemModel) -> Self {
        Self {
            mean: sys.x0_mean().clone(),
            cov: sys.sigma0().clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One covariance step for a fixed observation matrix.
pub(crate) struct CovarianceStep {
    /// `L = -A Σ Cᵀ S⁻¹`.
    pub gain: DMatrix<f64>,
    /// `S⁻¹ C Σ`, the transpose of the filtered-form gain `Σ Cᵀ S⁻¹`.
    pub filter_gain_t: DMatrix<f64>,
    pub next_cov: DMatrix<f64>,
}

/// Shared by the filter and the planning surrogate so both produce
/// bit-identical covariances.
pub(crate) fn covariance_step(
    sys: &SystemModel,
    cov: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<CovarianceStep> {
    let a = sys.a();
    let c_cov = c * cov;
    let mut innovation = &c_cov * c.transpose() + sys.sigma_z();
    linalg::symmetrize(&mut innovation);
    let filter_gain_t = linalg::spd_solve("innovation covariance", &innovation, &c_cov)?;
    let gain = -(a * filter_gain_t.transpose());
    let mut next_cov = a * cov * a.transpose() + &gain * c_cov * a.transpose() + sys.sigma_w();
    linalg::symmetrize(&mut next_cov);
    Ok(CovarianceStep { gain, filter_gain_t, next_cov })
}

/// `L(u) = -A Σ C(u)ᵀ (C(u) Σ C(u)ᵀ + Σz)⁻¹`.
pub fn kalman_gain(sys: &SystemModel, cov: &DMatrix<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_shape("covariance", (sys.n(), sys.n()), cov.shape())?;
    let c = sys.observation_matrix(u)?;
    Ok(covariance_step(sys, cov, &c)?.gain)
}

/// Advances the belief after applying `u` and observing `y`.
pub fn kalman_update(
    sys: &SystemModel,
    belief: &Belief,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<Belief> {
    check_dim("belief mean", sys.n(), belief.mean.len())?;
    check_shape("belief covariance", (sys.n(), sys.n()), belief.cov.shape())?;
    check_dim("output", sys.m(), y.len())?;
    let c = sys.observation_matrix(u)?;
    let step = covariance_step(sys, &belief.cov, &c)?;
    let innovation = y - &c * &belief.mean;
    let mean = sys.a() * &belief.mean + sys.b() * u - step.gain * innovation;
    Ok(Belief { mean, cov: step.next_cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{make_double_integrator, DoubleIntegratorParams, SystemMatrices};

    fn scalar_sys(sigma_w: f64) -> SystemModel {
        let one = DMatrix::from_element(1, 1, 1.0);
        SystemModel::new(SystemMatrices {
            a: one.clone(),
            b: one.clone(),
            cs: vec![one.clone(), DMatrix::zeros(1, 1)],
            sigma_w: DMatrix::from_element(1, 1, sigma_w),
            sigma_z: one.clone(),
            q: one.clone(),
            q_t: one.clone(),
            r: one.clone(),
            x0_mean: DVector::zeros(1),
            sigma0: one,
        })
        .unwrap()
    }

    #[test]
    fn zero_covariance_zero_gain() {
        let sys = make_double_integrator(&DoubleIntegratorParams::default()).unwrap();
        let l = kalman_gain(&sys, &DMatrix::zeros(6, 6), &DVector::from_element(3, 0.7)).unwrap();
        assert_eq!(l.shape(), (6, 3));
        assert!(l.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_gain() {
        let sys = scalar_sys(0.1);
        let l = kalman_gain(&sys, &DMatrix::from_element(1, 1, 1.0), &DVector::zeros(1)).unwrap();
        assert!((l[(0, 0)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn uninformative_observation_zero_gain() {
        let params = DoubleIntegratorParams { c0: 0.0, ..Default::default() };
        let sys = make_double_integrator(&params).unwrap();
        let l = kalman_gain(&sys, &DMatrix::identity(6, 6), &DVector::zeros(3)).unwrap();
        assert!(l.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_update_matches_bayes() {
        let sys = scalar_sys(0.1);
        let b = Belief::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let next = kalman_update(&sys, &b, &DVector::zeros(1), &DVector::from_element(1, 1.0)).unwrap();
        assert!((next.mean[0] - 0.5).abs() < 1e-15);
        assert!((next.cov[(0, 0)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn no_information_update_is_open_loop() {
        let params = DoubleIntegratorParams { c0: 0.0, ..Default::default() };
        let sys = make_double_integrator(&params).unwrap();
        let b = Belief::new(DVector::from_element(6, 1.0), DMatrix::identity(6, 6)).unwrap();
        let u = DVector::zeros(3);
        let next = kalman_update(&sys, &b, &u, &DVector::from_element(3, 5.0)).unwrap();
        assert_eq!(next.mean, sys.a() * &b.mean + sys.b() * &u);
        let lyap = sys.a() * &b.cov * sys.a().transpose() + sys.sigma_w();
        assert!((next.cov - lyap).amax() < 1e-15);
    }

    #[test]
    fn belief_rejects_indefinite_covariance() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(Belief::new(DVector::zeros(2), cov).is_err());
    }
}
