//! Reference implementations written independently of the library code.
#![allow(dead_code)]

use belief_mpc::system::{make_random_system, RandomSystemParams};
use belief_mpc::SystemModel;
use nalgebra::{DMatrix, DVector};

pub fn random_system(seed: u64, n: usize, p: usize, m: usize) -> SystemModel {
    make_random_system(&RandomSystemParams { n, p, m, seed, ..RandomSystemParams::default() }).unwrap()
}

pub fn observation(sys: &SystemModel, u: &DVector<f64>) -> DMatrix<f64> {
    let mut c = sys.cs()[0].clone();
    for k in 0..sys.p() {
        c += &sys.cs()[k + 1] * u[k];
    }
    c
}

/// Textbook filter: Joseph-form measurement update followed by a time update.
/// Returns the one-step prediction `(x̂_{t+1|t}, Σ_{t+1|t})`.
pub fn textbook_kf_step(
    sys: &SystemModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let c = observation(sys, u);
    let n = sys.n();
    let s = &c * cov * c.transpose() + sys.sigma_z();
    let s_inv = s.try_inverse().expect("innovation covariance invertible");
    let k = cov * c.transpose() * s_inv;
    let filtered_mean = mean + &k * (y - &c * mean);
    let i_kc = DMatrix::identity(n, n) - &k * &c;
    let filtered_cov = &i_kc * cov * i_kc.transpose() + &k * sys.sigma_z() * k.transpose();
    let pred_mean = sys.a() * filtered_mean + sys.b() * u;
    let pred_cov = sys.a() * filtered_cov * sys.a().transpose() + sys.sigma_w();
    (pred_mean, pred_cov)
}

/// Stacked open-loop prediction `x = Φ x0 + Γ U` over `h` steps, with
/// `U = [u_0; …; u_{h-1}]` and `x = [x_1; …; x_h]`.
pub fn batch_prediction(sys: &SystemModel, h: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, p) = (sys.n(), sys.p());
    let mut phi = DMatrix::zeros(n * h, n);
    let mut gamma = DMatrix::zeros(n * h, p * h);
    let mut a_pow = DMatrix::identity(n, n);
    let mut powers = Vec::with_capacity(h);
    for i in 0..h {
        powers.push(a_pow.clone());
        a_pow = sys.a() * a_pow;
        phi.view_mut((n * i, 0), (n, n)).copy_from(&a_pow);
    }
    for i in 0..h {
        for j in 0..=i {
            let blk = &powers[i - j] * sys.b();
            gamma.view_mut((n * i, p * j), (n, p)).copy_from(&blk);
        }
    }
    (phi, gamma)
}

/// Hessian and linear term of the mean-only planning cost in stacked form:
/// `J(U) = Uᵀ H U + 2 gᵀ U + const`.
pub fn batch_lq(sys: &SystemModel, x0: &DVector<f64>, h: usize) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p) = (sys.n(), sys.p());
    let (phi, gamma) = batch_prediction(sys, h);
    let mut qbar = DMatrix::zeros(n * h, n * h);
    for i in 0..h {
        let q = if i + 1 == h { sys.q_t() } else { sys.q() };
        qbar.view_mut((n * i, n * i), (n, n)).copy_from(q);
    }
    let mut rbar = DMatrix::zeros(p * h, p * h);
    for i in 0..h {
        rbar.view_mut((p * i, p * i), (p, p)).copy_from(sys.r());
    }
    let hess = gamma.transpose() * &qbar * &gamma + rbar;
    let lin = gamma.transpose() * &qbar * &phi * x0;
    (hess, lin)
}

/// Spectral radius via Gelfand's formula, `lim ‖Aᵏ‖^{1/k}`, evaluated by
/// repeated squaring with log-scale renormalization.
pub fn gelfand_spectral_radius(a: &DMatrix<f64>) -> f64 {
    let mut m = a.clone();
    let mut log_scale = 0.0;
    let mut k = 1.0f64;
    for _ in 0..24 {
        m = &m * &m;
        log_scale *= 2.0;
        k *= 2.0;
        let s = m.norm();
        m /= s;
        log_scale += s.ln();
    }
    (log_scale / k).exp()
}

/// Unbiased sample covariance of column vectors.
pub fn sample_covariance(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let n = samples[0].len();
    let count = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(n), |acc, s| acc + s) / count;
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov / (count - 1.0)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
