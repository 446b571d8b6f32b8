//! Linear dynamics with bilinear observations and the two benchmark systems.
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + w_t
//! y_t     = (C0 + Σ_k u_k C_k) x_t + z_t
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_shape, Error, Result};
use crate::linalg;
use crate::rng::{self, StreamTag};

/// Raw matrices of a system, before validation.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `[C0, C1, …, Cp]`.
    pub cs: Vec<DMatrix<f64>>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_z: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_t: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0_mean: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

/// A validated system. Immutable once built.
#[derive(Debug, Clone)]
pub struct SystemModel {
    m: SystemMatrices,
}

const PSD_TOL: f64 = 1e-9;

impl SystemModel {
    pub fn new(m: SystemMatrices) -> Result<Self> {
        let n = m.a.nrows();
        check_shape("A", (n, n), m.a.shape())?;
        check_dim("B rows", n, m.b.nrows())?;
        let p = m.b.ncols();
        check_dim("number of observation matrices", p + 1, m.cs.len())?;
        let rows = m.cs[0].nrows();
        for c in &m.cs {
            check_shape("C_k", (rows, n), c.shape())?;
        }
        check_shape("Σw", (n, n), m.sigma_w.shape())?;
        check_shape("Σz", (rows, rows), m.sigma_z.shape())?;
        check_shape("Q", (n, n), m.q.shape())?;
        check_shape("Q_T", (n, n), m.q_t.shape())?;
        check_shape("R", (p, p), m.r.shape())?;
        check_dim("x̂0", n, m.x0_mean.len())?;
        check_shape("Σ0", (n, n), m.sigma0.shape())?;

        linalg::check_psd("Σw", &m.sigma_w, PSD_TOL)?;
        linalg::check_psd("Q", &m.q, PSD_TOL)?;
        linalg::check_psd("Q_T", &m.q_t, PSD_TOL)?;
        linalg::check_psd("Σ0", &m.sigma0, PSD_TOL)?;
        linalg::check_pd("Σz", &m.sigma_z)?;
        linalg::check_pd("R", &m.r)?;
        Ok(Self { m })
    }

    pub fn matrices(&self) -> &SystemMatrices {
        &self.m
    }

    /// A copy of the matrices, for building modified variants.
    pub fn to_matrices(&self) -> SystemMatrices {
        self.m.clone()
    }

    pub fn n(&self) -> usize {
        self.m.a.nrows()
    }
    pub fn p(&self) -> usize {
        self.m.b.ncols()
    }
    pub fn m(&self) -> usize {
        self.m.cs[0].nrows()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.m.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.m.b
    }
    pub fn cs(&self) -> &[DMatrix<f64>] {
        &self.m.cs
    }
    pub fn sigma_w(&self) -> &DMatrix<f64> {
        &self.m.sigma_w
    }
    pub fn sigma_z(&self) -> &DMatrix<f64> {
        &self.m.sigma_z
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.m.q
    }
    pub fn q_t(&self) -> &DMatrix<f64> {
        &self.m.q_t
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.m.r
    }
    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.m.x0_mean
    }
    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.m.sigma0
    }

    /// `C(u) = C0 + Σ_k u_k C_k`.
    pub fn observation_matrix(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("input", self.p(), u.len())?;
        Ok(self.observation_matrix_unchecked(u.as_slice()))
    }

    pub(crate) fn observation_matrix_unchecked(&self, u: &[f64]) -> DMatrix<f64> {
        let mut c = self.m.cs[0].clone();
        for (uk, ck) in u.iter().zip(&self.m.cs[1..]) {
            c.zip_apply(ck, |acc, v| *acc += uk * v);
        }
        c
    }

    /// True when `C1 = … = Cp = 0`, i.e. the observation does not depend on the input.
    pub fn has_input_independent_observation(&self) -> bool {
        self.m.cs[1..].iter().all(|c| c.iter().all(|v| *v == 0.0))
    }

    /// One step of the true system. `y` is generated from the pre-transition state.
    pub fn simulate_step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim("state", self.n(), x.len())?;
        check_dim("process noise", self.n(), w.len())?;
        check_dim("measurement noise", self.m(), z.len())?;
        let c = self.observation_matrix(u)?;
        let x_next = &self.m.a * x + &self.m.b * u + w;
        let y = c * x + z;
        Ok((x_next, y))
    }

    /// Draws the initial state and `steps` process/measurement noise vectors.
    pub fn sample_noise(&self, steps: usize, seed: u64) -> Result<NoiseRealization> {
        if steps == 0 {
            return Err(Error::InvalidParameter("noise length must be at least 1".into()));
        }
        let f0 = linalg::gaussian_factor("Σ0", &self.m.sigma0)?;
        let fw = linalg::gaussian_factor("Σw", &self.m.sigma_w)?;
        let fz = linalg::gaussian_factor("Σz", &self.m.sigma_z)?;

        let mut init_rng = rng::stream(seed, 0, StreamTag::InitState);
        let x0 = &self.m.x0_mean + &f0 * standard_normal_vector(&mut init_rng, self.n());

        let mut w_rng = rng::stream(seed, 0, StreamTag::Process);
        let ws = (0..steps)
            .map(|_| &fw * standard_normal_vector(&mut w_rng, self.n()))
            .collect();
        let mut z_rng = rng::stream(seed, 0, StreamTag::Measurement);
        let zs = (0..steps)
            .map(|_| &fz * standard_normal_vector(&mut z_rng, self.m()))
            .collect();
        Ok(NoiseRealization { x0, ws, zs })
    }
}

/// Sampled initial state plus per-step process and measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub x0: DVector<f64>,
    pub ws: Vec<DVector<f64>>,
    pub zs: Vec<DVector<f64>>,
}

impl NoiseRealization {
    pub fn len(&self) -> usize {
        self.ws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ws.is_empty()
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    // Row-major fill so the draw order matches the printed matrix layout.
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Returns `(target / ρ(A)) A`.
pub fn rescale_spectral_radius(a: &DMatrix<f64>, target: f64) -> Result<DMatrix<f64>> {
    if !(target > 0.0) {
        return Err(Error::InvalidParameter(format!("target spectral radius {target} must be positive")));
    }
    let rho = linalg::spectral_radius(a);
    if !(rho > f64::EPSILON * a.amax().max(1.0)) {
        return Err(Error::ZeroSpectralRadius);
    }
    Ok(a * (target / rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomSystemParams {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub rho: f64,
    pub c0: f64,
    pub r_scale: f64,
    pub sigma_w: f64,
    pub sigma_z: f64,
    pub seed: u64,
}

impl Default for RandomSystemParams {
    fn default() -> Self {
        Self {
            n: 6,
            p: 3,
            m: 3,
            rho: 0.95,
            c0: 0.01,
            r_scale: 1.0,
            sigma_w: 0.1,
            sigma_z: 0.1,
            seed: 0,
        }
    }
}

/// Random benchmark: `A_ij ~ N(0,1)` rescaled to the target spectral radius,
/// `B ~ N(0, 1/n)`, `C0 ~ N(0, c0²/m)`, `C_k ~ N(0, 1/m)`.
pub fn make_random_system(params: &RandomSystemParams) -> Result<SystemModel> {
    let RandomSystemParams { n, p, m, rho, c0, r_scale, sigma_w, sigma_z, seed } = *params;
    if !(rho > 0.0) || !(r_scale > 0.0) || sigma_w < 0.0 || !(sigma_z > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "random system needs rho > 0, r_scale > 0, sigma_w >= 0, sigma_z > 0 (got {params:?})"
        )));
    }
    let mut substream = 0u64;
    let a = loop {
        let mut rng = rng::stream(seed, substream, StreamTag::System);
        let raw = gaussian_matrix(&mut rng, n, n, 1.0);
        match rescale_spectral_radius(&raw, rho) {
            Ok(a) => break a,
            Err(Error::ZeroSpectralRadius) => substream += 1,
            Err(e) => return Err(e),
        }
    };
    // B and C are drawn from a stream independent of A's resampling.
    let mut rng = rng::stream(seed, u64::MAX, StreamTag::System);
    let b = gaussian_matrix(&mut rng, n, p, (1.0 / n as f64).sqrt());
    let mut cs = Vec::with_capacity(p + 1);
    cs.push(gaussian_matrix(&mut rng, m, n, c0.abs() / (m as f64).sqrt()));
    for _ in 0..p {
        cs.push(gaussian_matrix(&mut rng, m, n, (1.0 / m as f64).sqrt()));
    }
    SystemModel::new(SystemMatrices {
        a,
        b,
        cs,
        sigma_w: DMatrix::identity(n, n) * sigma_w.powi(2),
        sigma_z: DMatrix::identity(m, m) * sigma_z.powi(2),
        q: DMatrix::identity(n, n),
        q_t: DMatrix::identity(n, n),
        r: DMatrix::identity(p, p) * r_scale,
        x0_mean: DVector::zeros(n),
        sigma0: DMatrix::identity(n, n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleIntegratorParams {
    pub rho: f64,
    pub c0: f64,
    pub c1: f64,
    pub h: f64,
    pub r_scale: f64,
    pub sigma_w: f64,
    pub sigma_z: f64,
}

impl Default for DoubleIntegratorParams {
    fn default() -> Self {
        Self {
            rho: 0.95,
            c0: 0.01,
            c1: 3.0,
            h: 0.3,
            r_scale: 1.0,
            sigma_w: 0.1,
            sigma_z: 1.0,
        }
    }
}

/// Three decoupled `[[ρ, h], [0, ρ]]` blocks, each actuated on its velocity
/// and observed on its position.
pub fn make_double_integrator(params: &DoubleIntegratorParams) -> Result<SystemModel> {
    let DoubleIntegratorParams { rho, c0, c1, h, r_scale, sigma_w, sigma_z } = *params;
    if !(r_scale > 0.0) || !(sigma_z > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "double integrator needs r_scale > 0 and sigma_z > 0 (got {params:?})"
        )));
    }
    const BLOCKS: usize = 3;
    let (n, p, m) = (2 * BLOCKS, BLOCKS, BLOCKS);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, p);
    let mut c0m = DMatrix::zeros(m, n);
    let mut cs = Vec::with_capacity(p + 1);
    for i in 0..BLOCKS {
        a[(2 * i, 2 * i)] = rho;
        a[(2 * i, 2 * i + 1)] = h;
        a[(2 * i + 1, 2 * i + 1)] = rho;
        b[(2 * i + 1, i)] = h;
        c0m[(i, 2 * i)] = c0;
    }
    cs.push(c0m);
    for k in 0..p {
        let mut ck = DMatrix::zeros(m, n);
        ck[(k, 2 * k)] = c1;
        cs.push(ck);
    }
    SystemModel::new(SystemMatrices {
        a,
        b,
        cs,
        sigma_w: DMatrix::identity(n, n) * sigma_w.powi(2),
        sigma_z: DMatrix::identity(m, m) * sigma_z.powi(2),
        q: DMatrix::identity(n, n),
        q_t: DMatrix::identity(n, n),
        r: DMatrix::identity(p, p) * r_scale,
        x0_mean: DVector::zeros(n),
        sigma0: DMatrix::identity(n, n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Random,
    DoubleIntegrator,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Random => "random",
            SystemKind::DoubleIntegrator => "double_integrator",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SystemKind::Random),
            "double_integrator" | "double-integrator" => Ok(SystemKind::DoubleIntegrator),
            other => Err(Error::Config(format!("unknown system '{other}'"))),
        }
    }
}

/// Key-value description of a benchmark system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub system: SystemKind,
    pub rho: f64,
    pub c0: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    pub r_scale: f64,
    pub sigma_w: f64,
    pub sigma_z: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_c1() -> f64 {
    3.0
}
fn default_h() -> f64 {
    0.3
}

impl SystemConfig {
    /// Baseline configuration for `kind`: ρ = 0.95, c0 = 0.01, R = I,
    /// σw = 0.1, σz = 0.1 (random) or 1.0 (double integrator).
    pub fn baseline(kind: SystemKind) -> Self {
        Self {
            system: kind,
            rho: 0.95,
            c0: 0.01,
            c1: 3.0,
            h: 0.3,
            r_scale: 1.0,
            sigma_w: 0.1,
            sigma_z: match kind {
                SystemKind::Random => 0.1,
                SystemKind::DoubleIntegrator => 1.0,
            },
            seed: 0,
        }
    }

    pub fn build(&self) -> Result<SystemModel> {
        match self.system {
            SystemKind::Random => make_random_system(&RandomSystemParams {
                n: 6,
                p: 3,
                m: 3,
                rho: self.rho,
                c0: self.c0,
                r_scale: self.r_scale,
                sigma_w: self.sigma_w,
                sigma_z: self.sigma_z,
                seed: self.seed,
            }),
            SystemKind::DoubleIntegrator => make_double_integrator(&DoubleIntegratorParams {
                rho: self.rho,
                c0: self.c0,
                c1: self.c1,
                h: self.h,
                r_scale: self.r_scale,
                sigma_w: self.sigma_w,
                sigma_z: self.sigma_z,
            }),
        }
    }
}
