//! The surrogate: encoder `p_c(z | λ_f)`, link `λ_c = χ(z)`, coarse solve
//! `u_c(λ_c)`, decoder `p_cf(u_f | u_c)`, and per-sample variational
//! distributions over `z`.

pub mod link;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FemProblem;
use crate::optim::AdamState;

pub use link::LinkFunction;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Whether the regression coefficients are shared by all macro-cells or
/// estimated per cell (with shared prior variances).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientMode {
    #[default]
    Shared,
    PerCell,
}

/// `θ_c = {θ̃, σ_c²}` with ARD variances `γ` and the Laplace covariance of `θ̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub mode: CoefficientMode,
    /// `n_features × 1` (shared) or `n_features × n_cells` (per cell).
    pub theta: DMatrix<f64>,
    pub sigma_c_sq: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `false` once a feature has been pruned.
    pub active: Vec<bool>,
    /// Laplace covariance per coefficient column, over the active features
    /// in index order.
    pub theta_cov: Vec<DMatrix<f64>>,
}

impl EncoderParams {
    pub fn new(mode: CoefficientMode, n_features: usize, n_cells: usize) -> Self {
        let cols = match mode {
            CoefficientMode::Shared => 1,
            CoefficientMode::PerCell => n_cells,
        };
        Self {
            mode,
            theta: DMatrix::zeros(n_features, cols),
            sigma_c_sq: vec![1.0; n_cells],
            gamma: vec![1.0; n_features],
            active: vec![true; n_features],
            theta_cov: vec![DMatrix::zeros(n_features, n_features); cols],
        }
    }

    pub fn n_features(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_cells(&self) -> usize {
        self.sigma_c_sq.len()
    }

    pub fn column_of_cell(&self, k: usize) -> usize {
        match self.mode {
            CoefficientMode::Shared => 0,
            CoefficientMode::PerCell => k,
        }
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&j| self.active[j]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.sigma_c_sq.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::invalid(format!(
                "encoder variance of cell {k} must be positive, got {}",
                self.sigma_c_sq[k]
            )));
        }
        if self.gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::invalid("prior variances must be non-negative"));
        }
        Ok(())
    }

    /// `(Φ θ)_k` for coefficients `theta` (pruned features contribute nothing).
    pub fn mean_z_with(&self, phi: &DMatrix<f64>, theta: &DMatrix<f64>) -> Vec<f64> {
        (0..phi.nrows())
            .map(|k| {
                let c = self.column_of_cell(k);
                (0..phi.ncols())
                    .filter(|&j| self.active[j])
                    .map(|j| phi[(k, j)] * theta[(j, c)])
                    .sum()
            })
            .collect()
    }

    pub fn mean_z(&self, phi: &DMatrix<f64>) -> Vec<f64> {
        self.mean_z_with(phi, &self.theta)
    }

    /// Sampler for `θ̃` under its Laplace posterior.
    pub fn theta_sampler(&self) -> Result<ThetaSampler> {
        let idx = self.active_indices();
        let mut factors = Vec::with_capacity(self.theta.ncols());
        for cov in &self.theta_cov {
            if cov.nrows() != idx.len() {
                return Err(Error::invalid(format!(
                    "Laplace covariance is {}x{}, expected {} active features",
                    cov.nrows(),
                    cov.ncols(),
                    idx.len()
                )));
            }
            factors.push(psd_factor(cov)?);
        }
        Ok(ThetaSampler { idx, factors })
    }
}

/// Lower factor `L` with `L Lᵀ = cov`; a small diagonal shift is added
/// when rounding leaves the matrix semidefinite.
fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scale = cov.diagonal().amax().max(f64::MIN_POSITIVE);
    if cov.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    for jitter in [0.0, 1e-14, 1e-12, 1e-10, 1e-8] {
        let m = cov + DMatrix::identity(n, n) * (jitter * scale);
        if let Some(c) = nalgebra::Cholesky::new(m) {
            return Ok(c.unpack());
        }
    }
    Err(Error::Numerical(
        "Laplace covariance is not positive semidefinite".into(),
    ))
}

#[derive(Debug, Clone)]
pub struct ThetaSampler {
    idx: Vec<usize>,
    factors: Vec<DMatrix<f64>>,
}

impl ThetaSampler {
    /// One draw `θ̃ = θ̃_MAP + L ε` per column; pruned rows stay exactly 0.
    pub fn draw(&self, enc: &EncoderParams, rng: &mut dyn RngCore) -> DMatrix<f64> {
        let mut theta = enc.theta.clone();
        for (c, l) in self.factors.iter().enumerate() {
            let n = self.idx.len();
            let eps = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut *rng)));
            let d = l * eps;
            for (a, &j) in self.idx.iter().enumerate() {
                theta[(j, c)] += d[a];
            }
        }
        theta
    }
}

/// `log p_c(z | Φ) = Σ_k log N(z_k | (Φθ̃)_k, σ_c,k²)` and its gradient in `z`.
pub fn pc_log_density(
    enc: &EncoderParams,
    phi: &DMatrix<f64>,
    z: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if z.len() != enc.n_cells() || phi.nrows() != enc.n_cells() {
        return Err(Error::invalid(format!(
            "latent has {} entries and Φ {} rows, encoder has {} cells",
            z.len(),
            phi.nrows(),
            enc.n_cells()
        )));
    }
    enc.validate()?;
    let m = enc.mean_z(phi);
    let mut lp = 0.0;
    let mut g = vec![0.0; z.len()];
    for k in 0..z.len() {
        let s2 = enc.sigma_c_sq[k];
        let r = z[k] - m[k];
        lp += -0.5 * (LN_2PI + s2.ln()) - 0.5 * r * r / s2;
        g[k] = -r / s2;
    }
    Ok((lp, g))
}

/// `θ_cf = {W, b, S}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub w: CsrMatrix<f64>,
    pub b: Vec<f64>,
    pub s: Vec<f64>,
}

impl DecoderParams {
    pub fn new(w: CsrMatrix<f64>) -> Self {
        let n = w.nrows();
        Self {
            w,
            b: vec![0.0; n],
            s: vec![1.0; n],
        }
    }

    pub fn n_fine(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_coarse(&self) -> usize {
        self.w.ncols()
    }

    /// `W u_c + b`.
    pub fn mean(&self, u_c: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (i, row) in self.w.row_iter().enumerate() {
            for (j, v) in row.col_indices().iter().zip(row.values()) {
                out[i] += v * u_c[*j];
            }
        }
        out
    }

    /// `Wᵀ r`.
    pub fn transpose_apply(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_coarse()];
        for (i, row) in self.w.row_iter().enumerate() {
            for (j, v) in row.col_indices().iter().zip(row.values()) {
                out[*j] += v * r[i];
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(j) = self.s.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::invalid(format!(
                "decoder variance {j} must be positive, got {}",
                self.s[j]
            )));
        }
        Ok(())
    }
}

/// `log N(u_f | W u_c + b, diag S)` and its gradient `Wᵀ S⁻¹ (u_f - W u_c - b)`.
pub fn pcf_log_density(dec: &DecoderParams, u_f: &[f64], u_c: &[f64]) -> Result<(f64, Vec<f64>)> {
    if u_f.len() != dec.n_fine() || u_c.len() != dec.n_coarse() {
        return Err(Error::invalid(format!(
            "decoder maps {} -> {} values, got u_c {} and u_f {}",
            dec.n_coarse(),
            dec.n_fine(),
            u_c.len(),
            u_f.len()
        )));
    }
    dec.validate()?;
    let mean = dec.mean(u_c);
    let mut lp = 0.0;
    let mut r = vec![0.0; u_f.len()];
    for j in 0..u_f.len() {
        let d = u_f[j] - mean[j];
        lp += -0.5 * (LN_2PI + dec.s[j].ln()) - 0.5 * d * d / dec.s[j];
        r[j] = d / dec.s[j];
    }
    Ok((lp, dec.transpose_apply(&r)))
}

/// Diagonal Gaussian `q(z) = N(μ, diag σ²)` of one training sample with
/// its optimizer state (parameters ordered `[μ; σ]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub adam: AdamState,
}

impl VariationalState {
    pub fn new(mu: Vec<f64>, sigma0: f64) -> Self {
        let n = mu.len();
        Self {
            mu,
            sigma: vec![sigma0; n],
            adam: AdamState::new(2 * n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `Σ_k log σ_k` plus the constant of the Gaussian entropy.
    pub fn entropy(&self) -> f64 {
        let n = self.dim() as f64;
        0.5 * n * (1.0 + LN_2PI) + self.sigma.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Reparametrized draw `z = μ + σ ⊙ ε`.
pub fn sample_latent(vs: &VariationalState, eps: &[f64]) -> Vec<f64> {
    vs.mu
        .iter()
        .zip(&vs.sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

pub fn standard_normal_vec(rng: &mut dyn RngCore, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// How `θ̃` is treated when sampling predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorMode {
    /// Draw `θ̃` from its Laplace posterior for every sample.
    #[default]
    Laplace,
    Map,
}

/// Encoder, decoder and link together.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub enc: EncoderParams,
    pub dec: DecoderParams,
    pub link: LinkFunction,
}

impl Surrogate {
    /// Decoder mean `W u_c + b` for one draw of `θ̃` (given) and `z ~ p_c`.
    pub fn coarse_draw(
        &self,
        phi: &DMatrix<f64>,
        theta: &DMatrix<f64>,
        coarse: &FemProblem,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let m = self.enc.mean_z_with(phi, theta);
        let eps = standard_normal_vec(rng, m.len());
        let lam: Vec<f64> = m
            .iter()
            .zip(&eps)
            .zip(&self.enc.sigma_c_sq)
            .map(|((mk, e), s2)| self.link.forward(mk + s2.sqrt() * e))
            .collect();
        let u_c = coarse.solve(&lam)?;
        Ok(self.dec.mean(u_c.u.as_slice()))
    }

    /// One draw from the predictive density `p(u_f | λ_f)`.
    pub fn sample_u_f(
        &self,
        phi: &DMatrix<f64>,
        coarse: &FemProblem,
        theta: Option<&ThetaSampler>,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let th = match theta {
            Some(s) => s.draw(&self.enc, rng),
            None => self.enc.theta.clone(),
        };
        let mean = self.coarse_draw(phi, &th, coarse, rng)?;
        let eps = standard_normal_vec(rng, mean.len());
        Ok(mean
            .iter()
            .zip(&eps)
            .zip(&self.dec.s)
            .map(|((m, e), s)| m + s.sqrt() * e)
            .collect())
    }
}

/// Gaussian log density of a scalar; used by the metrics.
pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean) * (x - mean) / var)
}
