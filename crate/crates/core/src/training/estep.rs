//! Stochastic variational E-step.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::mstep::SampleMoments;
use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::fem::FemProblem;
use crate::model::{
    pcf_log_density, sample_latent, standard_normal_vec, Surrogate, VariationalState,
};
use crate::rng::{self, tag};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One FOM observation prepared for training: its (standardized) design
/// matrix, fine solution and the coarse model under its boundary data.
#[derive(Clone)]
pub struct TrainingSample {
    /// Stable identifier; seeds every random stream of this sample.
    pub id: u64,
    pub phi: DMatrix<f64>,
    pub u_f: Vec<f64>,
    pub coarse: Arc<FemProblem>,
}

/// MC estimate of the per-sample ELBO and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SviEstimate {
    pub elbo: f64,
    pub grad_mu: Vec<f64>,
    pub grad_sigma: Vec<f64>,
    /// Draws skipped because the coarse solve failed.
    pub n_failed: usize,
}

/// `log p_c(z)` given the precomputed encoder mean.
fn encoder_term(model: &Surrogate, mz: &[f64], z: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let mut lp = 0.0;
    let s2 = &model.enc.sigma_c_sq;
    let mut g = grad;
    for k in 0..z.len() {
        let r = z[k] - mz[k];
        lp += -0.5 * (LN_2PI + s2[k].ln()) - 0.5 * r * r / s2[k];
        if let Some(g) = g.as_deref_mut() {
            g[k] = -r / s2[k];
        }
    }
    lp
}

/// `log p_cf(u_f | u_c(χ(z))) + log p_c(z)` and, when asked, its gradient in `z`.
fn joint_term(
    sample: &TrainingSample,
    model: &Surrogate,
    mz: &[f64],
    z: &[f64],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let lam = model.link.forward_vec(z);
    if lam.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Numerical(
            "link produced a non-positive or infinite conductivity".into(),
        ));
    }
    let (u, factor) = sample.coarse.solve_factored(&lam)?;
    let (lp_cf, dq_du) = pcf_log_density(&model.dec, &sample.u_f, u.u.as_slice())?;
    let mut g = vec![0.0; z.len()];
    let lp_c = encoder_term(model, mz, z, want_grad.then_some(&mut g[..]));
    if want_grad {
        let dq_dlam = sample
            .coarse
            .adjoint_with_factor(factor.as_ref(), &u, &dq_du)?;
        for k in 0..z.len() {
            g[k] += dq_dlam[k] * model.link.jacobian(z[k]);
        }
    }
    let v = lp_cf + lp_c;
    if !v.is_finite() {
        return Err(Error::Numerical(format!("log density is {v}")));
    }
    Ok((v, g))
}

/// Reparametrized estimate of `F_n = ⟨log p_cf⟩ + ⟨log p_c⟩ + H(q)` and
/// its gradient in `(μ, σ)` using the given standard-normal draws.
pub fn svi_objective_and_grad(
    vs: &VariationalState,
    sample: &TrainingSample,
    model: &Surrogate,
    eps: &[Vec<f64>],
) -> Result<SviEstimate> {
    let n = vs.dim();
    let mz = model.enc.mean_z(&sample.phi);
    let mut est = SviEstimate {
        elbo: 0.0,
        grad_mu: vec![0.0; n],
        grad_sigma: vec![0.0; n],
        n_failed: 0,
    };
    let mut ok = 0usize;
    let mut last_err = None;
    for e in eps {
        let z = sample_latent(vs, e);
        match joint_term(sample, model, &mz, &z, true) {
            Ok((v, g)) => {
                ok += 1;
                est.elbo += v;
                for k in 0..n {
                    est.grad_mu[k] += g[k];
                    est.grad_sigma[k] += g[k] * e[k];
                }
            }
            Err(err) => {
                est.n_failed += 1;
                last_err = Some(err);
            }
        }
    }
    if ok == 0 {
        return Err(last_err.unwrap_or_else(|| Error::invalid("no Monte Carlo draws requested")));
    }
    let w = 1.0 / ok as f64;
    est.elbo = est.elbo * w + vs.entropy();
    for k in 0..n {
        est.grad_mu[k] *= w;
        est.grad_sigma[k] = est.grad_sigma[k] * w + 1.0 / vs.sigma[k];
    }
    Ok(est)
}

/// Per-draw values `log p_cf + log p_c + H(q)` without gradients.
pub fn elbo_draws(
    vs: &VariationalState,
    sample: &TrainingSample,
    model: &Surrogate,
    eps: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let mz = model.enc.mean_z(&sample.phi);
    let h = vs.entropy();
    eps.iter()
        .map(|e| joint_term(sample, model, &mz, &sample_latent(vs, e), false).map(|(v, _)| v + h))
        .collect()
}

/// Fixed standard-normal draws of sample `id` for the ELBO trace; the same
/// at every epoch so successive estimates share random numbers.
pub fn elbo_eps(seed: u64, id: u64, n_draws: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n_draws)
        .map(|j| standard_normal_vec(&mut rng::stream(seed, &[tag::ELBO, id, j as u64]), dim))
        .collect()
}

/// `n_svi_steps` ADAM ascent steps on one sample's ELBO. Returns the number
/// of failed coarse solves.
pub fn advance_state(
    vs: &mut VariationalState,
    sample: &TrainingSample,
    model: &Surrogate,
    cfg: &TrainingConfig,
    seed: u64,
    epoch: u64,
) -> Result<usize> {
    let n = vs.dim();
    let mut rng = rng::stream(seed, &[tag::SVI, sample.id, epoch]);
    let mut failed = 0;
    let mut params = vec![0.0; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    for _ in 0..cfg.n_svi_steps {
        let eps: Vec<Vec<f64>> = (0..cfg.n_mc_elbo)
            .map(|_| standard_normal_vec(&mut rng, n))
            .collect();
        let est = match svi_objective_and_grad(vs, sample, model, &eps) {
            Ok(est) => est,
            Err(e) if e.is_numerical() => {
                log::warn!("sample {}: skipped SVI step ({e})", sample.id);
                failed += eps.len();
                continue;
            }
            Err(e) => return Err(e),
        };
        failed += est.n_failed;
        // ascend in (μ, log σ); μ moves in units of the current σ so the
        // step size follows the width of the posterior
        params[..n].copy_from_slice(&vs.mu);
        for k in 0..n {
            params[n + k] = vs.sigma[k].ln();
            grad[k] = est.grad_mu[k];
            grad[n + k] = est.grad_sigma[k] * vs.sigma[k];
        }
        let sigma = vs.sigma.clone();
        let (lr_mu, lr_sigma) = (cfg.lr_mu, cfg.lr_sigma);
        vs.adam.ascend(
            &mut params,
            &grad,
            |i| if i < n { lr_mu * sigma[i] } else { lr_sigma },
            &cfg.adam,
        );
        vs.mu.copy_from_slice(&params[..n]);
        for k in 0..n {
            vs.sigma[k] = params[n + k].exp().max(cfg.sigma_vi_floor);
        }
    }
    Ok(failed)
}

/// Moments of `q_n`: closed form in `z`, Monte Carlo in `u_c`.
pub fn estimate_moments(
    vs: &VariationalState,
    sample: &TrainingSample,
    model: &Surrogate,
    n_mc: usize,
    seed: u64,
    epoch: u64,
) -> Result<SampleMoments> {
    let n = vs.dim();
    let n_nodes = sample.coarse.grid().n_nodes();
    let mut rng = rng::stream(seed, &[tag::MOMENTS, sample.id, epoch]);
    let mut mean = vec![0.0; n_nodes];
    let mut outer = DMatrix::zeros(n_nodes, n_nodes);
    let mut ok = 0usize;
    let mut failed = 0usize;
    for _ in 0..n_mc {
        let eps = standard_normal_vec(&mut rng, n);
        let lam = model.link.forward_vec(&sample_latent(vs, &eps));
        match sample.coarse.solve(&lam) {
            Ok(sol) => {
                ok += 1;
                for i in 0..n_nodes {
                    mean[i] += sol.u[i];
                }
                outer.ger(1.0, &sol.u, &sol.u, 1.0);
            }
            Err(e) if e.is_numerical() => {
                log::warn!("sample {}: moment draw failed ({e})", sample.id);
                failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if ok == 0 {
        return Err(Error::Numerical(format!(
            "sample {}: every coarse solve of the moment estimate failed",
            sample.id
        )));
    }
    let w = 1.0 / ok as f64;
    mean.iter_mut().for_each(|v| *v *= w);
    outer *= w;
    Ok(SampleMoments {
        z_mean: vs.mu.clone(),
        z_sq: vs
            .mu
            .iter()
            .zip(&vs.sigma)
            .map(|(m, s)| m * m + s * s)
            .collect(),
        uc_mean: mean,
        uc_outer: outer,
        n_failed: failed,
    })
}

/// Advances every variational state and returns their moments, in sample
/// order. Each sample only touches its own random streams, so the result
/// does not depend on scheduling or on the order of `samples`.
pub fn run_e_step(
    samples: &[TrainingSample],
    states: &mut [VariationalState],
    model: &Surrogate,
    cfg: &TrainingConfig,
    seed: u64,
    epoch: u64,
) -> Result<Vec<SampleMoments>> {
    if samples.len() != states.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} variational states",
            samples.len(),
            states.len()
        )));
    }
    samples
        .par_iter()
        .zip(states.par_iter_mut())
        .map(|(s, vs)| {
            let failed = advance_state(vs, s, model, cfg, seed, epoch)?;
            let mut m = estimate_moments(vs, s, model, cfg.n_mc_moments, seed, epoch)?;
            m.n_failed += failed;
            Ok(m)
        })
        .collect()
}
