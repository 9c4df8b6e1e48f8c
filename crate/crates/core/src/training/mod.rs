//! Variational EM for the surrogate: SVI E-step, closed-form M-step and the
//! sparsity-prior inner loop with a Laplace posterior over `θ̃`.

pub mod estep;
pub mod gamma;
pub mod mstep;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CoefficientMode, DecoderParams, EncoderParams, LinkFunction, Surrogate, VariationalState,
};
use crate::optim::AdamConfig;

pub use estep::{run_e_step, svi_objective_and_grad, SviEstimate, TrainingSample};
pub use gamma::{gamma_update_by_name, GammaUpdate, GAMMA_UPDATE_NAMES};
pub use mstep::{inner_gamma_loop, DesignGram, InnerLoopReport, SampleMoments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// ADAM steps per sample and E-step.
    pub n_svi_steps: usize,
    /// Reparametrized draws per gradient.
    pub n_mc_elbo: usize,
    /// Draws for the `u_c` moments.
    pub n_mc_moments: usize,
    /// Fixed draws for the ELBO reported in the trace.
    pub n_mc_trace: usize,
    pub lr_mu: f64,
    pub lr_sigma: f64,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Relative L2 change of `(θ̃, σ_c², S)` below which training stops.
    pub convergence_tol: f64,
    /// Features with `γ_j < gamma_prune_threshold · max γ`, or whose prior
    /// variance times data precision falls below it, are pruned.
    pub gamma_prune_threshold: f64,
    pub gamma_update: String,
    pub inner_tol: f64,
    /// Iterations of the prior-variance loop after the last epoch.
    pub inner_max_iter: usize,
    pub coefficient_mode: CoefficientMode,
    /// Estimate the decoder offset `b` instead of fixing it at 0.
    pub free_bias: bool,
    pub sigma_vi_init: f64,
    pub sigma_vi_floor: f64,
    pub variance_floor: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n_svi_steps: 50,
            n_mc_elbo: 1,
            n_mc_moments: 10,
            n_mc_trace: 8,
            lr_mu: 0.05,
            lr_sigma: 0.01,
            adam: AdamConfig::default(),
            max_epochs: 200,
            convergence_tol: 1e-4,
            gamma_prune_threshold: 1e-8,
            gamma_update: "mackay".into(),
            inner_tol: 1e-6,
            inner_max_iter: 10_000,
            coefficient_mode: CoefficientMode::Shared,
            free_bias: false,
            sigma_vi_init: 0.5,
            sigma_vi_floor: 1e-6,
            variance_floor: 1e-10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_mc_elbo", self.n_mc_elbo),
            ("n_mc_moments", self.n_mc_moments),
            ("n_mc_trace", self.n_mc_trace),
            ("max_epochs", self.max_epochs),
            ("inner_max_iter", self.inner_max_iter),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("training.{name} must be at least 1")));
        }
        let positive = [
            ("lr_mu", self.lr_mu),
            ("lr_sigma", self.lr_sigma),
            ("convergence_tol", self.convergence_tol),
            ("gamma_prune_threshold", self.gamma_prune_threshold),
            ("inner_tol", self.inner_tol),
            ("sigma_vi_init", self.sigma_vi_init),
            ("sigma_vi_floor", self.sigma_vi_floor),
            ("variance_floor", self.variance_floor),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config(format!(
                "training.{name} must be positive, got {v}"
            )));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::config(
                "training.adam needs beta1, beta2 in [0, 1) and epsilon > 0",
            ));
        }
        gamma_update_by_name(&self.gamma_update)?;
        Ok(())
    }
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    /// Mean per-sample ELBO with fixed draws.
    pub elbo: f64,
    /// Standard error of `elbo` over the fixed draws.
    pub elbo_se: f64,
    pub theta_norm: f64,
    pub sigma_c_sq_mean: f64,
    pub s_mean: f64,
    pub n_active: usize,
    pub rel_change: f64,
    pub failed_draws: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: Surrogate,
    /// Variational states, ordered like `sample_ids`.
    pub states: Vec<VariationalState>,
    pub sample_ids: Vec<u64>,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
}

/// Starting point: `θ̃ = 0` except the constant feature at `χ⁻¹` of the
/// phase midpoint, `σ_c² = 1`, `γ = 1`, `b = 0` and `S` the per-dof
/// variance of the training outputs (1 when there is a single sample).
pub fn initial_model(
    samples: &[TrainingSample],
    constant_col: Option<usize>,
    constant_value: f64,
    link: LinkFunction,
    w: nalgebra_sparse::CsrMatrix<f64>,
    cfg: &TrainingConfig,
) -> Result<Surrogate> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("training set is empty"))?;
    let (n_cells, n_feat) = first.phi.shape();
    let mut enc = EncoderParams::new(cfg.coefficient_mode, n_feat, n_cells);
    if let Some(c) = constant_col {
        enc.theta.row_mut(c).fill(constant_value);
    }
    let mut dec = DecoderParams::new(w);
    let n = samples.len() as f64;
    if samples.len() > 1 {
        for j in 0..dec.n_fine() {
            let m = samples.iter().map(|s| s.u_f[j]).sum::<f64>() / n;
            let v = samples.iter().map(|s| (s.u_f[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
            dec.s[j] = v.max(cfg.variance_floor);
        }
    }
    Ok(Surrogate { enc, dec, link })
}

fn check_samples(samples: &[TrainingSample], model: &Surrogate) -> Result<()> {
    let (k, f) = (model.enc.n_cells(), model.enc.n_features());
    for s in samples {
        if s.phi.shape() != (k, f) {
            return Err(Error::invalid(format!(
                "sample {}: design matrix is {:?}, model expects ({k}, {f})",
                s.id,
                s.phi.shape()
            )));
        }
        if s.u_f.len() != model.dec.n_fine() || s.coarse.grid().n_nodes() != model.dec.n_coarse() {
            return Err(Error::invalid(format!(
                "sample {}: output or coarse grid does not match the decoder",
                s.id
            )));
        }
        if s.coarse.grid().n_elements() != k {
            return Err(Error::invalid(format!(
                "sample {}: coarse grid has {} elements, encoder has {k} cells",
                s.id,
                s.coarse.grid().n_elements()
            )));
        }
    }
    Ok(())
}

fn param_vector(model: &Surrogate) -> Vec<f64> {
    let mut v: Vec<f64> = model.enc.theta.iter().copied().collect();
    v.extend_from_slice(&model.enc.sigma_c_sq);
    v.extend_from_slice(&model.dec.s);
    v
}

fn rel_change(old: &[f64], new: &[f64]) -> f64 {
    let d: f64 = old
        .iter()
        .zip(new)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let n: f64 = old.iter().map(|a| a * a).sum::<f64>().sqrt();
    d / n.max(f64::MIN_POSITIVE)
}

/// Mean per-sample ELBO over fixed draws and its standard error.
pub fn elbo_estimate(
    samples: &[TrainingSample],
    states: &[VariationalState],
    model: &Surrogate,
    n_draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let per_sample: Vec<Vec<f64>> = samples
        .par_iter()
        .zip(states.par_iter())
        .map(|(s, vs)| {
            estep::elbo_draws(
                vs,
                s,
                model,
                &estep::elbo_eps(seed, s.id, n_draws, vs.dim()),
            )
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let totals: Vec<f64> = (0..n_draws)
        .map(|j| per_sample.iter().map(|v| v[j]).sum::<f64>() / n)
        .collect();
    let mean = totals.iter().sum::<f64>() / n_draws as f64;
    let se = if n_draws > 1 {
        let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n_draws - 1) as f64;
        (var / n_draws as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Closed-form updates of `σ_c²`, `b` and `S` given the moments (after `θ̃`).
pub fn m_step_variances(
    model: &mut Surrogate,
    samples: &[TrainingSample],
    moments: &[SampleMoments],
    cfg: &TrainingConfig,
) {
    let phis: Vec<DMatrix<f64>> = samples.iter().map(|s| s.phi.clone()).collect();
    model.enc.sigma_c_sq = mstep::update_sigma_c(&model.enc, &phis, moments, cfg.variance_floor);
    let u_f: Vec<&[f64]> = samples.iter().map(|s| s.u_f.as_slice()).collect();
    if cfg.free_bias {
        model.dec.b = mstep::update_bias(&model.dec.w, &u_f, moments);
    }
    model.dec.s = mstep::update_s(
        &model.dec.w,
        &model.dec.b,
        &u_f,
        moments,
        cfg.variance_floor,
    );
}

/// Runs variational EM from `init`. Samples are processed in order of
/// their ids, so the result does not depend on the order they are given in.
/// `on_epoch` sees every trace record as soon as it is produced.
pub fn train(
    samples: &[TrainingSample],
    init: Surrogate,
    cfg: &TrainingConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&TraceRecord),
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut samples = samples.to_vec();
    samples.sort_by_key(|s| s.id);
    if samples.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::invalid("training sample ids must be unique"));
    }
    let mut model = init;
    check_samples(&samples, &model)?;
    model.link.validate()?;
    let rule = gamma_update_by_name(&cfg.gamma_update)?;

    let phis: Vec<DMatrix<f64>> = samples.iter().map(|s| s.phi.clone()).collect();
    let gram = DesignGram::new(&phis);
    let mut states: Vec<VariationalState> = samples
        .iter()
        .map(|s| VariationalState::new(model.enc.mean_z(&s.phi), cfg.sigma_vi_init))
        .collect();

    let start = Instant::now();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last_moments = None;
    for epoch in 0..cfg.max_epochs {
        let before = param_vector(&model);
        let moments = run_e_step(&samples, &mut states, &model, cfg, seed, epoch as u64)?;
        let failed = moments.iter().map(|m| m.n_failed).sum();
        let rhs = mstep::design_rhs(&phis, &moments);
        inner_gamma_loop(
            &mut model.enc,
            &gram,
            &rhs,
            rule.as_ref(),
            cfg.gamma_prune_threshold,
            cfg.inner_tol,
            1,
        )?;
        m_step_variances(&mut model, &samples, &moments, cfg);
        let change = rel_change(&before, &param_vector(&model));
        let (elbo, elbo_se) = elbo_estimate(&samples, &states, &model, cfg.n_mc_trace, seed)?;
        let rec = TraceRecord {
            epoch,
            elbo,
            elbo_se,
            theta_norm: model.enc.theta.norm(),
            sigma_c_sq_mean: mean(&model.enc.sigma_c_sq),
            s_mean: mean(&model.dec.s),
            n_active: model.enc.active.iter().filter(|a| **a).count(),
            rel_change: change,
            failed_draws: failed,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: elbo {elbo:.6e} ± {elbo_se:.1e}, {} active, change {change:.2e}",
            rec.n_active
        );
        on_epoch(&rec);
        trace.push(rec);
        last_moments = Some((moments, rhs));
        if change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    // converge the prior variances and the Laplace posterior on the final moments
    let (moments, rhs) = last_moments.expect("at least one epoch");
    let report = inner_gamma_loop(
        &mut model.enc,
        &gram,
        &rhs,
        rule.as_ref(),
        cfg.gamma_prune_threshold,
        cfg.inner_tol,
        cfg.inner_max_iter,
    )?;
    if !report.converged {
        log::warn!(
            "prior-variance loop stopped after {} iterations",
            report.iterations
        );
    }
    m_step_variances(&mut model, &samples, &moments, cfg);
    Ok(TrainingOutcome {
        model,
        states,
        sample_ids: samples.iter().map(|s| s.id).collect(),
        trace,
        converged,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// `Σ_n Φ_nᵀ Σ_c⁻¹ (⟨z_n⟩ - Φ_n θ̃) - θ̃ / γ` per coefficient column, over active features.
pub fn theta_gradient(
    enc: &EncoderParams,
    phis: &[DMatrix<f64>],
    moments: &[SampleMoments],
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(enc.n_features(), enc.theta.ncols());
    for (phi, m) in phis.iter().zip(moments) {
        let mz = enc.mean_z(phi);
        for k in 0..enc.n_cells() {
            let c = enc.column_of_cell(k);
            let r = (m.z_mean[k] - mz[k]) / enc.sigma_c_sq[k];
            for j in enc.active_indices() {
                g[(j, c)] += phi[(k, j)] * r;
            }
        }
    }
    for j in enc.active_indices() {
        for c in 0..g.ncols() {
            g[(j, c)] -= enc.theta[(j, c)] / enc.gamma[j];
        }
    }
    g
}

/// `∂Q/∂σ_c,k²` of the expected complete-data log likelihood.
pub fn sigma_c_gradient(
    enc: &EncoderParams,
    phis: &[DMatrix<f64>],
    moments: &[SampleMoments],
) -> DVector<f64> {
    let n = phis.len() as f64;
    let mut g = DVector::zeros(enc.n_cells());
    for (phi, m) in phis.iter().zip(moments) {
        let mz = enc.mean_z(phi);
        for k in 0..enc.n_cells() {
            let e2 = m.z_sq[k] - 2.0 * mz[k] * m.z_mean[k] + mz[k] * mz[k];
            g[k] += 0.5 * e2 / enc.sigma_c_sq[k].powi(2);
        }
    }
    for k in 0..enc.n_cells() {
        g[k] -= 0.5 * n / enc.sigma_c_sq[k];
    }
    g
}

/// `∂Q/∂s_j` and `∂Q/∂b_j` of the expected decoder log likelihood.
pub fn decoder_gradients(
    dec: &DecoderParams,
    samples: &[TrainingSample],
    moments: &[SampleMoments],
) -> (DVector<f64>, DVector<f64>) {
    let nf = dec.n_fine();
    let mut gs = DVector::zeros(nf);
    let mut gb = DVector::zeros(nf);
    for (s, m) in samples.iter().zip(moments) {
        let wu = dec.mean(&m.uc_mean);
        let w = &dec.w;
        for (j, row) in w.row_iter().enumerate() {
            let (idx, val) = (row.col_indices(), row.values());
            let mut wmw = 0.0;
            for (a, va) in idx.iter().zip(val) {
                for (b, vb) in idx.iter().zip(val) {
                    wmw += va * vb * m.uc_outer[(*a, *b)];
                }
            }
            // wu already includes b
            let wu_nb = wu[j] - dec.b[j];
            let r = s.u_f[j] - dec.b[j];
            let e2 = r * r - 2.0 * r * wu_nb + wmw;
            gs[j] += -0.5 / dec.s[j] + 0.5 * e2 / (dec.s[j] * dec.s[j]);
            gb[j] += (s.u_f[j] - wu[j]) / dec.s[j];
        }
    }
    (gs, gb)
}
