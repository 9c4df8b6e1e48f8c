//! Predictive moments and error measures.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FemProblem;
use crate::model::{PosteriorMode, Surrogate};
use crate::rng::{self, tag};

/// Monte Carlo estimate of the predictive mean and variance of `u_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mu_pred: Vec<f64>,
    pub sigma_pred_sq: Vec<f64>,
    pub n_mc: usize,
    /// Draws whose coarse solve failed and were left out.
    pub n_failed: usize,
}

/// `μ_pred = (1/M) Σ_m (W u_c^(m) + b)` and
/// `σ²_pred,i = (1/M) Σ_m [s_i + ((W u_c^(m) + b)_i - μ_pred,i)²]`.
///
/// Draw `m` of sample `sample_id` uses its own stream, so the result is
/// independent of thread count.
pub fn predict(
    model: &Surrogate,
    phi: &DMatrix<f64>,
    coarse: &FemProblem,
    n_mc: usize,
    mode: PosteriorMode,
    seed: u64,
    sample_id: u64,
) -> Result<PredictiveSummary> {
    if n_mc == 0 {
        return Err(Error::invalid(
            "prediction needs at least one Monte Carlo sample",
        ));
    }
    let sampler = match mode {
        PosteriorMode::Laplace => Some(model.enc.theta_sampler()?),
        PosteriorMode::Map => None,
    };
    let draws: Vec<Result<Vec<f64>>> = (0..n_mc)
        .into_par_iter()
        .map(|m| {
            let mut r = rng::stream(seed, &[tag::PREDICT, sample_id, m as u64]);
            let theta = match &sampler {
                Some(s) => s.draw(&model.enc, &mut r),
                None => model.enc.theta.clone(),
            };
            model.coarse_draw(phi, &theta, coarse, &mut r)
        })
        .collect();
    let mut ok = Vec::with_capacity(n_mc);
    let mut failed = 0;
    for d in draws {
        match d {
            Ok(v) => ok.push(v),
            Err(e) if e.is_numerical() => {
                log::warn!("sample {sample_id}: prediction draw failed ({e})");
                failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if ok.is_empty() {
        return Err(Error::Numerical(format!(
            "sample {sample_id}: every prediction draw failed"
        )));
    }
    let nf = model.dec.n_fine();
    let m = ok.len() as f64;
    let mut mu = vec![0.0; nf];
    for d in &ok {
        for i in 0..nf {
            mu[i] += d[i] / m;
        }
    }
    let mut var = model.dec.s.clone();
    for d in &ok {
        for i in 0..nf {
            var[i] += (d[i] - mu[i]).powi(2) / m;
        }
    }
    Ok(PredictiveSummary {
        mu_pred: mu,
        sigma_pred_sq: var,
        n_mc: ok.len(),
        n_failed: failed,
    })
}

fn check_lengths(n: usize, others: &[usize]) -> Result<()> {
    if others.iter().any(|&m| m != n) {
        return Err(Error::invalid(format!(
            "length mismatch: {n} vs {others:?}"
        )));
    }
    Ok(())
}

/// `(1/N') Σ_i (μ_i - u_i)² / var_i` over dofs with positive variance.
pub fn error_e(mu_pred: &[f64], u_true: &[f64], var_uf: &[f64]) -> Result<f64> {
    check_lengths(mu_pred.len(), &[u_true.len(), var_uf.len()])?;
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..mu_pred.len() {
        if var_uf[i] > 0.0 {
            s += (mu_pred[i] - u_true[i]).powi(2) / var_uf[i];
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("output variance is zero at every dof"));
    }
    Ok(s / n as f64)
}

/// `-(1/N') Σ_i log N(u_i | μ_i, σ_i²)` over the dofs selected by `mask`
/// (all dofs when `None`).
pub fn error_l(
    mu_pred: &[f64],
    sigma_pred_sq: &[f64],
    u_true: &[f64],
    mask: Option<&[bool]>,
) -> Result<f64> {
    check_lengths(mu_pred.len(), &[sigma_pred_sq.len(), u_true.len()])?;
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..mu_pred.len() {
        if mask.is_none_or(|m| m[i]) {
            let v = sigma_pred_sq[i];
            if !(v > 0.0) {
                return Err(Error::invalid(format!(
                    "predictive variance at dof {i} is {v}"
                )));
            }
            s += 0.5
                * ((2.0 * std::f64::consts::PI * v).ln() + (u_true[i] - mu_pred[i]).powi(2) / v);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no dofs selected"));
    }
    Ok(s / n as f64)
}

/// Unbiased per-dof sample variance.
pub fn per_dof_variance(fields: &[Vec<f64>]) -> Result<Vec<f64>> {
    if fields.len() < 2 {
        return Err(Error::invalid("variance needs at least two samples"));
    }
    let n = fields.len() as f64;
    let nd = fields[0].len();
    let mut mean = vec![0.0; nd];
    for f in fields {
        check_lengths(nd, &[f.len()])?;
        for i in 0..nd {
            mean[i] += f[i] / n;
        }
    }
    let mut var = vec![0.0; nd];
    for f in fields {
        for i in 0..nd {
            var[i] += (f[i] - mean[i]).powi(2) / (n - 1.0);
        }
    }
    Ok(var)
}

/// Per-dof mean and variance of the training outputs, the reference
/// predictor of the `L` measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBaseline {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DataBaseline {
    /// Variances are floored at `floor` so identical outputs stay scorable.
    pub fn fit(fields: &[Vec<f64>], floor: f64) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::invalid("baseline needs training outputs"));
        }
        let n = fields.len() as f64;
        let nd = fields[0].len();
        let mut mean = vec![0.0; nd];
        for f in fields {
            for i in 0..nd {
                mean[i] += f[i] / n;
            }
        }
        let var = if fields.len() > 1 {
            per_dof_variance(fields)?
        } else {
            vec![0.0; nd]
        };
        Ok(Self {
            mean,
            var: var.into_iter().map(|v| v.max(floor)).collect(),
        })
    }

    pub fn l_data(&self, u_true: &[f64], mask: Option<&[bool]>) -> Result<f64> {
        error_l(&self.mean, &self.var, u_true, mask)
    }
}

/// Averages of `e` and `L` over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_test: usize,
    pub e_mean: f64,
    pub e_se: f64,
    pub l_mean: f64,
    pub l_se: f64,
    pub l_data: f64,
    pub e: Vec<f64>,
    pub l: Vec<f64>,
    /// Number of samples behind `var(u_f)`.
    pub var_uf_samples: usize,
    pub n_mc: usize,
    pub mode: PosteriorMode,
    pub seed: u64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// One test case: design matrix, coarse model under its boundary data and
/// the true fine solution.
pub struct TestCase<'a> {
    pub id: u64,
    pub phi: DMatrix<f64>,
    pub coarse: &'a FemProblem,
    pub u_f: &'a [f64],
}

/// `e` and `L` over the test set. Dofs with zero output variance (pinned by
/// Dirichlet data) are left out of both measures.
pub fn evaluate(
    model: &Surrogate,
    cases: &[TestCase],
    var_uf: &[f64],
    var_uf_samples: usize,
    baseline: &DataBaseline,
    n_mc: usize,
    mode: PosteriorMode,
    seed: u64,
) -> Result<EvaluationReport> {
    if cases.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let mask: Vec<bool> = var_uf.iter().map(|v| *v > 0.0).collect();
    let per: Vec<(f64, f64, f64)> = cases
        .iter()
        .map(|c| {
            let p = predict(model, &c.phi, c.coarse, n_mc, mode, seed, c.id)?;
            Ok((
                error_e(&p.mu_pred, c.u_f, var_uf)?,
                error_l(&p.mu_pred, &p.sigma_pred_sq, c.u_f, Some(&mask))?,
                baseline.l_data(c.u_f, Some(&mask))?,
            ))
        })
        .collect::<Result<_>>()?;
    let e: Vec<f64> = per.iter().map(|p| p.0).collect();
    let l: Vec<f64> = per.iter().map(|p| p.1).collect();
    let ld: Vec<f64> = per.iter().map(|p| p.2).collect();
    let (e_mean, e_se) = mean_se(&e);
    let (l_mean, l_se) = mean_se(&l);
    Ok(EvaluationReport {
        n_test: cases.len(),
        e_mean,
        e_se,
        l_mean,
        l_se,
        l_data: mean_se(&ld).0,
        e,
        l,
        var_uf_samples,
        n_mc,
        mode,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e_values() {
        assert_eq!(error_e(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(error_e(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 4.0]).unwrap(), 1.0);
        // zero-variance dofs are skipped
        assert_eq!(error_e(&[1.0, 5.0], &[0.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(error_e(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn l_values() {
        let v = 1.0 / (2.0 * std::f64::consts::PI);
        assert!(error_l(&[3.0], &[v], &[3.0], None).unwrap().abs() < 1e-15);
        let x = error_l(&[0.0], &[1.0], &[1.0], None).unwrap();
        assert!((x - 1.418_938_533_204_672_7).abs() < 1e-12);
        assert!(error_l(&[0.0], &[0.0], &[1.0], None).is_err());
    }

    #[test]
    fn baseline_of_identical_outputs_uses_the_floor() {
        let b = DataBaseline::fit(&[vec![1.0, 2.0], vec![1.0, 2.0]], 1e-10).unwrap();
        assert_eq!(b.var, vec![1e-10, 1e-10]);
        assert!(b.l_data(&[1.0, 2.0], None).unwrap().is_finite());
        assert!(per_dof_variance(&[vec![1.0]]).is_err());
        assert_eq!(
            per_dof_variance(&[vec![1.0], vec![3.0]]).unwrap(),
            vec![2.0]
        );
    }
}
