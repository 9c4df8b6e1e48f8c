//! Closed-form parameter updates given E-step moments.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use super::gamma::GammaUpdate;
use crate::error::{Error, Result};
use crate::model::{CoefficientMode, EncoderParams};

/// Posterior moments of one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    /// `⟨z⟩`
    pub z_mean: Vec<f64>,
    /// `⟨z_k²⟩`
    pub z_sq: Vec<f64>,
    /// `⟨u_c⟩`
    pub uc_mean: Vec<f64>,
    /// `⟨u_c u_cᵀ⟩`
    pub uc_outer: DMatrix<f64>,
    /// Draws whose coarse solve failed and were left out.
    pub n_failed: usize,
}

/// Per-cell Gram matrices `G_k = Σ_n φ_nk φ_nkᵀ`, fixed for a dataset.
#[derive(Debug, Clone)]
pub struct DesignGram {
    pub per_cell: Vec<DMatrix<f64>>,
}

impl DesignGram {
    pub fn new(phis: &[DMatrix<f64>]) -> Self {
        let (n_cells, n_feat) = phis[0].shape();
        let mut per_cell = vec![DMatrix::zeros(n_feat, n_feat); n_cells];
        for phi in phis {
            for (k, g) in per_cell.iter_mut().enumerate() {
                let row = phi.row(k).transpose();
                g.ger(1.0, &row, &row, 1.0);
            }
        }
        Self { per_cell }
    }
}

/// `r_k = Σ_n φ_nk ⟨z_nk⟩`.
pub fn design_rhs(phis: &[DMatrix<f64>], moments: &[SampleMoments]) -> Vec<DVector<f64>> {
    let (n_cells, n_feat) = phis[0].shape();
    let mut r = vec![DVector::zeros(n_feat); n_cells];
    for (phi, m) in phis.iter().zip(moments) {
        for (k, rk) in r.iter_mut().enumerate() {
            rk.axpy(m.z_mean[k], &phi.row(k).transpose(), 1.0);
        }
    }
    r
}

/// Ridge system of one coefficient column restricted to the active features.
fn column_system(
    gram: &DesignGram,
    rhs: &[DVector<f64>],
    sigma_c_sq: &[f64],
    gamma: &[f64],
    active: &[usize],
    cells: &[usize],
) -> (DMatrix<f64>, DVector<f64>) {
    let na = active.len();
    let mut a = DMatrix::zeros(na, na);
    let mut b = DVector::zeros(na);
    for &k in cells {
        let w = 1.0 / sigma_c_sq[k];
        for (p, &i) in active.iter().enumerate() {
            b[p] += w * rhs[k][i];
            for (q, &j) in active.iter().enumerate() {
                a[(p, q)] += w * gram.per_cell[k][(i, j)];
            }
        }
    }
    for (p, &i) in active.iter().enumerate() {
        a[(p, p)] += 1.0 / gamma[i];
    }
    (a, b)
}

/// MAP coefficients and Laplace covariance for fixed `σ_c²` and `γ`.
///
/// Pruned features keep exactly zero coefficients.
pub fn solve_theta(
    enc: &EncoderParams,
    gram: &DesignGram,
    rhs: &[DVector<f64>],
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let active = enc.active_indices();
    if active.is_empty() {
        return Err(Error::AllPruned {
            gamma: enc.gamma.clone(),
        });
    }
    let n_cells = enc.n_cells();
    let col_cells: Vec<Vec<usize>> = match enc.mode {
        CoefficientMode::Shared => vec![(0..n_cells).collect()],
        CoefficientMode::PerCell => (0..n_cells).map(|k| vec![k]).collect(),
    };
    let mut theta = DMatrix::zeros(enc.n_features(), col_cells.len());
    let mut covs = Vec::with_capacity(col_cells.len());
    for (c, cells) in col_cells.iter().enumerate() {
        let (a, b) = column_system(gram, rhs, &enc.sigma_c_sq, &enc.gamma, &active, cells);
        let chol = nalgebra::Cholesky::new(a.clone()).ok_or_else(|| {
            let ev = a.symmetric_eigenvalues();
            Error::Singular(format!(
                "coefficient system is not positive definite (eigenvalues in [{:.3e}, {:.3e}])",
                ev.min(),
                ev.max()
            ))
        })?;
        let x = chol.solve(&b);
        for (p, &i) in active.iter().enumerate() {
            theta[(i, c)] = x[p];
        }
        covs.push(chol.inverse());
    }
    Ok((theta, covs))
}

/// `σ_c,k² = (1/N) Σ_n ⟨(z_nk - (Φ_n θ̃)_k)²⟩`, floored.
pub fn update_sigma_c(
    enc: &EncoderParams,
    phis: &[DMatrix<f64>],
    moments: &[SampleMoments],
    floor: f64,
) -> Vec<f64> {
    let n = phis.len() as f64;
    let mut s = vec![0.0; enc.n_cells()];
    for (phi, m) in phis.iter().zip(moments) {
        let mz = enc.mean_z(phi);
        for k in 0..s.len() {
            s[k] += m.z_sq[k] - 2.0 * mz[k] * m.z_mean[k] + mz[k] * mz[k];
        }
    }
    s.iter().map(|v| (v / n).max(floor)).collect()
}

/// `diag(W M Wᵀ)`.
fn diag_wmwt(w: &CsrMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    w.row_iter()
        .map(|row| {
            let (idx, val) = (row.col_indices(), row.values());
            let mut s = 0.0;
            for (a, va) in idx.iter().zip(val) {
                for (b, vb) in idx.iter().zip(val) {
                    s += va * vb * m[(*a, *b)];
                }
            }
            s
        })
        .collect()
}

fn apply_w(w: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    w.row_iter()
        .map(|row| {
            row.col_indices()
                .iter()
                .zip(row.values())
                .map(|(j, v)| v * x[*j])
                .sum()
        })
        .collect()
}

/// `b = (1/N) Σ_n (u_f - W⟨u_c⟩)`.
pub fn update_bias(w: &CsrMatrix<f64>, u_f: &[&[f64]], moments: &[SampleMoments]) -> Vec<f64> {
    let n = u_f.len() as f64;
    let mut b = vec![0.0; w.nrows()];
    for (uf, m) in u_f.iter().zip(moments) {
        let wu = apply_w(w, &m.uc_mean);
        for j in 0..b.len() {
            b[j] += (uf[j] - wu[j]) / n;
        }
    }
    b
}

/// `s_j = (1/N) Σ_n ⟨(u_f,j - (W u_c)_j - b_j)²⟩`, floored.
pub fn update_s(
    w: &CsrMatrix<f64>,
    b: &[f64],
    u_f: &[&[f64]],
    moments: &[SampleMoments],
    floor: f64,
) -> Vec<f64> {
    let n = u_f.len() as f64;
    let mut s = vec![0.0; w.nrows()];
    for (uf, m) in u_f.iter().zip(moments) {
        let wu = apply_w(w, &m.uc_mean);
        let wmw = diag_wmwt(w, &m.uc_outer);
        for j in 0..s.len() {
            let r = uf[j] - b[j];
            s[j] += r * r - 2.0 * r * wu[j] + wmw[j];
        }
    }
    s.iter().map(|v| (v / n).max(floor)).collect()
}

/// Outcome of the prior-variance loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerLoopReport {
    pub iterations: usize,
    pub converged: bool,
    pub newly_pruned: Vec<usize>,
}

/// Alternates the MAP coefficient solve and the `γ` update, pruning
/// features whose `γ_j` falls below `prune_rel · max γ`, or whose prior
/// variance is below `prune_rel` times the data's posterior variance for
/// that coefficient (`γ_j h_j < prune_rel`, `h_j = Σ_k G_k,jj / σ_k²`),
/// so that a lone irrelevant feature is pruned too.
///
/// Leaves `enc.theta`, `enc.theta_cov`, `enc.gamma` and `enc.active`
/// consistent with each other (covariance of the final active set).
#[allow(clippy::too_many_arguments)]
pub fn inner_gamma_loop(
    enc: &mut EncoderParams,
    gram: &DesignGram,
    rhs: &[DVector<f64>],
    rule: &dyn GammaUpdate,
    prune_rel: f64,
    tol: f64,
    max_iter: usize,
) -> Result<InnerLoopReport> {
    let mut newly_pruned = Vec::new();
    let mut converged = false;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let (theta, covs) = solve_theta(enc, gram, rhs)?;
        enc.theta = theta;
        enc.theta_cov = covs;
        let active = enc.active_indices();
        let mut new_gamma = enc.gamma.clone();
        for (p, &j) in active.iter().enumerate() {
            let t2: Vec<f64> = (0..enc.theta.ncols())
                .map(|c| enc.theta[(j, c)].powi(2))
                .collect();
            let sd: Vec<f64> = enc.theta_cov.iter().map(|s| s[(p, p)]).collect();
            new_gamma[j] = rule.update(&t2, &sd, enc.gamma[j]);
        }
        let change = active
            .iter()
            .map(|&j| ((new_gamma[j] - enc.gamma[j]) / enc.gamma[j]).abs())
            .fold(0.0, f64::max);
        enc.gamma = new_gamma;
        let gmax = active.iter().map(|&j| enc.gamma[j]).fold(0.0, f64::max);
        let ncols = enc.theta.ncols() as f64;
        let data_precision: Vec<f64> = (0..enc.n_features())
            .map(|j| {
                (0..enc.n_cells())
                    .map(|k| gram.per_cell[k][(j, j)] / enc.sigma_c_sq[k])
                    .sum::<f64>()
                    / ncols
            })
            .collect();
        let mut pruned_now = false;
        for &j in &active {
            let g = enc.gamma[j];
            if !(g >= prune_rel * gmax) || !(g * data_precision[j] >= prune_rel) {
                enc.active[j] = false;
                enc.gamma[j] = 0.0;
                for c in 0..enc.theta.ncols() {
                    enc.theta[(j, c)] = 0.0;
                }
                newly_pruned.push(j);
                pruned_now = true;
            }
        }
        if enc.active.iter().all(|a| !a) {
            return Err(Error::AllPruned {
                gamma: enc.gamma.clone(),
            });
        }
        if change < tol && !pruned_now {
            converged = true;
            break;
        }
    }
    // final solve so that θ̃ and Σ̃ match the last γ and active set
    let (theta, covs) = solve_theta(enc, gram, rhs)?;
    enc.theta = theta;
    enc.theta_cov = covs;
    Ok(InnerLoopReport {
        iterations: it,
        converged,
        newly_pruned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::gamma::{ExpectedSquare, MacKay};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn moments_from_z(z: &[f64]) -> SampleMoments {
        SampleMoments {
            z_mean: z.to_vec(),
            z_sq: z.iter().map(|v| v * v).collect(),
            uc_mean: vec![],
            uc_outer: DMatrix::zeros(0, 0),
            n_failed: 0,
        }
    }

    #[test]
    fn theta_reduces_to_mean_for_flat_prior() {
        let phis: Vec<DMatrix<f64>> = (0..4).map(|_| DMatrix::from_element(1, 1, 1.0)).collect();
        let ms: Vec<SampleMoments> = [1.0, 2.0, 4.0, 5.0]
            .iter()
            .map(|&z| moments_from_z(&[z]))
            .collect();
        let mut enc = EncoderParams::new(CoefficientMode::Shared, 1, 1);
        enc.gamma = vec![1e12];
        let (t, cov) = solve_theta(&enc, &DesignGram::new(&phis), &design_rhs(&phis, &ms)).unwrap();
        assert!((t[(0, 0)] - 3.0).abs() < 1e-10);
        // scalar Hessian: (N/σ² + 1/γ)⁻¹
        assert!((cov[0][(0, 0)] - 1.0 / (4.0 + 1e-12)).abs() < 1e-14);
        enc.gamma = vec![1e-14];
        let (t, _) = solve_theta(&enc, &DesignGram::new(&phis), &design_rhs(&phis, &ms)).unwrap();
        assert!(t[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn theta_matches_dense_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 6;
        let phis: Vec<DMatrix<f64>> = (0..n)
            .map(|_| DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let ms: Vec<SampleMoments> = (0..n)
            .map(|_| moments_from_z(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
            .collect();
        let mut enc = EncoderParams::new(CoefficientMode::Shared, 3, 2);
        enc.sigma_c_sq = vec![0.5, 2.0];
        enc.gamma = vec![0.7, 1.3, 0.2];
        let (t, _) = solve_theta(&enc, &DesignGram::new(&phis), &design_rhs(&phis, &ms)).unwrap();
        let mut a = DMatrix::from_diagonal(&DVector::from_iterator(
            3,
            enc.gamma.iter().map(|g| 1.0 / g),
        ));
        let mut b = DVector::zeros(3);
        let sinv = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        for (phi, m) in phis.iter().zip(&ms) {
            a += phi.transpose() * &sinv * phi;
            b += phi.transpose() * &sinv * DVector::from_vec(m.z_mean.clone());
        }
        let want = a.lu().solve(&b).unwrap();
        for j in 0..3 {
            assert!((t[(j, 0)] - want[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn sigma_and_s_direct_values() {
        let enc = EncoderParams::new(CoefficientMode::Shared, 1, 1);
        let phis = vec![DMatrix::from_element(1, 1, 1.0)];
        let mut m = moments_from_z(&[1.0]);
        m.z_sq = vec![2.0];
        assert_eq!(update_sigma_c(&enc, &phis, &[m.clone()], 1e-10), vec![2.0]);
        let mut exact = moments_from_z(&[0.0]);
        exact.z_sq = vec![0.0];
        assert_eq!(update_sigma_c(&enc, &phis, &[exact], 1e-10), vec![1e-10]);

        let mut coo = nalgebra_sparse::CooMatrix::new(1, 1);
        coo.push(0, 0, 1.0);
        let w = CsrMatrix::from(&coo);
        m.uc_mean = vec![1.0];
        m.uc_outer = DMatrix::from_element(1, 1, 2.0);
        let uf = [3.0];
        assert_eq!(update_s(&w, &[0.0], &[&uf], &[m.clone()], 1e-10), vec![5.0]);
        m.uc_mean = vec![3.0];
        m.uc_outer = DMatrix::from_element(1, 1, 9.0);
        assert_eq!(update_s(&w, &[0.0], &[&uf], &[m], 1e-10), vec![1e-10]);
    }

    /// Log evidence of `z = φ θ + noise(1)`, `θ ~ N(0, γ)`.
    fn scalar_evidence(phi: &[f64], z: &[f64], g: f64) -> f64 {
        let pp: f64 = phi.iter().map(|p| p * p).sum();
        let pz: f64 = phi.iter().zip(z).map(|(p, z)| p * z).sum();
        let zz: f64 = z.iter().map(|z| z * z).sum();
        -0.5 * (1.0 + g * pp).ln() - 0.5 * (zz - g * pz * pz / (1.0 + g * pp))
    }

    #[test]
    fn scalar_prior_variance_matches_evidence_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (slope, n) in [(0.4, 30), (0.1, 30), (0.0, 50), (0.0, 200), (0.05, 200)] {
            let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z: Vec<f64> = phi
                .iter()
                .map(|p| {
                    slope * p
                        + rand_distr::Distribution::<f64>::sample(
                            &rand_distr::StandardNormal,
                            &mut rng,
                        )
                })
                .collect();
            let (best, best_ev) = (0..=4000)
                .map(|i| 10f64.powf(-10.0 + i as f64 * 1e-3 * 3.0))
                .chain([0.0])
                .map(|g| (g, scalar_evidence(&phi, &z, g)))
                .fold(
                    (0.0, f64::NEG_INFINITY),
                    |a, b| if b.1 > a.1 { b } else { a },
                );
            let phis: Vec<DMatrix<f64>> = phi
                .iter()
                .map(|&p| DMatrix::from_element(1, 1, p))
                .collect();
            let ms: Vec<SampleMoments> = z.iter().map(|&v| moments_from_z(&[v])).collect();
            let mut enc = EncoderParams::new(CoefficientMode::Shared, 1, 1);
            let r = inner_gamma_loop(
                &mut enc,
                &DesignGram::new(&phis),
                &design_rhs(&phis, &ms),
                &MacKay,
                1e-8,
                1e-10,
                100_000,
            );
            // the optimum is at the boundary exactly when the grid says so
            let at_zero = best < 1e-6 || scalar_evidence(&phi, &z, 0.0) >= best_ev - 1e-12;
            match r {
                Err(Error::AllPruned { .. }) => {
                    assert!(at_zero, "pruned but grid optimum at {best}")
                }
                Ok(_) => {
                    assert!(!at_zero, "kept γ={} but grid optimum at 0", enc.gamma[0]);
                    assert!(
                        (enc.gamma[0] - best).abs() < 0.01 * best,
                        "{} vs {best}",
                        enc.gamma[0]
                    );
                }
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn inner_loop_shrinks_noise_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200;
        let phis: Vec<DMatrix<f64>> = (0..n)
            .map(|_| DMatrix::from_fn(1, 10, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let ms: Vec<SampleMoments> = (0..n)
            .map(|_| {
                moments_from_z(&[rand_distr::Distribution::<f64>::sample(
                    &rand_distr::StandardNormal,
                    &mut rng,
                )])
            })
            .collect();
        for rule in [&MacKay as &dyn GammaUpdate, &ExpectedSquare] {
            let mut enc = EncoderParams::new(CoefficientMode::Shared, 10, 1);
            let gram = DesignGram::new(&phis);
            let rhs = design_rhs(&phis, &ms);
            let _ = inner_gamma_loop(&mut enc, &gram, &rhs, rule, 1e-8, 1e-8, 20_000);
            // survivors, if any, sit within the sampling noise of a zero coefficient
            let se = (3.0 / n as f64).sqrt();
            for j in 0..10 {
                assert!(
                    enc.theta[(j, 0)].abs() < 3.0 * se,
                    "{}: θ_{j} = {}",
                    rule.name(),
                    enc.theta[(j, 0)]
                );
            }
        }
        // the expected-square rule creeps towards zero like 1/t, MacKay's reaches the cut
        let mut enc = EncoderParams::new(CoefficientMode::Shared, 10, 1);
        let _ = inner_gamma_loop(
            &mut enc,
            &DesignGram::new(&phis),
            &design_rhs(&phis, &ms),
            &MacKay,
            1e-8,
            1e-8,
            20_000,
        );
        assert!(
            enc.active.iter().filter(|a| **a).count() <= 5,
            "{:?}",
            enc.gamma
        );
    }
}
