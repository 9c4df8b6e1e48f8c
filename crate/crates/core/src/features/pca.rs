use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue below which a principal direction is treated as absent.
const DEGENERATE_RATIO: f64 = 1e-12;

/// Leading principal components of a set of flattened images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// One orthonormal loading per component, each of length `mean.len()`.
    pub loadings: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub n_fit_samples: usize,
}

impl PcaBasis {
    /// Fits up to `n_components` components; fewer are returned when the
    /// data covariance has lower numerical rank.
    pub fn fit(samples: &[Vec<f64>], n_components: usize) -> Result<Self> {
        let n = samples.len();
        if n < 2 || n < n_components {
            return Err(Error::invalid(format!(
                "PCA needs at least max(2, {n_components}) samples, got {n}"
            )));
        }
        let m = samples[0].len();
        if samples.iter().any(|s| s.len() != m) {
            return Err(Error::invalid("PCA samples differ in length"));
        }
        let mut mean = vec![0.0; m];
        for s in samples {
            for (a, b) in mean.iter_mut().zip(s) {
                *a += b;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let x = DMatrix::from_fn(n, m, |i, j| samples[i][j] - mean[j]);
        let denom = (n - 1) as f64;

        // eigen-decompose the smaller of the two Gram matrices
        let (values, vectors) = if m <= n {
            let c = x.transpose() * &x / denom;
            let e = c.symmetric_eigen();
            (e.eigenvalues, e.eigenvectors)
        } else {
            let g = &x * x.transpose() / denom;
            let e = g.symmetric_eigen();
            let v = x.transpose() * e.eigenvectors;
            (e.eigenvalues, v)
        };
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let top = values[order[0]].max(0.0);
        let mut loadings = Vec::new();
        let mut explained = Vec::new();
        for &i in order.iter().take(n_components) {
            let lv = values[i];
            if !(lv > DEGENERATE_RATIO * top) {
                break;
            }
            let mut v: DVector<f64> = vectors.column(i).into_owned();
            let norm = v.norm();
            if norm == 0.0 {
                break;
            }
            v /= norm;
            // sign convention: largest-magnitude entry positive
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v = -v;
            }
            loadings.push(v.data.into());
            explained.push(lv);
        }
        if loadings.len() < n_components {
            log::warn!(
                "PCA found only {} of {n_components} requested components",
                loadings.len()
            );
        }
        Ok(Self {
            mean,
            loadings,
            explained_variance: explained,
            n_fit_samples: n,
        })
    }

    pub fn n_components(&self) -> usize {
        self.loadings.len()
    }

    /// Projection of the centered input on component `c`; zero for a
    /// component the fit did not produce.
    pub fn project(&self, x: &[f64], c: usize) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::invalid(format!(
                "PCA input has {} entries, basis expects {}",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(match self.loadings.get(c) {
            Some(l) => l
                .iter()
                .zip(x.iter().zip(&self.mean))
                .map(|(w, (v, mu))| w * (v - mu))
                .sum(),
            None => 0.0,
        })
    }
}
