//! Two-phase random media from level-cut Gaussian processes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fem::StructuredGrid;
use crate::rng::{self, tag};

/// Squared-exponential kernel `k(r) = exp(-r²/l²)` with unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub length_scale: f64,
}

impl GrfSpec {
    pub fn new(length_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0) || !length_scale.is_finite() {
            return Err(Error::invalid(format!(
                "length scale must be positive, got {length_scale}"
            )));
        }
        Ok(Self { length_scale })
    }

    pub fn kernel(&self, r2: f64) -> f64 {
        (-r2 / (self.length_scale * self.length_scale)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub lam_lo: f64,
    pub lam_hi: f64,
}

impl PhaseSpec {
    pub fn new(lam_lo: f64, lam_hi: f64) -> Result<Self> {
        let p = Self { lam_lo, lam_hi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lam_lo > 0.0) || !(self.lam_hi >= self.lam_lo) || !self.lam_hi.is_finite() {
            return Err(Error::invalid(format!(
                "phases need 0 < lam_lo <= lam_hi, got ({}, {})",
                self.lam_lo, self.lam_hi
            )));
        }
        Ok(())
    }

    pub fn contrast(&self) -> f64 {
        self.lam_hi / self.lam_lo
    }

    /// Threshold separating the phases when classifying pixel values.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lam_lo + self.lam_hi)
    }

    pub fn is_hi(&self, value: f64) -> bool {
        value > self.midpoint()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrostructureSample {
    pub lam_f: Vec<f64>,
    pub f_cut: f64,
    pub volume_fraction_hi: f64,
}

/// Draws zero-mean unit-variance Gaussian field values at a fixed point set.
pub trait GaussianFieldSampler: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn n_points(&self) -> usize;
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

pub const SAMPLER_NAMES: &[&str] = &["cholesky", "dense-cholesky", "spectral"];

/// Builds a sampler for element centers of `grid` by name.
///
/// `"cholesky"` is exact and factorizes the separable kernel per axis;
/// `"dense-cholesky"` factorizes the full covariance (small grids only);
/// `"spectral"` uses `n_features` random Fourier features.
pub fn sampler_by_name(
    name: &str,
    grid: &StructuredGrid,
    spec: GrfSpec,
    n_features: usize,
    seed: u64,
) -> Result<Box<dyn GaussianFieldSampler>> {
    match name {
        "cholesky" => Ok(Box::new(KroneckerSampler::new(grid, spec)?)),
        "dense-cholesky" => {
            let pts: Vec<[f64; 2]> = (0..grid.n_elements())
                .map(|e| grid.element_center(e))
                .collect();
            Ok(Box::new(DenseCholeskySampler::new(&pts, spec)?))
        }
        "spectral" => {
            let pts: Vec<[f64; 2]> = (0..grid.n_elements())
                .map(|e| grid.element_center(e))
                .collect();
            let mut r = rng::stream(seed, &[tag::SPECTRAL]);
            Ok(Box::new(SpectralSampler::new(
                &pts,
                grid.dim(),
                spec,
                n_features,
                &mut r,
            )?))
        }
        other => Err(Error::config(format!(
            "unknown field sampler '{other}', expected one of {SAMPLER_NAMES:?}"
        ))),
    }
}

/// Lower Cholesky factor of `k + jitter I`, raising the jitter until it succeeds.
fn robust_cholesky(k: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    for jitter in [0.0, 1e-12, 1e-10, 1e-8, 1e-6] {
        let m = &k + DMatrix::identity(n, n) * jitter;
        if let Some(c) = nalgebra::Cholesky::new(m) {
            return Ok(c.unpack());
        }
    }
    Err(Error::Numerical(
        "covariance matrix is not positive definite even with jitter 1e-6".into(),
    ))
}

fn kernel_matrix(pts: &[[f64; 2]], spec: GrfSpec) -> DMatrix<f64> {
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| {
        let dx = pts[i][0] - pts[j][0];
        let dy = pts[i][1] - pts[j][1];
        spec.kernel(dx * dx + dy * dy)
    })
}

fn normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

fn standard_normals(rng: &mut dyn RngCore, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| normal(rng)))
}

/// Exact sampler from the full covariance matrix.
#[derive(Debug, Clone)]
pub struct DenseCholeskySampler {
    factor: DMatrix<f64>,
}

impl DenseCholeskySampler {
    pub fn new(points: &[[f64; 2]], spec: GrfSpec) -> Result<Self> {
        Ok(Self {
            factor: robust_cholesky(kernel_matrix(points, spec))?,
        })
    }
}

impl GaussianFieldSampler for DenseCholeskySampler {
    fn name(&self) -> &'static str {
        "dense-cholesky"
    }

    fn n_points(&self) -> usize {
        self.factor.nrows()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z = standard_normals(rng, self.factor.nrows());
        (&self.factor * z).data.into()
    }
}

/// Exact sampler on a tensor grid of element centers.
///
/// The squared-exponential kernel factorizes over axes, so the covariance is
/// `K_y ⊗ K_x` and a field is `L_y Z L_xᵀ` with per-axis Cholesky factors.
#[derive(Debug, Clone)]
pub struct KroneckerSampler {
    lx: DMatrix<f64>,
    ly: Option<DMatrix<f64>>,
}

impl KroneckerSampler {
    pub fn new(grid: &StructuredGrid, spec: GrfSpec) -> Result<Self> {
        let axis = |n: usize| -> Vec<[f64; 2]> {
            (0..n).map(|i| [(i as f64 + 0.5) / n as f64, 0.0]).collect()
        };
        let lx = robust_cholesky(kernel_matrix(&axis(grid.nx()), spec))?;
        let ly = if grid.dim() == 2 {
            Some(robust_cholesky(kernel_matrix(&axis(grid.ny()), spec))?)
        } else {
            None
        };
        Ok(Self { lx, ly })
    }
}

impl GaussianFieldSampler for KroneckerSampler {
    fn name(&self) -> &'static str {
        "cholesky"
    }

    fn n_points(&self) -> usize {
        self.lx.nrows() * self.ly.as_ref().map_or(1, |l| l.nrows())
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let nx = self.lx.nrows();
        match &self.ly {
            None => (&self.lx * standard_normals(rng, nx)).data.into(),
            Some(ly) => {
                let ny = ly.nrows();
                let z = DMatrix::from_fn(ny, nx, |_, _| normal(rng));
                let f = ly * z * self.lx.transpose();
                // row-major over (iy, ix) matches element numbering
                let mut out = Vec::with_capacity(nx * ny);
                for iy in 0..ny {
                    for ix in 0..nx {
                        out.push(f[(iy, ix)]);
                    }
                }
                out
            }
        }
    }
}

/// Random Fourier feature approximation `f(x) = √(2/M) Σ γ_m cos(w_mᵀx + b_m)`.
///
/// Frequencies are drawn once at construction (`w ~ N(0, 2/l² I)`); each
/// sample draws fresh amplitudes `γ_m`.
#[derive(Debug, Clone)]
pub struct SpectralSampler {
    basis: DMatrix<f64>,
}

impl SpectralSampler {
    pub fn new(
        points: &[[f64; 2]],
        dim: usize,
        spec: GrfSpec,
        n_features: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::invalid(
                "spectral sampler needs at least one feature",
            ));
        }
        let sd = 2f64.sqrt() / spec.length_scale;
        let scale = (2.0 / n_features as f64).sqrt();
        let mut basis = DMatrix::zeros(points.len(), n_features);
        for m in 0..n_features {
            let wx = sd * normal(rng);
            let wy = if dim == 2 { sd * normal(rng) } else { 0.0 };
            let b = rng.random_range(0.0..2.0 * PI);
            for (i, p) in points.iter().enumerate() {
                basis[(i, m)] = scale * (wx * p[0] + wy * p[1] + b).cos();
            }
        }
        Ok(Self { basis })
    }
}

impl GaussianFieldSampler for SpectralSampler {
    fn name(&self) -> &'static str {
        "spectral"
    }

    fn n_points(&self) -> usize {
        self.basis.nrows()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let g = standard_normals(rng, self.basis.ncols());
        (&self.basis * g).data.into()
    }
}

/// `f_cut = Φ⁻¹(v)`: the expected low-phase fraction of the cut field is `v`.
pub fn cut_threshold_for_fraction(v: f64) -> f64 {
    if v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if v >= 1.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(v)
}

/// Expected low-phase volume fraction implied by a threshold, `Φ(f_cut)`.
pub fn expected_lo_fraction(f_cut: f64) -> f64 {
    Normal::standard().cdf(f_cut)
}

/// Threshold with `v ~ Uniform(0, 1)`.
pub fn sample_cut_threshold(rng: &mut dyn RngCore) -> f64 {
    let v: f64 = rng.random::<f64>();
    // random::<f64>() is in [0, 1); map 0 to the smallest positive value
    cut_threshold_for_fraction(v.max(f64::MIN_POSITIVE))
}

/// Element gets `lam_lo` where `f < f_cut`, `lam_hi` otherwise.
pub fn level_cut(f: &[f64], f_cut: f64, phases: PhaseSpec) -> MicrostructureSample {
    let lam_f: Vec<f64> = f
        .iter()
        .map(|&v| {
            if v < f_cut {
                phases.lam_lo
            } else {
                phases.lam_hi
            }
        })
        .collect();
    let n_hi = f.iter().filter(|&&v| !(v < f_cut)).count();
    MicrostructureSample {
        lam_f,
        f_cut,
        volume_fraction_hi: if f.is_empty() {
            0.0
        } else {
            n_hi as f64 / f.len() as f64
        },
    }
}

/// How the cut threshold is chosen per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutPolicy {
    /// `Φ⁻¹(v)`, `v ~ U(0,1)` per sample.
    Random,
    Fixed(f64),
}

/// Reproducible microstructure source: sample `i` depends only on `(seed, i)`.
#[derive(Debug)]
pub struct MicrostructureGenerator {
    pub sampler: Box<dyn GaussianFieldSampler>,
    pub phases: PhaseSpec,
    pub cut: CutPolicy,
    pub seed: u64,
}

impl MicrostructureGenerator {
    pub fn sample(&self, index: u64) -> MicrostructureSample {
        let mut r = rng::stream(self.seed, &[tag::MICROSTRUCTURE, index]);
        let f = self.sampler.sample(&mut r);
        let f_cut = match self.cut {
            CutPolicy::Random => {
                let mut rc = rng::stream(self.seed, &[tag::CUT_THRESHOLD, index]);
                sample_cut_threshold(&mut rc)
            }
            CutPolicy::Fixed(v) => v,
        };
        level_cut(&f, f_cut, self.phases)
    }
}
