//! Prior-variance updates for the sparsity prior.

use crate::error::{Error, Result};

/// New `γ_j` from the Laplace posterior of the coefficients of feature `j`.
///
/// `theta_sq` and `cov_diag` hold `θ̃_jc²` and `Σ̃_c,jj` for every
/// coefficient column `c` sharing this `γ_j`.
pub trait GammaUpdate: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn update(&self, theta_sq: &[f64], cov_diag: &[f64], gamma: f64) -> f64;
}

pub const GAMMA_UPDATE_NAMES: &[&str] = &["mackay", "em"];

pub fn gamma_update_by_name(name: &str) -> Result<Box<dyn GammaUpdate>> {
    match name {
        "mackay" => Ok(Box::new(MacKay)),
        "em" => Ok(Box::new(ExpectedSquare)),
        other => Err(Error::config(format!(
            "unknown gamma update '{other}', expected one of {GAMMA_UPDATE_NAMES:?}"
        ))),
    }
}

/// `γ_j = ⟨θ̃_j²⟩ = θ̃_j² + Σ̃_jj`, averaged over shared columns.
#[derive(Debug, Clone, Copy)]
pub struct ExpectedSquare;

impl GammaUpdate for ExpectedSquare {
    fn name(&self) -> &'static str {
        "em"
    }

    fn update(&self, theta_sq: &[f64], cov_diag: &[f64], _gamma: f64) -> f64 {
        let n = theta_sq.len() as f64;
        theta_sq
            .iter()
            .zip(cov_diag)
            .map(|(t, s)| t + s)
            .sum::<f64>()
            / n
    }
}

/// Fixed point of the evidence: `γ_j = Σ θ̃_jc² / Σ (1 - Σ̃_c,jj / γ_j)`.
///
/// Same stationary points as [`ExpectedSquare`], but irrelevant features
/// shrink geometrically instead of like `1/t`.
#[derive(Debug, Clone, Copy)]
pub struct MacKay;

impl GammaUpdate for MacKay {
    fn name(&self) -> &'static str {
        "mackay"
    }

    fn update(&self, theta_sq: &[f64], cov_diag: &[f64], gamma: f64) -> f64 {
        let num: f64 = theta_sq.iter().sum();
        let well_determined: f64 = cov_diag.iter().map(|s| 1.0 - s / gamma).sum();
        if well_determined > 1e-12 * theta_sq.len() as f64 {
            num / well_determined
        } else {
            ExpectedSquare.update(theta_sq, cov_diag, gamma)
        }
    }
}
