use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::PhaseSpec;

/// Map from latent `z` to an admissible conductivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkFunction {
    Identity,
    /// `χ(z) = (hi - lo)/(1 + e^{-z}) + lo`
    Sigmoid {
        lo: f64,
        hi: f64,
    },
    Log,
}

impl LinkFunction {
    /// Sigmoid onto `[(1-eps) lam_lo, (1+eps) lam_hi]` so that pure-phase
    /// values map to finite `z`.
    pub fn sigmoid_with_margin(phases: PhaseSpec, eps: f64) -> Self {
        LinkFunction::Sigmoid {
            lo: (1.0 - eps) * phases.lam_lo,
            hi: (1.0 + eps) * phases.lam_hi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LinkFunction::Sigmoid { lo, hi } = *self {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!(
                    "sigmoid link needs lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, z: f64) -> f64 {
        match *self {
            LinkFunction::Identity => z,
            LinkFunction::Sigmoid { lo, hi } => {
                // stable for large |z|
                let s = if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                };
                lo + (hi - lo) * s
            }
            LinkFunction::Log => z.exp(),
        }
    }

    /// dχ/dz
    pub fn jacobian(&self, z: f64) -> f64 {
        match *self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Sigmoid { lo, hi } => {
                let s = 1.0 / (1.0 + (-z.abs()).exp());
                (hi - lo) * s * (1.0 - s)
            }
            LinkFunction::Log => z.exp(),
        }
    }

    pub fn inverse(&self, lam: f64) -> Result<f64> {
        match *self {
            LinkFunction::Identity => Ok(lam),
            LinkFunction::Sigmoid { lo, hi } => {
                if !(lam > lo && lam < hi) {
                    return Err(Error::invalid(format!(
                        "{lam} is outside the open sigmoid range ({lo}, {hi})"
                    )));
                }
                Ok(((lam - lo) / (hi - lam)).ln())
            }
            LinkFunction::Log => {
                if !(lam > 0.0) {
                    return Err(Error::invalid(format!(
                        "log link needs a positive value, got {lam}"
                    )));
                }
                Ok(lam.ln())
            }
        }
    }

    /// Inverse after clamping `lam` into the open range, for feature values
    /// that may touch or cross the range limits.
    pub fn inverse_clamped(&self, lam: f64) -> f64 {
        match *self {
            LinkFunction::Identity => lam,
            LinkFunction::Sigmoid { lo, hi } => {
                let d = 1e-9 * (hi - lo);
                self.inverse(lam.clamp(lo + d, hi - d)).unwrap_or(0.0)
            }
            LinkFunction::Log => lam.max(f64::MIN_POSITIVE).ln(),
        }
    }

    pub fn forward_vec(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.forward(v)).collect()
    }
}
