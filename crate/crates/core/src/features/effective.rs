//! Means and effective-medium estimates.

use std::sync::Once;

use crate::error::{Error, Result};

/// `((1/M) Σ λ^q)^{1/q}`, geometric mean for `q = 0`.
pub fn generalized_mean(lam: &[f64], q: f64) -> f64 {
    let m = lam.len() as f64;
    if q == 0.0 {
        (lam.iter().map(|v| v.ln()).sum::<f64>() / m).exp()
    } else {
        (lam.iter().map(|v| v.powf(q)).sum::<f64>() / m).powf(1.0 / q)
    }
}

/// Self-consistent (Bruggeman) estimate for a two-phase medium.
pub fn sca(lam_lo: f64, lam_hi: f64, v_lo: f64) -> f64 {
    let v_hi = 1.0 - v_lo;
    let alpha = lam_lo * (2.0 * v_lo - 1.0) + lam_hi * (2.0 * v_hi - 1.0);
    0.5 * (alpha + (alpha * alpha + 4.0 * lam_hi * lam_lo).sqrt())
}

/// Cap factor for the Maxwell-Garnett pole: results are limited to `lam_mat * MG_CAP`.
pub const MG_CAP: f64 = 1e3;

static MG_POLE_WARNING: Once = Once::new();

/// `λ_mat / (1 - 2 v_inc)`, clamped to `λ_mat · MG_CAP` at and beyond the pole.
pub fn maxwell_garnett(lam_mat: f64, v_inc: f64) -> f64 {
    let cap = lam_mat * MG_CAP;
    let denom = 1.0 - 2.0 * v_inc;
    if denom <= lam_mat / cap {
        MG_POLE_WARNING.call_once(|| {
            log::warn!("Maxwell-Garnett estimate hit its pole at inclusion fraction >= 0.5; clamped to {MG_CAP} x matrix value");
        });
        return cap;
    }
    lam_mat / denom
}

pub const DEM_TOLERANCE: f64 = 1e-10;
const DEM_MAX_ITER: usize = 200;

/// Residual of the differential effective-medium equation at `phi`.
pub fn dem_residual(lam_mat: f64, lam_inc: f64, v_inc: f64, phi: f64) -> f64 {
    (lam_inc - phi) / (lam_inc - lam_mat) * (lam_mat / phi).sqrt() - (1.0 - v_inc)
}

/// Root of [`dem_residual`] between the two phase values, by bisection.
pub fn dem(lam_mat: f64, lam_inc: f64, v_inc: f64) -> Result<f64> {
    if lam_mat == lam_inc {
        return Err(Error::invalid("DEM needs distinct phase values"));
    }
    if v_inc <= 0.0 {
        return Ok(lam_mat);
    }
    if v_inc >= 1.0 {
        return Ok(lam_inc);
    }
    let (mut a, mut b) = (lam_mat, lam_inc);
    let mut ra = dem_residual(lam_mat, lam_inc, v_inc, a);
    let rb = dem_residual(lam_mat, lam_inc, v_inc, b);
    if ra * rb > 0.0 {
        return Err(Error::NoBracket { lo: a, hi: b });
    }
    for _ in 0..DEM_MAX_ITER {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= DEM_TOLERANCE {
            return Ok(m);
        }
        let rm = dem_residual(lam_mat, lam_inc, v_inc, m);
        if rm == 0.0 {
            return Ok(m);
        }
        if ra * rm < 0.0 {
            b = m;
        } else {
            a = m;
            ra = rm;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_values() {
        assert!((generalized_mean(&[3.0; 5], -0.5) - 3.0).abs() < 1e-14);
        assert!((generalized_mean(&[1.0, 10.0], -1.0) - 20.0 / 11.0).abs() < 1e-14);
        assert!((generalized_mean(&[1.0, 10.0], 0.0) - 10f64.sqrt()).abs() < 1e-14);
        assert!((generalized_mean(&[1.0, 10.0], 1.0) - 5.5).abs() < 1e-14);
    }

    #[test]
    fn sca_values() {
        assert!((sca(1.0, 10.0, 1.0) - 1.0).abs() < 1e-14);
        assert!((sca(1.0, 10.0, 0.0) - 10.0).abs() < 1e-14);
        assert!((sca(1.0, 10.0, 0.5) - 10f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn mg_values_and_pole() {
        assert_eq!(maxwell_garnett(3.0, 0.0), 3.0);
        assert!((maxwell_garnett(1.0, 0.25) - 2.0).abs() < 1e-14);
        assert_eq!(maxwell_garnett(1.0, 0.5), 1e3);
        assert_eq!(maxwell_garnett(1.0, 0.4999999), 1e3);
        assert_eq!(maxwell_garnett(2.0, 0.9), 2e3);
    }

    #[test]
    fn dem_limits() {
        assert_eq!(dem(1.0, 10.0, 0.0).unwrap(), 1.0);
        assert_eq!(dem(1.0, 10.0, 1.0).unwrap(), 10.0);
        assert!(dem(2.0, 2.0, 0.3).is_err());
    }

    #[test]
    fn dem_matches_residual_scan() {
        let root = dem(1.0, 10.0, 0.5).unwrap();
        // dense scan of the residual for its sign change
        let n = 1_000_000;
        let mut prev = (1.0, dem_residual(1.0, 10.0, 0.5, 1.0));
        let mut scan = f64::NAN;
        for i in 1..=n {
            let phi = 1.0 + 9.0 * i as f64 / n as f64;
            let r = dem_residual(1.0, 10.0, 0.5, phi);
            if prev.1 > 0.0 && r <= 0.0 {
                // linear interpolation inside the bracketing interval
                scan = prev.0 + (phi - prev.0) * prev.1 / (prev.1 - r);
                break;
            }
            prev = (phi, r);
        }
        assert!((root - scan).abs() < 1e-6, "{root} vs {scan}");
        assert!(root > 1.0 && root < 10.0);
        assert!(dem_residual(1.0, 10.0, 0.5, root).abs() < 1e-9);
        // inclusion of the low phase in a high matrix
        let r2 = dem(10.0, 1.0, 0.5).unwrap();
        assert!(r2 > 1.0 && r2 < 10.0);
    }
}
