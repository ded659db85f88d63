//! χ² tail probabilities and quantiles through the regularized incomplete
//! gamma function.

use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// `P[χ²_dof > x]`.
pub fn chi2_sf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0)
}

/// Threshold `τ` with `P[χ²_dof > τ] = pfa`.
pub fn chi2_threshold(dof: usize, pfa: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidParameter("χ² degrees of freedom must be positive".into()));
    }
    if !(pfa > 0.0 && pfa < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "false-alarm probability {pfa} must lie in (0, 1)"
        )));
    }
    // bracket, then bisect on the monotone survival function
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while chi2_sf(dof, hi) > pfa {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_sf(dof, mid) > pfa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
