//! Change vector analysis and its spatially smoothed variant.

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::image::{ChangeEnergyMap, ChangeMask, Grid, ImageCube};

/// Condition number above which a covariance receives a ridge term.
pub const MAX_CONDITION: f64 = 1e12;
/// Ridge size relative to the mean eigenvalue `trace(Σ)/ℓ`.
pub const RIDGE_FRACTION: f64 = 1e-8;

/// Weighted mean and maximum-likelihood covariance of the pixel spectra.
/// `weights = None` means uniform weights.
pub(crate) fn mean_cov(y: &DMatrix<f64>, weights: Option<&[f64]>) -> (DVector<f64>, DMatrix<f64>) {
    let (bands, n) = y.shape();
    let total: f64 = weights.map_or(n as f64, |w| w.iter().sum());
    let mut mean = DVector::zeros(bands);
    for p in 0..n {
        let w = weights.map_or(1.0, |w| w[p]);
        mean.axpy(w, &y.column(p), 1.0);
    }
    mean /= total;
    let mut centered = y.clone();
    for (p, mut col) in centered.column_iter_mut().enumerate() {
        col -= &mean;
        if let Some(w) = weights {
            col *= w[p].sqrt();
        }
    }
    let cov = &centered * centered.transpose() / total;
    (mean, cov)
}

/// Same as [`mean_cov`] for the cross-covariance of two images.
pub(crate) fn cross_cov(
    y1: &DMatrix<f64>,
    m1: &DVector<f64>,
    y2: &DMatrix<f64>,
    m2: &DVector<f64>,
    weights: Option<&[f64]>,
) -> DMatrix<f64> {
    let n = y1.ncols();
    let total: f64 = weights.map_or(n as f64, |w| w.iter().sum());
    let mut c1 = y1.clone();
    let mut c2 = y2.clone();
    for p in 0..n {
        let w = weights.map_or(1.0, |w| w[p]);
        let mut a = c1.column_mut(p);
        a -= m1;
        a *= w;
        let mut b = c2.column_mut(p);
        b -= m2;
    }
    &c1 * c2.transpose() / total
}

/// Adds `RIDGE_FRACTION · trace/ℓ` to the diagonal when the condition number
/// exceeds [`MAX_CONDITION`]. Returns whether a ridge was added.
pub(crate) fn regularize(cov: &mut DMatrix<f64>, what: &str) -> bool {
    let bands = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min > 0.0 && max / min <= MAX_CONDITION {
        return false;
    }
    let trace = cov.trace();
    let ridge = if trace > 0.0 {
        RIDGE_FRACTION * trace / bands as f64
    } else {
        1.0
    };
    debug!("{what} covariance is ill-conditioned (eigenvalues in [{min:.3e}, {max:.3e}]), adding ridge {ridge:.3e}");
    for b in 0..bands {
        cov[(b, b)] += ridge;
    }
    true
}

fn check_pair(y1: &ImageCube, y2: &ImageCube) -> Result<()> {
    y1.ensure_same_shape(y2, "detector inputs")
}

/// `V(p) = ΔY(p)ᵀ (Σ₁ + Σ₂)⁻¹ ΔY(p)` with ML covariances over all pixels.
pub fn cva_energy(y1: &ImageCube, y2: &ImageCube) -> Result<ChangeEnergyMap> {
    check_pair(y1, y2)?;
    let (_, s1) = mean_cov(y1.data(), None);
    let (_, s2) = mean_cov(y2.data(), None);
    let mut sigma = s1 + s2;
    regularize(&mut sigma, "CVA");
    let chol = sigma
        .cholesky()
        .ok_or_else(|| Error::Numerical("CVA covariance is not positive definite".into()))?;
    let diff = y1.data() - y2.data();
    let whitened = chol
        .l()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let energy = whitened.column_iter().map(|c| c.norm_squared()).collect();
    ChangeEnergyMap::new(y1.grid(), energy, y1.bands())
}

/// Window mean of an energy map over an `window × window` neighborhood,
/// truncated at the borders (the divisor counts in-bounds pixels only).
pub fn scva_energy(v: &ChangeEnergyMap, window: usize) -> Result<ChangeEnergyMap> {
    if window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("window size {window} must be odd")));
    }
    if window == 1 {
        return Ok(v.clone());
    }
    let grid = v.grid();
    let half = window / 2;
    let rows = box_sums(v.as_slice(), grid, half, true);
    let sums = box_sums(&rows, grid, half, false);
    let energy = (0..grid.len())
        .map(|p| {
            let (i, j) = grid.coords(p);
            let count = span(i, half, grid.rows) * span(j, half, grid.cols);
            (sums[p] / count as f64).max(0.0)
        })
        .collect();
    ChangeEnergyMap::new(grid, energy, v.dof())
}

fn span(i: usize, half: usize, len: usize) -> usize {
    (i + half).min(len - 1) + 1 - i.saturating_sub(half)
}

/// One-dimensional truncated box sums along rows (`horizontal`) or columns.
fn box_sums(data: &[f64], grid: Grid, half: usize, horizontal: bool) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let (outer, inner) = if horizontal {
        (grid.rows, grid.cols)
    } else {
        (grid.cols, grid.rows)
    };
    let at = |o: usize, k: usize| if horizontal { grid.index(o, k) } else { grid.index(k, o) };
    let mut prefix = vec![0.0; inner + 1];
    for o in 0..outer {
        for k in 0..inner {
            prefix[k + 1] = prefix[k] + data[at(o, k)];
        }
        for k in 0..inner {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(inner - 1);
            out[at(o, k)] = prefix[hi + 1] - prefix[lo];
        }
    }
    out
}

/// `mask(p) = V(p) ≥ τ`.
pub fn threshold_map(v: &ChangeEnergyMap, tau: f64) -> ChangeMask {
    let data = v.as_slice().iter().map(|&e| e >= tau).collect();
    ChangeMask::from_vec(v.grid(), data).expect("energy map and mask share the grid")
}
