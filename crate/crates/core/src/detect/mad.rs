//! Canonical correlation analysis, multivariate alteration detection (MAD)
//! and its iteratively reweighted form (IR-MAD).

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use super::chi2::chi2_sf;
use super::cva::{cross_cov, mean_cov, regularize};
use crate::error::{Error, Result};
use crate::image::{ChangeEnergyMap, ImageCube};

/// Smallest MAD variate variance; keeps `2(1 − ρ)` usable when `ρ → 1`.
const MIN_MAD_VARIANCE: f64 = 1e-12;

/// Fitted canonical transforms.
///
/// Row `i` of `u` (resp. `v`) projects a centered spectrum of the first
/// (resp. second) image onto its `i`-th canonical variate. Variates have
/// unit (weighted) variance and `rho[i]` is the correlation of the `i`-th
/// pair, sorted in decreasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct MadModel {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub rho: Vec<f64>,
    pub mad_variances: Vec<f64>,
    pub mean1: DVector<f64>,
    pub mean2: DVector<f64>,
}

impl MadModel {
    pub fn bands(&self) -> usize {
        self.rho.len()
    }

    /// Canonical variates of both images, `(ℓ × η)` each.
    pub fn variates(&self, y1: &ImageCube, y2: &ImageCube) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut c1 = y1.data().clone();
        let mut c2 = y2.data().clone();
        for mut col in c1.column_iter_mut() {
            col -= &self.mean1;
        }
        for mut col in c2.column_iter_mut() {
            col -= &self.mean2;
        }
        (&self.u * c1, &self.v * c2)
    }
}

fn check_multiband(y1: &ImageCube, y2: &ImageCube) -> Result<()> {
    y1.ensure_same_shape(y2, "MAD inputs")?;
    if y1.bands() < 2 {
        return Err(Error::InvalidParameter(
            "MAD and IR-MAD require multi-band images (got a single band)".into(),
        ));
    }
    Ok(())
}

/// Weighted canonical correlation analysis of the two images.
pub fn fit_cca(y1: &ImageCube, y2: &ImageCube) -> Result<MadModel> {
    check_multiband(y1, y2)?;
    fit_weighted(y1, y2, None)
}

fn fit_weighted(y1: &ImageCube, y2: &ImageCube, weights: Option<&[f64]>) -> Result<MadModel> {
    let bands = y1.bands();
    let (m1, mut s11) = mean_cov(y1.data(), weights);
    let (m2, mut s22) = mean_cov(y2.data(), weights);
    let s12 = cross_cov(y1.data(), &m1, y2.data(), &m2, weights);
    regularize(&mut s11, "CCA first-image");
    regularize(&mut s22, "CCA second-image");
    let l1 = s11
        .cholesky()
        .ok_or_else(|| Error::Numerical("first-image covariance is not positive definite".into()))?
        .l();
    let l2 = s22
        .cholesky()
        .ok_or_else(|| Error::Numerical("second-image covariance is not positive definite".into()))?
        .l();
    let ident = DMatrix::identity(bands, bands);
    let l1_inv = l1
        .solve_lower_triangular(&ident)
        .ok_or_else(|| Error::Numerical("singular whitening factor".into()))?;
    let l2_inv = l2
        .solve_lower_triangular(&ident)
        .ok_or_else(|| Error::Numerical("singular whitening factor".into()))?;
    // coherence matrix between the whitened images
    let k = &l1_inv * s12 * l2_inv.transpose();
    let svd = k.svd(true, true);
    let (p, qt) = match (svd.u, svd.v_t) {
        (Some(p), Some(qt)) => (p, qt),
        _ => return Err(Error::Numerical("SVD of the coherence matrix failed".into())),
    };
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut u = DMatrix::zeros(bands, bands);
    let mut v = DMatrix::zeros(bands, bands);
    let mut rho = Vec::with_capacity(bands);
    for (row, &idx) in order.iter().enumerate() {
        let r = svd.singular_values[idx];
        if !r.is_finite() {
            return Err(Error::Numerical(format!("canonical correlation {r}")));
        }
        rho.push(r.clamp(-1.0, 1.0));
        u.row_mut(row)
            .copy_from(&(p.column(idx).transpose() * &l1_inv));
        v.row_mut(row).copy_from(&(qt.row(idx) * &l2_inv));
    }
    let mad_variances = rho
        .iter()
        .map(|r| (2.0 * (1.0 - r)).max(MIN_MAD_VARIANCE))
        .collect();
    Ok(MadModel {
        u,
        v,
        rho,
        mad_variances,
        mean1: m1,
        mean2: m2,
    })
}

/// `V(p) = Σᵢ (uᵢᵀy₁(p) − vᵢᵀy₂(p))² / σᵢ²` on centered spectra.
pub fn mad_energy(y1: &ImageCube, y2: &ImageCube, model: &MadModel) -> Result<ChangeEnergyMap> {
    y1.ensure_same_shape(y2, "MAD inputs")?;
    if y1.bands() != model.bands() {
        return Err(Error::Shape(format!(
            "MAD model fitted on {} bands, images have {}",
            model.bands(),
            y1.bands()
        )));
    }
    let (a, b) = model.variates(y1, y2);
    let diff = a - b;
    let energy = diff
        .column_iter()
        .map(|col| {
            col.iter()
                .zip(&model.mad_variances)
                .map(|(d, var)| d * d / var)
                .sum()
        })
        .collect();
    ChangeEnergyMap::new(y1.grid(), energy, y1.bands())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrMadConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IrMadConfig {
    fn default() -> Self {
        IrMadConfig {
            max_iter: 30,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IrMadResult {
    pub model: MadModel,
    pub energy: ChangeEnergyMap,
    /// No-change probability `P[χ²_ℓ > V(p)]` of every pixel under the
    /// final model.
    pub weights: Vec<f64>,
    /// Number of reweighted refits performed.
    pub iterations: usize,
}

/// Iteratively reweighted MAD: each refit weights pixels by their χ²
/// no-change probability under the previous model, until the canonical
/// correlations move by less than `tol` or `max_iter` refits are done.
pub fn irmad(y1: &ImageCube, y2: &ImageCube, cfg: &IrMadConfig) -> Result<IrMadResult> {
    check_multiband(y1, y2)?;
    let dof = y1.bands();
    let mut model = fit_weighted(y1, y2, None)?;
    let mut energy = mad_energy(y1, y2, &model)?;
    let shrink = survival_weight_shrinkage(dof);
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let weights: Vec<f64> = energy.as_slice().iter().map(|&e| chi2_sf(dof, e)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 1e-9 * weights.len() as f64) {
            warn!("IR-MAD weights collapsed at iteration {iterations}; keeping last model");
            break;
        }
        let next = match fit_weighted(y1, y2, Some(&weights)) {
            Ok(mut m) if m.rho.iter().all(|r| r.is_finite()) => {
                undo_weight_shrinkage(&mut m, shrink);
                m
            }
            Ok(_) | Err(_) => {
                warn!("IR-MAD diverged at iteration {iterations}; keeping last model");
                break;
            }
        };
        let next_energy = mad_energy(y1, y2, &next)?;
        let delta = model
            .rho
            .iter()
            .zip(&next.rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        model = next;
        energy = next_energy;
        iterations += 1;
        debug!("IR-MAD iteration {iterations}: max |Δρ| = {delta:.3e}");
        if delta < cfg.tol {
            break;
        }
    }
    let weights = energy.as_slice().iter().map(|&e| chi2_sf(dof, e)).collect();
    Ok(IrMadResult {
        model,
        energy,
        weights,
        iterations,
    })
}

/// Factor by which survival weighting shrinks the variance of no-change
/// MAD variates: `E[w(z) z] / (ℓ E[w(z)])` with `w` the χ²_ℓ survival
/// function and `z ~ χ²_ℓ`.
///
/// Using `z f_ℓ(z) = ℓ f_{ℓ+2}(z)` and `E[w(z)] = 1/2`, this is
/// `2 E[w(z')]` with `z' ~ χ²_{ℓ+2}`, integrated by Simpson's rule.
pub fn survival_weight_shrinkage(dof: usize) -> f64 {
    let k = (dof + 2) as f64;
    let ln_norm = (k / 2.0) * 2f64.ln() + statrs::function::gamma::ln_gamma(k / 2.0);
    let density = |z: f64| {
        if z <= 0.0 {
            0.0
        } else {
            ((k / 2.0 - 1.0) * z.ln() - z / 2.0 - ln_norm).exp()
        }
    };
    let upper = k + 40.0 * (2.0 * k).sqrt() + 40.0;
    let steps = 4000;
    let h = upper / steps as f64;
    let f = |z: f64| density(z) * chi2_sf(dof, z);
    let mut sum = f(0.0) + f(upper);
    for i in 1..steps {
        sum += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * sum * h / 3.0
}

/// A weighted fit sees no-change differences shrunk by `shrink` while the
/// sums are untouched; rescale the difference variances so that no-change
/// data stays a fixed point of the iteration.
fn undo_weight_shrinkage(model: &mut MadModel, shrink: f64) {
    for (rho, var) in model.rho.iter_mut().zip(model.mad_variances.iter_mut()) {
        let diff = (2.0 * (1.0 - *rho)).max(MIN_MAD_VARIANCE) / shrink;
        let sum = 2.0 * (1.0 + *rho);
        *rho = (sum - diff) / (sum + diff);
        *var = diff;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_cube(bands: usize, grid: Grid, rng: &mut ChaCha8Rng) -> ImageCube {
        ImageCube::from_fn(bands, grid, |_, _, _| StandardNormal.sample(rng)).unwrap()
    }

    #[test]
    fn identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = noise_cube(3, Grid::new(20, 20).unwrap(), &mut rng);
        let m = fit_cca(&y, &y).unwrap();
        for r in &m.rho {
            assert!((r - 1.0).abs() < 1e-10);
        }
        let e = mad_energy(&y, &y, &m).unwrap();
        assert!(e.as_slice().iter().all(|&v| v < 1e-12), "max {}", e.get(e.argmax()));
    }

    #[test]
    fn single_band_rejected() {
        let grid = Grid::new(4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = noise_cube(1, grid, &mut rng);
        assert!(matches!(fit_cca(&y, &y), Err(Error::InvalidParameter(_))));
        assert!(irmad(&y, &y, &IrMadConfig::default()).is_err());
    }

    #[test]
    fn variates_are_decorrelated_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid::new(50, 40).unwrap();
        let y1 = noise_cube(4, grid, &mut rng);
        let n = noise_cube(4, grid, &mut rng);
        let y2 = ImageCube::new(y1.data() * 0.8 + n.data() * 0.6, grid).unwrap();
        let m = fit_cca(&y1, &y2).unwrap();
        for w in m.rho.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let (a, b) = m.variates(&y1, &y2);
        let npx = grid.len() as f64;
        for i in 0..4 {
            for j in 0..4 {
                let aa = a.row(i).dot(&a.row(j)) / npx;
                let bb = b.row(i).dot(&b.row(j)) / npx;
                let ab = a.row(i).dot(&b.row(j)) / npx;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((aa - want).abs() < 1e-9 && (bb - want).abs() < 1e-9);
                let want_ab = if i == j { m.rho[i] } else { 0.0 };
                assert!((ab - want_ab).abs() < 1e-9);
            }
        }
        assert!(m.rho.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn zero_iterations_is_plain_mad() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = Grid::new(10, 10).unwrap();
        let y1 = noise_cube(3, grid, &mut rng);
        let y2 = noise_cube(3, grid, &mut rng);
        let plain = fit_cca(&y1, &y2).unwrap();
        let res = irmad(&y1, &y2, &IrMadConfig { max_iter: 0, tol: 1e-4 }).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.model, plain);
        assert_eq!(res.energy, mad_energy(&y1, &y2, &plain).unwrap());
    }

    #[test]
    fn shrinkage_closed_form_for_two_bands() {
        // w(z) = exp(−z/2) and z' ~ χ²₄: 2 ∫ (z/4) e^{−z} dz = 1/2
        assert!((survival_weight_shrinkage(2) - 0.5).abs() < 1e-7);
        let mut prev = 0.0;
        for dof in 1..40 {
            let c = survival_weight_shrinkage(dof);
            assert!(c > prev && c < 1.0, "dof {dof}: {c}");
            prev = c;
        }
    }
}
