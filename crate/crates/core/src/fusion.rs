//! MAP estimation of the pseudo-latent high-resolution hyperspectral image.
//!
//! The estimate minimizes
//!
//! ```text
//! ½‖W_hr^{1/2}(Y_hr − L X)‖²_F + ½‖W_lr^{1/2}(Y_lr − X B S)‖²_F + λ·½‖X − X̄‖²_F
//! ```
//!
//! with `W = Λ⁻¹` the per-band noise precisions. The normal equations
//!
//! ```text
//! Lᵀ W_hr L X + W_lr X B S Sᵀ Bᵀ + λ X = Lᵀ W_hr Y_hr + W_lr Y_lr Sᵀ Bᵀ + λ X̄
//! ```
//!
//! are symmetric positive definite for `λ > 0` and are solved by
//! preconditioned conjugate gradient with operator-form products.

use log::debug;
use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::image::ImageCube;
use crate::operators::{DegradationModel, SpatialDegradation, SpectralResponse};

/// Regularization weight used unless overridden.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub max_iter: usize,
    /// Relative gradient-norm tolerance `‖∇f(X_k)‖ / ‖∇f(X_0)‖`.
    pub tol: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// Observed pair plus everything needed to invert the forward model.
#[derive(Debug, Clone)]
pub struct FusionProblem {
    y_hr: ImageCube,
    y_lr: ImageCube,
    response: SpectralResponse,
    spatial: SpatialDegradation,
    lambda_hr: Vec<f64>,
    lambda_lr: Vec<f64>,
    lambda_reg: f64,
    prior_mean: ImageCube,
}

impl FusionProblem {
    /// Builds a problem from a degradation model. Without an explicit
    /// `prior_mean` the default interpolated prior of [`default_prior_mean`]
    /// is used.
    pub fn new(
        y_hr: ImageCube,
        y_lr: ImageCube,
        model: &DegradationModel,
        lambda_reg: f64,
        prior_mean: Option<ImageCube>,
    ) -> Result<Self> {
        let response = model.response.clone();
        let spatial = model.spatial.clone();
        if y_hr.bands() != response.output_bands() {
            return Err(Error::Shape(format!(
                "HR image has {} bands, response produces {}",
                y_hr.bands(),
                response.output_bands()
            )));
        }
        if y_lr.bands() != response.input_bands() {
            return Err(Error::Shape(format!(
                "LR image has {} bands, response consumes {}",
                y_lr.bands(),
                response.input_bands()
            )));
        }
        let lr_grid = spatial.lr_grid(y_hr.grid())?;
        if lr_grid != y_lr.grid() {
            return Err(Error::Shape(format!(
                "LR image grid {} does not match degraded HR grid {lr_grid}",
                y_lr.grid()
            )));
        }
        if y_hr.grid().rows < spatial.kernel().size() || y_hr.grid().cols < spatial.kernel().size() {
            return Err(Error::Shape("blur kernel larger than the HR grid".into()));
        }
        if !(lambda_reg >= 0.0 && lambda_reg.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "regularization weight {lambda_reg} must be nonnegative"
            )));
        }
        if model.lambda_hr.len() != y_hr.bands() || model.lambda_lr.len() != y_lr.bands() {
            return Err(Error::Shape("noise variance vectors do not match band counts".into()));
        }
        let prior_mean = match prior_mean {
            Some(p) => {
                if p.bands() != y_lr.bands() || p.grid() != y_hr.grid() {
                    return Err(Error::Shape(format!(
                        "prior mean is {} bands on {}, expected {} bands on {}",
                        p.bands(),
                        p.grid(),
                        y_lr.bands(),
                        y_hr.grid()
                    )));
                }
                p
            }
            None => default_prior_mean(&y_lr, &spatial)?,
        };
        Ok(FusionProblem {
            y_hr,
            y_lr,
            response,
            spatial,
            lambda_hr: model.lambda_hr.clone(),
            lambda_lr: model.lambda_lr.clone(),
            lambda_reg,
            prior_mean,
        })
    }

    pub fn y_hr(&self) -> &ImageCube {
        &self.y_hr
    }

    pub fn y_lr(&self) -> &ImageCube {
        &self.y_lr
    }

    pub fn prior_mean(&self) -> &ImageCube {
        &self.prior_mean
    }

    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    fn check_latent(&self, x: &ImageCube) -> Result<()> {
        if x.bands() != self.y_lr.bands() || x.grid() != self.y_hr.grid() {
            return Err(Error::Shape(format!(
                "latent image is {} bands on {}, expected {} bands on {}",
                x.bands(),
                x.grid(),
                self.y_lr.bands(),
                self.y_hr.grid()
            )));
        }
        Ok(())
    }

    /// Negative log-posterior at `x`, up to an additive constant.
    pub fn objective(&self, x: &ImageCube) -> Result<f64> {
        self.check_latent(x)?;
        let hr_res = self.y_hr.data() - self.response.matrix() * x.data();
        let lr_res = self.y_lr.data() - self.spatial.degrade(x)?.data();
        let prior_res = x.data() - self.prior_mean.data();
        Ok(0.5 * weighted_sq_norm(&hr_res, &self.lambda_hr)
            + 0.5 * weighted_sq_norm(&lr_res, &self.lambda_lr)
            + 0.5 * self.lambda_reg * prior_res.norm_squared())
    }

    /// Gradient of [`FusionProblem::objective`] with respect to `x`.
    pub fn gradient(&self, x: &ImageCube) -> Result<ImageCube> {
        self.check_latent(x)?;
        let l = self.response.matrix();
        let mut hr_res = l * x.data() - self.y_hr.data();
        scale_rows_inv(&mut hr_res, &self.lambda_hr);
        let mut lr_res = self.spatial.degrade(x)?.into_data() - self.y_lr.data();
        scale_rows_inv(&mut lr_res, &self.lambda_lr);
        let pulled = self
            .spatial
            .degrade_adjoint(&ImageCube::from_parts(lr_res, self.y_lr.grid()))?;
        let g = l.transpose() * hr_res
            + pulled.into_data()
            + self.lambda_reg * (x.data() - self.prior_mean.data());
        Ok(ImageCube::from_parts(g, x.grid()))
    }

    /// Applies the normal-equation operator (the Hessian of the objective).
    fn hessian_apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let grid = self.y_hr.grid();
        let l = self.response.matrix();
        let mut lx = l * x;
        scale_rows_inv(&mut lx, &self.lambda_hr);
        let mut xbs = self
            .spatial
            .degrade(&ImageCube::from_parts(x.clone(), grid))?
            .into_data();
        scale_rows_inv(&mut xbs, &self.lambda_lr);
        let pulled = self
            .spatial
            .degrade_adjoint(&ImageCube::from_parts(xbs, self.y_lr.grid()))?;
        Ok(l.transpose() * lx + pulled.into_data() + self.lambda_reg * x)
    }

    /// Per-pixel spectral preconditioner: the spectral block of the Hessian
    /// with the spatial term replaced by its average diagonal.
    fn preconditioner(&self) -> Option<Cholesky<f64, Dyn>> {
        let l = self.response.matrix();
        let bands = l.ncols();
        let k = self.spatial.kernel();
        let kernel_energy: f64 = (0..k.size())
            .flat_map(|a| (0..k.size()).map(move |b| (a, b)))
            .map(|(a, b)| k.weight(a, b).powi(2))
            .sum();
        let spatial_diag = kernel_energy / self.spatial.factor() as f64;
        let mut p = DMatrix::zeros(bands, bands);
        for (r, var) in self.lambda_hr.iter().enumerate() {
            let row = l.row(r);
            p += row.transpose() * row / *var;
        }
        for b in 0..bands {
            p[(b, b)] += spatial_diag / self.lambda_lr[b] + self.lambda_reg;
        }
        Cholesky::new(p)
    }
}

fn weighted_sq_norm(m: &DMatrix<f64>, variances: &[f64]) -> f64 {
    m.row_iter()
        .zip(variances)
        .map(|(row, var)| row.norm_squared() / var)
        .sum()
}

fn scale_rows_inv(m: &mut DMatrix<f64>, variances: &[f64]) {
    for (mut row, var) in m.row_iter_mut().zip(variances) {
        row /= *var;
    }
}

/// Interpolates the LR image onto the HR grid by normalized convolution:
/// `(Y_lr Sᵀ Bᵀ) ⊘ (1 Sᵀ Bᵀ)`. HR pixels the blur footprint does not reach
/// take the value of their LR block.
pub fn default_prior_mean(y_lr: &ImageCube, spatial: &SpatialDegradation) -> Result<ImageCube> {
    let spread = spatial.degrade_adjoint(y_lr)?;
    let ones = ImageCube::from_parts(DMatrix::from_element(1, y_lr.pixels(), 1.0), y_lr.grid());
    let weight = spatial.degrade_adjoint(&ones)?;
    let max_w = weight.data().max();
    let hr = spread.grid();
    let lr = y_lr.grid();
    let (dr, dc) = spatial.factors();
    let mut data = spread.into_data();
    for p in 0..hr.len() {
        let w = weight.get(0, p);
        if w > 1e-12 * max_w {
            data.column_mut(p).unscale_mut(w);
        } else {
            let (i, j) = hr.coords(p);
            data.column_mut(p).copy_from(&y_lr.data().column(lr.index(i / dr, j / dc)));
        }
    }
    ImageCube::new(data, hr)
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub x_hat: ImageCube,
    /// Objective at the starting point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the MAP problem by preconditioned conjugate gradient, starting
/// from the prior mean.
pub fn fuse(problem: &FusionProblem, cfg: &FusionConfig) -> Result<FusionResult> {
    let grid = problem.y_hr.grid();
    let mut x = problem.prior_mean.data().clone();
    let mut f = problem.objective(&ImageCube::from_parts(x.clone(), grid))?;
    if !f.is_finite() {
        return Err(Error::Numerical(format!("objective is {f} at the starting point")));
    }
    let mut trace = vec![f];
    // residual r = b − A x = −∇f(x)
    let mut r = -problem
        .gradient(&ImageCube::from_parts(x.clone(), grid))?
        .into_data();
    let g0 = r.norm();
    if g0 == 0.0 {
        return Ok(FusionResult {
            x_hat: ImageCube::new(x, grid)?,
            objective_trace: trace,
            iterations: 0,
            converged: true,
        });
    }
    let precond = problem.preconditioner();
    let apply_precond = |r: &DMatrix<f64>| match &precond {
        Some(c) => c.solve(r),
        None => r.clone(),
    };
    let mut z = apply_precond(&r);
    let mut dir = z.clone();
    let mut rz = r.dot(&z);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        let ad = problem.hessian_apply(&dir)?;
        let curvature = dir.dot(&ad);
        if !(curvature > 0.0) {
            if curvature.is_finite() {
                // search direction in the null space of a singular system
                break;
            }
            return Err(Error::Numerical(format!("curvature {curvature} along search direction")));
        }
        let alpha = rz / curvature;
        let x_next = &x + alpha * &dir;
        let f_next = problem.objective(&ImageCube::from_parts(x_next.clone(), grid))?;
        if !f_next.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became {f_next} at iteration {}",
                iterations + 1
            )));
        }
        if f_next > f {
            // round-off dominates the remaining decrease
            debug!("fusion stagnated at iteration {iterations}: {f_next} > {f}");
            break;
        }
        x = x_next;
        f = f_next;
        trace.push(f);
        iterations += 1;
        r -= alpha * &ad;
        if r.norm() <= cfg.tol * g0 {
            converged = true;
            break;
        }
        z = apply_precond(&r);
        let rz_next = r.dot(&z);
        dir = &z + (rz_next / rz) * &dir;
        rz = rz_next;
    }

    if !converged {
        // the recursive residual drifts from the true gradient; trust the latter
        let g = problem.gradient(&ImageCube::from_parts(x.clone(), grid))?;
        converged = g.data().norm() <= cfg.tol * g0;
    }
    debug!("fusion: {iterations} iterations, converged = {converged}, objective {f:.6e}");
    Ok(FusionResult {
        x_hat: ImageCube::new(x, grid)?,
        objective_trace: trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Grid;
    use crate::operators::{make_ms_response, Kernel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn setup(seed: u64) -> (DegradationModel, ImageCube) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::new(8, 8).unwrap();
        let x = ImageCube::from_fn(4, grid, |_, _, _| StandardNormal.sample(&mut rng)).unwrap();
        let model = DegradationModel::with_unit_variances(
            make_ms_response(4, &[0..2, 2..4]).unwrap(),
            SpatialDegradation::gaussian(3, 0.8, 2).unwrap(),
        );
        (model, x)
    }

    #[test]
    fn objective_zero_at_consistent_truth() {
        let (model, x) = setup(1);
        let y_hr = model.spectral(&x).unwrap();
        let y_lr = model.spatial(&x).unwrap();
        let p = FusionProblem::new(y_hr, y_lr, &model, 0.0, None).unwrap();
        assert!(p.objective(&x).unwrap() < 1e-24);
    }

    #[test]
    fn objective_zero_for_all_zero_data() {
        let (model, x) = setup(2);
        let zero_x = ImageCube::zeros(4, x.grid());
        let y_hr = ImageCube::zeros(2, x.grid());
        let y_lr = ImageCube::zeros(4, Grid::new(4, 4).unwrap());
        let p = FusionProblem::new(y_hr, y_lr, &model, 0.0, None).unwrap();
        assert_eq!(p.objective(&zero_x).unwrap(), 0.0);
    }

    #[test]
    fn gradient_of_prior_only() {
        let (model, x) = setup(3);
        let zero_hr = ImageCube::zeros(2, x.grid());
        let zero_lr = ImageCube::zeros(4, Grid::new(4, 4).unwrap());
        let prior = ImageCube::from_fn(4, x.grid(), |b, i, j| (b + i + j) as f64).unwrap();
        // all-zero latent image makes both data terms vanish
        let p = FusionProblem::new(zero_hr, zero_lr, &model, 50.0, Some(prior.clone())).unwrap();
        let zero_x = ImageCube::zeros(4, x.grid());
        let g = p.gradient(&zero_x).unwrap();
        assert!((g.data() + 50.0 * prior.data()).amax() < 1e-12);
    }

    #[test]
    fn fixed_point_at_prior_mean() {
        let (model, x) = setup(4);
        let p = FusionProblem::new(
            model.spectral(&x).unwrap(),
            model.spatial(&x).unwrap(),
            &model,
            DEFAULT_LAMBDA,
            Some(x.clone()),
        )
        .unwrap();
        let res = fuse(&p, &FusionConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert_eq!(res.x_hat, x);
    }

    #[test]
    fn shape_errors() {
        let (model, x) = setup(5);
        let y_hr = model.spectral(&x).unwrap();
        let y_lr = model.spatial(&x).unwrap();
        assert!(FusionProblem::new(y_lr.clone(), y_hr.clone(), &model, 1e-4, None).is_err());
        let p = FusionProblem::new(y_hr, y_lr, &model, 1e-4, None).unwrap();
        assert!(p.objective(&ImageCube::zeros(3, x.grid())).is_err());
        assert!(p.gradient(&ImageCube::zeros(4, Grid::new(4, 4).unwrap())).is_err());
    }

    #[test]
    fn prior_mean_interpolates_constant() {
        let spatial = SpatialDegradation::gaussian(5, 1.0, 5).unwrap();
        let y_lr = ImageCube::from_fn(2, Grid::new(3, 4).unwrap(), |b, _, _| 2.0 + b as f64).unwrap();
        let prior = default_prior_mean(&y_lr, &spatial).unwrap();
        assert_eq!(prior.grid(), Grid::new(15, 20).unwrap());
        for p in 0..prior.pixels() {
            assert!((prior.get(0, p) - 2.0).abs() < 1e-12);
            assert!((prior.get(1, p) - 3.0).abs() < 1e-12);
        }
        // delta kernel reaches only the sampled phase; the rest falls back
        let sparse = SpatialDegradation::new(Kernel::delta(), 2, 2).unwrap();
        let prior = default_prior_mean(&y_lr, &sparse).unwrap();
        assert!(prior.data().row(0).iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }
}
