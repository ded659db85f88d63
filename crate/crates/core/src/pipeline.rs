//! Fusion, prediction and detection glued end to end.
//!
//! Detectors only ever compare images of one resolution: the observed HR
//! image with its prediction `L X̂`, and the observed LR image with its
//! prediction `X̂ B S`.

use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionConfig, FusionProblem, FusionResult, DEFAULT_LAMBDA};
use crate::image::{ChangeEnergyMap, ChangeMask, ImageCube};
use crate::operators::{apply_spectral, DegradationModel};
use crate::simulate::degrade_mask;

/// Fusion settings used by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSettings {
    pub lambda: f64,
    pub solver: FusionConfig,
    pub prior_mean: Option<ImageCube>,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            lambda: DEFAULT_LAMBDA,
            solver: FusionConfig::default(),
            prior_mean: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CdOutputs {
    pub d_hr_hat: ChangeMask,
    pub d_lr_hat: ChangeMask,
    /// Block-OR degradation of `d_hr_hat` to the LR grid.
    pub d_alr_hat: ChangeMask,
    pub v_hr: ChangeEnergyMap,
    pub v_lr: ChangeEnergyMap,
    pub x_hat: ImageCube,
    pub fusion: FusionResult,
}

/// `(L X̂, X̂ B S)`.
pub fn predict(x_hat: &ImageCube, model: &DegradationModel) -> Result<(ImageCube, ImageCube)> {
    Ok((model.spectral(x_hat)?, model.spatial(x_hat)?))
}

/// Estimates the pseudo-latent image from the observed pair.
pub fn fuse_observations(
    y_hr: &ImageCube,
    y_lr: &ImageCube,
    model: &DegradationModel,
    settings: &FusionSettings,
) -> Result<FusionResult> {
    let problem = FusionProblem::new(
        y_hr.clone(),
        y_lr.clone(),
        model,
        settings.lambda,
        settings.prior_mean.clone(),
    )?;
    let result = fuse(&problem, &settings.solver)?;
    if !result.converged {
        log::warn!(
            "fusion stopped after {} iterations without reaching tolerance {}",
            result.iterations,
            settings.solver.tol
        );
    }
    Ok(result)
}

/// HR and LR energy maps from the observed pair and their predictions.
pub fn detect_pair(
    y_hr: &ImageCube,
    y_lr: &ImageCube,
    y_hr_hat: &ImageCube,
    y_lr_hat: &ImageCube,
    detector: &DetectorConfig,
) -> Result<(ChangeEnergyMap, ChangeEnergyMap)> {
    y_hr.ensure_same_shape(y_hr_hat, "HR pair")?;
    y_lr.ensure_same_shape(y_lr_hat, "LR pair")?;
    let (v_hr, v_lr) = rayon::join(
        || detector.energy(y_hr, y_hr_hat),
        || detector.energy(y_lr, y_lr_hat),
    );
    Ok((v_hr?, v_lr?))
}

/// Energy whose thresholding equals the block-OR of the thresholded HR map:
/// the maximum of `v_hr` over every LR block.
pub fn alr_energy(v_hr: &ChangeEnergyMap, model: &DegradationModel) -> Result<ChangeEnergyMap> {
    let hr = v_hr.grid();
    let lr = model.spatial.lr_grid(hr)?;
    let (dr, dc) = model.spatial.factors();
    let mut out = vec![0.0f64; lr.len()];
    for p in 0..hr.len() {
        let (i, j) = hr.coords(p);
        let q = lr.index(i / dr, j / dc);
        out[q] = out[q].max(v_hr.get(p));
    }
    ChangeEnergyMap::new(lr, out, v_hr.dof())
}

/// Full three-step change detection.
pub fn run_cd(
    y_hr: &ImageCube,
    y_lr: &ImageCube,
    model: &DegradationModel,
    fusion: &FusionSettings,
    detector: &DetectorConfig,
) -> Result<CdOutputs> {
    detector.validate()?;
    let result = fuse_observations(y_hr, y_lr, model, fusion).map_err(Error::in_stage("fusion"))?;
    let (y_hr_hat, y_lr_hat) = predict(&result.x_hat, model).map_err(Error::in_stage("prediction"))?;
    let (v_hr, v_lr) =
        detect_pair(y_hr, y_lr, &y_hr_hat, &y_lr_hat, detector).map_err(Error::in_stage("detection"))?;
    let tau_hr = detector.threshold(v_hr.dof())?;
    let tau_lr = detector.threshold(v_lr.dof())?;
    let d_hr_hat = crate::detect::threshold_map(&v_hr, tau_hr);
    let d_lr_hat = crate::detect::threshold_map(&v_lr, tau_lr);
    let d_alr_hat = degrade_mask(&d_hr_hat, &model.spatial)?;
    Ok(CdOutputs {
        d_hr_hat,
        d_lr_hat,
        d_alr_hat,
        v_hr,
        v_lr,
        x_hat: result.x_hat.clone(),
        fusion: result,
    })
}

/// Observed pair brought to a common low spatial and low spectral
/// resolution: `(Y_hr B S, L Y_lr)`.
pub fn worst_case_pair(
    y_hr: &ImageCube,
    y_lr: &ImageCube,
    model: &DegradationModel,
) -> Result<(ImageCube, ImageCube)> {
    let a = model.spatial.degrade(y_hr)?;
    let b = apply_spectral(&model.response, y_lr)?;
    a.ensure_same_shape(&b, "worst-case pair")?;
    Ok((a, b))
}

/// Energy map of the worst-case baseline.
pub fn worst_case_energy(
    y_hr: &ImageCube,
    y_lr: &ImageCube,
    model: &DegradationModel,
    detector: &DetectorConfig,
) -> Result<ChangeEnergyMap> {
    let (a, b) = worst_case_pair(y_hr, y_lr, model)?;
    detector.energy(&a, &b)
}

/// Worst-case LR change mask.
pub fn run_worst_case(
    y_hr: &ImageCube,
    y_lr: &ImageCube,
    model: &DegradationModel,
    detector: &DetectorConfig,
) -> Result<ChangeMask> {
    detector.validate()?;
    let v = worst_case_energy(y_hr, y_lr, model, detector)?;
    Ok(crate::detect::threshold_map(&v, detector.threshold(v.dof())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Grid;
    use crate::operators::{Kernel, SpatialDegradation, SpectralResponse};

    #[test]
    fn identity_model_predicts_input() {
        let grid = Grid::new(3, 3).unwrap();
        let x = ImageCube::from_fn(2, grid, |b, i, j| (b + 2 * i + j) as f64).unwrap();
        let model = DegradationModel::with_unit_variances(
            SpectralResponse::identity(2),
            SpatialDegradation::new(Kernel::delta(), 1, 1).unwrap(),
        );
        let (a, b) = predict(&x, &model).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn alr_energy_thresholds_like_block_or() {
        let model = DegradationModel::with_unit_variances(
            SpectralResponse::identity(1),
            SpatialDegradation::gaussian(3, 1.0, 2).unwrap(),
        );
        let grid = Grid::new(4, 4).unwrap();
        let v = ChangeEnergyMap::new(grid, (0..16).map(|k| ((k * 7) % 11) as f64).collect(), 1).unwrap();
        let alr = alr_energy(&v, &model).unwrap();
        for tau in [0.0, 2.5, 5.0, 9.0, 10.0, 11.0] {
            let via_mask = degrade_mask(&crate::detect::threshold_map(&v, tau), &model.spatial).unwrap();
            assert_eq!(crate::detect::threshold_map(&alr, tau), via_mask);
        }
    }
}
