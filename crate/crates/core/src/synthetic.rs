//! Seeded synthetic reference scenes, used when no real hyperspectral cube
//! is available.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::{Grid, ImageCube};
use crate::operators::{Kernel, DEFAULT_SPAN_NM};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub endmembers: usize,
    /// Standard deviation (pixels) of the smoothing applied to the abundance
    /// fields; larger values give larger homogeneous regions.
    pub smoothness: f64,
    /// Softmax sharpness; larger values give purer pixels.
    pub sharpness: f64,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn new(rows: usize, cols: usize, bands: usize, endmembers: usize, seed: u64) -> Self {
        SyntheticScene {
            rows,
            cols,
            bands,
            endmembers,
            smoothness: 3.0,
            sharpness: 4.0,
            seed,
        }
    }

    /// Smooth reflectance-like signatures: a sloped baseline plus a few
    /// Gaussian absorption/reflection features, kept inside `[0.02, 1]`.
    pub fn endmember_spectra(&self) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0001);
        let mut m = DMatrix::zeros(self.bands, self.endmembers);
        for e in 0..self.endmembers {
            let base = 0.1 + 0.4 * rng.random::<f64>();
            let slope = 0.4 * (rng.random::<f64>() - 0.5);
            let bumps: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random::<f64>(),
                        0.05 + 0.15 * rng.random::<f64>(),
                        0.4 * (rng.random::<f64>() - 0.4),
                    )
                })
                .collect();
            for b in 0..self.bands {
                let t = if self.bands > 1 {
                    b as f64 / (self.bands - 1) as f64
                } else {
                    0.0
                };
                let mut v = base + slope * (t - 0.5);
                for &(c, w, a) in &bumps {
                    v += a * (-(t - c).powi(2) / (2.0 * w * w)).exp();
                }
                m[(b, e)] = v.clamp(0.02, 1.0);
            }
        }
        m
    }

    /// Abundance maps: smoothed Gaussian fields pushed through a softmax.
    pub fn abundances(&self) -> Result<DMatrix<f64>> {
        let grid = Grid::new(self.rows, self.cols)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0002);
        let noise = ImageCube::from_fn(self.endmembers, grid, |_, _, _| StandardNormal.sample(&mut rng))?;
        let side = grid.rows.min(grid.cols);
        let largest_odd = if side % 2 == 1 { side } else { side - 1 };
        let size = ((6.0 * self.smoothness).ceil() as usize | 1).min(largest_odd);
        let fields = Kernel::gaussian(size, self.smoothness)?.blur(&noise)?;
        let mut a = fields.into_data();
        for mut row in a.row_iter_mut() {
            let mean = row.mean();
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) / sd.max(1e-12));
        }
        for mut col in a.column_iter_mut() {
            let max = col.max();
            col.iter_mut().for_each(|v| *v = (self.sharpness * (*v - max)).exp());
            let s = col.sum();
            col /= s;
        }
        Ok(a)
    }

    pub fn generate(&self) -> Result<ImageCube> {
        if self.endmembers == 0 || self.endmembers > self.bands {
            return Err(Error::InvalidParameter(format!(
                "{} endmembers for {} bands",
                self.endmembers, self.bands
            )));
        }
        let grid = Grid::new(self.rows, self.cols)?;
        let x = ImageCube::new(self.endmember_spectra() * self.abundances()?, grid)?;
        let (lo, hi) = DEFAULT_SPAN_NM;
        let centers = (0..self.bands)
            .map(|b| {
                if self.bands > 1 {
                    lo + (hi - lo) * b as f64 / (self.bands - 1) as f64
                } else {
                    lo
                }
            })
            .collect();
        x.with_band_centers(centers)
    }
}
