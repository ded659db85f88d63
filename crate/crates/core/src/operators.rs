//! Linear degradation operators of the forward model and the additive
//! Gaussian noise model.
//!
//! With `X` a `(bands × pixels)` cube, the spectral response acts on the
//! left (`L X`) and the spatial degradation on the right (`X B S`): `B` is a
//! per-band circular convolution and `S` keeps one pixel per
//! `d_r × d_c` block at offset `(0, 0)`.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::{Grid, ImageCube};

const STOCHASTIC_TOL: f64 = 1e-9;

/// Row-stochastic band-combination matrix mapping `m_λ` bands to `n_λ ≤ m_λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse {
    matrix: DMatrix<f64>,
}

impl SpectralResponse {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows == 0 || rows > cols {
            return Err(Error::InvalidParameter(format!(
                "spectral response must map to fewer or equal bands, got {rows}x{cols}"
            )));
        }
        for i in 0..rows {
            let row = matrix.row(i);
            if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "spectral response row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidParameter(format!(
                    "spectral response row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(SpectralResponse { matrix })
    }

    pub fn identity(bands: usize) -> Self {
        SpectralResponse {
            matrix: DMatrix::identity(bands, bands),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of output (observed) bands.
    pub fn output_bands(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of input (latent) bands.
    pub fn input_bands(&self) -> usize {
        self.matrix.ncols()
    }
}

/// One row averaging the first `n_avg` of `bands` bands.
pub fn make_pan_response(bands: usize, n_avg: usize) -> Result<SpectralResponse> {
    if n_avg == 0 || n_avg > bands {
        return Err(Error::InvalidParameter(format!(
            "cannot average {n_avg} of {bands} bands"
        )));
    }
    let w = 1.0 / n_avg as f64;
    SpectralResponse::new(DMatrix::from_fn(1, bands, |_, j| if j < n_avg { w } else { 0.0 }))
}

/// One row per group, uniform weights inside each contiguous group of band
/// indices.
pub fn make_ms_response(bands: usize, groups: &[Range<usize>]) -> Result<SpectralResponse> {
    if groups.is_empty() {
        return Err(Error::InvalidParameter("no spectral groups".into()));
    }
    let mut m = DMatrix::zeros(groups.len(), bands);
    for (g, range) in groups.iter().enumerate() {
        if range.is_empty() {
            return Err(Error::InvalidParameter(format!("spectral group {g} is empty")));
        }
        if range.end > bands {
            return Err(Error::InvalidParameter(format!(
                "spectral group {g} ({range:?}) exceeds {bands} bands"
            )));
        }
        let w = 1.0 / range.len() as f64;
        for j in range.clone() {
            m[(g, j)] = w;
        }
    }
    SpectralResponse::new(m)
}

/// Approximate LANDSAT TM blue/green/red/NIR windows in nm.
pub const LANDSAT_WINDOWS_NM: [(f64, f64); 4] =
    [(450.0, 520.0), (520.0, 600.0), (630.0, 690.0), (760.0, 900.0)];

/// Default wavelength span assumed when a cube carries no band centers.
pub const DEFAULT_SPAN_NM: (f64, f64) = (430.0, 860.0);

/// Groups band indices into the four LANDSAT-like windows. Without band
/// centers, bands are assumed evenly spaced over [`DEFAULT_SPAN_NM`].
pub fn landsat_like_groups(bands: usize, centers: Option<&[f64]>) -> Result<Vec<Range<usize>>> {
    let center = |b: usize| match centers {
        Some(c) => c[b],
        None if bands == 1 => DEFAULT_SPAN_NM.0,
        None => {
            DEFAULT_SPAN_NM.0 + (DEFAULT_SPAN_NM.1 - DEFAULT_SPAN_NM.0) * b as f64 / (bands - 1) as f64
        }
    };
    LANDSAT_WINDOWS_NM
        .iter()
        .map(|&(lo, hi)| {
            let idx: Vec<usize> = (0..bands)
                .filter(|&b| {
                    let c = center(b);
                    c >= lo && c < hi
                })
                .collect();
            match (idx.first(), idx.last()) {
                (Some(&a), Some(&z)) => Ok(a..z + 1),
                _ => Err(Error::InvalidParameter(format!(
                    "no band falls in the {lo}-{hi} nm window"
                ))),
            }
        })
        .collect()
}

pub fn apply_spectral(response: &SpectralResponse, x: &ImageCube) -> Result<ImageCube> {
    if x.bands() != response.input_bands() {
        return Err(Error::Shape(format!(
            "spectral response expects {} bands, cube has {}",
            response.input_bands(),
            x.bands()
        )));
    }
    Ok(ImageCube::from_parts(response.matrix() * x.data(), x.grid()))
}

/// Transpose of [`apply_spectral`].
pub fn apply_spectral_adjoint(response: &SpectralResponse, y: &ImageCube) -> Result<ImageCube> {
    if y.bands() != response.output_bands() {
        return Err(Error::Shape(format!(
            "spectral adjoint expects {} bands, cube has {}",
            response.output_bands(),
            y.bands()
        )));
    }
    Ok(ImageCube::from_parts(response.matrix().transpose() * y.data(), y.grid()))
}

/// Odd-sized square convolution kernel, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Accepts any odd-sized square kernel whose entries sum to one.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("kernel size {size} is even")));
        }
        if weights.len() != size * size {
            return Err(Error::Shape(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("kernel has non-finite weights".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidParameter(format!("kernel sums to {sum}, expected 1")));
        }
        Ok(Kernel { size, weights })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidParameter(format!(
                "kernel must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        Kernel::new(n, (0..n * n).map(|k| m[(k / n, k % n)]).collect())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.size, self.size, &self.weights)
    }

    pub fn delta() -> Self {
        Kernel {
            size: 1,
            weights: vec![1.0],
        }
    }

    /// Truncated isotropic Gaussian, normalized to sum one.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("kernel size {size} is even")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gaussian sigma {sigma} must be positive")));
        }
        let c = (size / 2) as f64;
        let mut w: Vec<f64> = (0..size * size)
            .map(|k| {
                let (a, b) = ((k / size) as f64 - c, (k % size) as f64 - c);
                (-(a * a + b * b) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        Kernel::new(size, w)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.weights[a * self.size + b]
    }

    pub fn is_center_symmetric(&self) -> bool {
        let n = self.weights.len();
        (0..n).all(|k| (self.weights[k] - self.weights[n - 1 - k]).abs() <= 1e-14)
    }

    fn check_grid(&self, grid: Grid) -> Result<()> {
        if grid.rows < self.size || grid.cols < self.size {
            return Err(Error::Shape(format!(
                "{}x{} kernel larger than grid {grid}",
                self.size, self.size
            )));
        }
        Ok(())
    }

    /// Circular convolution of one band: `out[i,j] = Σ k[a,b] x[i−a+c, j−b+c]`.
    fn convolve_band(&self, band: &[f64], grid: Grid, adjoint: bool) -> Vec<f64> {
        let (rows, cols) = (grid.rows, grid.cols);
        let c = self.size / 2;
        let mut out = vec![0.0; band.len()];
        for a in 0..self.size {
            for b in 0..self.size {
                let w = self.weight(a, b);
                if w == 0.0 {
                    continue;
                }
                // source offset, kept in [0, rows) / [0, cols)
                let (di, dj) = if adjoint {
                    ((a + rows - c) % rows, (b + cols - c) % cols)
                } else {
                    ((c + rows - a) % rows, (c + cols - b) % cols)
                };
                for i in 0..rows {
                    let si = (i + di) % rows;
                    let src = &band[si * cols..(si + 1) * cols];
                    let dst = &mut out[i * cols..(i + 1) * cols];
                    let split = cols - dj;
                    for (o, s) in dst[..split].iter_mut().zip(&src[dj..]) {
                        *o += w * s;
                    }
                    for (o, s) in dst[split..].iter_mut().zip(&src[..dj]) {
                        *o += w * s;
                    }
                }
            }
        }
        out
    }

    /// Per-band circular convolution.
    pub fn blur(&self, x: &ImageCube) -> Result<ImageCube> {
        self.check_grid(x.grid())?;
        let grid = x.grid();
        Ok(x.map_bands(grid, |band| self.convolve_band(band, grid, false)))
    }

    /// Adjoint of [`Kernel::blur`] under the Frobenius inner product
    /// (circular correlation).
    pub fn blur_adjoint(&self, x: &ImageCube) -> Result<ImageCube> {
        self.check_grid(x.grid())?;
        let grid = x.grid();
        Ok(x.map_bands(grid, |band| self.convolve_band(band, grid, true)))
    }
}

/// Blur kernel plus integer decimation factors (`R = B S`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDegradation {
    kernel: Kernel,
    factor_rows: usize,
    factor_cols: usize,
}

impl SpatialDegradation {
    pub fn new(kernel: Kernel, factor_rows: usize, factor_cols: usize) -> Result<Self> {
        if factor_rows == 0 || factor_cols == 0 {
            return Err(Error::InvalidParameter("decimation factors must be positive".into()));
        }
        if !kernel.is_center_symmetric() {
            return Err(Error::InvalidParameter(
                "blur kernel of the degradation model must be center-symmetric".into(),
            ));
        }
        Ok(SpatialDegradation {
            kernel,
            factor_rows,
            factor_cols,
        })
    }

    /// `size × size` Gaussian blur followed by `factor × factor` decimation.
    pub fn gaussian(size: usize, sigma: f64, factor: usize) -> Result<Self> {
        SpatialDegradation::new(Kernel::gaussian(size, sigma)?, factor, factor)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn factors(&self) -> (usize, usize) {
        (self.factor_rows, self.factor_cols)
    }

    /// Total decimation `d = d_r × d_c`.
    pub fn factor(&self) -> usize {
        self.factor_rows * self.factor_cols
    }

    /// Low-resolution grid corresponding to `hr`.
    pub fn lr_grid(&self, hr: Grid) -> Result<Grid> {
        if !hr.rows.is_multiple_of(self.factor_rows) || !hr.cols.is_multiple_of(self.factor_cols) {
            return Err(Error::Shape(format!(
                "grid {hr} is not divisible by factors {}x{}",
                self.factor_rows, self.factor_cols
            )));
        }
        Grid::new(hr.rows / self.factor_rows, hr.cols / self.factor_cols)
    }

    /// High-resolution grid corresponding to `lr`.
    pub fn hr_grid(&self, lr: Grid) -> Grid {
        Grid {
            rows: lr.rows * self.factor_rows,
            cols: lr.cols * self.factor_cols,
        }
    }

    pub fn blur(&self, x: &ImageCube) -> Result<ImageCube> {
        self.kernel.blur(x)
    }

    pub fn blur_adjoint(&self, x: &ImageCube) -> Result<ImageCube> {
        self.kernel.blur_adjoint(x)
    }

    /// Keeps pixel `(i·d_r, j·d_c)` of every block.
    pub fn decimate(&self, x: &ImageCube) -> Result<ImageCube> {
        let hr = x.grid();
        let lr = self.lr_grid(hr)?;
        let (dr, dc) = self.factors();
        let data = DMatrix::from_fn(x.bands(), lr.len(), |b, q| {
            let (i, j) = lr.coords(q);
            x.get(b, hr.index(i * dr, j * dc))
        });
        Ok(ImageCube::from_parts(data, lr))
    }

    /// Zero-filling adjoint of [`SpatialDegradation::decimate`].
    pub fn upsample(&self, z: &ImageCube) -> ImageCube {
        let lr = z.grid();
        let hr = self.hr_grid(lr);
        let (dr, dc) = self.factors();
        let mut data = DMatrix::zeros(z.bands(), hr.len());
        for q in 0..lr.len() {
            let (i, j) = lr.coords(q);
            let p = hr.index(i * dr, j * dc);
            data.column_mut(p).copy_from(&z.data().column(q));
        }
        ImageCube::from_parts(data, hr)
    }

    /// `X ↦ X B S`.
    pub fn degrade(&self, x: &ImageCube) -> Result<ImageCube> {
        self.decimate(&self.blur(x)?)
    }

    /// `Z ↦ Z Sᵀ Bᵀ`.
    pub fn degrade_adjoint(&self, z: &ImageCube) -> Result<ImageCube> {
        self.blur_adjoint(&self.upsample(z))
    }
}

/// Which observation a noise draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    High,
    Low,
}

/// Independent zero-mean Gaussian noise with one variance per band.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub lambda_hr: Vec<f64>,
    pub lambda_lr: Vec<f64>,
    pub seed: u64,
}

impl NoiseModel {
    /// Variances must be finite and nonnegative; zero means noiseless.
    pub fn new(lambda_hr: Vec<f64>, lambda_lr: Vec<f64>, seed: u64) -> Result<Self> {
        for v in lambda_hr.iter().chain(&lambda_lr) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidParameter(format!("noise variance {v} is invalid")));
            }
        }
        Ok(NoiseModel {
            lambda_hr,
            lambda_lr,
            seed,
        })
    }

    pub fn noiseless(hr_bands: usize, lr_bands: usize) -> Self {
        NoiseModel {
            lambda_hr: vec![0.0; hr_bands],
            lambda_lr: vec![0.0; lr_bands],
            seed: 0,
        }
    }

    /// Per-band variances giving the requested SNR (dB) with respect to the
    /// mean power of each band of `x`.
    pub fn variances_for_snr(x: &ImageCube, snr_db: f64) -> Vec<f64> {
        let ratio = 10f64.powf(snr_db / 10.0);
        (0..x.bands())
            .map(|b| {
                let row = x.data().row(b);
                row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64 / ratio
            })
            .collect()
    }

    pub fn is_noiseless(&self) -> bool {
        self.lambda_hr.iter().chain(&self.lambda_lr).all(|&v| v == 0.0)
    }

    pub fn add_noise(&self, x: &ImageCube, which: Resolution) -> Result<ImageCube> {
        let (vars, stream) = match which {
            Resolution::High => (&self.lambda_hr, 0),
            Resolution::Low => (&self.lambda_lr, 1),
        };
        if vars.len() != x.bands() {
            return Err(Error::Shape(format!(
                "{} noise variances for {} bands",
                vars.len(),
                x.bands()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut data = x.data().clone();
        for (b, &var) in vars.iter().enumerate() {
            if var == 0.0 {
                continue;
            }
            let sd = var.sqrt();
            for p in 0..x.pixels() {
                let z: f64 = StandardNormal.sample(&mut rng);
                data[(b, p)] += sd * z;
            }
        }
        Ok(ImageCube::from_parts(data, x.grid()))
    }
}

/// The full forward model: spectral response, spatial degradation and the
/// diagonal noise covariances of both observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationModel {
    pub response: SpectralResponse,
    pub spatial: SpatialDegradation,
    pub lambda_hr: Vec<f64>,
    pub lambda_lr: Vec<f64>,
}

impl DegradationModel {
    pub fn new(
        response: SpectralResponse,
        spatial: SpatialDegradation,
        lambda_hr: Vec<f64>,
        lambda_lr: Vec<f64>,
    ) -> Result<Self> {
        if lambda_hr.len() != response.output_bands() || lambda_lr.len() != response.input_bands() {
            return Err(Error::Shape(format!(
                "noise variances ({}, {}) do not match response {}x{}",
                lambda_hr.len(),
                lambda_lr.len(),
                response.output_bands(),
                response.input_bands()
            )));
        }
        if let Some(v) = lambda_hr.iter().chain(&lambda_lr).find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParameter(format!("noise variance {v} must be positive")));
        }
        Ok(DegradationModel {
            response,
            spatial,
            lambda_hr,
            lambda_lr,
        })
    }

    /// Model with unit noise variances on every band.
    pub fn with_unit_variances(response: SpectralResponse, spatial: SpatialDegradation) -> Self {
        let (hr, lr) = (response.output_bands(), response.input_bands());
        DegradationModel {
            response,
            spatial,
            lambda_hr: vec![1.0; hr],
            lambda_lr: vec![1.0; lr],
        }
    }

    /// `L X`.
    pub fn spectral(&self, x: &ImageCube) -> Result<ImageCube> {
        apply_spectral(&self.response, x)
    }

    /// `X B S`.
    pub fn spatial(&self, x: &ImageCube) -> Result<ImageCube> {
        self.spatial.degrade(x)
    }
}
