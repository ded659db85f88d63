//! Image containers shared by every stage of the pipeline.
//!
//! Spectral images are stored band-major: a `(bands × pixels)` matrix in which
//! row `b` is band `b` and column `p` is the spectrum of pixel `p`. Pixel
//! indices flatten the spatial grid in row-major order, `p = i * cols + j`,
//! everywhere in the library (cubes, masks, energy maps and file formats).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Spatial grid dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty grid {rows}x{cols}")));
        }
        Ok(Grid { rows, cols })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flattening of `(i, j)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.rows && j < self.cols);
        i * self.cols + j
    }

    /// Inverse of [`Grid::index`].
    #[inline]
    pub fn coords(&self, p: usize) -> (usize, usize) {
        (p / self.cols, p % self.cols)
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// A multi-band image stored as a `(bands × pixels)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageCube {
    data: DMatrix<f64>,
    grid: Grid,
    band_centers: Option<Vec<f64>>,
}

impl ImageCube {
    /// Wraps a band-major matrix. Every entry must be finite and the column
    /// count must equal `grid.len()`.
    pub fn new(data: DMatrix<f64>, grid: Grid) -> Result<Self> {
        if data.ncols() != grid.len() {
            return Err(Error::Shape(format!(
                "matrix has {} columns but grid {} has {} pixels",
                data.ncols(),
                grid,
                grid.len()
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::Shape("cube has no bands".into()));
        }
        check_finite(&data)?;
        Ok(ImageCube {
            data,
            grid,
            band_centers: None,
        })
    }

    pub fn zeros(bands: usize, grid: Grid) -> Self {
        assert!(bands > 0, "cube needs at least one band");
        ImageCube {
            data: DMatrix::zeros(bands, grid.len()),
            grid,
            band_centers: None,
        }
    }

    /// Builds a cube from `f(band, row, col)`.
    pub fn from_fn(bands: usize, grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let data = DMatrix::from_fn(bands, grid.len(), |b, p| {
            let (i, j) = grid.coords(p);
            f(b, i, j)
        });
        ImageCube::new(data, grid)
    }

    /// Builds a cube from per-band images, each of length `grid.len()` in
    /// row-major pixel order.
    pub fn from_bands(bands: &[Vec<f64>], grid: Grid) -> Result<Self> {
        for (b, band) in bands.iter().enumerate() {
            if band.len() != grid.len() {
                return Err(Error::Shape(format!(
                    "band {b} has {} pixels, grid {grid} has {}",
                    band.len(),
                    grid.len()
                )));
            }
        }
        let data = DMatrix::from_fn(bands.len(), grid.len(), |b, p| bands[b][p]);
        ImageCube::new(data, grid)
    }

    pub fn with_band_centers(mut self, centers: Vec<f64>) -> Result<Self> {
        if centers.len() != self.bands() {
            return Err(Error::Shape(format!(
                "{} band centers for {} bands",
                centers.len(),
                self.bands()
            )));
        }
        self.band_centers = Some(centers);
        Ok(self)
    }

    #[inline]
    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn band_centers(&self) -> Option<&[f64]> {
        self.band_centers.as_deref()
    }

    #[inline]
    pub fn get(&self, band: usize, pixel: usize) -> f64 {
        self.data[(band, pixel)]
    }

    /// Copy of band `b` in row-major pixel order.
    pub fn band(&self, b: usize) -> Vec<f64> {
        self.data.row(b).iter().copied().collect()
    }

    /// Spectrum of pixel `p`.
    pub fn pixel(&self, p: usize) -> DVector<f64> {
        self.data.column(p).into_owned()
    }

    /// Applies `f` to every band image independently. All output bands must
    /// share the returned grid.
    pub(crate) fn map_bands(
        &self,
        out_grid: Grid,
        f: impl Fn(&[f64]) -> Vec<f64> + Sync,
    ) -> ImageCube {
        use rayon::prelude::*;
        let outs: Vec<Vec<f64>> = (0..self.bands())
            .into_par_iter()
            .map(|b| {
                let out = f(&self.band(b));
                debug_assert_eq!(out.len(), out_grid.len());
                out
            })
            .collect();
        let data = DMatrix::from_fn(outs.len(), out_grid.len(), |b, p| outs[b][p]);
        ImageCube {
            data,
            grid: out_grid,
            band_centers: self.band_centers.clone(),
        }
    }

    /// Wraps a matrix produced by an internal linear operation; only the
    /// shape is checked.
    pub(crate) fn from_parts(data: DMatrix<f64>, grid: Grid) -> Self {
        debug_assert_eq!(data.ncols(), grid.len());
        ImageCube {
            data,
            grid,
            band_centers: None,
        }
    }

    /// Checks that `other` has the same band count and grid.
    pub fn ensure_same_shape(&self, other: &ImageCube, what: &str) -> Result<()> {
        if self.bands() != other.bands() || self.grid != other.grid {
            return Err(Error::Shape(format!(
                "{what}: {} bands on {} vs {} bands on {}",
                self.bands(),
                self.grid,
                other.bands(),
                other.grid
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_finite(data: &DMatrix<f64>) -> Result<()> {
    for p in 0..data.ncols() {
        for b in 0..data.nrows() {
            if !data[(b, p)].is_finite() {
                return Err(Error::NonFinite { band: b, pixel: p });
            }
        }
    }
    Ok(())
}

/// Binary per-pixel decision map. `true` means the change hypothesis is
/// accepted at that pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeMask {
    grid: Grid,
    data: Vec<bool>,
}

impl ChangeMask {
    pub fn zeros(grid: Grid) -> Self {
        ChangeMask {
            grid,
            data: vec![false; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(format!(
                "mask of {} pixels on grid {grid}",
                data.len()
            )));
        }
        Ok(ChangeMask { grid, data })
    }

    /// Builds a mask from 0/1 values; anything else is rejected.
    pub fn from_binary(grid: Grid, values: &[u8]) -> Result<Self> {
        let data = values
            .iter()
            .enumerate()
            .map(|(p, &v)| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidMask(format!("value {other} at pixel {p}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        ChangeMask::from_vec(grid, data)
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn get(&self, p: usize) -> bool {
        self.data[p]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.data[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, p: usize, value: bool) {
        self.data[p] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Per-pixel nonnegative change statistic prior to thresholding, together
/// with the spectral dimension used to compute it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeEnergyMap {
    grid: Grid,
    data: Vec<f64>,
    dof: usize,
}

impl ChangeEnergyMap {
    pub fn new(grid: Grid, data: Vec<f64>, dof: usize) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(format!(
                "energy map of {} pixels on grid {grid}",
                data.len()
            )));
        }
        if dof == 0 {
            return Err(Error::InvalidParameter("energy map dof must be positive".into()));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numerical(format!(
                "energy {} at pixel {p} is negative or non-finite",
                data[p]
            )));
        }
        Ok(ChangeEnergyMap { grid, data, dof })
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn dof(&self) -> usize {
        self.dof
    }

    #[inline]
    pub fn get(&self, p: usize) -> f64 {
        self.data[p]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Index of the largest energy (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (p, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = p;
            }
        }
        best
    }

    /// Single-band cube view, used when writing energies to disk.
    pub fn to_cube(&self) -> ImageCube {
        ImageCube::from_parts(DMatrix::from_row_slice(1, self.data.len(), &self.data), self.grid)
    }
}
