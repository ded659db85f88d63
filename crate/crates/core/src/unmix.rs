//! Linear spectral unmixing `X ≈ M A` with nonnegative, sum-to-one
//! abundances: subspace-dimension estimation, vertex component analysis for
//! the endmembers and fully constrained least squares for the abundances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImageCube;

pub const DEFAULT_ENERGY_FRACTION: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct UnmixResult {
    /// `(bands × K)` endmember signatures.
    pub endmembers: DMatrix<f64>,
    /// `(K × pixels)` abundances, each column on the probability simplex.
    pub abundances: DMatrix<f64>,
}

impl UnmixResult {
    pub fn k(&self) -> usize {
        self.endmembers.ncols()
    }
}

/// Smallest `K` such that the best rank-`K` subspace of the data leaves a
/// residual of at most `1 − energy_fraction` of the centered variance.
///
/// A scene built from `K` affinely independent endmembers is exactly rank
/// `K`, so `K` is recovered in the noiseless case.
pub fn estimate_k(x: &ImageCube, energy_fraction: f64) -> Result<usize> {
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "energy fraction {energy_fraction} must lie in (0, 1]"
        )));
    }
    let (bands, n) = (x.bands(), x.pixels());
    if n <= bands {
        return Err(Error::Degenerate(format!(
            "{n} pixels are too few for {bands} bands"
        )));
    }
    let data = x.data();
    let mean = data.column_mean();
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let variance = centered.norm_squared();
    let scale = data.norm_squared();
    if variance <= 1e-24 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("cube has zero spectral variance".into()));
    }
    let eig = SymmetricEigen::new(data * data.transpose());
    let mut values: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let allowed = (1.0 - energy_fraction) * variance;
    let mut residual: f64 = values.iter().sum();
    for (k, v) in values.iter().enumerate() {
        residual -= v;
        if residual <= allowed {
            return Ok(k + 1);
        }
    }
    Ok(bands)
}

/// Vertex component analysis.
///
/// Pixels are projected onto the leading `K`-dimensional subspace of the
/// (uncentered) data. The first endmember is the pixel of largest projected
/// norm; each following one maximizes `|fᵀy|` for a seeded random direction
/// `f` orthogonal to the endmembers already selected. Returns the selected
/// pixel indices and the `(bands × K)` endmember matrix.
pub fn vca(x: &ImageCube, k: usize, seed: u64) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let (bands, n) = (x.bands(), x.pixels());
    if k == 0 || k > bands.min(n) {
        return Err(Error::InvalidParameter(format!(
            "cannot extract {k} endmembers from {bands} bands and {n} pixels"
        )));
    }
    let data = x.data();
    let eig = SymmetricEigen::new(data * data.transpose() / n as f64);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = DMatrix::from_fn(bands, k, |i, j| eig.eigenvectors[(i, order[j])]);
    let projected = basis.transpose() * data;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let first = (0..n)
        .max_by(|&a, &b| {
            projected
                .column(a)
                .norm_squared()
                .total_cmp(&projected.column(b).norm_squared())
        })
        .expect("non-empty image");
    selected.push(first);
    while selected.len() < k {
        let chosen = DMatrix::from_fn(k, selected.len(), |i, j| projected[(i, selected[j])]);
        let w = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        // f = (I − E E⁺) w
        let pinv = chosen
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(format!("VCA pseudo-inverse: {e}")))?;
        let f = &w - &chosen * (pinv * &w);
        let scores = projected.transpose() * f;
        let idx = (0..n)
            .max_by(|&a, &b| scores[a].abs().total_cmp(&scores[b].abs()))
            .expect("non-empty image");
        selected.push(idx);
    }
    let endmembers = DMatrix::from_fn(bands, k, |i, j| data[(i, selected[j])]);
    Ok((selected, endmembers))
}

/// Fully constrained least squares: for every pixel,
/// `argmin ‖x − M a‖²` subject to `a ≥ 0`, `Σa = 1`.
pub fn fcls(x: &ImageCube, endmembers: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if endmembers.nrows() != x.bands() {
        return Err(Error::Shape(format!(
            "endmembers have {} bands, image has {}",
            endmembers.nrows(),
            x.bands()
        )));
    }
    let solver = Fcls::new(endmembers)?;
    let columns: Vec<DVector<f64>> = (0..x.pixels())
        .into_par_iter()
        .map(|p| solver.solve(&x.data().column(p).into_owned()))
        .collect();
    Ok(DMatrix::from_columns(&columns))
}

/// Per-pixel active-set solver sharing `MᵀM` across pixels.
pub struct Fcls {
    m: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl Fcls {
    pub fn new(endmembers: &DMatrix<f64>) -> Result<Self> {
        let k = endmembers.ncols();
        if k == 0 {
            return Err(Error::InvalidParameter("no endmembers".into()));
        }
        let sv = endmembers.clone().svd(false, false).singular_values;
        let (max, min) = (sv.max(), sv.min());
        if k > endmembers.nrows() || !(min > 1e-10 * max) {
            return Err(Error::Degenerate(format!(
                "endmember matrix is rank deficient (singular values in [{min:.3e}, {max:.3e}])"
            )));
        }
        Ok(Fcls {
            m: endmembers.clone(),
            gram: endmembers.transpose() * endmembers,
        })
    }

    /// Primal active-set method on the bound constraints with the
    /// sum-to-one equality kept in every subproblem.
    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        let k = self.m.ncols();
        let c = self.m.transpose() * x;
        let mut a = DVector::from_element(k, 1.0 / k as f64);
        // `active[j]` means a_j is pinned at zero
        let mut active = vec![false; k];
        let scale = self.gram.diagonal().max().max(1.0);
        let tol = 1e-13 * scale;
        for _ in 0..(10 * k + 20) {
            let g = &self.gram * &a - &c;
            let free: Vec<usize> = (0..k).filter(|&j| !active[j]).collect();
            let (step, nu) = self.equality_step(&free, &g);
            if step.amax() <= 1e-12 {
                // multipliers of the active bounds: μ_j = g_j − ν
                let worst = (0..k)
                    .filter(|&j| active[j])
                    .map(|j| (j, g[j] - nu))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                match worst {
                    Some((j, mu)) if mu < -tol => active[j] = false,
                    _ => break,
                }
            } else {
                let mut alpha = 1.0;
                let mut blocking = None;
                for (idx, &j) in free.iter().enumerate() {
                    let s = step[idx];
                    if s < 0.0 {
                        let t = -a[j] / s;
                        if t < alpha {
                            alpha = t;
                            blocking = Some(j);
                        }
                    }
                }
                for (idx, &j) in free.iter().enumerate() {
                    a[j] += alpha * step[idx];
                }
                if let Some(j) = blocking {
                    a[j] = 0.0;
                    active[j] = true;
                }
            }
        }
        for v in a.iter_mut() {
            *v = v.max(0.0);
        }
        let s = a.sum();
        a / s
    }

    /// Solves `[G_FF −1; −1ᵀ 0] [p; ν] = [−g_F; 0]`.
    fn equality_step(&self, free: &[usize], g: &DVector<f64>) -> (DVector<f64>, f64) {
        let f = free.len();
        let mut kkt = DMatrix::zeros(f + 1, f + 1);
        let mut rhs = DVector::zeros(f + 1);
        for (r, &i) in free.iter().enumerate() {
            for (s, &j) in free.iter().enumerate() {
                kkt[(r, s)] = self.gram[(i, j)];
            }
            kkt[(r, f)] = -1.0;
            kkt[(f, r)] = -1.0;
            rhs[r] = -g[i];
        }
        let sol = kkt
            .lu()
            .solve(&rhs)
            .expect("KKT matrix of a full-rank endmember set is nonsingular");
        (sol.rows(0, f).into_owned(), sol[f])
    }
}

/// `X = M A` on the given image grid.
pub fn reconstruct(endmembers: &DMatrix<f64>, abundances: &DMatrix<f64>, grid: crate::image::Grid) -> Result<ImageCube> {
    if endmembers.ncols() != abundances.nrows() {
        return Err(Error::Shape(format!(
            "{} endmembers but {} abundance rows",
            endmembers.ncols(),
            abundances.nrows()
        )));
    }
    ImageCube::new(endmembers * abundances, grid)
}

/// VCA followed by FCLS. `k = None` estimates the subspace dimension.
pub fn unmix(x: &ImageCube, k: Option<usize>, seed: u64) -> Result<UnmixResult> {
    let k = match k {
        Some(k) => k,
        None => estimate_k(x, DEFAULT_ENERGY_FRACTION)?,
    };
    let (_, endmembers) = vca(x, k, seed)?;
    let abundances = fcls(x, &endmembers)?;
    Ok(UnmixResult {
        endmembers,
        abundances,
    })
}
