//! Independent oracles shared by the integration tests. Nothing here calls
//! into the operator implementations it is used to check.

#![allow(dead_code)]

use mrcd_core::operators::Kernel;
use mrcd_core::{Grid, ImageCube};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_cube(bands: usize, grid: Grid, rng: &mut ChaCha8Rng) -> ImageCube {
    ImageCube::from_fn(bands, grid, |_, _, _| StandardNormal.sample(rng)).unwrap()
}

pub fn positive_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| 0.5 + rng.random::<f64>()).collect()
}

pub fn row_stochastic(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>());
    for i in 0..rows {
        let s = m.row(i).sum();
        m.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// Dense `n × n` matrix `B` with `(X B)[·, q] = Σ_p X[·, p] B[p, q]` equal to
/// the circular convolution `out[i,j] = Σ k[a,b] x[i−a+c, j−b+c]`.
pub fn dense_blur(kernel: &Kernel, grid: Grid) -> DMatrix<f64> {
    let (rows, cols) = (grid.rows as isize, grid.cols as isize);
    let size = kernel.size() as isize;
    let c = size / 2;
    let n = grid.len();
    let mut b = DMatrix::zeros(n, n);
    for oi in 0..rows {
        for oj in 0..cols {
            for a in 0..size {
                for bb in 0..size {
                    let si = (oi - a + c).rem_euclid(rows);
                    let sj = (oj - bb + c).rem_euclid(cols);
                    let src = (si * cols + sj) as usize;
                    let dst = (oi * cols + oj) as usize;
                    b[(src, dst)] += kernel.weight(a as usize, bb as usize);
                }
            }
        }
    }
    b
}

/// Dense `n × m` selection matrix keeping pixel `(i·dr, j·dc)`.
pub fn dense_decimation(grid: Grid, dr: usize, dc: usize) -> DMatrix<f64> {
    let (lr_rows, lr_cols) = (grid.rows / dr, grid.cols / dc);
    let mut s = DMatrix::zeros(grid.len(), lr_rows * lr_cols);
    for i in 0..lr_rows {
        for j in 0..lr_cols {
            s[((i * dr) * grid.cols + j * dc, i * lr_cols + j)] = 1.0;
        }
    }
    s
}

fn vec_cm(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Closed-form minimizer of the weighted MAP objective via dense normal
/// equations on `vec(X)` (column-major).
pub struct DenseFusion {
    pub l: DMatrix<f64>,
    pub bs: DMatrix<f64>,
    pub var_hr: Vec<f64>,
    pub var_lr: Vec<f64>,
    pub lambda: f64,
}

impl DenseFusion {
    /// Jacobians of `vec(L X)` and `vec(X B S)` with respect to `vec(X)`.
    fn jacobians(&self, bands: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.bs.nrows();
        let m = self.bs.ncols();
        let out = self.l.nrows();
        let mut j_hr = DMatrix::zeros(out * n, bands * n);
        for p in 0..n {
            for o in 0..out {
                for b in 0..bands {
                    j_hr[(o + out * p, b + bands * p)] = self.l[(o, b)];
                }
            }
        }
        let mut j_lr = DMatrix::zeros(bands * m, bands * n);
        for q in 0..m {
            for p in 0..n {
                let w = self.bs[(p, q)];
                if w != 0.0 {
                    for b in 0..bands {
                        j_lr[(b + bands * q, b + bands * p)] = w;
                    }
                }
            }
        }
        (j_hr, j_lr)
    }

    pub fn solve(&self, y_hr: &DMatrix<f64>, y_lr: &DMatrix<f64>, prior: &DMatrix<f64>) -> DMatrix<f64> {
        let bands = self.l.ncols();
        let n = self.bs.nrows();
        let (j_hr, j_lr) = self.jacobians(bands);
        let w_hr = DVector::from_fn(j_hr.nrows(), |r, _| 1.0 / self.var_hr[r % self.l.nrows()]);
        let w_lr = DVector::from_fn(j_lr.nrows(), |r, _| 1.0 / self.var_lr[r % bands]);
        let wj_hr = DMatrix::from_diagonal(&w_hr) * &j_hr;
        let wj_lr = DMatrix::from_diagonal(&w_lr) * &j_lr;
        let h = j_hr.transpose() * &wj_hr
            + j_lr.transpose() * &wj_lr
            + self.lambda * DMatrix::identity(bands * n, bands * n);
        let rhs = wj_hr.transpose() * vec_cm(y_hr) + wj_lr.transpose() * vec_cm(y_lr) + self.lambda * vec_cm(prior);
        let sol = h.lu().solve(&rhs).expect("dense normal equations are singular");
        DMatrix::from_column_slice(bands, n, sol.as_slice())
    }

    /// Objective by explicit scalar loops.
    pub fn objective(&self, x: &DMatrix<f64>, y_hr: &DMatrix<f64>, y_lr: &DMatrix<f64>, prior: &DMatrix<f64>) -> f64 {
        let (bands, n) = x.shape();
        let m = self.bs.ncols();
        let mut total = 0.0;
        for o in 0..self.l.nrows() {
            for p in 0..n {
                let mut pred = 0.0;
                for b in 0..bands {
                    pred += self.l[(o, b)] * x[(b, p)];
                }
                total += 0.5 * (y_hr[(o, p)] - pred).powi(2) / self.var_hr[o];
            }
        }
        for b in 0..bands {
            for q in 0..m {
                let mut pred = 0.0;
                for p in 0..n {
                    pred += x[(b, p)] * self.bs[(p, q)];
                }
                total += 0.5 * (y_lr[(b, q)] - pred).powi(2) / self.var_lr[b];
            }
        }
        for b in 0..bands {
            for p in 0..n {
                total += 0.5 * self.lambda * (x[(b, p)] - prior[(b, p)]).powi(2);
            }
        }
        total
    }
}

/// Minimizes `‖x − M a‖²` subject to `a ≥ 0`, `Σa = 1` by trying every
/// support set and keeping the best feasible equality-constrained solution.
pub fn fcls_by_enumeration(m: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let k = m.ncols();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let s = support.len();
        let ms = DMatrix::from_fn(m.nrows(), s, |i, j| m[(i, support[j])]);
        // KKT system of min ‖x − Ms a‖² s.t. 1ᵀa = 1
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        kkt.view_mut((0, 0), (s, s)).copy_from(&(ms.transpose() * &ms));
        for j in 0..s {
            kkt[(j, s)] = 1.0;
            kkt[(s, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(s + 1);
        rhs.rows_mut(0, s).copy_from(&(ms.transpose() * x));
        rhs[s] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if (0..s).any(|j| sol[j] < -1e-12) {
            continue;
        }
        let mut a = DVector::zeros(k);
        for (j, &idx) in support.iter().enumerate() {
            a[idx] = sol[j].max(0.0);
        }
        let cost = (x - m * &a).norm_squared();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, a));
        }
    }
    best.expect("no feasible support").1
}

/// Empirical ROC area by brute force over every threshold (ties counted as
/// one half), used to check the sweep implementation.
pub fn auc_by_pairs(scores: &[f64], truth: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !truth[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if truth[j] {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}
