mod common;

use common::{dense_blur, dense_decimation, gaussian_cube, positive_vec, rng, row_stochastic, DenseFusion};
use mrcd_core::fusion::{fuse, FusionConfig, FusionProblem, DEFAULT_LAMBDA};
use mrcd_core::operators::{DegradationModel, SpatialDegradation, SpectralResponse};
use mrcd_core::{Grid, ImageCube};
use nalgebra::DMatrix;
use rand::Rng;

struct Instance {
    model: DegradationModel,
    y_hr: ImageCube,
    y_lr: ImageCube,
    prior: ImageCube,
    dense: DenseFusion,
}

fn instance(seed: u64, bands: usize, out_bands: usize, side: usize, factor: usize, lambda: f64) -> Instance {
    let mut r = rng(seed);
    let grid = Grid::new(side, side).unwrap();
    let response = SpectralResponse::new(row_stochastic(out_bands, bands, &mut r)).unwrap();
    let spatial = SpatialDegradation::gaussian(3, 0.5 + r.random::<f64>(), factor).unwrap();
    let var_hr = positive_vec(out_bands, &mut r);
    let var_lr = positive_vec(bands, &mut r);
    let lr = spatial.lr_grid(grid).unwrap();
    let y_hr = gaussian_cube(out_bands, grid, &mut r);
    let y_lr = gaussian_cube(bands, lr, &mut r);
    let prior = gaussian_cube(bands, grid, &mut r);
    let dense = DenseFusion {
        l: response.matrix().clone(),
        bs: dense_blur(spatial.kernel(), grid) * dense_decimation(grid, factor, factor),
        var_hr: var_hr.clone(),
        var_lr: var_lr.clone(),
        lambda,
    };
    let model = DegradationModel::new(response, spatial, var_hr, var_lr).unwrap();
    Instance {
        model,
        y_hr,
        y_lr,
        prior,
        dense,
    }
}

fn problem(inst: &Instance, lambda: f64) -> FusionProblem {
    FusionProblem::new(
        inst.y_hr.clone(),
        inst.y_lr.clone(),
        &inst.model,
        lambda,
        Some(inst.prior.clone()),
    )
    .unwrap()
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn objective_matches_scalar_loops() {
    let inst = instance(1, 3, 2, 6, 2, 0.3);
    let p = problem(&inst, 0.3);
    let mut r = rng(2);
    let x = gaussian_cube(3, inst.y_hr.grid(), &mut r);
    let got = p.objective(&x).unwrap();
    let want = inst
        .dense
        .objective(x.data(), inst.y_hr.data(), inst.y_lr.data(), inst.prior.data());
    assert!((got - want).abs() <= 1e-12 * want.abs(), "{got} vs {want}");
}

#[test]
fn tiny_instance_matches_dense_solution() {
    let inst = instance(3, 2, 1, 4, 2, DEFAULT_LAMBDA);
    let p = problem(&inst, DEFAULT_LAMBDA);
    let cfg = FusionConfig {
        max_iter: 2000,
        tol: 1e-12,
    };
    let res = fuse(&p, &cfg).unwrap();
    let dense = inst
        .dense
        .solve(inst.y_hr.data(), inst.y_lr.data(), inst.prior.data());
    let err = rel_err(res.x_hat.data(), &dense);
    assert!(err < 1e-6, "relative error {err}");
    for w in res.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn gradient_vanishes_at_dense_minimizer() {
    let inst = instance(4, 2, 1, 4, 2, DEFAULT_LAMBDA);
    let p = problem(&inst, DEFAULT_LAMBDA);
    let dense = inst
        .dense
        .solve(inst.y_hr.data(), inst.y_lr.data(), inst.prior.data());
    let x = ImageCube::new(dense, inst.y_hr.grid()).unwrap();
    let g = p.gradient(&x).unwrap();
    assert!(g.data().norm() < 1e-8, "gradient norm {}", g.data().norm());
}

#[test]
fn gradient_matches_central_differences() {
    let inst = instance(5, 4, 2, 8, 2, 0.7);
    let p = problem(&inst, 0.7);
    let mut r = rng(6);
    let x = gaussian_cube(4, inst.y_hr.grid(), &mut r);
    let g = p.gradient(&x).unwrap();
    let eps = 1e-6;
    for _ in 0..20 {
        let d = gaussian_cube(4, inst.y_hr.grid(), &mut r);
        let plus = ImageCube::new(x.data() + eps * d.data(), x.grid()).unwrap();
        let minus = ImageCube::new(x.data() - eps * d.data(), x.grid()).unwrap();
        let fd = (p.objective(&plus).unwrap() - p.objective(&minus).unwrap()) / (2.0 * eps);
        let an = g.data().dot(d.data());
        assert!((fd - an).abs() <= 1e-5 * an.abs(), "fd {fd} vs analytic {an}");
    }
}

#[test]
fn larger_instances_match_dense_oracle() {
    for (seed, bands, out) in [(7, 4, 1), (8, 4, 2), (9, 3, 2)] {
        let inst = instance(seed, bands, out, 8, 2, DEFAULT_LAMBDA);
        let p = problem(&inst, DEFAULT_LAMBDA);
        let res = fuse(&p, &FusionConfig { max_iter: 5000, tol: 1e-12 }).unwrap();
        let dense = inst
            .dense
            .solve(inst.y_hr.data(), inst.y_lr.data(), inst.prior.data());
        let err = rel_err(res.x_hat.data(), &dense);
        assert!(err < 1e-6, "seed {seed}: relative error {err} after {} iterations", res.iterations);
    }
}
