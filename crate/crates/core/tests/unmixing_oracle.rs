mod common;

use common::{fcls_by_enumeration, rng};
use mrcd_core::unmix::{estimate_k, fcls, unmix, vca, Fcls};
use mrcd_core::{Grid, ImageCube};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_endmembers(bands: usize, k: usize, r: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(bands, k, |_, _| 0.05 + r.random::<f64>())
}

fn check_constraints(a: &DVector<f64>) {
    assert!(a.iter().all(|&v| v >= -1e-9), "negative abundance {a}");
    assert!((a.sum() - 1.0).abs() < 1e-9, "sum {}", a.sum());
}

/// Pixels drawn both inside and outside the simplex so that every support
/// size gets exercised.
#[test]
fn active_set_matches_support_enumeration() {
    let mut r = rng(2024);
    let mut checked = 0;
    for trial in 0..50 {
        let k = 1 + trial % 4;
        let bands = k + 1 + r.random_range(0..6);
        let m = random_endmembers(bands, k, &mut r);
        let solver = Fcls::new(&m).unwrap();
        for _ in 0..4 {
            let x = DVector::from_fn(bands, |_, _| r.random::<f64>() * 1.5 - 0.2);
            let got = solver.solve(&x);
            let want = fcls_by_enumeration(&m, &x);
            check_constraints(&got);
            assert!((&got - &want).amax() < 1e-6, "k={k}\n{got}\nvs\n{want}");
            checked += 1;
        }
    }
    assert_eq!(checked, 200);
}

#[test]
fn exact_mixtures_are_recovered() {
    let mut r = rng(7);
    let m = random_endmembers(12, 4, &mut r);
    let grid = Grid::new(5, 6).unwrap();
    let mut a = DMatrix::from_fn(4, grid.len(), |_, _| r.random::<f64>());
    for mut c in a.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    let x = ImageCube::new(&m * &a, grid).unwrap();
    let est = fcls(&x, &m).unwrap();
    assert!((est - a).amax() < 1e-8);
}

#[test]
fn vca_finds_pure_pixels() {
    let mut r = rng(8);
    let m = random_endmembers(20, 4, &mut r);
    let grid = Grid::new(10, 10).unwrap();
    let pure = [3usize, 41, 77, 90];
    let mut a = DMatrix::from_fn(4, grid.len(), |_, _| 0.1 + r.random::<f64>());
    for mut c in a.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    for (e, &p) in pure.iter().enumerate() {
        a.set_column(p, &DVector::from_fn(4, |i, _| if i == e { 1.0 } else { 0.0 }));
    }
    let x = ImageCube::new(&m * &a, grid).unwrap();
    assert_eq!(estimate_k(&x, 0.999).unwrap(), 4);
    let (mut idx, _) = vca(&x, 4, 1).unwrap();
    idx.sort();
    assert_eq!(idx, pure.to_vec());
    let res = unmix(&x, None, 1).unwrap();
    let back = &res.endmembers * &res.abundances;
    assert!((back - x.data()).amax() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn fcls_is_permutation_equivariant(seed in any::<u64>(), k in 2usize..5) {
        let mut r = rng(seed);
        let m = random_endmembers(k + 3, k, &mut r);
        let x = DVector::from_fn(k + 3, |_, _| r.random::<f64>());
        let mut perm: Vec<usize> = (0..k).collect();
        perm.rotate_left(1 + seed as usize % (k - 1));
        let mp = DMatrix::from_fn(k + 3, k, |i, j| m[(i, perm[j])]);
        let a = Fcls::new(&m).unwrap().solve(&x);
        let ap = Fcls::new(&mp).unwrap().solve(&x);
        for j in 0..k {
            prop_assert!((ap[j] - a[perm[j]]).abs() < 1e-8);
        }
    }
}
