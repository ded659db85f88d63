mod common;

use common::{auc_by_pairs, rng};
use mrcd_core::evaluate::{average_curves, roc, RocCurve};
use mrcd_core::{ChangeEnergyMap, ChangeMask, Grid};
use proptest::prelude::*;
use rand::Rng;

fn curve(scores: &[f64], truth: &[bool]) -> RocCurve {
    let g = Grid::new(1, scores.len()).unwrap();
    let v = ChangeEnergyMap::new(g, scores.to_vec(), 1).unwrap();
    roc(&v, &ChangeMask::from_vec(g, truth.to_vec()).unwrap()).unwrap()
}

/// The crossing `(x, 1 - x)` sits at distance `(1 - x)√2` from `(1, 0)`;
/// `x` is found by bisection on the increasing `pd(x) + x - 1`.
fn norm_dist_by_bisection(c: &RocCurve) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if c.pd_at(mid) + mid - 1.0 >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    1.0 - hi
}

fn scores_and_truth(r: &mut impl Rng, n: usize, levels: u32, shift: f64) -> (Vec<f64>, Vec<bool>) {
    let mut truth: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.4).collect();
    truth[0] = true;
    truth[1] = false;
    let scores = truth
        .iter()
        .map(|&t| (r.random_range(0..levels) as f64) + if t { shift } else { 0.0 })
        .collect();
    (scores, truth)
}

#[test]
fn random_scores_give_chance_level_area() {
    let mut r = rng(1);
    let n = 100_000;
    let scores: Vec<f64> = (0..n).map(|_| r.random()).collect();
    let truth: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.3).collect();
    let c = curve(&scores, &truth);
    assert!((c.auc() - 0.5).abs() < 0.01, "{}", c.auc());
    assert!((c.norm_dist() - 0.5).abs() < 0.01, "{}", c.norm_dist());
}

#[test]
fn perfect_and_inverted_scores() {
    let truth = [false, false, true, true, true];
    let good = curve(&[0.0, 1.0, 2.0, 3.0, 4.0], &truth);
    assert_eq!(good.auc(), 1.0);
    assert!((good.norm_dist() - 1.0).abs() < 1e-15);
    let bad = curve(&[4.0, 3.0, 2.0, 1.0, 0.0], &truth);
    assert_eq!(bad.auc(), 0.0);
    assert!(bad.norm_dist().abs() < 1e-15);
    let flat = curve(&[1.0; 5], &truth);
    assert_eq!(flat.points(), &[(0.0, 0.0), (1.0, 1.0)]);
    assert_eq!(flat.auc(), 0.5);
}

#[test]
fn averaged_curve_lies_between_its_members() {
    let mut r = rng(2);
    let curves: Vec<RocCurve> = (0..8)
        .map(|k| {
            let (s, t) = scores_and_truth(&mut r, 300, 20, k as f64);
            curve(&s, &t)
        })
        .collect();
    let avg = average_curves(&curves, 257).unwrap();
    for &(x, y) in &avg.points()[1..avg.points().len() - 1] {
        let pds: Vec<f64> = curves.iter().map(|c| c.pd_at(x)).collect();
        let lo = pds.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(y >= lo - 1e-12 && y <= hi + 1e-12, "pfa {x}: {y} not in [{lo}, {hi}]");
    }
    let mean_auc = curves.iter().map(|c| c.auc()).sum::<f64>() / 8.0;
    assert!((avg.auc() - mean_auc).abs() < 0.01, "{} vs {mean_auc}", avg.auc());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn area_matches_pair_counting(seed in any::<u64>(), n in 2usize..60, levels in 1u32..12, shift in 0.0f64..4.0) {
        let (s, t) = scores_and_truth(&mut rng(seed), n, levels, shift);
        let c = curve(&s, &t);
        prop_assert!((c.auc() - auc_by_pairs(&s, &t)).abs() < 1e-12);
    }

    #[test]
    fn norm_dist_matches_crossing_by_bisection(seed in any::<u64>(), n in 2usize..80, levels in 1u32..12, shift in 0.0f64..4.0) {
        let (s, t) = scores_and_truth(&mut rng(seed), n, levels, shift);
        let c = curve(&s, &t);
        prop_assert!((c.norm_dist() - norm_dist_by_bisection(&c)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&c.norm_dist()));
    }

    #[test]
    fn monotone_transforms_leave_the_curve_unchanged(seed in any::<u64>(), n in 2usize..80, a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let (s, t) = scores_and_truth(&mut rng(seed), n, 15, 1.0);
        let warped: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
        let (plain, mapped) = (curve(&s, &t), curve(&warped, &t));
        prop_assert_eq!(plain.points(), mapped.points());
    }
}
