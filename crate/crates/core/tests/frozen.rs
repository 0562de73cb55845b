// Expected values below were produced once by the brute-force oracle in
// `common` and frozen, so a change in either side shows up here.

mod common;

use common::*;
use trapsift::metrics::{calibrate_threshold, pr_auc, pr_curve};
use trapsift::EvalSet;

fn fixture() -> EvalSet {
    EvalSet::from_scores(&[0.9, 0.7, 0.7, 0.4, 0.2, 0.2], &[0.8, 0.7, 0.3, 0.2, 0.1, 0.05, 0.0]).unwrap()
}

#[test]
fn oracle_matches_frozen_values() {
    let items = pairs(&fixture());
    let curve = brute_curve(&items);
    let counts: Vec<(u64, u64)> = curve.iter().map(|(_, c)| (c.tp, c.fp)).collect();
    assert_eq!(counts, FROZEN_COUNTS);
    assert!((brute_auc(&curve) - FROZEN_AUC).abs() < 1e-12);
    let (t, c) = brute_calibrate(&items, 0.96);
    assert_eq!((t, c.tp, c.fp), (0.2, 6, 4));
}

#[test]
fn library_matches_frozen_values() {
    let e = fixture();
    let curve = pr_curve(&e).unwrap();
    let counts: Vec<(u64, u64)> = curve.points.iter().map(|p| (p.tp, p.fp)).collect();
    assert_eq!(counts, FROZEN_COUNTS);
    assert!((pr_auc(&e).unwrap() - FROZEN_AUC).abs() < 1e-12);
    let c = calibrate_threshold(&e, 0.96).unwrap();
    assert_eq!((c.threshold, c.point.tp, c.point.fp, c.point.tn), (0.2, 6, 4, 3));
    let c = calibrate_threshold(&e, 0.5).unwrap();
    assert_eq!(c.threshold, 0.7);
}

const FROZEN_COUNTS: [(u64, u64); 10] = [(0, 0), (1, 0), (1, 1), (3, 2), (4, 2), (4, 3), (6, 4), (6, 5), (6, 6), (6, 7)];
const FROZEN_AUC: f64 = 0.6507936507936508;
