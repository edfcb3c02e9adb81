mod common;

use common::{gradient_errors, term_objective, Instance, TERMS};
use tara_calib::objective::loss_all;
use tara_calib::{grad_all, HeadMode, Objective};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn check(term: &str, mode: HeadMode, seeds: std::ops::Range<u64>) {
    let obj = term_objective(term);
    for seed in seeds {
        let inst = Instance::random(seed, mode);
        for (tensor, err) in gradient_errors(&inst, &obj, STEP) {
            assert!(err < TOL, "{term}/{tensor} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn every_term_matches_finite_differences() {
    for term in TERMS {
        check(term, HeadMode::Calibrated, 0..24);
    }
}

#[test]
fn l2_term_matches_finite_differences() {
    check("l2", HeadMode::Calibrated, 100..110);
}

#[test]
fn identity_mode_matches_finite_differences() {
    check("cls", HeadMode::Identity, 200..210);
    check("l2", HeadMode::Identity, 200..210);
}

#[test]
fn weighted_sum_matches_finite_differences() {
    let obj = Objective {
        cls: 0.7,
        metric: 1.3,
        orth: 0.4,
        ratio: 2.0,
        l2: 0.05,
        ..Objective::default()
    };
    for seed in 300..310 {
        let inst = Instance::random(seed, HeadMode::Calibrated);
        for (tensor, err) in gradient_errors(&inst, &obj, STEP) {
            assert!(err < TOL, "{tensor} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn grad_all_loss_agrees_with_loss_all() {
    let obj = Objective {
        metric: 1.0,
        orth: 1.0,
        ratio: 1.0,
        l2: 1e-3,
        ..Objective::default()
    };
    for seed in 0..10 {
        let inst = Instance::random(seed, HeadMode::Calibrated);
        let batch = inst.batch();
        let (a, _) = grad_all(&inst.head, Some(&inst.anchors), &batch, &obj, None).unwrap();
        let b = loss_all(&inst.head, Some(&inst.anchors), &batch, &obj).unwrap();
        assert!((a.total - b.total).abs() <= 1e-12 * b.total.abs().max(1.0));
        assert!((a.cls - b.cls).abs() <= 1e-12 * b.cls.abs().max(1.0));
    }
}
