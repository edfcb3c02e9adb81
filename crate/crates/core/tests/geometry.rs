mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tara_calib::hyperbolic::{metric_grad, metric_loss, poincare_distance, project_to_ball};
use tara_calib::matrix::norm;
use tara_calib::{AnchorSet, DistanceKind, Matrix};

fn interior_point(rng: &mut ChaCha8Rng, d: usize, max_norm: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| common::gauss(rng, 1.0)).collect();
    let n = norm(&dir);
    let r = rng.random_range(0.0..max_norm);
    dir.iter().map(|x| x / n * r).collect()
}

#[test]
fn half_point_from_origin() {
    let d = poincare_distance(&[0.0, 0.0], &[0.5, 0.0]).unwrap();
    assert!((d - (5.0f64 / 3.0).acosh()).abs() < 1e-9);
}

#[test]
fn distance_from_origin_is_twice_artanh() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let d = rng.random_range(1..=10);
        let v = interior_point(&mut rng, d, 0.99);
        let got = poincare_distance(&vec![0.0; d], &v).unwrap();
        assert!((got - 2.0 * norm(&v).atanh()).abs() < 1e-9, "{got} at |v| = {}", norm(&v));
    }
}

#[test]
fn boundary_points_are_rejected() {
    assert!(poincare_distance(&[1.0, 0.0], &[0.0, 0.0]).is_err());
    assert!(poincare_distance(&[0.0], &[0.0, 0.0]).is_err());
}

#[test]
fn single_anchor_loss_is_zero() {
    let anchors = AnchorSet::new(Matrix::from_rows(&[vec![0.3, -0.1]]).unwrap(), 1e-5).unwrap();
    for kind in [DistanceKind::Hyperbolic, DistanceKind::Euclidean] {
        for h in [[0.0, 0.0], [0.9, 0.2], [3.0, -4.0]] {
            let g = metric_grad(&anchors, &h, 0, kind).unwrap();
            assert_eq!(g.loss, 0.0);
            assert!(g.grad_h.iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn loss_prefers_the_right_anchor() {
    let anchors = AnchorSet::new(Matrix::from_rows(&[vec![0.5, 0.0], vec![-0.5, 0.0]]).unwrap(), 1e-5).unwrap();
    let h = [0.45, 0.05];
    let near = metric_loss(&anchors, &h, 0, DistanceKind::Hyperbolic).unwrap();
    let far = metric_loss(&anchors, &h, 1, DistanceKind::Hyperbolic).unwrap();
    assert!(near < far);
}

proptest! {
    #[test]
    fn distance_is_symmetric_and_zero_on_diagonal(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = interior_point(&mut rng, d, 0.95);
        let v = interior_point(&mut rng, d, 0.95);
        let uv = poincare_distance(&u, &v).unwrap();
        let vu = poincare_distance(&v, &u).unwrap();
        prop_assert!((uv - vu).abs() <= 1e-12 * uv.max(1.0));
        prop_assert!(uv >= 0.0);
        prop_assert_eq!(poincare_distance(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn triangle_inequality(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<Vec<f64>> = (0..3).map(|_| interior_point(&mut rng, d, 0.9)).collect();
        let ab = poincare_distance(&p[0], &p[1]).unwrap();
        let bc = poincare_distance(&p[1], &p[2]).unwrap();
        let ac = poincare_distance(&p[0], &p[2]).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn projection_lands_inside(v in prop::collection::vec(-50.0f64..50.0, 1..8), eps in 1e-6f64..0.5) {
        let p = project_to_ball(&v, eps);
        prop_assert!(norm(&p) <= 1.0 - eps + 1e-12);
        if norm(&v) <= 1.0 - eps {
            prop_assert_eq!(p, v);
        }
    }

    #[test]
    fn retraction_never_increases_norms(
        rows in prop::collection::vec(prop::collection::vec(-0.7f64..0.7, 3), 1..4),
        eps in 1e-5f64..0.6,
    ) {
        let m = Matrix::from_rows(&rows).unwrap();
        let set = AnchorSet::new(m.clone(), 0.0);
        prop_assume!(set.is_ok());
        let retracted = set.unwrap().with_eps_ball(eps).unwrap();
        for (before, after) in m.iter_rows().zip(retracted.anchors().iter_rows()) {
            prop_assert!(norm(after) <= norm(before) + 1e-15);
            prop_assert!(norm(after) <= 1.0 - eps + 1e-12);
        }
    }
}
