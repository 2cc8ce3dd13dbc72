use localw2::transport::{optimal_coupling, w2sq_1d_sorted, w2sq_assignment, w2sq_bruteforce};
use localw2::PointCloud;
use proptest::prelude::*;

fn cloud(n: usize, d: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| PointCloud::new(v, d).unwrap())
}

fn pair(max_n: usize, max_d: usize) -> impl Strategy<Value = (PointCloud, PointCloud)> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| (cloud(n, d), cloud(n, d)))
}

fn triple(max_n: usize) -> impl Strategy<Value = (PointCloud, PointCloud, PointCloud)> {
    (1..=max_n, 1..=3usize).prop_flat_map(|(n, d)| (cloud(n, d), cloud(n, d), cloud(n, d)))
}

fn w2(a: &PointCloud, b: &PointCloud) -> f64 {
    w2sq_assignment(a, b).unwrap().cost.sqrt()
}

proptest! {
    #[test]
    fn assignment_matches_bruteforce((a, b) in pair(6, 4)) {
        let lap = w2sq_assignment(&a, &b).unwrap().cost;
        prop_assert!((lap - w2sq_bruteforce(&a, &b).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn sorted_matches_assignment_in_1d((a, b) in pair(30, 1)) {
        let lap = w2sq_assignment(&a, &b).unwrap().cost;
        prop_assert!((lap - w2sq_1d_sorted(&a, &b).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn coupling_is_a_permutation((a, b) in pair(20, 3)) {
        let plan = optimal_coupling(&a, &b).unwrap();
        let mut seen = plan.assignment.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..a.len()).collect::<Vec<_>>());
    }

    #[test]
    fn symmetric((a, b) in pair(15, 3)) {
        prop_assert!((w2(&a, &b) - w2(&b, &a)).abs() <= 1e-9);
    }

    #[test]
    fn identity_of_indiscernibles((a, _) in pair(15, 3)) {
        prop_assert!(w2sq_assignment(&a, &a).unwrap().cost.abs() <= 1e-12);
    }

    #[test]
    fn triangle_inequality((a, b, c) in triple(10)) {
        prop_assert!(w2(&a, &c) <= w2(&a, &b) + w2(&b, &c) + 1e-9);
    }

    #[test]
    fn translation_invariant((a, b) in pair(15, 3), t in -10.0f64..10.0) {
        let shifted = w2sq_assignment(&a.map(|v| v + t).unwrap(), &b.map(|v| v + t).unwrap()).unwrap().cost;
        prop_assert!((shifted - w2sq_assignment(&a, &b).unwrap().cost).abs() <= 1e-8);
    }

    #[test]
    fn scales_quadratically((a, b) in pair(15, 3), s in 0.1f64..5.0) {
        let scaled = w2sq_assignment(&a.map(|v| s * v).unwrap(), &b.map(|v| s * v).unwrap()).unwrap().cost;
        let base = w2sq_assignment(&a, &b).unwrap().cost;
        prop_assert!((scaled - s * s * base).abs() <= 1e-8 * (1.0 + scaled));
    }

    #[test]
    fn shift_of_one_cloud_adds_squared_norm((a, _) in pair(15, 1), t in -3.0f64..3.0) {
        let moved = w2sq_assignment(&a, &a.map(|v| v + t).unwrap()).unwrap().cost;
        prop_assert!((moved - t * t).abs() <= 1e-9);
    }
}

#[test]
fn mismatched_sizes_are_rejected() {
    let a = PointCloud::scalars(&[1.0, 2.0]).unwrap();
    let b = PointCloud::scalars(&[1.0]).unwrap();
    assert!(w2sq_assignment(&a, &b).is_err());
    assert!(w2sq_1d_sorted(&a, &b).is_err());
}

#[test]
fn two_point_hand_value() {
    let a = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
    let b = PointCloud::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
    assert!((w2sq_assignment(&a, &b).unwrap().cost - 1.0).abs() < 1e-12);
}
