use localw2::neighborhoods::{build_index, fit_hetero_norm};
use localw2::InputNorm;
use proptest::prelude::*;

fn inputs(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_n, 1..=3usize)
        .prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n))
}

fn weights_for(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..3.0, d)
}

proptest! {
    #[test]
    fn anchor_is_its_own_neighbor(xs in inputs(30), delta in 0.01f64..1.0) {
        let ix = build_index(&xs, &InputNorm::Homogeneous, delta).unwrap();
        for a in 0..ix.num_anchors() {
            prop_assert!(ix.members(a).contains(&a));
        }
    }

    #[test]
    fn membership_is_symmetric(xs in inputs(30), delta in 0.01f64..1.0) {
        let ix = build_index(&xs, &InputNorm::Homogeneous, delta).unwrap();
        for i in 0..xs.len() {
            for &j in ix.members(i) {
                prop_assert!(ix.members(j).contains(&i));
            }
        }
    }

    #[test]
    fn growing_delta_only_adds_members(xs in inputs(30), d1 in 0.01f64..1.0, extra in 0.0f64..1.0) {
        let small = build_index(&xs, &InputNorm::Homogeneous, d1).unwrap();
        let large = build_index(&xs, &InputNorm::Homogeneous, d1 + extra).unwrap();
        for a in 0..xs.len() {
            prop_assert!(small.members(a).iter().all(|j| large.members(a).contains(j)));
        }
    }

    #[test]
    fn members_match_brute_distance(xs in inputs(25), delta in 0.05f64..1.5) {
        let ix = build_index(&xs, &InputNorm::Homogeneous, delta).unwrap();
        for (i, xi) in xs.iter().enumerate() {
            let expect: Vec<usize> = xs
                .iter()
                .enumerate()
                .filter(|(_, xj)| xi.iter().zip(xj.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= delta)
                .map(|(j, _)| j)
                .collect();
            prop_assert_eq!(ix.members(i), &expect[..]);
        }
    }

    #[test]
    fn weighted_norm_rescales_with_weights(
        (xs, w) in inputs(25).prop_flat_map(|xs| { let d = xs[0].len(); (Just(xs), weights_for(d)) }),
        delta in 0.05f64..1.0,
        c in 0.2f64..5.0,
    ) {
        // Scaling every weight by c is the same as shrinking δ by c.
        let base = build_index(&xs, &InputNorm::heterogeneous(w.clone()).unwrap(), delta).unwrap();
        let scaled_w: Vec<f64> = w.iter().map(|v| v * c).collect();
        let scaled = build_index(&xs, &InputNorm::heterogeneous(scaled_w).unwrap(), delta * c).unwrap();
        for a in 0..xs.len() {
            let (p, q) = (base.members(a), scaled.members(a));
            if p != q {
                // tolerate ties on the boundary only
                let norm = InputNorm::heterogeneous(w.clone()).unwrap();
                for j in p.iter().chain(q.iter()) {
                    if !(p.contains(j) && q.contains(j)) {
                        let d = norm.distance(&xs[a], &xs[*j]).unwrap();
                        prop_assert!((d - delta).abs() <= 1e-12 * (1.0 + delta));
                    }
                }
            }
        }
    }
}

#[test]
fn hetero_norm_recovers_linear_slopes() {
    let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, (i / 7) as f64 * 0.5]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 3.0 * x[0] + 0.5 * x[1]).collect();
    match fit_hetero_norm(&xs, &ys).unwrap() {
        InputNorm::Heterogeneous { weights } => {
            assert!((weights[0] + 3.0).abs() < 1e-9 && (weights[1] - 0.5).abs() < 1e-9);
        }
        other => panic!("unexpected norm {other:?}"),
    }
}

#[test]
fn hetero_norm_scales_with_outputs() {
    let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
    let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| 2.0 * x[0] - x[1] + 0.01 * (i as f64).sin()).collect();
    let ys2: Vec<f64> = ys.iter().map(|y| 4.0 * y).collect();
    let a = fit_hetero_norm(&xs, &ys).unwrap();
    let b = fit_hetero_norm(&xs, &ys2).unwrap();
    for i in 0..xs.len() {
        for j in 0..xs.len() {
            let (da, db) = (a.distance(&xs[i], &xs[j]).unwrap(), b.distance(&xs[i], &xs[j]).unwrap());
            assert!((db - 4.0 * da).abs() <= 1e-9 * (1.0 + db));
        }
    }
}

#[test]
fn nonpositive_delta_is_rejected() {
    let xs = vec![vec![0.0], vec![1.0]];
    assert!(build_index(&xs, &InputNorm::Homogeneous, 0.0).is_err());
    assert!(build_index(&xs, &InputNorm::Homogeneous, -1.0).is_err());
}
