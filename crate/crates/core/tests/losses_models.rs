use localw2::datasets::{linreg_input_laws, linreg_truth, sample_ground_truth_with_latents, sample_inputs, GroundTruthSpec};
use localw2::losses::{evaluate_loss, global_w2_loss, local_w2_loss};
use localw2::models::{draw_noise, linear_predict, LinearGaussianParams};
use localw2::neighborhoods::{build_index, NeighborhoodIndex};
use localw2::verify::loss_gradient_check;
use localw2::{rng_from_seed, InputNorm, LossKind, PointCloud};
use proptest::prelude::*;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn every_loss_passes_gradient_check() {
    for kind in LossKind::all() {
        let worst = loss_gradient_check(kind, 20, 99).unwrap();
        assert!(worst <= 1e-4, "{kind}: {worst:e}");
    }
}

#[test]
fn local_loss_with_huge_radius_is_global() {
    let mut rng = rng_from_seed(3);
    let xs: Vec<Vec<f64>> = (0..12).map(|_| draw_noise(&mut rng, 2)).collect();
    let t = PointCloud::scalars(&draw_noise(&mut rng, 12)).unwrap();
    let p = PointCloud::scalars(&draw_noise(&mut rng, 12)).unwrap();
    let ix = build_index(&xs, &InputNorm::Homogeneous, 1e6).unwrap();
    let local = local_w2_loss(&t, &p, &ix).unwrap().value;
    let global = global_w2_loss(&t, &p).unwrap().value;
    assert!((local - global).abs() < 1e-12);
    assert_eq!(ix.all_members(), NeighborhoodIndex::whole(12).all_members());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn losses_invariant_under_sample_permutation(seed in 0u64..1000, n in 3usize..14, shift in 0usize..13) {
        let mut rng = rng_from_seed(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| draw_noise(&mut rng, 2)).collect();
        let t = draw_noise(&mut rng, n);
        let p = draw_noise(&mut rng, n);
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assume!(seen == (0..n).collect::<Vec<_>>());
        let px: Vec<Vec<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
        let pt: Vec<f64> = perm.iter().map(|&i| t[i]).collect();
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let ix = build_index(&xs, &InputNorm::Homogeneous, 0.9).unwrap();
        let pix = build_index(&px, &InputNorm::Homogeneous, 0.9).unwrap();
        for kind in LossKind::all() {
            let a = evaluate_loss(kind, &PointCloud::scalars(&t).unwrap(), &PointCloud::scalars(&p).unwrap(), Some(&ix)).unwrap().value;
            let b = evaluate_loss(kind, &PointCloud::scalars(&pt).unwrap(), &PointCloud::scalars(&pp).unwrap(), Some(&pix)).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{}: {} vs {}", kind, a, b);
        }
    }

    #[test]
    fn losses_are_nonnegative_and_zero_on_identity(seed in 0u64..1000, n in 2usize..12) {
        let mut rng = rng_from_seed(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| draw_noise(&mut rng, 1)).collect();
        let t = PointCloud::scalars(&draw_noise(&mut rng, n)).unwrap();
        let p = PointCloud::scalars(&draw_noise(&mut rng, n)).unwrap();
        let ix = build_index(&xs, &InputNorm::Homogeneous, 0.5).unwrap();
        for kind in LossKind::all() {
            prop_assert!(evaluate_loss(kind, &t, &p, Some(&ix)).unwrap().value >= -1e-12);
            prop_assert!(evaluate_loss(kind, &t, &t, Some(&ix)).unwrap().value.abs() <= 1e-12);
        }
    }
}

#[test]
fn reparameterized_predictions_have_linear_gaussian_moments() {
    let params = LinearGaussianParams::new(vec![0.5, -1.0, 2.0], vec![0.3, -0.4, 0.2]).unwrap();
    let x = [0.7, -1.5];
    let mut rng = rng_from_seed(5);
    let draws: Vec<f64> = (0..200_000).map(|_| linear_predict(&params, &x, &draw_noise(&mut rng, 3)).unwrap()).collect();
    let m = 0.5 - 1.0 * 0.7 + 2.0 * -1.5;
    let s = (0.3f64.powi(2) + (0.4f64 * 0.7).powi(2) + (0.2f64 * 1.5).powi(2)).sqrt();
    assert!((mean(&draws) - m).abs() < 4.0 * s / (draws.len() as f64).sqrt());
    assert!((sd(&draws) - s).abs() / s < 0.01);
}

#[test]
fn linear_truth_samples_have_expected_moments() {
    let mut rng = rng_from_seed(11);
    let n = 100_000;
    let xs = sample_inputs(&linreg_input_laws(), n, &mut rng).unwrap();
    let col = |j: usize| xs.iter().map(|x| x[j]).collect::<Vec<f64>>();
    assert!((mean(&col(0)) - 0.25).abs() < 0.01 && (sd(&col(0)) - 0.25).abs() < 0.01);
    assert!(mean(&col(1)).abs() < 0.01 && (sd(&col(1)) - 0.5).abs() < 0.01);
    let beta_sd = (25.0f64 / (100.0 * 11.0)).sqrt();
    assert!((mean(&col(2)) - 0.5).abs() < 0.01 && (sd(&col(2)) - beta_sd).abs() < 0.01);

    let truth = linreg_truth();
    let (data, latents) = sample_ground_truth_with_latents(&GroundTruthSpec::LinearGaussian(truth.clone()), &xs, &mut rng).unwrap();
    for k in 0..4 {
        let lk: Vec<f64> = latents.iter().map(|l| l[k]).collect();
        assert!((mean(&lk) - truth.means[k]).abs() < 0.01, "coefficient {k} mean");
        assert!((sd(&lk) - truth.spreads[k]).abs() / truth.spreads[k] < 0.02, "coefficient {k} sd");
        // latent draws are independent of the inputs
        for j in 0..3 {
            let xj = col(j);
            let (mx, ml) = (mean(&xj), mean(&lk));
            let cov = xj.iter().zip(&lk).map(|(a, b)| (a - mx) * (b - ml)).sum::<f64>() / n as f64;
            let corr = cov / (sd(&xj) * sd(&lk));
            assert!(corr.abs() < 0.02, "corr(x{j}, coefficient {k}) = {corr}");
        }
    }
    for (i, x) in xs.iter().enumerate().take(100) {
        let y = latents[i][0] + latents[i][1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        assert!((y - data.output(i)[0]).abs() < 1e-12);
    }
}
