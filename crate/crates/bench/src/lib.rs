//! Fixtures shared by the criterion benches in `benches/`.

use localw2::datasets::{linreg_input_laws, linreg_truth, sample_ground_truth, sample_inputs, GroundTruthSpec};
use localw2::models::{draw_noise, linear_predict};
use localw2::neighborhoods::{build_index, fit_hetero_norm, NeighborhoodIndex};
use localw2::{rng_from_seed, PointCloud};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_cloud(seed: u64, n: usize, d: usize) -> PointCloud {
    let mut rng = rng_from_seed(seed);
    PointCloud::new((0..n * d).map(|_| rng.sample(StandardNormal)).collect(), d).unwrap()
}

/// Linear-benchmark truth, predictions from a perturbed model, and the
/// heterogeneous δ-index over the inputs.
pub fn linreg_fixture(n: usize, delta: f64) -> (PointCloud, PointCloud, NeighborhoodIndex) {
    let mut rng = rng_from_seed(17);
    let xs = sample_inputs(&linreg_input_laws(), n, &mut rng).unwrap();
    let truth = linreg_truth();
    let data = sample_ground_truth(&GroundTruthSpec::LinearGaussian(truth.clone()), &xs, &mut rng).unwrap();
    let mut model = truth;
    model.spreads.iter_mut().for_each(|s| *s *= 2.0);
    let preds: Vec<f64> = xs.iter().map(|x| linear_predict(&model, x, &draw_noise(&mut rng, 4)).unwrap()).collect();
    let norm = fit_hetero_norm(&xs, data.scalar_outputs()).unwrap();
    let index = build_index(&xs, &norm, delta).unwrap();
    (data.output_cloud().unwrap(), PointCloud::scalars(&preds).unwrap(), index)
}
