//! Local squared Wasserstein-2 reconstruction of models with latent randomness.
//!
//! A stochastic model `y = f(x, ω)` is fitted by matching, around every
//! observed input, the empirical distribution of observed outputs against the
//! empirical distribution of model outputs. The discrepancy is the squared
//! W2 distance between the two δ-neighborhood clouds, averaged over anchors.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`transport`] | exact squared W2 between equal-size uniform clouds |
//! | [`neighborhoods`] | input norms and δ-ball indices |
//! | [`autodiff`] | eager reverse-mode tape and [`ParamVector`] |
//! | [`models`] | linear-Gaussian and weight-uncertain MLP models |
//! | [`losses`] | local/global W2, MMD, MSE, mean²+var |
//! | [`metrics`] | relative moment errors and the estimator bound |
//! | [`optim`] | AdamW and the training loop |
//! | [`ode`] | latent-parameter ODE reconstruction |
//! | [`datasets`] | samplers, ground truth synthesis, CSV ingestion |
//! | [`experiments`] | end-to-end pipelines used by the CLI |
//! | [`verify`] | property suites runnable outside `cargo test` |

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod autodiff;
pub mod datasets;
mod error;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod neighborhoods;
pub mod ode;
pub mod optim;
pub mod transport;
pub mod verify;

pub use autodiff::{ParamVector, Tape, Var};
pub use datasets::SampleSet;
pub use error::{Error, Result};
pub use losses::{LossKind, LossReport};
pub use models::{LinearGaussian, LinearGaussianParams, MlpArch, StochasticMlp, StochasticModel};
pub use neighborhoods::{InputNorm, NeighborhoodIndex};
pub use optim::{AdamW, TrainConfig};
pub use transport::{CouplingPlan, PointCloud};

/// Deterministic random stream used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's random stream from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = rng_from_seed(seed);
    rng.set_stream(stream);
    rng
}
