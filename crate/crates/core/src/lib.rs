//! Neural empirical Bayes.
//!
//! An energy `E(y)` approximating `-log f(y)` of the Gaussian-smoothed data
//! density is fit with the denoising objective. The same energy then gives
//! single-step least-squares denoising (`y - sigma^2 grad E(y)`), Langevin
//! walks in the smoothed space with jumps back to clean space, and
//! deterministic descent to attractors.
//!
//! Module map:
//! - [`diff`]: energy traits, input gradients, double-backprop parameter gradients, gradient checks
//! - [`model`]: the swish MLP and closed-form test energies; [`checkpoint`] stores models
//! - [`train`]: noisy replicas, the denoising loss, Adam fitting
//! - [`bayes`]: jumps, batch denoising, the kernel density oracle
//! - [`geometry`]: pairwise overlap statistics and concentration probes
//! - [`dynamics`]: walk-jump sampling, attractor flow, creative probe
//! - [`data`]: IDX and CSV input, synthetic mixtures, image grids

pub mod bayes;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diff;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod model;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use bayes::{denoise_batch, nebls_jump, KdeModel};
pub use data::Dataset;
pub use diff::{Energy, GradReport, ParamVector, Trainable};
pub use error::{Error, Result};
pub use model::{ArchSpec, EnergyModel, Quadratic, ScaledQuadratic};
pub use train::{TrainConfig, TrainHistory};

/// Named random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Training,
    Noise,
    Data,
    Probe,
    /// Per-chain sampler stream.
    Chain(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Training => 1,
            Stream::Noise => 2,
            Stream::Data => 3,
            Stream::Probe => 4,
            Stream::Chain(i) => 1 << 32 | i,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Maps `0..n` through `f`, in parallel when the `parallel` feature is on.
/// Output order always follows the index.
#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
