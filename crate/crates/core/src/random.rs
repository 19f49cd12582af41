//! Seeded random streams and Gaussian fills.
//!
//! Everything stochastic in the crate draws from [`ChaCha8Rng`] so a seed fixes
//! the output across platforms and `rand` releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Matrix, Tensor3};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named sub-task of a seeded run.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn gaussian_tensor(h: usize, w: usize, b: usize, std: f64, rng: &mut Rng) -> Tensor3 {
    let mut t = Tensor3::zeros(h, w, b);
    for v in t.data_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v = std * n;
    }
    t
}

pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let n: f64 = StandardNormal.sample(rng);
        std * n
    })
}
