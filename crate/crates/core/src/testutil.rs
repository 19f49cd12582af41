use crate::random::{gaussian_matrix, gaussian_tensor, rng};
use crate::tensor::{Matrix, Tensor3};

pub fn random_tensor(h: usize, w: usize, b: usize, seed: u64) -> Tensor3 {
    gaussian_tensor(h, w, b, 1.0, &mut rng(seed))
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    gaussian_matrix(rows, cols, 1.0, &mut rng(seed))
}
