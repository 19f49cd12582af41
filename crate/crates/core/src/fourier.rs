//! DFT machinery along mode 3 and the tubal-rank oracle.
//!
//! Complex values are carried as explicit `(re, im)` pairs of real containers;
//! the denoising path never touches this module.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{facewise_product, mode3_product, Matrix, Tensor3};

/// Complex matrix stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub re: Matrix,
    pub im: Matrix,
}

impl ComplexMatrix {
    pub fn dims(&self) -> (usize, usize) {
        self.re.dims()
    }

    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        let rr = self.re.matmul(&rhs.re)?;
        let ii = self.im.matmul(&rhs.im)?;
        let ri = self.re.matmul(&rhs.im)?;
        let ir = self.im.matmul(&rhs.re)?;
        let (r, c) = rr.dims();
        Ok(ComplexMatrix {
            re: Matrix::from_fn(r, c, |i, j| rr.get(i, j) - ii.get(i, j)),
            im: Matrix::from_fn(r, c, |i, j| ri.get(i, j) + ir.get(i, j)),
        })
    }
}

/// Complex order-3 tensor stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor3 {
    pub re: Tensor3,
    pub im: Tensor3,
}

impl ComplexTensor3 {
    pub fn new(re: Tensor3, im: Tensor3) -> Result<Self> {
        re.same_dims(&im)?;
        Ok(Self { re, im })
    }

    pub fn from_real(re: Tensor3) -> Self {
        let (h, w, b) = re.dims();
        Self {
            re,
            im: Tensor3::zeros(h, w, b),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.re.dims()
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// `F(k, n) = exp(-2 pi i k n / b)`.
pub fn dft_matrix(b: usize) -> ComplexMatrix {
    let angle = |k: usize, n: usize| -2.0 * PI * ((k * n) % b) as f64 / b as f64;
    ComplexMatrix {
        re: Matrix::from_fn(b, b, |k, n| angle(k, n).cos()),
        im: Matrix::from_fn(b, b, |k, n| angle(k, n).sin()),
    }
}

/// `F^{-1} = conj(F)^T / b`.
pub fn inverse_dft_matrix(b: usize) -> ComplexMatrix {
    let f = dft_matrix(b);
    let s = 1.0 / b as f64;
    ComplexMatrix {
        re: Matrix::from_fn(b, b, |k, n| f.re.get(n, k) * s),
        im: Matrix::from_fn(b, b, |k, n| -f.im.get(n, k) * s),
    }
}

/// Mode-3 product of a complex tensor with a complex matrix.
pub fn mode3_product_complex(z: &ComplexTensor3, h: &ComplexMatrix) -> Result<ComplexTensor3> {
    let rr = mode3_product(&z.re, &h.re)?;
    let ii = mode3_product(&z.im, &h.im)?;
    let ri = mode3_product(&z.re, &h.im)?;
    let ir = mode3_product(&z.im, &h.re)?;
    Ok(ComplexTensor3 {
        re: rr.sub(&ii),
        im: ri.add(&ir),
    })
}

/// Face-wise product of complex tensors.
pub fn facewise_product_complex(a: &ComplexTensor3, b: &ComplexTensor3) -> Result<ComplexTensor3> {
    let rr = facewise_product(&a.re, &b.re)?;
    let ii = facewise_product(&a.im, &b.im)?;
    let ri = facewise_product(&a.re, &b.im)?;
    let ir = facewise_product(&a.im, &b.re)?;
    Ok(ComplexTensor3 {
        re: rr.sub(&ii),
        im: ri.add(&ir),
    })
}

/// DFT along the third mode.
pub fn fft3(x: &ComplexTensor3) -> Result<ComplexTensor3> {
    mode3_product_complex(x, &dft_matrix(x.dims().2))
}

/// Inverse DFT along the third mode.
pub fn ifft3(x: &ComplexTensor3) -> Result<ComplexTensor3> {
    mode3_product_complex(x, &inverse_dft_matrix(x.dims().2))
}

/// t-product of two real tensors: face-wise product in the Fourier domain,
/// mapped back. The imaginary part of the result vanishes up to rounding and is
/// discarded.
pub fn t_product(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    let af = fft3(&ComplexTensor3::from_real(a.clone()))?;
    let bf = fft3(&ComplexTensor3::from_real(b.clone()))?;
    let cf = facewise_product_complex(&af, &bf)?;
    Ok(ifft3(&cf)?.re)
}

/// Singular values of a real matrix, descending, `min(rows, cols)` of them.
///
/// One-sided Jacobi on the columns; accurate to working precision for the small
/// slices this is used on.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    // Orthogonalize the shorter side so the rotation count stays small.
    let (rows, cols) = m.dims();
    let src = if cols > rows { m.clone() } else { m.transpose() };
    // `src` rows are the vectors to orthogonalize.
    let n = src.rows();
    let len = src.cols();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| src.data()[i * len..(i + 1) * len].to_vec())
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&v[p], &v[p]);
                let beta = dot(&v[q], &v[q]);
                let gamma = dot(&v[p], &v[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = v.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = v.iter().map(|r| dot(r, r).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(rows.min(cols));
    sv
}

/// Singular values of a complex matrix via its real embedding
/// `[[A, -B], [B, A]]`, whose spectrum is that of `A + iB` with every value doubled.
pub fn singular_values_complex(m: &ComplexMatrix) -> Vec<f64> {
    let (r, c) = m.dims();
    let emb = Matrix::from_fn(2 * r, 2 * c, |i, j| {
        let (bi, bj) = (i >= r, j >= c);
        let (ii, jj) = (i % r, j % c);
        match (bi, bj) {
            (false, false) | (true, true) => m.re.get(ii, jj),
            (false, true) => -m.im.get(ii, jj),
            (true, false) => m.im.get(ii, jj),
        }
    });
    singular_values(&emb).into_iter().step_by(2).collect()
}

/// Tubal rank of a complex tensor: DFT along mode 3, per-slice singular values,
/// then the number of singular-value positions whose maximum over slices exceeds
/// `tol` times the largest singular value overall.
pub fn tubal_rank_complex(x: &ComplexTensor3, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be > 0, got {tol}")));
    }
    if !x.is_finite() {
        return Err(Error::Numeric("tubal rank of a non-finite tensor".into()));
    }
    let xf = fft3(x)?;
    let (h, w, b) = x.dims();
    let mut tube_max = vec![0.0f64; h.min(w)];
    for k in 0..b {
        let slice = ComplexMatrix {
            re: xf.re.frontal_slice(k)?,
            im: xf.im.frontal_slice(k)?,
        };
        for (m, s) in tube_max.iter_mut().zip(singular_values_complex(&slice)) {
            *m = m.max(s);
        }
    }
    let largest = tube_max.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(tube_max.iter().filter(|&&s| s > tol * largest).count())
}

pub fn tubal_rank(x: &Tensor3, tol: f64) -> Result<usize> {
    tubal_rank_complex(&ComplexTensor3::from_real(x.clone()), tol)
}
