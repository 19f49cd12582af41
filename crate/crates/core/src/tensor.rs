//! Dense order-3 tensors and the small matrix type used for spectral transforms.
//!
//! A [`Tensor3`] with dims `(h, w, b)` stores its elements frontal-slice-major:
//! slice `k` is contiguous and each slice is row-major, so element `(i, j, k)`
//! lives at `k * h * w + i * w + j`. This order is part of the public contract
//! and is the payload order of the on-disk tensor format.

use crate::error::{Error, Result};

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        matmul_into(
            &self.data,
            &rhs.data,
            &mut out.data,
            self.rows,
            self.cols,
            rhs.cols,
        );
        Ok(out)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Dense real order-3 tensor with dims `(h, w, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    /// Zero tensor. Panics if any dimension is zero.
    pub fn zeros(h: usize, w: usize, b: usize) -> Self {
        assert!(h >= 1 && w >= 1 && b >= 1, "tensor dims must be >= 1");
        Self {
            dims: (h, w, b),
            data: vec![0.0; h * w * b],
        }
    }

    pub fn filled(h: usize, w: usize, b: usize, value: f64) -> Self {
        let mut t = Self::zeros(h, w, b);
        t.data.fill(value);
        t
    }

    pub fn ones(h: usize, w: usize, b: usize) -> Self {
        Self::filled(h, w, b, 1.0)
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (h, w, b) = dims;
        if h == 0 || w == 0 || b == 0 {
            return Err(Error::Shape(format!("dims must be positive, got {dims:?}")));
        }
        if data.len() != h * w * b {
            return Err(Error::Shape(format!(
                "tensor {h}x{w}x{b} needs {} values, got {}",
                h * w * b,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        b: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(h, w, b);
        for k in 0..b {
            for i in 0..h {
                for j in 0..w {
                    t.data[(k * h + i) * w + j] = f(i, j, k);
                }
            }
        }
        t
    }

    /// `(h, w, b)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice_len(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        let (h, w, _) = self.dims;
        (k * h + i) * w + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Contiguous storage of frontal slice `k`. Panics when out of range.
    pub fn slice_data(&self, k: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn slice_data_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.slice_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Copy of the `k`-th frontal slice as an `h x w` matrix.
    pub fn frontal_slice(&self, k: usize) -> Result<Matrix> {
        let (h, w, b) = self.dims;
        if k >= b {
            return Err(Error::Range(format!("frontal slice {k} of {b}")));
        }
        Matrix::from_vec(h, w, self.slice_data(k).to_vec())
    }

    pub fn set_frontal_slice(&mut self, k: usize, m: &Matrix) -> Result<()> {
        let (h, w, b) = self.dims;
        if k >= b {
            return Err(Error::Range(format!("frontal slice {k} of {b}")));
        }
        if m.dims() != (h, w) {
            return Err(Error::Shape(format!(
                "slice must be {h}x{w}, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        self.slice_data_mut(k).copy_from_slice(m.data());
        Ok(())
    }

    pub fn same_dims(&self, other: &Tensor3) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "expected dims {:?}, got {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shape tensors. Panics on shape mismatch.
    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Tensor3 {
        assert_eq!(self.dims, other.dims, "zip_map shape mismatch");
        Tensor3 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Tensor3) -> Tensor3 {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor3 {
        self.map(|v| v * s)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Tensor3) {
        assert_eq!(self.dims, other.dims, "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims, other.dims, "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm_l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out (m x n) = a (m x q) * b (q x n)`, all row-major.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, q: usize, n: usize) {
    out.fill(0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..q {
            let aip = a[i * q + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Face-wise product: slice `k` of the result is `A^(k) * B^(k)`.
pub fn facewise_product(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    let (p, q, ba) = a.dims();
    let (q2, r, bb) = b.dims();
    if ba != bb || q != q2 {
        return Err(Error::Shape(format!(
            "face-wise product of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = Tensor3::zeros(p, r, ba);
    for k in 0..ba {
        matmul_into(
            a.slice_data(k),
            b.slice_data(k),
            out.slice_data_mut(k),
            p,
            q,
            r,
        );
    }
    Ok(out)
}

/// Slice-wise `A^(k) * (B^(k))^T`. Used for the left-factor gradient of a face-wise product.
pub fn facewise_product_nt(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    let (p, q, ba) = a.dims();
    let (r, q2, bb) = b.dims();
    if ba != bb || q != q2 {
        return Err(Error::Shape(format!(
            "face-wise A*B^T of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = Tensor3::zeros(p, r, ba);
    for k in 0..ba {
        let (ak, bk) = (a.slice_data(k), b.slice_data(k));
        let ok = out.slice_data_mut(k);
        for i in 0..p {
            let arow = &ak[i * q..(i + 1) * q];
            for j in 0..r {
                let brow = &bk[j * q..(j + 1) * q];
                ok[i * r + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
    }
    Ok(out)
}

/// Slice-wise `(A^(k))^T * B^(k)`. Used for the right-factor gradient of a face-wise product.
pub fn facewise_product_tn(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    let (q, p, ba) = a.dims();
    let (q2, r, bb) = b.dims();
    if ba != bb || q != q2 {
        return Err(Error::Shape(format!(
            "face-wise A^T*B of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = Tensor3::zeros(p, r, ba);
    for k in 0..ba {
        let (ak, bk) = (a.slice_data(k), b.slice_data(k));
        let ok = out.slice_data_mut(k);
        for s in 0..q {
            let brow = &bk[s * r..(s + 1) * r];
            for i in 0..p {
                let asi = ak[s * p + i];
                if asi == 0.0 {
                    continue;
                }
                for (o, &bv) in ok[i * r..(i + 1) * r].iter_mut().zip(brow) {
                    *o += asi * bv;
                }
            }
        }
    }
    Ok(out)
}

/// Mode-3 product `Z x_3 H`: `out(i, j, k') = sum_k H(k', k) Z(i, j, k)`.
pub fn mode3_product(z: &Tensor3, h: &Matrix) -> Result<Tensor3> {
    let (rows, cols, b) = z.dims();
    if h.cols() != b {
        return Err(Error::Shape(format!(
            "mode-3 product needs a matrix with {b} columns, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    let n = rows * cols;
    let mut out = Tensor3::zeros(rows, cols, h.rows());
    for kp in 0..h.rows() {
        let dst = out.slice_data_mut(kp);
        for k in 0..b {
            let coef = h.get(kp, k);
            if coef == 0.0 {
                continue;
            }
            let src = &z.data[k * n..(k + 1) * n];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += coef * s;
            }
        }
    }
    Ok(out)
}

/// Contraction over the two spatial modes: `G(k', k) = sum_{i,j} A(i, j, k') B(i, j, k)`.
///
/// This is the matrix-side adjoint of [`mode3_product`]: for `Q = U x_3 H`,
/// `<G_Q, Q> = <mode3_gram(G_Q, U), H>`.
pub fn mode3_gram(a: &Tensor3, b: &Tensor3) -> Result<Matrix> {
    let (h1, w1, ba) = a.dims();
    let (h2, w2, bb) = b.dims();
    if (h1, w1) != (h2, w2) {
        return Err(Error::Shape(format!(
            "mode-3 gram of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut g = Matrix::zeros(ba, bb);
    for kp in 0..ba {
        let sa = a.slice_data(kp);
        for k in 0..bb {
            let sb = b.slice_data(k);
            g.set(kp, k, sa.iter().zip(sb).map(|(x, y)| x * y).sum());
        }
    }
    Ok(g)
}

#[inline]
pub fn soft_threshold_scalar(x: f64, v: f64) -> f64 {
    let m = x.abs() - v;
    if m > 0.0 {
        m.copysign(x)
    } else {
        0.0
    }
}

/// Elementwise `sign(x) * max(|x| - v, 0)`.
pub fn soft_threshold(x: &Tensor3, v: f64) -> Result<Tensor3> {
    if !(v >= 0.0) {
        return Err(Error::Argument(format!("threshold must be >= 0, got {v}")));
    }
    Ok(x.map(|e| soft_threshold_scalar(e, v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, random_tensor};
    use proptest::prelude::*;

    #[test]
    fn frontal_slice_of_constant_tensors() {
        let x = Tensor3::ones(2, 2, 3);
        assert_eq!(x.frontal_slice(1).unwrap().data(), &[1.0; 4]);

        let x = Tensor3::from_fn(2, 2, 3, |_, _, k| k as f64);
        assert_eq!(x.frontal_slice(2).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn frontal_slice_matches_direct_indexing() {
        let x = random_tensor(3, 4, 5, 11);
        let s = x.frontal_slice(4).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(s.get(i, j), x.get(i, j, 4));
            }
        }
    }

    #[test]
    fn frontal_slice_is_a_copy() {
        let x = random_tensor(2, 2, 2, 1);
        let mut s = x.frontal_slice(0).unwrap();
        s.set(0, 0, 1e9);
        assert_ne!(x.get(0, 0, 0), 1e9);
    }

    #[test]
    fn frontal_slice_out_of_range() {
        let x = Tensor3::zeros(2, 2, 3);
        assert!(matches!(x.frontal_slice(3), Err(Error::Range(_))));
    }

    #[test]
    fn facewise_identity_and_zero() {
        let b = random_tensor(3, 4, 2, 5);
        let eye = Tensor3::from_fn(3, 3, 2, |i, j, _| if i == j { 1.0 } else { 0.0 });
        assert_eq!(facewise_product(&eye, &b).unwrap(), b);
        let zero = Tensor3::zeros(5, 3, 2);
        let out = facewise_product(&zero, &b).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.dims(), (5, 4, 2));
    }

    #[test]
    fn facewise_matches_triple_loop() {
        let a = random_tensor(2, 3, 2, 7);
        let b = random_tensor(3, 2, 2, 8);
        let c = facewise_product(&a, &b).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for q in 0..3 {
                        s += a.get(i, q, k) * b.get(q, j, k);
                    }
                    assert!((c.get(i, j, k) - s).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn facewise_transposed_variants_agree_with_explicit_transpose() {
        let a = random_tensor(3, 4, 2, 1);
        let b = random_tensor(5, 4, 2, 2);
        let bt = Tensor3::from_fn(4, 5, 2, |i, j, k| b.get(j, i, k));
        let lhs = facewise_product_nt(&a, &b).unwrap();
        let rhs = facewise_product(&a, &bt).unwrap();
        assert!(lhs.sub(&rhs).max_abs() < 1e-13);

        let c = random_tensor(3, 6, 2, 3);
        let at = Tensor3::from_fn(4, 3, 2, |i, j, k| a.get(j, i, k));
        let lhs = facewise_product_tn(&a, &c).unwrap();
        let rhs = facewise_product(&at, &c).unwrap();
        assert!(lhs.sub(&rhs).max_abs() < 1e-13);
    }

    #[test]
    fn facewise_shape_errors() {
        let a = Tensor3::zeros(2, 3, 2);
        assert!(matches!(
            facewise_product(&a, &Tensor3::zeros(2, 2, 2)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            facewise_product(&a, &Tensor3::zeros(3, 2, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mode3_identity_and_summation() {
        let z = random_tensor(2, 3, 4, 9);
        assert_eq!(mode3_product(&z, &Matrix::identity(4)).unwrap(), z);

        let c = Tensor3::filled(2, 2, 5, 0.3);
        let ones = Matrix::from_fn(1, 5, |_, _| 1.0);
        let out = mode3_product(&c, &ones).unwrap();
        assert_eq!(out.dims(), (2, 2, 1));
        assert!(out.data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn mode3_matches_summation_oracle() {
        let z = random_tensor(2, 2, 3, 4);
        let h = random_matrix(3, 3, 5);
        let out = mode3_product(&z, &h).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for kp in 0..3 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        s += h.get(kp, k) * z.get(i, j, k);
                    }
                    assert!((out.get(i, j, kp) - s).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn mode3_shape_error() {
        let z = Tensor3::zeros(2, 2, 3);
        assert!(matches!(
            mode3_product(&z, &Matrix::identity(4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn soft_threshold_examples() {
        let x = Tensor3::from_vec((1, 3, 1), vec![0.5, -0.3, 0.1]).unwrap();
        let s = soft_threshold(&x, 0.2).unwrap();
        let want = [0.3, -0.1, 0.0];
        for (a, b) in s.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(soft_threshold(&x, 0.0).unwrap(), x);
        assert!(matches!(soft_threshold(&x, -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn soft_threshold_matches_scalar_oracle() {
        let x = random_tensor(4, 3, 2, 21);
        let s = soft_threshold(&x, 0.7).unwrap();
        for (&a, &e) in s.data().iter().zip(x.data()) {
            let want = if e > 0.7 {
                e - 0.7
            } else if e < -0.7 {
                e + 0.7
            } else {
                0.0
            };
            assert_eq!(a, want);
        }
    }

    proptest! {
        #[test]
        fn facewise_is_homogeneous(seed in 0u64..1000, alpha in -3.0f64..3.0) {
            let a = random_tensor(3, 4, 2, seed);
            let b = random_tensor(4, 2, 2, seed + 1);
            let lhs = facewise_product(&a.scale(alpha), &b).unwrap();
            let rhs = facewise_product(&a, &b).unwrap().scale(alpha);
            prop_assert!(lhs.sub(&rhs).max_abs() < 1e-12);
        }

        #[test]
        fn mode3_composes(seed in 0u64..1000) {
            let z = random_tensor(3, 2, 4, seed);
            let h1 = random_matrix(5, 4, seed + 1);
            let h2 = random_matrix(3, 5, seed + 2);
            let lhs = mode3_product(&mode3_product(&z, &h1).unwrap(), &h2).unwrap();
            let rhs = mode3_product(&z, &h2.matmul(&h1).unwrap()).unwrap();
            prop_assert!(lhs.sub(&rhs).max_abs() < 1e-12);
        }

        #[test]
        fn soft_threshold_is_nonexpansive(seed in 0u64..1000, v in 0.0f64..2.0) {
            let a = random_tensor(3, 3, 3, seed);
            let b = random_tensor(3, 3, 3, seed + 7);
            let d = soft_threshold(&a, v).unwrap().sub(&soft_threshold(&b, v).unwrap());
            prop_assert!(d.norm_fro() <= a.sub(&b).norm_fro() + 1e-15);
        }
    }
}
