//! Forward-difference operators and their exact adjoints.
//!
//! All three operators use circular (periodic) boundaries: the neighbour of the
//! last index along a mode is index 0. The continuous definition only fixes the
//! interior; the periodic wrap is an implementation choice that makes every
//! operator a square linear map with a closed-form adjoint.

use crate::tensor::Tensor3;

/// Tensor mode along which a difference is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// First index (rows).
    X,
    /// Second index (columns).
    Y,
    /// Third index (bands).
    Z,
}

fn shifted(x: &Tensor3, axis: Axis, forward: bool) -> Tensor3 {
    let (h, w, b) = x.dims();
    let step = |i: usize, n: usize| {
        if forward {
            (i + 1) % n
        } else {
            (i + n - 1) % n
        }
    };
    let mut out = Tensor3::zeros(h, w, b);
    let src = x.data();
    let dst = out.data_mut();
    for k in 0..b {
        for i in 0..h {
            for j in 0..w {
                let (si, sj, sk) = match axis {
                    Axis::X => (step(i, h), j, k),
                    Axis::Y => (i, step(j, w), k),
                    Axis::Z => (i, j, step(k, b)),
                };
                dst[(k * h + i) * w + j] = src[(sk * h + si) * w + sj];
            }
        }
    }
    out
}

/// `(D X)(i,j,k) = X(next along axis) - X(i,j,k)`, periodic.
pub fn diff(x: &Tensor3, axis: Axis) -> Tensor3 {
    shifted(x, axis, true).sub(x)
}

/// `(D^T G)(i,j,k) = G(previous along axis) - G(i,j,k)`, periodic.
pub fn diff_adjoint(g: &Tensor3, axis: Axis) -> Tensor3 {
    shifted(g, axis, false).sub(g)
}

pub fn diff_x(x: &Tensor3) -> Tensor3 {
    diff(x, Axis::X)
}

pub fn diff_y(x: &Tensor3) -> Tensor3 {
    diff(x, Axis::Y)
}

pub fn diff_z(x: &Tensor3) -> Tensor3 {
    diff(x, Axis::Z)
}

pub fn diff_x_adjoint(g: &Tensor3) -> Tensor3 {
    diff_adjoint(g, Axis::X)
}

pub fn diff_y_adjoint(g: &Tensor3) -> Tensor3 {
    diff_adjoint(g, Axis::Y)
}

pub fn diff_z_adjoint(g: &Tensor3) -> Tensor3 {
    diff_adjoint(g, Axis::Z)
}

/// The four linear maps regularized by the hybrid spatial-spectral TV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvOperator {
    /// `D_x X`
    Dx,
    /// `D_y X`
    Dy,
    /// `D_x (D_z X)`
    DxDz,
    /// `D_y (D_z X)`
    DyDz,
}

impl TvOperator {
    pub const ALL: [TvOperator; 4] = [
        TvOperator::Dx,
        TvOperator::Dy,
        TvOperator::DxDz,
        TvOperator::DyDz,
    ];

    /// True for the spatial-spectral pair weighted by the SSTV trade-off.
    pub fn is_spectral(self) -> bool {
        matches!(self, TvOperator::DxDz | TvOperator::DyDz)
    }

    pub fn apply(self, x: &Tensor3) -> Tensor3 {
        match self {
            TvOperator::Dx => diff_x(x),
            TvOperator::Dy => diff_y(x),
            TvOperator::DxDz => diff_x(&diff_z(x)),
            TvOperator::DyDz => diff_y(&diff_z(x)),
        }
    }

    /// `(D_a D_z)^T = D_z^T D_a^T`.
    pub fn adjoint(self, g: &Tensor3) -> Tensor3 {
        match self {
            TvOperator::Dx => diff_x_adjoint(g),
            TvOperator::Dy => diff_y_adjoint(g),
            TvOperator::DxDz => diff_z_adjoint(&diff_x_adjoint(g)),
            TvOperator::DyDz => diff_z_adjoint(&diff_y_adjoint(g)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn constant_tensor_has_zero_differences() {
        let c = Tensor3::filled(3, 4, 5, 2.5);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            assert!(diff(&c, axis).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ramp_wraps_circularly() {
        let x = Tensor3::from_fn(4, 1, 1, |i, _, _| i as f64);
        assert_eq!(diff_x(&x).data(), &[1.0, 1.0, 1.0, -3.0]);
    }

    #[test]
    fn matches_indexwise_definition() {
        let x = random_tensor(3, 3, 3, 42);
        let (dx, dy, dz) = (diff_x(&x), diff_y(&x), diff_z(&x));
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let v = x.get(i, j, k);
                    assert_eq!(dx.get(i, j, k), x.get((i + 1) % 3, j, k) - v);
                    assert_eq!(dy.get(i, j, k), x.get(i, (j + 1) % 3, k) - v);
                    assert_eq!(dz.get(i, j, k), x.get(i, j, (k + 1) % 3) - v);
                }
            }
        }
    }

    #[test]
    fn adjoint_inner_product_identity() {
        for seed in 0..20 {
            let x = random_tensor(4, 5, 3, seed);
            let g = random_tensor(4, 5, 3, seed + 1000);
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                let lhs = diff(&x, axis).dot(&g);
                let rhs = x.dot(&diff_adjoint(&g, axis));
                assert!((lhs - rhs).abs() <= 1e-12, "{axis:?}: {lhs} vs {rhs}");
            }
            for op in TvOperator::ALL {
                let lhs = op.apply(&x).dot(&g);
                let rhs = x.dot(&op.adjoint(&g));
                assert!((lhs - rhs).abs() <= 1e-12, "{op:?}");
            }
        }
    }

    #[test]
    fn adjoint_edge_cases() {
        let z = Tensor3::zeros(2, 3, 2);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            assert!(diff_adjoint(&z, axis).data().iter().all(|&v| v == 0.0));
        }
        let single = Tensor3::filled(1, 1, 1, 3.7);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            assert_eq!(diff_adjoint(&single, axis).data(), &[0.0]);
        }
    }
}
