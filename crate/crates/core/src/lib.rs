//! Hyperspectral denoising with a hierarchical nonlinear tensor factorization.
//!
//! A clean cube `X` (h x w x b) is represented as
//! `X = phi(W_l . s(W_{l-1} . ... s(W_2 . W_1)))` where `.` is the face-wise
//! product, `s` a scalar nonlinearity and `phi` a stack of learnable mode-3
//! transforms interleaved with the same nonlinearity. The factors are fitted to
//! a noisy cube by an ADMM loop that separates sparse noise and applies a
//! hybrid spatial-spectral total-variation penalty.
//!
//! Module map:
//! - [`tensor`], [`diff`], [`fourier`]: dense tensor algebra, difference
//!   operators, DFT and the tubal-rank oracle.
//! - [`model`]: parameters, initialization, forward evaluation.
//! - [`grad`]: exact reverse-mode gradients and a finite-difference oracle.
//! - [`admm`]: the denoising solver.
//! - [`noise`], [`metrics`]: mixed-noise simulation, PSNR and SSIM.
//! - [`io`], [`kv`]: tensor container format, band export, key-value manifests.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod diff;
pub mod error;
pub mod fourier;
pub mod grad;
pub mod io;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod random;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use admm::{DenoiseResult, IterationRecord, SolverConfig};
pub use error::{Error, Result};
pub use model::{Activation, ActivationKind, DegenerateKind, H2tfParams, ModelConfig};
pub use noise::{NoiseCase, NoiseSpec};
pub use tensor::{Matrix, Tensor3};
