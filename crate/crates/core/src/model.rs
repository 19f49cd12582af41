//! The hierarchical factorization: parameters, initialization and forward pass.
//!
//! With factor tensors `W_1..W_l` (`W_d` is `r_d x r_{d-1} x b`, `r_0 = w`,
//! `r_l = h`) and band-mixing matrices `H_1..H_m` (each `b x b`):
//!
//! ```text
//! Z = W_l . s(W_{l-1} . ... s(W_3 . s(W_2 . W_1)))     (. = face-wise product)
//! X = s(... s(Z x3 H_1) x3 ... x3 H_{m-1}) x3 H_m
//! ```
//!
//! Nesting convention: the nonlinearity `s` follows every face-wise product
//! except the outermost one (by `W_l`), and every mode-3 product except the
//! last one. So `l = 2` gives the plain product `W_2 . W_1`, `l = 3` gives
//! `W_3 . s(W_2 . W_1)`, and `m = 0` leaves `Z` untouched. The placement for
//! general `l` extrapolates the `l >= 3` pattern; it is an interpretation, frozen
//! by the unit tests below.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fourier::inverse_dft_matrix;
use crate::random::{gaussian_matrix, gaussian_tensor, rng};
use crate::tensor::{facewise_product, mode3_product, Matrix, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    /// `x` for `x >= 0`, `slope * x` otherwise.
    LeakyRelu,
    Identity,
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationKind::LeakyRelu => "leaky-relu",
            ActivationKind::Identity => "identity",
        })
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leaky-relu" => Ok(ActivationKind::LeakyRelu),
            "identity" => Ok(ActivationKind::Identity),
            other => Err(Error::Parse(format!("unknown activation '{other}'"))),
        }
    }
}

/// Scalar nonlinearity shared by every layer of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub kind: ActivationKind,
    pub slope: f64,
}

impl Default for Activation {
    fn default() -> Self {
        Self {
            kind: ActivationKind::LeakyRelu,
            slope: 0.1,
        }
    }
}

impl Activation {
    pub fn identity() -> Self {
        Self {
            kind: ActivationKind::Identity,
            slope: 1.0,
        }
    }

    pub fn leaky_relu(slope: f64) -> Self {
        Self {
            kind: ActivationKind::LeakyRelu,
            slope,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::LeakyRelu if x < 0.0 => self.slope * x,
            _ => x,
        }
    }

    /// Derivative; taken as 1 at the kink.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::LeakyRelu if x < 0.0 => self.slope,
            _ => 1.0,
        }
    }

    pub fn apply_tensor(&self, t: &Tensor3) -> Tensor3 {
        match self.kind {
            ActivationKind::Identity => t.clone(),
            ActivationKind::LeakyRelu => t.map(|v| self.apply(v)),
        }
    }
}

/// How the factor tensors are initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScale {
    /// Standard deviation `sqrt(1 / r_{d-1})` for `W_d`.
    FanIn,
    /// Fixed standard deviation for every factor.
    Fixed(f64),
}

impl fmt::Display for InitScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScale::FanIn => f.write_str("fan-in"),
            InitScale::Fixed(s) => write!(f, "fixed:{s}"),
        }
    }
}

impl FromStr for InitScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "fan-in" {
            return Ok(InitScale::FanIn);
        }
        s.strip_prefix("fixed:")
            .and_then(|v| v.parse().ok())
            .map(InitScale::Fixed)
            .ok_or_else(|| Error::Parse(format!("unknown init scale '{s}'")))
    }
}

/// Standard deviation of the perturbation added to identity transforms at init.
pub const TRANSFORM_INIT_STD: f64 = 0.01;

/// Shape and hyperparameters of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// `(h, w, b)` of the represented cube.
    pub shape: (usize, usize, usize),
    /// `r_0, r_1, ..., r_l` with `r_0 = w` and `r_l = h`; `l = ranks.len() - 1`.
    pub ranks: Vec<usize>,
    /// Number of mode-3 transforms `m`.
    pub hnt_layers: usize,
    pub activation: Activation,
    pub init: InitScale,
    pub seed: u64,
}

impl ModelConfig {
    /// Default model for an `h x w x b` cube: five factors, two transforms,
    /// inner ranks doubling from [`default_rank_base`].
    pub fn new(h: usize, w: usize, b: usize) -> Self {
        Self::with_rank_base(h, w, b, 5, default_rank_base(h, w))
    }

    /// `l` factors whose inner ranks are `base, 2 base, 4 base, ...`.
    pub fn with_rank_base(h: usize, w: usize, b: usize, l: usize, base: usize) -> Self {
        let mut ranks = vec![w];
        ranks.extend((1..l).map(|d| base << (d - 1)));
        ranks.push(h);
        Self {
            shape: (h, w, b),
            ranks,
            hnt_layers: 2,
            activation: Activation::default(),
            init: InitScale::FanIn,
            seed: 0,
        }
    }

    pub fn hmf_layers(&self) -> usize {
        self.ranks.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, b) = self.shape;
        if h == 0 || w == 0 || b == 0 {
            return Err(Error::Config(format!("shape must be positive, got {:?}", self.shape)));
        }
        if self.hmf_layers() < 2 {
            return Err(Error::Config(format!(
                "need at least two factors, got ranks {:?}",
                self.ranks
            )));
        }
        if self.ranks.contains(&0) {
            return Err(Error::Config(format!("ranks must be positive: {:?}", self.ranks)));
        }
        if self.ranks[0] != w || *self.ranks.last().unwrap() != h {
            return Err(Error::Config(format!(
                "ranks must start at w={w} and end at h={h}, got {:?}",
                self.ranks
            )));
        }
        if let InitScale::Fixed(s) = self.init {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("init std must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Inner-rank base used by [`ModelConfig::new`]: one sixteenth of the smaller
/// spatial side, at least 1.
pub fn default_rank_base(h: usize, w: usize) -> usize {
    (h.min(w) / 16).max(1)
}

/// Learnable state of the factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct H2tfParams {
    /// `W_1..W_l`; `factors[d - 1]` is `r_d x r_{d-1} x b`.
    pub factors: Vec<Tensor3>,
    /// `H_1..H_m`, each `b x b`.
    pub transforms: Vec<Matrix>,
    /// False when the transforms are fixed (e.g. the inverse DFT).
    pub transforms_learnable: bool,
    pub activation: Activation,
    pub shape: (usize, usize, usize),
}

impl H2tfParams {
    pub fn hmf_layers(&self) -> usize {
        self.factors.len()
    }

    pub fn hnt_layers(&self) -> usize {
        self.transforms.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![self.factors.first().map_or(0, |f| f.dims().1)];
        r.extend(self.factors.iter().map(|f| f.dims().0));
        r
    }

    pub fn num_parameters(&self) -> usize {
        self.factors.iter().map(Tensor3::len).sum::<usize>()
            + self.transforms.iter().map(|t| t.data().len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, b) = self.shape;
        if self.factors.len() < 2 {
            return Err(Error::Shape(format!(
                "need at least two factors, got {}",
                self.factors.len()
            )));
        }
        for (d, f) in self.factors.iter().enumerate() {
            if f.dims().2 != b {
                return Err(Error::Shape(format!(
                    "factor W_{} has {} slices, expected {b}",
                    d + 1,
                    f.dims().2
                )));
            }
            if d > 0 && f.dims().1 != self.factors[d - 1].dims().0 {
                return Err(Error::Shape(format!(
                    "factor chain broken between W_{} {:?} and W_{} {:?}",
                    d,
                    self.factors[d - 1].dims(),
                    d + 1,
                    f.dims()
                )));
            }
        }
        if self.factors[0].dims().1 != w || self.factors.last().unwrap().dims().0 != h {
            return Err(Error::Shape(format!(
                "outer factor dims must match w={w}, h={h}"
            )));
        }
        for (p, t) in self.transforms.iter().enumerate() {
            if t.dims() != (b, b) {
                return Err(Error::Shape(format!(
                    "transform H_{} is {:?}, expected {b}x{b}",
                    p + 1,
                    t.dims()
                )));
            }
        }
        Ok(())
    }

    /// Visits every parameter entry in a fixed order: factors first, then transforms.
    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.factors
            .iter_mut()
            .flat_map(|f| f.data_mut().iter_mut())
            .chain(self.transforms.iter_mut().flat_map(|t| t.data_mut().iter_mut()))
    }
}

/// Random initialization. Deterministic in `cfg.seed`.
pub fn init_params(cfg: &ModelConfig) -> Result<H2tfParams> {
    cfg.validate()?;
    let (h, w, b) = cfg.shape;
    let mut rng = rng(cfg.seed);
    let factors = cfg
        .ranks
        .windows(2)
        .map(|pair| {
            let (fan_in, out) = (pair[0], pair[1]);
            let std = match cfg.init {
                InitScale::FanIn => (1.0 / fan_in as f64).sqrt(),
                InitScale::Fixed(s) => s,
            };
            gaussian_tensor(out, fan_in, b, std, &mut rng)
        })
        .collect();
    let transforms = (0..cfg.hnt_layers)
        .map(|_| {
            let mut t = gaussian_matrix(b, b, TRANSFORM_INIT_STD, &mut rng);
            for k in 0..b {
                t.set(k, k, t.get(k, k) + 1.0);
            }
            t
        })
        .collect();
    Ok(H2tfParams {
        factors,
        transforms,
        transforms_learnable: true,
        activation: cfg.activation,
        shape: (h, w, b),
    })
}

/// `Z = W_l . s(W_{l-1} . ... s(W_2 . W_1))`.
pub fn hmf_forward(params: &H2tfParams) -> Result<Tensor3> {
    params.validate()?;
    let f = &params.factors;
    let mut z = facewise_product(&f[1], &f[0])?;
    for w in &f[2..] {
        let a = params.activation.apply_tensor(&z);
        z = facewise_product(w, &a)?;
    }
    Ok(z)
}

/// `X = s(... s(Z x3 H_1) ... x3 H_{m-1}) x3 H_m`; identity when `m = 0`.
pub fn hnt_apply(z: &Tensor3, params: &H2tfParams) -> Result<Tensor3> {
    let b = z.dims().2;
    if let Some(t) = params.transforms.iter().find(|t| t.dims() != (b, b)) {
        return Err(Error::Shape(format!(
            "transform is {:?}, expected {b}x{b}",
            t.dims()
        )));
    }
    let Some((first, rest)) = params.transforms.split_first() else {
        return Ok(z.clone());
    };
    let mut u = mode3_product(z, first)?;
    for t in rest {
        let a = params.activation.apply_tensor(&u);
        u = mode3_product(&a, t)?;
    }
    Ok(u)
}

/// Full forward evaluation.
pub fn forward(params: &H2tfParams) -> Result<Tensor3> {
    hnt_apply(&hmf_forward(params)?, params)
}

/// The special cases obtained by fixing `l` and `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateKind {
    /// Two factors, learnable transforms.
    Hlrtf,
    /// No transform: independent nonlinear factorizations per frontal slice.
    PlainHmf,
    /// Two factors and a single fixed inverse-DFT transform.
    TubalMf,
}

impl FromStr for DegenerateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hlrtf" => Ok(DegenerateKind::Hlrtf),
            "plain-hmf" | "plain_hmf" => Ok(DegenerateKind::PlainHmf),
            "tubal-mf" | "tubal_mf" => Ok(DegenerateKind::TubalMf),
            other => Err(Error::Parse(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Builds parameters realizing one of the special cases.
///
/// For [`DegenerateKind::TubalMf`] the transform is the real part of the inverse
/// DFT and is marked non-learnable. The factors are drawn with mirrored slices
/// (`W^(k) = W^(b-k mod b)`), so the face-wise product is conjugate symmetric
/// along mode 3 and the exact complex inverse DFT has zero imaginary part: the
/// real forward pass then equals the complex one and keeps the tubal-rank bound.
pub fn make_degenerate(kind: DegenerateKind, cfg: &ModelConfig) -> Result<H2tfParams> {
    let l = cfg.hmf_layers();
    match kind {
        DegenerateKind::Hlrtf if l != 2 => {
            return Err(Error::Config(format!("hlrtf needs l = 2, got l = {l}")));
        }
        DegenerateKind::PlainHmf if cfg.hnt_layers != 0 => {
            return Err(Error::Config(format!(
                "plain_hmf needs m = 0, got m = {}",
                cfg.hnt_layers
            )));
        }
        DegenerateKind::TubalMf if l != 2 || cfg.hnt_layers != 1 => {
            return Err(Error::Config(format!(
                "tubal_mf needs l = 2 and m = 1, got l = {l}, m = {}",
                cfg.hnt_layers
            )));
        }
        _ => {}
    }
    let mut params = init_params(cfg)?;
    if kind == DegenerateKind::TubalMf {
        let b = cfg.shape.2;
        for f in &mut params.factors {
            for k in 1..b {
                let mirror = b - k;
                if mirror < k {
                    let src = f.slice_data(mirror).to_vec();
                    f.slice_data_mut(k).copy_from_slice(&src);
                }
            }
        }
        params.transforms = vec![inverse_dft_matrix(b).re];
        params.transforms_learnable = false;
    }
    Ok(params)
}

/// Frobenius norm of the imaginary part dropped when a single real transform
/// stands in for the complex inverse DFT, i.e. `||Z x3 Im(F^-1)||_F`.
///
/// Logs a warning above `1e-10`; that happens when the factors are not mirror
/// symmetric along mode 3 and the real forward pass no longer equals the
/// complex one.
pub fn inverse_dft_imaginary_residual(params: &H2tfParams) -> Result<f64> {
    let z = hmf_forward(params)?;
    let im = inverse_dft_matrix(params.shape.2).im;
    let r = mode3_product(&z, &im)?.norm_fro();
    if r > 1e-10 {
        log::warn!("inverse-DFT transform drops an imaginary part of norm {r:.3e}");
    }
    Ok(r)
}
