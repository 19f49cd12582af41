//! ADMM solver for the denoising model
//!
//! ```text
//! min ||Y - X - S||_F^2 + a1 ||S||_1
//!     + a2 (||D_x X||_1 + ||D_y X||_1) + a3 (||D_x D_z X||_1 + ||D_y D_z X||_1)
//! ```
//!
//! with `X` given by the factorization in [`crate::model`]. Each outer iteration
//! runs, in this order: the four auxiliary `V_i` soft-thresholds, the sparse
//! component `S`, Adam step(s) on the factorization parameters against the
//! augmented X subproblem, and the multiplier updates. The penalty `mu` is held
//! constant and the Adam moments persist across outer iterations.

use std::time::Instant;

use crate::diff::TvOperator;
use crate::error::{Error, Result};
use crate::grad::{objective_and_grad, ParamGrads, TvTargets};
use crate::metrics::psnr;
use crate::model::{forward, init_params, H2tfParams, ModelConfig};
use crate::tensor::{soft_threshold, Tensor3};

/// Iterations over which the relative change of `X` must stay below `tol`.
pub const STOP_WINDOW: usize = 10;

/// Abort once the objective exceeds its first-iteration value by this factor.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Trade-offs, penalty and loop controls. Defaults are tuned for data scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Weight of `||S||_1`.
    pub alpha1: f64,
    /// Weight of the spatial TV terms.
    pub alpha2: f64,
    /// Weight of the spatial-spectral TV terms.
    pub alpha3: f64,
    pub mu: f64,
    pub adam: AdamConfig,
    pub max_iters: usize,
    pub tol: f64,
    pub inner_adam_steps: usize,
    /// Min-max scale the input to `[0, 1]` before solving.
    pub rescale: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.1,
            alpha2: 0.01,
            alpha3: 0.01,
            mu: 0.1,
            adam: AdamConfig::default(),
            max_iters: 1500,
            tol: 1e-6,
            inner_adam_steps: 1,
            rescale: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be > 0, got {}", self.mu));
        }
        if !(self.adam.lr > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.adam.lr));
        }
        for (name, v) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.adam.eps > 0.0) {
            return bad(format!("adam eps must be > 0, got {}", self.adam.eps));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        if self.inner_adam_steps == 0 {
            return bad("inner_adam_steps must be >= 1".into());
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be >= 0, got {}", self.tol));
        }
        Ok(())
    }

    /// Soft-threshold weight of the auxiliary variable attached to `op`.
    pub fn tv_weight(&self, op: TvOperator) -> f64 {
        if op.is_spectral() {
            self.alpha3
        } else {
            self.alpha2
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamGrads,
    pub v: ParamGrads,
}

impl AdamState {
    pub fn new(params: &H2tfParams) -> Self {
        Self {
            step: 0,
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
        }
    }
}

fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, step: u64) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam update of every learnable parameter. Fixed transforms
/// are left untouched.
pub fn adam_step(
    params: &mut H2tfParams,
    state: &mut AdamState,
    grads: &ParamGrads,
    cfg: &AdamConfig,
) -> Result<()> {
    if !grads.matches_shape(params) || !state.m.matches_shape(params) {
        return Err(Error::Shape("gradient or moments do not match the parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient at Adam step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let step = state.step;
    for (d, p) in params.factors.iter_mut().enumerate() {
        adam_update(
            p.data_mut(),
            grads.factors[d].data(),
            state.m.factors[d].data_mut(),
            state.v.factors[d].data_mut(),
            cfg,
            step,
        );
    }
    if params.transforms_learnable {
        for (t, p) in params.transforms.iter_mut().enumerate() {
            adam_update(
                p.data_mut(),
                grads.transforms[t].data(),
                state.m.transforms[t].data_mut(),
                state.v.transforms[t].data_mut(),
                cfg,
                step,
            );
        }
    }
    Ok(())
}

/// `V = Soft_{weight/mu}(op(X) + Lambda/mu)`.
pub fn update_v(
    x: &Tensor3,
    lambda: &Tensor3,
    mu: f64,
    weight: f64,
    op: TvOperator,
) -> Result<Tensor3> {
    x.same_dims(lambda)?;
    if !(mu > 0.0) {
        return Err(Error::Argument(format!("mu must be > 0, got {mu}")));
    }
    let mut arg = op.apply(x);
    arg.axpy(1.0 / mu, lambda);
    soft_threshold(&arg, weight / mu)
}

/// `S = Soft_{alpha1/2}(Y - X)`, the exact minimizer of `||Y - X - S||^2 + alpha1 ||S||_1`.
pub fn update_s(y: &Tensor3, x: &Tensor3, alpha1: f64) -> Result<Tensor3> {
    y.same_dims(x)?;
    if !(alpha1 >= 0.0) {
        return Err(Error::Argument(format!("alpha1 must be >= 0, got {alpha1}")));
    }
    soft_threshold(&y.sub(x), alpha1 / 2.0)
}

/// `Lambda_i += mu * (op_i(X) - V_i)` for the four operators.
pub fn update_multipliers(
    lambda: &mut [Tensor3; 4],
    x: &Tensor3,
    v: &[Tensor3; 4],
    mu: f64,
) -> Result<()> {
    for ((l, op), vi) in lambda.iter_mut().zip(TvOperator::ALL).zip(v) {
        x.same_dims(vi)?;
        x.same_dims(l)?;
        let r = op.apply(x).sub(vi);
        l.axpy(mu, &r);
    }
    Ok(())
}

/// `D_i = V_i - Lambda_i / mu`.
pub fn tv_targets(v: &[Tensor3; 4], lambda: &[Tensor3; 4], mu: f64) -> TvTargets {
    [0, 1, 2, 3].map(|i| {
        let mut d = v[i].clone();
        d.axpy(-1.0 / mu, &lambda[i]);
        d
    })
}

/// Value of the denoising objective at `(X, S)`.
pub fn model_objective(y: &Tensor3, x: &Tensor3, s: &Tensor3, cfg: &SolverConfig) -> (f64, f64) {
    let fidelity = y.sub(x).sub(s).norm_sq();
    let tv: f64 = TvOperator::ALL
        .iter()
        .map(|&op| cfg.tv_weight(op) * op.apply(x).norm_l1())
        .sum();
    (fidelity + cfg.alpha1 * s.norm_l1() + tv, fidelity)
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Denoising objective at the end of the iteration.
    pub loss: f64,
    /// `||Y - X - S||_F^2`.
    pub fidelity: f64,
    pub sparse_l1: f64,
    /// `||op_i(X) - V_i||_F` for the four operators.
    pub residuals: [f64; 4],
    /// Relative change of `X` over the iteration.
    pub rel_change: f64,
    /// PSNR against a reference, in the caller's units, when one was supplied.
    pub psnr: Option<f64>,
    /// Wall time since the solver started.
    pub seconds: f64,
}

/// Sub-updates of one outer iteration, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    UpdateV,
    UpdateS,
    AdamStep,
    UpdateMultipliers,
}

/// Affine map from the caller's units to the solver's `[0, 1]` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub offset: f64,
    pub range: f64,
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling {
        offset: 0.0,
        range: 1.0,
    };

    /// Min-max scaling of `y`; a constant cube keeps unit range.
    pub fn min_max(y: &Tensor3) -> Self {
        let (lo, hi) = y.min_max();
        let range = if hi > lo { hi - lo } else { 1.0 };
        Self { offset: lo, range }
    }

    pub fn forward(&self, t: &Tensor3) -> Tensor3 {
        t.map(|v| (v - self.offset) / self.range)
    }

    pub fn inverse(&self, t: &Tensor3) -> Tensor3 {
        t.map(|v| v * self.range + self.offset)
    }

    /// For additive components such as `S`: scale only.
    pub fn inverse_delta(&self, t: &Tensor3) -> Tensor3 {
        t.scale(self.range)
    }
}

/// Everything the solver carries between iterations.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: usize,
    pub params: H2tfParams,
    pub s: Tensor3,
    pub v: [Tensor3; 4],
    pub lambda: [Tensor3; 4],
    pub adam: AdamState,
    pub diagnostics: Vec<IterationRecord>,
}

/// Stepwise ADMM driver on already-scaled data.
pub struct Solver {
    cfg: SolverConfig,
    y: Tensor3,
    truth: Option<(Tensor3, Scaling)>,
    state: SolverState,
    x: Tensor3,
    /// Objective at the initial point with `S = 0`; reference for the divergence guard.
    initial_loss: f64,
    quiet_iters: usize,
    started: Instant,
}

impl Solver {
    pub fn new(y: Tensor3, model_cfg: &ModelConfig, cfg: SolverConfig) -> Result<Self> {
        model_cfg.validate()?;
        Self::from_params(y, init_params(model_cfg)?, cfg)
    }

    /// Starts from given parameters instead of a fresh initialization.
    pub fn from_params(y: Tensor3, params: H2tfParams, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        if y.dims() != params.shape {
            return Err(Error::Shape(format!(
                "input {:?} does not match model shape {:?}",
                y.dims(),
                params.shape
            )));
        }
        if !y.is_finite() {
            return Err(Error::Numeric("input contains non-finite values".into()));
        }
        let x = forward(&params)?;
        let (h, w, b) = y.dims();
        let zero = Tensor3::zeros(h, w, b);
        let initial_loss = model_objective(&y, &x, &zero, &cfg).0;
        let state = SolverState {
            t: 0,
            adam: AdamState::new(&params),
            params,
            s: zero.clone(),
            v: [0; 4].map(|_| zero.clone()),
            lambda: [0; 4].map(|_| zero.clone()),
            diagnostics: Vec::new(),
        };
        Ok(Self {
            cfg,
            y,
            truth: None,
            state,
            x,
            initial_loss,
            quiet_iters: 0,
            started: Instant::now(),
        })
    }

    /// Record PSNR against `truth` (caller's units) each iteration; `scaling`
    /// maps solver units back to the caller's.
    pub fn with_truth(mut self, truth: Tensor3, scaling: Scaling) -> Result<Self> {
        truth.same_dims(&self.y)?;
        self.truth = Some((truth, scaling));
        Ok(self)
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn x(&self) -> &Tensor3 {
        &self.x
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// True once the relative change of `X` stayed below `tol` for
    /// [`STOP_WINDOW`] consecutive iterations.
    pub fn converged(&self) -> bool {
        self.quiet_iters >= STOP_WINDOW
    }

    pub fn step(&mut self) -> Result<&IterationRecord> {
        self.step_traced(&mut |_| {})
    }

    /// One outer iteration, reporting each sub-update to `trace` as it starts.
    pub fn step_traced(&mut self, trace: &mut dyn FnMut(Phase)) -> Result<&IterationRecord> {
        let cfg = &self.cfg;
        let mu = cfg.mu;
        let st = &mut self.state;

        trace(Phase::UpdateV);
        for (i, op) in TvOperator::ALL.into_iter().enumerate() {
            st.v[i] = update_v(&self.x, &st.lambda[i], mu, cfg.tv_weight(op), op)?;
        }

        trace(Phase::UpdateS);
        st.s = update_s(&self.y, &self.x, cfg.alpha1)?;

        let d = tv_targets(&st.v, &st.lambda, mu);
        for _ in 0..cfg.inner_adam_steps {
            trace(Phase::AdamStep);
            let (loss, grads) = objective_and_grad(&st.params, &self.y, &st.s, &d, mu)?;
            if !loss.is_finite() {
                return Err(self.diverged(format!("X-subproblem loss is {loss}")));
            }
            if let Err(e) = adam_step(&mut st.params, &mut st.adam, &grads, &cfg.adam) {
                return Err(self.diverged(e.to_string()));
            }
        }
        let x_new = forward(&st.params)?;

        trace(Phase::UpdateMultipliers);
        update_multipliers(&mut st.lambda, &x_new, &st.v, mu)?;

        st.t += 1;
        let (loss, fidelity) = model_objective(&self.y, &x_new, &st.s, cfg);
        let residuals =
            [0, 1, 2, 3].map(|i| TvOperator::ALL[i].apply(&x_new).sub(&st.v[i]).norm_fro());
        let denom = self.x.norm_fro().max(f64::MIN_POSITIVE);
        let rel_change = x_new.sub(&self.x).norm_fro() / denom;
        let psnr_now = match &self.truth {
            Some((truth, scaling)) => Some(psnr(&scaling.inverse(&x_new), truth)?),
            None => None,
        };
        st.diagnostics.push(IterationRecord {
            iter: st.t,
            loss,
            fidelity,
            sparse_l1: st.s.norm_l1(),
            residuals,
            rel_change,
            psnr: psnr_now,
            seconds: self.started.elapsed().as_secs_f64(),
        });
        self.x = x_new;

        if rel_change < self.cfg.tol {
            self.quiet_iters += 1;
        } else {
            self.quiet_iters = 0;
        }

        if !loss.is_finite() {
            return Err(self.diverged(format!("objective is {loss}")));
        }
        let l0 = self.initial_loss;
        if l0 > 0.0 && loss > DIVERGENCE_FACTOR * l0 {
            return Err(self.diverged(format!(
                "objective {loss:.4e} exceeds {DIVERGENCE_FACTOR}x its initial value {l0:.4e}"
            )));
        }
        Ok(self.state.diagnostics.last().unwrap())
    }

    fn diverged(&self, reason: String) -> Error {
        Error::Diverged {
            iteration: self.state.t + 1,
            reason,
            diagnostics: self.state.diagnostics.clone(),
        }
    }

    pub fn into_parts(self) -> (Tensor3, SolverState) {
        (self.x, self.state)
    }
}

/// Output of [`run`], in the caller's units.
#[derive(Debug, Clone)]
pub struct DenoiseResult {
    /// Clean estimate.
    pub x: Tensor3,
    /// Sparse noise component.
    pub s: Tensor3,
    pub params: H2tfParams,
    pub diagnostics: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub scaling: Scaling,
    pub model: ModelConfig,
    pub solver: SolverConfig,
}

/// Options for [`run_with`].
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Reference cube for per-iteration PSNR, in the input's units.
    pub truth: Option<&'a Tensor3>,
    /// Called after every iteration.
    pub on_iteration: Option<&'a mut dyn FnMut(&IterationRecord)>,
}

pub fn run(y: &Tensor3, model_cfg: &ModelConfig, cfg: &SolverConfig) -> Result<DenoiseResult> {
    run_with(y, model_cfg, cfg, RunOptions::default())
}

/// Denoises `y`. Deterministic in the configurations.
pub fn run_with(
    y: &Tensor3,
    model_cfg: &ModelConfig,
    cfg: &SolverConfig,
    mut opts: RunOptions<'_>,
) -> Result<DenoiseResult> {
    if !y.is_finite() {
        return Err(Error::Numeric("input contains non-finite values".into()));
    }
    let scaling = if cfg.rescale {
        Scaling::min_max(y)
    } else {
        Scaling::IDENTITY
    };
    let mut solver = Solver::new(scaling.forward(y), model_cfg, cfg.clone())?;
    if let Some(truth) = opts.truth {
        solver = solver.with_truth(truth.clone(), scaling)?;
    }
    while solver.state().t < cfg.max_iters && !solver.converged() {
        let rec = solver.step()?;
        if let Some(cb) = opts.on_iteration.as_mut() {
            cb(rec);
        }
    }
    let converged = solver.converged();
    let (x, state) = solver.into_parts();
    Ok(DenoiseResult {
        x: scaling.inverse(&x),
        s: scaling.inverse_delta(&state.s),
        params: state.params,
        iterations: state.t,
        diagnostics: state.diagnostics,
        converged,
        scaling,
        model: model_cfg.clone(),
        solver: cfg.clone(),
    })
}
