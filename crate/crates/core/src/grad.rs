//! Reverse-mode gradients of the factorization.
//!
//! [`forward_with_tape`] evaluates the model exactly like
//! [`model::forward`](crate::model::forward) while keeping the pre-activation
//! tensors; [`backward`] replays the composition in reverse. Pre-activations
//! (not post) are kept because the leaky-rectifier mask depends on their sign.

use std::hash::Hasher;

use crate::diff::TvOperator;
use crate::error::{Error, Result};
use crate::model::H2tfParams;
use crate::tensor::{
    facewise_product, facewise_product_nt, facewise_product_tn, mode3_gram, mode3_product,
    Matrix, Tensor3,
};

/// Gradients, shape-congruent with [`H2tfParams::factors`] and
/// [`H2tfParams::transforms`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub factors: Vec<Tensor3>,
    pub transforms: Vec<Matrix>,
}

impl ParamGrads {
    pub fn zeros_like(params: &H2tfParams) -> Self {
        Self {
            factors: params
                .factors
                .iter()
                .map(|f| {
                    let (a, b, c) = f.dims();
                    Tensor3::zeros(a, b, c)
                })
                .collect(),
            transforms: params
                .transforms
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    /// All entries in parameter order: factors first, then transforms.
    pub fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.factors
            .iter()
            .flat_map(|f| f.data().iter().copied())
            .chain(self.transforms.iter().flat_map(|t| t.data().iter().copied()))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries().all(f64::is_finite)
    }

    pub fn matches_shape(&self, params: &H2tfParams) -> bool {
        self.factors.len() == params.factors.len()
            && self.transforms.len() == params.transforms.len()
            && self
                .factors
                .iter()
                .zip(&params.factors)
                .all(|(g, p)| g.dims() == p.dims())
            && self
                .transforms
                .iter()
                .zip(&params.transforms)
                .all(|(g, p)| g.dims() == p.dims())
    }
}

/// Intermediates of one forward evaluation.
#[derive(Debug, Clone)]
pub struct Tape {
    fingerprint: u64,
    /// Pre-activations of the inner face-wise products (`l - 2` of them).
    hmf_pre: Vec<Tensor3>,
    /// Output of the factorization, input of the first transform.
    z: Tensor3,
    /// Pre-activations of the inner mode-3 products (`m - 1` of them).
    hnt_pre: Vec<Tensor3>,
}

impl Tape {
    /// Number of activation records.
    pub fn len(&self) -> usize {
        self.hmf_pre.len() + self.hnt_pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hmf_output(&self) -> &Tensor3 {
        &self.z
    }
}

fn fingerprint(params: &H2tfParams) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for f in &params.factors {
        let (a, b, c) = f.dims();
        h.write_usize(a);
        h.write_usize(b);
        h.write_usize(c);
        for v in f.data() {
            h.write_u64(v.to_bits());
        }
    }
    for t in &params.transforms {
        h.write_usize(t.rows());
        for v in t.data() {
            h.write_u64(v.to_bits());
        }
    }
    h.write_u64(params.activation.slope.to_bits());
    h.finish()
}

/// Forward pass that records what [`backward`] needs. The returned tensor is
/// bitwise equal to [`model::forward`](crate::model::forward).
pub fn forward_with_tape(params: &H2tfParams) -> Result<(Tensor3, Tape)> {
    params.validate()?;
    let act = params.activation;
    let f = &params.factors;
    let mut z = facewise_product(&f[1], &f[0])?;
    let mut hmf_pre = Vec::with_capacity(f.len().saturating_sub(2));
    for w in &f[2..] {
        let a = act.apply_tensor(&z);
        hmf_pre.push(z);
        z = facewise_product(w, &a)?;
    }

    let mut hnt_pre = Vec::new();
    let x = match params.transforms.split_first() {
        None => z.clone(),
        Some((first, rest)) => {
            let mut u = mode3_product(&z, first)?;
            for t in rest {
                let a = act.apply_tensor(&u);
                hnt_pre.push(u);
                u = mode3_product(&a, t)?;
            }
            u
        }
    };
    let tape = Tape {
        fingerprint: fingerprint(params),
        hmf_pre,
        z,
        hnt_pre,
    };
    Ok((x, tape))
}

fn mask(g: &Tensor3, pre: &Tensor3, params: &H2tfParams) -> Tensor3 {
    let act = params.activation;
    g.zip_map(pre, |gv, p| gv * act.derivative(p))
}

/// Gradient of `<g_x, X(theta)>` with respect to every parameter, at the point
/// recorded on `tape`. The tape is not consumed; replays give identical results.
pub fn backward(tape: &Tape, params: &H2tfParams, g_x: &Tensor3) -> Result<ParamGrads> {
    if tape.fingerprint != fingerprint(params) {
        return Err(Error::State(
            "tape was recorded for different parameters".into(),
        ));
    }
    let (h, w, b) = params.shape;
    if g_x.dims() != (h, w, b) {
        return Err(Error::Shape(format!(
            "output gradient {:?}, expected {:?}",
            g_x.dims(),
            params.shape
        )));
    }
    let act = params.activation;
    let mut grads = ParamGrads::zeros_like(params);

    // Transforms, last to first.
    let mut g = g_x.clone();
    for p in (0..params.transforms.len()).rev() {
        let input = if p == 0 {
            tape.z.clone()
        } else {
            act.apply_tensor(&tape.hnt_pre[p - 1])
        };
        grads.transforms[p] = mode3_gram(&g, &input)?;
        let g_in = mode3_product(&g, &params.transforms[p].transpose())?;
        g = if p == 0 {
            g_in
        } else {
            mask(&g_in, &tape.hnt_pre[p - 1], params)
        };
    }

    // Factors: product d is factors[d] . A_{d-1}, with A_0 = W_1.
    let f = &params.factors;
    for d in (1..f.len()).rev() {
        let input = if d == 1 {
            f[0].clone()
        } else {
            act.apply_tensor(&tape.hmf_pre[d - 2])
        };
        grads.factors[d] = facewise_product_nt(&g, &input)?;
        let g_in = facewise_product_tn(&f[d], &g)?;
        if d == 1 {
            grads.factors[0] = g_in;
            break;
        }
        g = mask(&g_in, &tape.hmf_pre[d - 2], params);
    }
    Ok(grads)
}

/// Targets `D_1..D_4` of the four difference terms, in [`TvOperator::ALL`] order.
pub type TvTargets = [Tensor3; 4];

/// `||Y - X - S||^2 + mu/2 * sum_i ||op_i(X) - D_i||^2` for a given `X`.
pub fn x_objective(x: &Tensor3, y: &Tensor3, s: &Tensor3, d: &TvTargets, mu: f64) -> f64 {
    let fid: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .zip(s.data())
        .map(|((xv, yv), sv)| (yv - xv - sv).powi(2))
        .sum();
    let pen: f64 = TvOperator::ALL
        .iter()
        .zip(d)
        .map(|(op, di)| op.apply(x).sub(di).norm_sq())
        .sum();
    fid + 0.5 * mu * pen
}

/// Value of [`x_objective`] and its gradient with respect to `X`.
pub fn x_objective_grad(
    x: &Tensor3,
    y: &Tensor3,
    s: &Tensor3,
    d: &TvTargets,
    mu: f64,
) -> (f64, Tensor3) {
    let r = y.sub(x).sub(s);
    let mut loss = r.norm_sq();
    let mut g = r.scale(-2.0);
    for (op, di) in TvOperator::ALL.iter().zip(d) {
        let e = op.apply(x).sub(di);
        loss += 0.5 * mu * e.norm_sq();
        g.axpy(mu, &op.adjoint(&e));
    }
    (loss, g)
}

/// Loss of the X subproblem at `params` and its gradient with respect to every
/// parameter.
pub fn objective_and_grad(
    params: &H2tfParams,
    y: &Tensor3,
    s: &Tensor3,
    d: &TvTargets,
    mu: f64,
) -> Result<(f64, ParamGrads)> {
    if !(mu >= 0.0) {
        return Err(Error::Argument(format!("penalty must be >= 0, got {mu}")));
    }
    let dims = params.shape;
    for t in [y, s].into_iter().chain(d.iter()) {
        if t.dims() != dims {
            return Err(Error::Shape(format!(
                "objective input {:?}, expected {dims:?}",
                t.dims()
            )));
        }
    }
    let (x, tape) = forward_with_tape(params)?;
    let (loss, g_x) = x_objective_grad(&x, y, s, d, mu);
    let grads = backward(&tape, params, &g_x)?;
    Ok((loss, grads))
}

/// Central differences of a scalar function of a flat vector.
pub fn central_differences(
    point: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    step: f64,
) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let fp = f(&x);
            x[i] = orig - step;
            let fm = f(&x);
            x[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Central-difference gradient of `loss` over every parameter entry. Costs two
/// evaluations per entry; meant for small models in tests.
pub fn finite_diff_grads(
    params: &H2tfParams,
    loss: impl Fn(&H2tfParams) -> f64,
    step: f64,
) -> Result<ParamGrads> {
    if !(step > 0.0) {
        return Err(Error::Argument(format!("step must be > 0, got {step}")));
    }
    let mut grads = ParamGrads::zeros_like(params);
    let mut work = params.clone();
    let eval = |work: &mut H2tfParams, set: &dyn Fn(&mut H2tfParams, f64), orig: f64| {
        set(work, orig + step);
        let fp = loss(work);
        set(work, orig - step);
        let fm = loss(work);
        set(work, orig);
        (fp - fm) / (2.0 * step)
    };
    for d in 0..params.factors.len() {
        for e in 0..params.factors[d].len() {
            let orig = params.factors[d].data()[e];
            grads.factors[d].data_mut()[e] = eval(
                &mut work,
                &|p: &mut H2tfParams, v| p.factors[d].data_mut()[e] = v,
                orig,
            );
        }
    }
    for t in 0..params.transforms.len() {
        for e in 0..params.transforms[t].data().len() {
            let orig = params.transforms[t].data()[e];
            grads.transforms[t].data_mut()[e] = eval(
                &mut work,
                &|p: &mut H2tfParams, v| p.transforms[t].data_mut()[e] = v,
                orig,
            );
        }
    }
    Ok(grads)
}

/// Largest relative error between two gradients over the entries where the
/// reference magnitude exceeds `floor`.
pub fn max_relative_error(analytic: &ParamGrads, reference: &ParamGrads, floor: f64) -> f64 {
    analytic
        .entries()
        .zip(reference.entries())
        .filter(|(_, r)| r.abs() > floor)
        .map(|(a, r)| ((a - r) / r).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params, Activation, InitScale, ModelConfig};
    use crate::random::{gaussian_matrix, rng};
    use crate::testutil::random_tensor;

    fn model(
        h: usize,
        w: usize,
        b: usize,
        ranks: &[usize],
        m: usize,
        seed: u64,
    ) -> H2tfParams {
        let cfg = ModelConfig {
            shape: (h, w, b),
            ranks: ranks.to_vec(),
            hnt_layers: m,
            activation: Activation::default(),
            init: InitScale::FanIn,
            seed,
        };
        let mut p = init_params(&cfg).unwrap();
        let mut r = rng(seed + 500);
        for t in &mut p.transforms {
            *t = gaussian_matrix(b, b, 0.7, &mut r);
        }
        p
    }

    #[test]
    fn taped_forward_is_bitwise_forward() {
        let p = model(5, 4, 3, &[4, 2, 3, 4, 5], 3, 1);
        let (x, tape) = forward_with_tape(&p).unwrap();
        assert_eq!(x, forward(&p).unwrap());
        assert_eq!(tape.len(), (4 - 2) + (3 - 1));
    }

    #[test]
    fn replayed_backward_is_identical() {
        let p = model(4, 4, 2, &[4, 3, 2, 4], 2, 2);
        let (_, tape) = forward_with_tape(&p).unwrap();
        let g = random_tensor(4, 4, 2, 3);
        let a = backward(&tape, &p, &g).unwrap();
        let b = backward(&tape, &p, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut p = model(3, 3, 2, &[3, 2, 3], 1, 4);
        let (_, tape) = forward_with_tape(&p).unwrap();
        p.factors[0].data_mut()[0] += 1.0;
        let g = Tensor3::zeros(3, 3, 2);
        assert!(matches!(backward(&tape, &p, &g), Err(Error::State(_))));
        let (_, tape) = forward_with_tape(&p).unwrap();
        assert!(matches!(
            backward(&tape, &p, &Tensor3::zeros(3, 3, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let p = model(4, 3, 2, &[3, 2, 4], 2, 5);
        let (_, tape) = forward_with_tape(&p).unwrap();
        let g = backward(&tape, &p, &Tensor3::zeros(4, 3, 2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn linear_two_factor_closed_form() {
        let mut p = model(4, 5, 3, &[5, 2, 4], 0, 6);
        p.activation = Activation::identity();
        let (_, tape) = forward_with_tape(&p).unwrap();
        let g_x = random_tensor(4, 5, 3, 7);
        let g = backward(&tape, &p, &g_x).unwrap();
        for k in 0..3 {
            let gk = g_x.frontal_slice(k).unwrap();
            let w1k = p.factors[0].frontal_slice(k).unwrap();
            let want = gk.matmul(&w1k.transpose()).unwrap();
            let got = g.factors[1].frontal_slice(k).unwrap();
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn mode3_adjoint_pairing() {
        let z = random_tensor(3, 4, 5, 1);
        let h = gaussian_matrix(5, 5, 1.0, &mut rng(2));
        let g = random_tensor(3, 4, 5, 3);
        // Tensor side.
        let lhs = g.dot(&mode3_product(&z, &h).unwrap());
        let rhs = mode3_product(&g, &h.transpose()).unwrap().dot(&z);
        assert!((lhs - rhs).abs() < 1e-12);
        // Matrix side.
        let gram = mode3_gram(&g, &z).unwrap();
        let pairing: f64 = gram.data().iter().zip(h.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - pairing).abs() < 1e-12);
    }

    #[test]
    fn quadratic_central_difference() {
        let g = central_differences(&[3.0], |v| v[0] * v[0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_differences_are_deterministic() {
        let p = model(3, 3, 2, &[3, 2, 3], 1, 8);
        let g = random_tensor(3, 3, 2, 9);
        let f = |q: &H2tfParams| forward(q).unwrap().dot(&g);
        let a = finite_diff_grads(&p, f, 1e-6).unwrap();
        let b = finite_diff_grads(&p, f, 1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, (ranks, m)) in [
            (vec![3, 2, 3], 1),
            (vec![4, 3, 2, 3, 5], 2),
            (vec![3, 3, 2, 3], 0),
        ]
        .into_iter()
        .enumerate()
        {
            let (h, w) = (*ranks.last().unwrap(), ranks[0]);
            let p = model(h, w, 2, &ranks, m, seed as u64);
            let g_x = random_tensor(h, w, 2, 100 + seed as u64);
            let (_, tape) = forward_with_tape(&p).unwrap();
            let analytic = backward(&tape, &p, &g_x).unwrap();
            let fd = finite_diff_grads(&p, |q| forward(q).unwrap().dot(&g_x), 1e-6).unwrap();
            let err = max_relative_error(&analytic, &fd, 1e-8);
            assert!(err < 1e-5, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn stationary_fit_has_zero_loss_and_gradient() {
        let p = model(4, 4, 3, &[4, 2, 4], 1, 10);
        let x = forward(&p).unwrap();
        let s = random_tensor(4, 4, 3, 11);
        let y = x.add(&s);
        let d = TvOperator::ALL.map(|op| op.apply(&x));
        let (loss, g) = objective_and_grad(&p, &y, &s, &d, 0.7).unwrap();
        assert!(loss < 1e-24);
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn zero_penalty_is_least_squares() {
        let p = model(3, 4, 2, &[4, 2, 3], 1, 12);
        let y = random_tensor(3, 4, 2, 13);
        let s = Tensor3::zeros(3, 4, 2);
        let d = [0, 1, 2, 3].map(|i| random_tensor(3, 4, 2, 20 + i));
        let (loss, g) = objective_and_grad(&p, &y, &s, &d, 0.0).unwrap();
        let (x, tape) = forward_with_tape(&p).unwrap();
        assert!((loss - y.sub(&x).norm_sq()).abs() < 1e-12);
        let want = backward(&tape, &p, &y.sub(&x).scale(-2.0)).unwrap();
        assert_eq!(g, want);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let p = model(4, 3, 2, &[3, 2, 3, 4], 2, 14);
        let y = random_tensor(4, 3, 2, 15);
        let s = random_tensor(4, 3, 2, 16).scale(0.1);
        let d = [0, 1, 2, 3].map(|i| random_tensor(4, 3, 2, 30 + i).scale(0.3));
        let mu = 0.8;
        let (_, g) = objective_and_grad(&p, &y, &s, &d, mu).unwrap();
        let fd = finite_diff_grads(
            &p,
            |q| x_objective(&forward(q).unwrap(), &y, &s, &d, mu),
            1e-6,
        )
        .unwrap();
        let err = max_relative_error(&g, &fd, 1e-8);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn objective_rejects_mismatched_shapes() {
        let p = model(3, 3, 2, &[3, 2, 3], 0, 1);
        let bad = Tensor3::zeros(3, 3, 1);
        let ok = Tensor3::zeros(3, 3, 2);
        let d = [0; 4].map(|_| ok.clone());
        assert!(matches!(
            objective_and_grad(&p, &bad, &ok, &d, 1.0),
            Err(Error::Shape(_))
        ));
    }
}
