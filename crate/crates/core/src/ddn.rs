//! Deep differential network: a feedforward net whose input Jacobian is
//! assembled in closed form from per-layer `diag(g'(a))·W` factors.
//!
//! All passes work on column batches (one sample per column). Parameter
//! gradients are available for losses of the form
//! `Σ_i d_value_i·Δh(x_i) + d_jac_i·∂Δh/∂x(x_i)`; the Jacobian part is
//! handled by pushing the cotangent `d_jac_i` forward as an input tangent and
//! reverse-differentiating both the primal and the tangent sweep, which
//! brings in `g''(a)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "softplus" => Some(Activation::Softplus),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if a > 0.0 {
                    a + (-a).exp().ln_1p()
                } else {
                    a.exp().ln_1p()
                }
            }
            Activation::Identity => a,
        }
    }

    /// `g'(a)`; the logistic sigmoid for softplus.
    #[inline]
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(a),
            Activation::Identity => 1.0,
        }
    }

    #[inline]
    pub fn second_derivative(self, a: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = sigmoid(a);
                s * (1.0 - s)
            }
            Activation::Identity => 0.0,
        }
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `n_out × n_in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

/// Per-layer activations for a batch; column `i` belongs to sample `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: DMatrix<f64>,
    /// `a = W y + bias` for each layer.
    pub pre: Vec<DMatrix<f64>>,
    /// `y' = g(a)` for each layer.
    pub post: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.ncols()
    }

    pub fn value(&self, i: usize) -> f64 {
        self.post.last().map(|y| y[(0, i)]).unwrap_or(0.0)
    }

    pub fn values(&self) -> DVector<f64> {
        match self.post.last() {
            Some(y) => y.row(0).transpose(),
            None => DVector::zeros(0),
        }
    }
}

/// Gradients (or any quantity) shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl NetworkGrads {
    pub fn zeros_like(net: &NetworkParams) -> Self {
        Self {
            weights: net.layers.iter().map(|l| DMatrix::zeros(l.n_out(), l.n_in())).collect(),
            biases: net.layers.iter().map(|l| DVector::zeros(l.n_out())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetworkGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }

    /// Flattened in the same order as [`NetworkParams::param`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.amax())
            .chain(self.biases.iter().map(|b| b.amax()))
            .fold(0.0, f64::max)
    }
}

impl NetworkParams {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.n_out() {
                return Err(Error::Dimension {
                    context: "layer bias",
                    expected: l.n_out(),
                    actual: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].n_out() != l.n_in() {
                return Err(Error::Dimension {
                    context: "layer chain",
                    expected: layers[i - 1].n_out(),
                    actual: l.n_in(),
                });
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Input dimension followed by every layer's output dimension.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.n_out()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Zero the output layer so the network computes `Δh ≡ 0` with zero
    /// Jacobian.
    pub fn zero_output(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            let nw = l.weight.len();
            if idx < nw {
                return (li, Some((idx / l.n_in(), idx % l.n_in())), 0);
            }
            idx -= nw;
            if idx < l.bias.len() {
                return (li, None, idx);
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter by flat index: per layer, row-major weights then bias.
    pub fn param(&self, idx: usize) -> f64 {
        match self.locate(idx) {
            (li, Some(rc), _) => self.layers[li].weight[rc],
            (li, None, b) => self.layers[li].bias[b],
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        match self.locate(idx) {
            (li, Some(rc), _) => self.layers[li].weight[rc] = value,
            (li, None, b) => self.layers[li].bias[b] = value,
        }
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim(),
                actual: rows,
            });
        }
        Ok(())
    }

    /// Forward pass over a batch of inputs stored as columns.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<ForwardCache> {
        self.check_input(inputs.nrows())?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let y = post.last().unwrap_or(inputs);
            let mut a = &layer.weight * y;
            for mut col in a.column_iter_mut() {
                col += &layer.bias;
            }
            let act = layer.activation;
            let out = a.map(|v| act.apply(v));
            pre.push(a);
            post.push(out);
        }
        if post.last().is_some_and(|y| y.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        Ok(ForwardCache {
            input: inputs.clone(),
            pre,
            post,
        })
    }

    /// `Δh(x)` for a single input together with its cache.
    pub fn forward(&self, x: &DVector<f64>) -> Result<(f64, ForwardCache)> {
        let cache = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
        Ok((cache.value(0), cache))
    }

    /// Input Jacobians for every cached sample, `n_in × batch`. Column `i`
    /// is `(W_L diag(g'(a_{L-1})) W_{L-1} ⋯ diag(g'(a_1)) W_1)ᵀ`.
    pub fn input_jacobian_batch(&self, cache: &ForwardCache) -> DMatrix<f64> {
        let b = cache.batch_size();
        let mut g = DMatrix::from_element(1, b, 1.0);
        for (layer, a) in self.layers.iter().zip(&cache.pre).rev() {
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                g.zip_apply(a, |gv, av| *gv *= act.derivative(av));
            }
            g = layer.weight.transpose() * g;
        }
        g
    }

    /// Input Jacobian of the single-sample cache, as a length-`n` vector.
    pub fn input_jacobian(&self, cache: &ForwardCache) -> DVector<f64> {
        self.input_jacobian_batch(cache).column(0).clone_owned()
    }

    /// `Δh(x)` and its input gradient without building a batch cache.
    pub fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_input(x.len())?;
        let mut y = x.clone();
        let mut slopes: Vec<Option<DVector<f64>>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut a = layer.bias.clone();
            a.gemv(1.0, &layer.weight, &y, 1.0);
            let act = layer.activation;
            if act == Activation::Identity {
                slopes.push(None);
                y = a;
            } else {
                slopes.push(Some(a.map(|v| act.derivative(v))));
                y = a.map(|v| act.apply(v));
            }
        }
        let value = y[0];
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        let mut g = DVector::from_element(1, 1.0);
        for (layer, slope) in self.layers.iter().zip(&slopes).rev() {
            if let Some(s) = slope {
                g.component_mul_assign(s);
            }
            g = layer.weight.tr_mul(&g);
        }
        Ok((value, g))
    }

    /// Parameter gradient of `Σ_i d_values[i]·Δh(x_i) + d_jacs[:, i]·∇Δh(x_i)`.
    pub fn backward_batch(&self, cache: &ForwardCache, d_values: &DVector<f64>, d_jacs: &DMatrix<f64>) -> NetworkGrads {
        let nl = self.layers.len();
        let b = cache.batch_size();
        let use_tangent = d_jacs.iter().any(|v| *v != 0.0);

        // Tangent sweep with the Jacobian cotangent as input direction.
        let mut tan_pre: Vec<DMatrix<f64>> = Vec::new();
        let mut tan_post: Vec<DMatrix<f64>> = Vec::new();
        if use_tangent {
            for (li, layer) in self.layers.iter().enumerate() {
                let ydot = if li == 0 { d_jacs } else { &tan_post[li - 1] };
                let adot = &layer.weight * ydot;
                let act = layer.activation;
                let mut out = adot.clone();
                out.zip_apply(&cache.pre[li], |o, a| *o *= act.derivative(a));
                tan_pre.push(adot);
                tan_post.push(out);
            }
        }

        let mut grads = NetworkGrads::zeros_like(self);
        let mut ybar = DMatrix::from_row_slice(1, b, d_values.as_slice());
        let mut ydotbar = if use_tangent {
            DMatrix::from_element(1, b, 1.0)
        } else {
            DMatrix::zeros(1, b)
        };

        for li in (0..nl).rev() {
            let layer = &self.layers[li];
            let act = layer.activation;
            let a = &cache.pre[li];
            let y_in = if li == 0 { &cache.input } else { &cache.post[li - 1] };

            let mut abar = ybar;
            if act != Activation::Identity {
                abar.zip_apply(a, |v, av| *v *= act.derivative(av));
            }
            let mut adotbar = ydotbar;
            if use_tangent && act != Activation::Identity {
                // ā += g''(a) ⊙ ȧ ⊙ ẏ̄'  (uses ẏ̄' before scaling by g')
                let mut second = adotbar.clone();
                second.zip_apply(a, |v, av| *v *= act.second_derivative(av));
                second.component_mul_assign(&tan_pre[li]);
                abar += second;
                adotbar.zip_apply(a, |v, av| *v *= act.derivative(av));
            }

            grads.weights[li].gemm(1.0, &abar, &y_in.transpose(), 0.0);
            if use_tangent {
                let ydot_in = if li == 0 { d_jacs } else { &tan_post[li - 1] };
                grads.weights[li].gemm(1.0, &adotbar, &ydot_in.transpose(), 1.0);
            }
            grads.biases[li] = abar.column_sum();

            if li > 0 {
                ybar = layer.weight.tr_mul(&abar);
                ydotbar = if use_tangent {
                    layer.weight.tr_mul(&adotbar)
                } else {
                    DMatrix::zeros(layer.n_in(), b)
                };
            } else {
                break;
            }
        }
        grads
    }

    /// Single-sample form of [`NetworkParams::backward_batch`].
    pub fn backward(&self, cache: &ForwardCache, d_value: f64, d_jacobian: &DVector<f64>) -> NetworkGrads {
        self.backward_batch(
            cache,
            &DVector::from_element(1, d_value),
            &DMatrix::from_column_slice(d_jacobian.len(), 1, d_jacobian.as_slice()),
        )
    }
}

/// Softplus hidden layers, linear scalar head. Weights uniform in
/// `±1/√n_in`, biases zero; deterministic in `seed`.
pub fn init_network(seed: u64, sizes: &[usize]) -> Result<NetworkParams> {
    if sizes.len() < 2 {
        return Err(Error::Config("sizes must list input and at least one layer".into()));
    }
    if *sizes.last().unwrap() != 1 {
        return Err(Error::Config("network output must be scalar".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nl = sizes.len() - 1;
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let weight = DMatrix::from_fn(n_out, n_in, |_, _| rng.random_range(-bound..bound));
            LayerParams {
                weight,
                bias: DVector::zeros(n_out),
                activation: if i + 1 == nl {
                    Activation::Identity
                } else {
                    Activation::Softplus
                },
            }
        })
        .collect();
    NetworkParams::new(layers)
}

/// Hidden widths used by both benchmark tasks.
pub const HIDDEN_SIZES: [usize; 2] = [128, 128];

pub fn default_sizes(input_dim: usize) -> Vec<usize> {
    vec![input_dim, HIDDEN_SIZES[0], HIDDEN_SIZES[1], 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: NetworkGrads,
    v: NetworkGrads,
}

impl AdamState {
    pub fn new(net: &NetworkParams, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: NetworkGrads::zeros_like(net),
            v: NetworkGrads::zeros_like(net),
        }
    }

    pub fn adam_step(&mut self, net: &mut NetworkParams, grads: &NetworkGrads) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        };
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let (gw, mw, vw) = (&grads.weights[li], &mut self.m.weights[li], &mut self.v.weights[li]);
            for (((p, g), m), v) in layer
                .weight
                .iter_mut()
                .zip(gw.iter())
                .zip(mw.iter_mut())
                .zip(vw.iter_mut())
            {
                update(p, *g, m, v);
            }
            let (gb, mb, vb) = (&grads.biases[li], &mut self.m.biases[li], &mut self.v.biases[li]);
            for (((p, g), m), v) in layer
                .bias
                .iter_mut()
                .zip(gb.iter())
                .zip(mb.iter_mut())
                .zip(vb.iter_mut())
            {
                update(p, *g, m, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::Rng;

    fn identity_net() -> NetworkParams {
        NetworkParams::new(vec![LayerParams {
            weight: DMatrix::identity(2, 2),
            bias: DVector::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn random_net(seed: u64, sizes: &[usize]) -> NetworkParams {
        let mut net = init_network(seed, sizes).unwrap();
        // nonzero biases so every code path is exercised
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for l in &mut net.layers {
            l.bias = DVector::from_fn(l.n_out(), |_, _| rng.random_range(-0.5..0.5));
        }
        net
    }

    fn fd_jacobian(net: &NetworkParams, x: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(x.len(), |j, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            (net.forward(&xp).unwrap().0 - net.forward(&xm).unwrap().0) / (2.0 * h)
        })
    }

    #[test]
    fn identity_network_passes_through() {
        let net = identity_net();
        let cache = net
            .forward_batch(&DMatrix::from_column_slice(2, 1, &[1.0, 2.0]))
            .unwrap();
        assert_eq!(cache.post[0].column(0).clone_owned(), dvector![1.0, 2.0]);
    }

    #[test]
    fn softplus_at_zero() {
        assert_relative_eq!(Activation::Softplus.apply(0.0), std::f64::consts::LN_2, epsilon = 1e-16);
        assert_eq!(Activation::Softplus.derivative(0.0), 0.5);
    }

    #[test]
    fn softplus_derivative_is_sigmoid() {
        let mut a: f64 = -30.0;
        while a <= 30.0 {
            let naive = 1.0 / (1.0 + (-a).exp());
            assert!((Activation::Softplus.derivative(a) - naive).abs() <= 1e-15);
            a += 0.37;
        }
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(Activation::Softplus.apply(800.0), 800.0);
        assert_eq!(Activation::Softplus.apply(-800.0), 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = init_network(3, &[2, 128, 128, 1]).unwrap();
        let x = dvector![0.3, -1.2];
        let (v1, _) = net.forward(&x).unwrap();
        let (v2, _) = net.forward(&x).unwrap();
        assert!(v1.is_finite());
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = init_network(3, &[2, 8, 1]).unwrap();
        assert!(matches!(net.forward(&dvector![1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn linear_layer_jacobian_is_weight() {
        let w = DMatrix::from_row_slice(1, 3, &[0.5, -2.0, 3.0]);
        let net = NetworkParams::new(vec![LayerParams {
            weight: w.clone(),
            bias: dvector![0.1],
            activation: Activation::Identity,
        }])
        .unwrap();
        let (_, cache) = net.forward(&dvector![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(net.input_jacobian(&cache), w.row(0).transpose());
    }

    #[test]
    fn softplus_jacobian_factor_at_zero() {
        // softplus layer with a = 0 followed by a sum head: Jacobian = 0.5·W1ᵀ·1
        let net = NetworkParams::new(vec![
            LayerParams {
                weight: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
                bias: DVector::zeros(2),
                activation: Activation::Softplus,
            },
            LayerParams {
                weight: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
                bias: DVector::zeros(1),
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let (_, cache) = net.forward(&dvector![0.0, 0.0]).unwrap();
        assert_eq!(net.input_jacobian(&cache), dvector![0.5, 0.5]);
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = if trial % 2 == 0 { 2 } else { 4 };
            let net = random_net(trial, &[n, 32, 32, 1]);
            let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let (_, cache) = net.forward(&x).unwrap();
            let jac = net.input_jacobian(&cache);
            let fd = fd_jacobian(&net, &x, 1e-5);
            let rel = (&jac - &fd).norm() / fd.norm();
            assert!(rel <= 1e-6, "trial {trial}: {rel}");
        }
    }

    #[test]
    fn batch_jacobian_matches_single() {
        let net = random_net(9, &[4, 16, 16, 1]);
        let xs = DMatrix::from_fn(4, 5, |r, c| (r as f64 - 1.5) * 0.3 + c as f64 * 0.1);
        let cache = net.forward_batch(&xs).unwrap();
        let jb = net.input_jacobian_batch(&cache);
        for c in 0..5 {
            let (_, single) = net.forward(&xs.column(c).clone_owned()).unwrap();
            assert_relative_eq!(jb.column(c).clone_owned(), net.input_jacobian(&single), epsilon = 1e-14);
        }
    }

    #[test]
    fn linear_backward_is_regression_gradient() {
        let net = NetworkParams::new(vec![LayerParams {
            weight: DMatrix::from_row_slice(1, 2, &[0.3, 0.7]),
            bias: dvector![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = dvector![1.5, -2.0];
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, 1.0, &DVector::zeros(2));
        assert_eq!(g.weights[0], DMatrix::from_row_slice(1, 2, &[1.5, -2.0]));
        assert_eq!(g.biases[0], dvector![1.0]);
    }

    #[test]
    fn zero_cotangents_give_zero_gradients() {
        let net = random_net(1, &[2, 8, 8, 1]);
        let (_, cache) = net.forward(&dvector![0.4, 0.1]).unwrap();
        let g = net.backward(&cache, 0.0, &DVector::zeros(2));
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn backward_matches_finite_differences_for_value_and_jacobian_terms() {
        let net = random_net(21, &[4, 16, 16, 1]);
        let xs = DMatrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
        let dv = dvector![0.7, -1.1, 0.4];
        let dj = DMatrix::from_fn(4, 3, |r, c| ((r + 2 * c) as f64 * 0.91).cos());
        let objective = |n: &NetworkParams| {
            let cache = n.forward_batch(&xs).unwrap();
            let j = n.input_jacobian_batch(&cache);
            cache.values().dot(&dv) + j.component_mul(&dj).sum()
        };
        let cache = net.forward_batch(&xs).unwrap();
        let g = net.backward_batch(&cache, &dv, &dj).to_flat();
        let h = 1e-5;
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for idx in (0..net.num_params()).step_by(7) {
            let mut p = net.clone();
            let base = net.param(idx);
            p.set_param(idx, base + h);
            let fp = objective(&p);
            p.set_param(idx, base - h);
            let fm = objective(&p);
            num.push((fp - fm) / (2.0 * h));
            ana.push(g[idx]);
        }
        let num = DVector::from_vec(num);
        let ana = DVector::from_vec(ana);
        let rel = (&num - &ana).norm() / num.norm();
        assert!(rel <= 1e-6, "relative error {rel}");
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = init_network(7, &default_sizes(2)).unwrap();
        let b = init_network(7, &default_sizes(2)).unwrap();
        let c = init_network(8, &default_sizes(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.layers[0].weight.shape(), (128, 2));
        assert_eq!(a.sizes(), vec![2, 128, 128, 1]);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|v| *v == 0.0)));
        let bound = 1.0 / 2f64.sqrt();
        assert!(a.layers[0].weight.iter().all(|v| v.abs() <= bound));
        assert_eq!(a.layers[2].activation, Activation::Identity);
        assert_eq!(a.layers[0].activation, Activation::Softplus);
    }

    #[test]
    fn flat_param_indexing_round_trips() {
        let mut net = init_network(2, &[2, 3, 1]).unwrap();
        assert_eq!(net.num_params(), 2 * 3 + 3 + 3 + 1);
        net.set_param(7, 42.0);
        assert_eq!(net.param(7), 42.0);
        assert_eq!(net.layers[0].bias[1], 42.0);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut net = init_network(1, &[2, 4, 1]).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamConfig::with_lr(1e-3));
        let zeros = NetworkGrads::zeros_like(&net);
        adam.adam_step(&mut net, &zeros);
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut net = init_network(1, &[2, 4, 1]).unwrap();
        let w0 = net.layers[1].weight[(0, 0)];
        let mut g = NetworkGrads::zeros_like(&net);
        g.weights[1][(0, 0)] = 1.0;
        let mut adam = AdamState::new(&net, AdamConfig::with_lr(1e-3));
        adam.adam_step(&mut net, &g);
        assert_relative_eq!(w0 - net.layers[1].weight[(0, 0)], 1e-3, max_relative = 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let mut net = NetworkParams::new(vec![LayerParams {
            weight: DMatrix::from_element(1, 1, 1.0),
            bias: dvector![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let mut adam = AdamState::new(&net, AdamConfig::with_lr(1e-2));
        for _ in 0..500 {
            let w = net.layers[0].weight[(0, 0)];
            let mut g = NetworkGrads::zeros_like(&net);
            g.weights[0][(0, 0)] = 2.0 * w;
            adam.adam_step(&mut net, &g);
        }
        assert!(net.layers[0].weight[(0, 0)].abs() < 1e-2);
    }

    #[test]
    fn zero_output_kills_value_and_jacobian() {
        let mut net = random_net(4, &[2, 8, 8, 1]);
        net.zero_output();
        let (v, cache) = net.forward(&dvector![1.0, -3.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(net.input_jacobian(&cache), DVector::zeros(2));
    }
}
