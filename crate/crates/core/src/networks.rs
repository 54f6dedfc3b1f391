//! The three two-layer perceptrons of the model: encoder (input -> vMF
//! posterior), decoder (latent [+ domain one-hot] -> reconstruction), and
//! domain classifier (latent -> probability of the target domain), together
//! with hand-derived backward passes and the gradient-reversal contract.
//!
//! Forward passes are pure; backward passes accumulate into a caller-owned
//! gradient mirror so batch evaluation is a plain loop.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::DomainLabel;
use crate::distributions::NORM_EPS;
use crate::math::{dot, logistic, norm2, softplus, sqrt, tanh};

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkError {
    ShapeMismatch {
        expected: usize,
        got: usize,
    },
    /// Encoder head emitted a (numerically) zero direction vector.
    DegenerateDirection,
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            Self::DegenerateDirection => write!(f, "encoder produced a degenerate direction"),
        }
    }
}

impl core::error::Error for NetworkError {}

/// Dense layer, weight stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl LayerParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
            out_dim,
            in_dim,
        }
    }

    fn glorot<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = sqrt(6.0 / (out_dim + in_dim) as f64);
        let weight = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight,
            bias: vec![0.0; out_dim],
            out_dim,
            in_dim,
        }
    }

    /// `W x + b`
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            out.push(self.bias[o] + dot(row, x));
        }
        out
    }

    /// Accumulates `dW += dout (x) x`, `db += dout`; returns `dx = W^T dout`.
    pub fn backward(&self, x: &[f64], dout: &[f64], grad: &mut LayerParams) -> Vec<f64> {
        debug_assert_eq!(dout.len(), self.out_dim);
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dout.iter().enumerate() {
            grad.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (i, (gw, dxi)) in grow.iter_mut().zip(dx.iter_mut()).enumerate() {
                *gw += g * x[i];
                *dxi += g * row[i];
            }
        }
        dx
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn tanh_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = tanh(*x);
    }
}

/// Domain label one-hot used by the conditioned decoder: S -> [1,0], T -> [0,1].
pub fn domain_one_hot(d: DomainLabel) -> [f64; 2] {
    match d {
        DomainLabel::Source => [1.0, 0.0],
        DomainLabel::Target => [0.0, 1.0],
    }
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// Encoder: `mu = normalize(W2 tanh(W1 x + b1) + b2)`, posterior concentration
/// `kappa = softplus(log_kappa)` as a single learned global scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub hidden: LayerParams,
    pub head_dir: LayerParams,
    pub log_kappa: f64,
}

#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    /// True Euclidean norm of `u` (before the epsilon guard).
    pub raw_norm: f64,
    pub mu: Vec<f64>,
    pub kappa: f64,
}

impl EncoderParams {
    pub fn forward(&self, x: &[f64]) -> EncodeCache {
        let mut h = self.hidden.forward(x);
        tanh_inplace(&mut h);
        let u = self.head_dir.forward(&h);
        let raw_norm = norm2(&u);
        let norm = raw_norm + NORM_EPS;
        let mu = u.iter().map(|&ui| ui / norm).collect();
        EncodeCache {
            h,
            u,
            raw_norm,
            mu,
            kappa: softplus(self.log_kappa),
        }
    }

    /// Backward from gradients w.r.t. `mu` and `kappa`.
    pub fn backward(
        &self,
        x: &[f64],
        cache: &EncodeCache,
        d_mu: &[f64],
        d_kappa: f64,
        grad: &mut EncoderGrads,
    ) {
        // kappa = softplus(log_kappa)
        grad.log_kappa += d_kappa * logistic(self.log_kappa);

        // mu_i = u_i / (raw_norm + eps), d norm / d u_j = u_j / raw_norm
        let norm = cache.raw_norm + NORM_EPS;
        let u_dot_dmu = dot(&cache.u, d_mu);
        let scale = u_dot_dmu / (norm * norm * cache.raw_norm.max(NORM_EPS));
        let du: Vec<f64> = cache
            .u
            .iter()
            .zip(d_mu)
            .map(|(&ui, &di)| di / norm - ui * scale)
            .collect();

        let dh = self.head_dir.backward(&cache.h, &du, &mut grad.head_dir);
        let da: Vec<f64> = dh
            .iter()
            .zip(&cache.h)
            .map(|(&dhi, &hi)| dhi * (1.0 - hi * hi))
            .collect();
        self.hidden.backward(x, &da, &mut grad.hidden);
    }
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// Decoder: `xhat = sigmoid(W4 tanh(W3 [z (+ onehot(d))] + b3) + b4)`.
/// When `domain_conditioned` is false the input is the latent alone.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub hidden: LayerParams,
    pub head: LayerParams,
    pub domain_conditioned: bool,
}

#[derive(Debug, Clone)]
pub struct DecodeCache {
    pub input: Vec<f64>,
    pub h: Vec<f64>,
    pub xhat: Vec<f64>,
}

impl DecoderParams {
    pub fn latent_dim(&self) -> usize {
        if self.domain_conditioned {
            self.hidden.in_dim - 2
        } else {
            self.hidden.in_dim
        }
    }

    pub fn forward(&self, z: &[f64], d: DomainLabel) -> DecodeCache {
        debug_assert_eq!(z.len(), self.latent_dim());
        let mut input = Vec::with_capacity(self.hidden.in_dim);
        input.extend_from_slice(z);
        if self.domain_conditioned {
            input.extend_from_slice(&domain_one_hot(d));
        }
        let mut h = self.hidden.forward(&input);
        tanh_inplace(&mut h);
        let o = self.head.forward(&h);
        let xhat = o.iter().map(|&oi| logistic(oi)).collect();
        DecodeCache { input, h, xhat }
    }

    /// Backward from the gradient w.r.t. `xhat`; returns the gradient w.r.t.
    /// the latent part of the input.
    pub fn backward(
        &self,
        cache: &DecodeCache,
        d_xhat: &[f64],
        grad: &mut DecoderGrads,
    ) -> Vec<f64> {
        let d_o: Vec<f64> = d_xhat
            .iter()
            .zip(&cache.xhat)
            .map(|(&g, &y)| g * y * (1.0 - y))
            .collect();
        let dh = self.head.backward(&cache.h, &d_o, &mut grad.head);
        let da: Vec<f64> = dh
            .iter()
            .zip(&cache.h)
            .map(|(&dhi, &hi)| dhi * (1.0 - hi * hi))
            .collect();
        let mut d_input = self.hidden.backward(&cache.input, &da, &mut grad.hidden);
        d_input.truncate(self.latent_dim());
        d_input
    }
}

// ---------------------------------------------------------------------------
// Domain classifier
// ---------------------------------------------------------------------------

/// Domain classifier: `p(d = T | z) = sigmoid(w . tanh(W z + b) + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClfParams {
    pub hidden: LayerParams,
    pub head: LayerParams,
}

#[derive(Debug, Clone)]
pub struct DomainClfCache {
    pub h: Vec<f64>,
    pub logit: f64,
    /// Probability of the target domain, strictly inside (0, 1).
    pub prob_target: f64,
}

impl DomainClfParams {
    pub fn forward(&self, z: &[f64]) -> DomainClfCache {
        let mut h = self.hidden.forward(z);
        tanh_inplace(&mut h);
        let logit = self.head.forward(&h)[0];
        DomainClfCache {
            h,
            logit,
            prob_target: logistic(logit),
        }
    }

    /// Backward from the gradient w.r.t. the logit; returns the gradient
    /// w.r.t. the latent input.
    pub fn backward(
        &self,
        z: &[f64],
        cache: &DomainClfCache,
        d_logit: f64,
        grad: &mut DomainClfGrads,
    ) -> Vec<f64> {
        let dh = self.head.backward(&cache.h, &[d_logit], &mut grad.head);
        let da: Vec<f64> = dh
            .iter()
            .zip(&cache.h)
            .map(|(&dhi, &hi)| dhi * (1.0 - hi * hi))
            .collect();
        self.hidden.backward(z, &da, &mut grad.hidden)
    }
}

/// Gradient reversal: identity on the forward pass, `g -> -lambda g` on the
/// backward pass. The encoder side of the adversarial objective receives the
/// domain classifier's input gradient through this.
pub fn grad_reverse(gradient: &mut [f64], lambda: f64) {
    for g in gradient.iter_mut() {
        *g *= -lambda;
    }
}

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

/// Dimensions and wiring of a model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden_units: usize,
    pub conditioned_decoder: bool,
    pub with_domain_clf: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub domain_clf: Option<DomainClfParams>,
}

impl ModelParams {
    /// Deterministic Glorot-uniform initialization from a dedicated RNG
    /// stream; `log_kappa` starts at the softplus preimage of
    /// `posterior_kappa_init`.
    pub fn init(shape: &ModelShape, seed: u64, posterior_kappa_init: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams {
            hidden: LayerParams::glorot(shape.hidden_units, shape.input_dim, &mut rng),
            head_dir: LayerParams::glorot(shape.latent_dim, shape.hidden_units, &mut rng),
            log_kappa: inverse_softplus(posterior_kappa_init),
        };
        let dec_in = shape.latent_dim + if shape.conditioned_decoder { 2 } else { 0 };
        let decoder = DecoderParams {
            hidden: LayerParams::glorot(shape.hidden_units, dec_in, &mut rng),
            head: LayerParams::glorot(shape.input_dim, shape.hidden_units, &mut rng),
            domain_conditioned: shape.conditioned_decoder,
        };
        let domain_clf = shape.with_domain_clf.then(|| DomainClfParams {
            hidden: LayerParams::glorot(shape.hidden_units, shape.latent_dim, &mut rng),
            head: LayerParams::glorot(1, shape.hidden_units, &mut rng),
        });
        Self {
            encoder,
            decoder,
            domain_clf,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.hidden.in_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.head_dir.out_dim
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input_dim: self.input_dim(),
            latent_dim: self.latent_dim(),
            hidden_units: self.encoder.hidden.out_dim,
            conditioned_decoder: self.decoder.domain_conditioned,
            with_domain_clf: self.domain_clf.is_some(),
        }
    }

    /// Named parameter arrays in checkpoint order.
    pub fn param_arrays(&self) -> Vec<(&'static str, &[f64])> {
        let mut v: Vec<(&'static str, &[f64])> = vec![
            ("encoder.hidden.weight", &self.encoder.hidden.weight[..]),
            ("encoder.hidden.bias", &self.encoder.hidden.bias[..]),
            ("encoder.head_dir.weight", &self.encoder.head_dir.weight[..]),
            ("encoder.head_dir.bias", &self.encoder.head_dir.bias[..]),
            (
                "encoder.log_kappa",
                core::slice::from_ref(&self.encoder.log_kappa),
            ),
            ("decoder.hidden.weight", &self.decoder.hidden.weight[..]),
            ("decoder.hidden.bias", &self.decoder.hidden.bias[..]),
            ("decoder.head.weight", &self.decoder.head.weight[..]),
            ("decoder.head.bias", &self.decoder.head.bias[..]),
        ];
        if let Some(clf) = &self.domain_clf {
            v.push(("domain_clf.hidden.weight", &clf.hidden.weight[..]));
            v.push(("domain_clf.hidden.bias", &clf.hidden.bias[..]));
            v.push(("domain_clf.head.weight", &clf.head.weight[..]));
            v.push(("domain_clf.head.bias", &clf.head.bias[..]));
        }
        v
    }

    pub fn param_arrays_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v: Vec<(&'static str, &mut [f64])> = vec![
            (
                "encoder.hidden.weight",
                self.encoder.hidden.weight.as_mut_slice(),
            ),
            (
                "encoder.hidden.bias",
                self.encoder.hidden.bias.as_mut_slice(),
            ),
            (
                "encoder.head_dir.weight",
                self.encoder.head_dir.weight.as_mut_slice(),
            ),
            (
                "encoder.head_dir.bias",
                self.encoder.head_dir.bias.as_mut_slice(),
            ),
            (
                "encoder.log_kappa",
                core::slice::from_mut(&mut self.encoder.log_kappa),
            ),
            (
                "decoder.hidden.weight",
                self.decoder.hidden.weight.as_mut_slice(),
            ),
            (
                "decoder.hidden.bias",
                self.decoder.hidden.bias.as_mut_slice(),
            ),
            ("decoder.head.weight", self.decoder.head.weight.as_mut_slice()),
            ("decoder.head.bias", self.decoder.head.bias.as_mut_slice()),
        ];
        if let Some(clf) = &mut self.domain_clf {
            v.push(("domain_clf.hidden.weight", clf.hidden.weight.as_mut_slice()));
            v.push(("domain_clf.hidden.bias", clf.hidden.bias.as_mut_slice()));
            v.push(("domain_clf.head.weight", clf.head.weight.as_mut_slice()));
            v.push(("domain_clf.head.bias", clf.head.bias.as_mut_slice()));
        }
        v
    }
}

fn inverse_softplus(y: f64) -> f64 {
    // ln(e^y - 1); for y > ~30 this is y to double precision.
    if y > 30.0 {
        y
    } else {
        crate::math::log(crate::math::expm1(y))
    }
}

// ---------------------------------------------------------------------------
// Gradient mirrors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub hidden: LayerParams,
    pub head_dir: LayerParams,
    pub log_kappa: f64,
}

#[derive(Debug, Clone)]
pub struct DecoderGrads {
    pub hidden: LayerParams,
    pub head: LayerParams,
}

#[derive(Debug, Clone)]
pub struct DomainClfGrads {
    pub hidden: LayerParams,
    pub head: LayerParams,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub decoder: DecoderGrads,
    pub domain_clf: Option<DomainClfGrads>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let z = |l: &LayerParams| LayerParams::zeros(l.out_dim, l.in_dim);
        Self {
            encoder: EncoderGrads {
                hidden: z(&params.encoder.hidden),
                head_dir: z(&params.encoder.head_dir),
                log_kappa: 0.0,
            },
            decoder: DecoderGrads {
                hidden: z(&params.decoder.hidden),
                head: z(&params.decoder.head),
            },
            domain_clf: params.domain_clf.as_ref().map(|clf| DomainClfGrads {
                hidden: z(&clf.hidden),
                head: z(&clf.head),
            }),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, arr) in self.grad_arrays_mut() {
            for g in arr {
                *g *= s;
            }
        }
    }

    /// Same names and order as [`ModelParams::param_arrays`].
    pub fn grad_arrays(&self) -> Vec<(&'static str, &[f64])> {
        let mut v: Vec<(&'static str, &[f64])> = vec![
            ("encoder.hidden.weight", &self.encoder.hidden.weight[..]),
            ("encoder.hidden.bias", &self.encoder.hidden.bias[..]),
            ("encoder.head_dir.weight", &self.encoder.head_dir.weight[..]),
            ("encoder.head_dir.bias", &self.encoder.head_dir.bias[..]),
            (
                "encoder.log_kappa",
                core::slice::from_ref(&self.encoder.log_kappa),
            ),
            ("decoder.hidden.weight", &self.decoder.hidden.weight[..]),
            ("decoder.hidden.bias", &self.decoder.hidden.bias[..]),
            ("decoder.head.weight", &self.decoder.head.weight[..]),
            ("decoder.head.bias", &self.decoder.head.bias[..]),
        ];
        if let Some(clf) = &self.domain_clf {
            v.push(("domain_clf.hidden.weight", &clf.hidden.weight[..]));
            v.push(("domain_clf.hidden.bias", &clf.hidden.bias[..]));
            v.push(("domain_clf.head.weight", &clf.head.weight[..]));
            v.push(("domain_clf.head.bias", &clf.head.bias[..]));
        }
        v
    }

    /// Same names and order as [`ModelParams::param_arrays`].
    pub fn grad_arrays_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v: Vec<(&'static str, &mut [f64])> = vec![
            (
                "encoder.hidden.weight",
                self.encoder.hidden.weight.as_mut_slice(),
            ),
            (
                "encoder.hidden.bias",
                self.encoder.hidden.bias.as_mut_slice(),
            ),
            (
                "encoder.head_dir.weight",
                self.encoder.head_dir.weight.as_mut_slice(),
            ),
            (
                "encoder.head_dir.bias",
                self.encoder.head_dir.bias.as_mut_slice(),
            ),
            (
                "encoder.log_kappa",
                core::slice::from_mut(&mut self.encoder.log_kappa),
            ),
            (
                "decoder.hidden.weight",
                self.decoder.hidden.weight.as_mut_slice(),
            ),
            (
                "decoder.hidden.bias",
                self.decoder.hidden.bias.as_mut_slice(),
            ),
            ("decoder.head.weight", self.decoder.head.weight.as_mut_slice()),
            ("decoder.head.bias", self.decoder.head.bias.as_mut_slice()),
        ];
        if let Some(clf) = &mut self.domain_clf {
            v.push(("domain_clf.hidden.weight", clf.hidden.weight.as_mut_slice()));
            v.push(("domain_clf.hidden.bias", clf.hidden.bias.as_mut_slice()));
            v.push(("domain_clf.head.weight", clf.head.weight.as_mut_slice()));
            v.push(("domain_clf.head.bias", clf.head.bias.as_mut_slice()));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_shape() -> ModelShape {
        ModelShape {
            input_dim: 4,
            latent_dim: 3,
            hidden_units: 4,
            conditioned_decoder: true,
            with_domain_clf: true,
        }
    }

    #[test]
    fn encoder_direction_is_unit_norm() {
        let model = ModelParams::init(&tiny_shape(), 5, 10.0);
        for s in 0..20 {
            let x: Vec<f64> = (0..4).map(|i| ((s * 7 + i) as f64 * 0.37).sin()).collect();
            let cache = model.encoder.forward(&x);
            assert!((norm2(&cache.mu) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn encoder_deterministic() {
        let model = ModelParams::init(&tiny_shape(), 5, 10.0);
        let x = [0.1, -0.4, 0.7, 0.2];
        let a = model.encoder.forward(&x);
        let b = model.encoder.forward(&x);
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.kappa, b.kappa);
    }

    #[test]
    fn encoder_hand_computed_tiny_case() {
        // All weights 0.01, zero bias, x = ones: every hidden unit is
        // tanh(0.04); every head output is 0.04 tanh(0.04); mu is uniform.
        let mut enc = EncoderParams {
            hidden: LayerParams::zeros(4, 4),
            head_dir: LayerParams::zeros(3, 4),
            log_kappa: 0.0,
        };
        enc.hidden.weight.iter_mut().for_each(|w| *w = 0.01);
        enc.head_dir.weight.iter_mut().for_each(|w| *w = 0.01);
        let cache = enc.forward(&[1.0; 4]);
        let want = 1.0 / 3f64.sqrt();
        for &m in &cache.mu {
            assert!((m - want).abs() < 1e-9);
        }
        assert!((cache.kappa - softplus(0.0)).abs() < 1e-15);
    }

    #[test]
    fn decoder_outputs_in_unit_interval() {
        let model = ModelParams::init(&tiny_shape(), 9, 10.0);
        let z = [0.6, 0.0, 0.8];
        for d in [DomainLabel::Source, DomainLabel::Target] {
            let out = model.decoder.forward(&z, d).xhat;
            assert!(out.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn decoder_zero_weights_give_half() {
        let dec = DecoderParams {
            hidden: LayerParams::zeros(4, 5),
            head: LayerParams::zeros(4, 4),
            domain_conditioned: true,
        };
        let out = dec.forward(&[0.2, -0.2, 0.9], DomainLabel::Source).xhat;
        assert!(out.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn decoder_conditioning_is_live() {
        let model = ModelParams::init(&tiny_shape(), 11, 10.0);
        let z = [0.6, 0.0, 0.8];
        let s = model.decoder.forward(&z, DomainLabel::Source).xhat;
        let t = model.decoder.forward(&z, DomainLabel::Target).xhat;
        assert_ne!(s, t);
    }

    #[test]
    fn decoder_conditioning_invariance_with_zeroed_columns() {
        // Zeroing the two one-hot columns of the hidden weight makes the
        // domain input inert: decode(z, S) == decode(z, T) exactly.
        let mut model = ModelParams::init(&tiny_shape(), 11, 10.0);
        let dec = &mut model.decoder;
        let in_dim = dec.hidden.in_dim;
        for o in 0..dec.hidden.out_dim {
            dec.hidden.weight[o * in_dim + in_dim - 2] = 0.0;
            dec.hidden.weight[o * in_dim + in_dim - 1] = 0.0;
        }
        let z = [0.6, 0.0, 0.8];
        let s = dec.forward(&z, DomainLabel::Source).xhat;
        let t = dec.forward(&z, DomainLabel::Target).xhat;
        assert_eq!(s, t);
    }

    #[test]
    fn domain_prob_zero_weights_is_half_and_bounded() {
        let clf = DomainClfParams {
            hidden: LayerParams::zeros(4, 3),
            head: LayerParams::zeros(1, 4),
        };
        let cache = clf.forward(&[0.0, 0.6, 0.8]);
        assert_eq!(cache.prob_target, 0.5);

        let model = ModelParams::init(&tiny_shape(), 3, 10.0);
        let cache = model.domain_clf.as_ref().unwrap().forward(&[0.0, 0.6, 0.8]);
        assert!(cache.prob_target > 0.0 && cache.prob_target < 1.0);
    }

    #[test]
    fn domain_prob_hand_computed_tiny_case() {
        // Weights all 0.1, bias 0, z = e1 (dim 2, hidden 2):
        // h = tanh(0.1), logit = 0.2 tanh(0.1).
        let mut clf = DomainClfParams {
            hidden: LayerParams::zeros(2, 2),
            head: LayerParams::zeros(1, 2),
        };
        clf.hidden.weight.iter_mut().for_each(|w| *w = 0.1);
        clf.head.weight.iter_mut().for_each(|w| *w = 0.1);
        let cache = clf.forward(&[1.0, 0.0]);
        let want = logistic(0.2 * (0.1f64).tanh());
        assert!((cache.prob_target - want).abs() < 1e-15);
    }

    #[test]
    fn grad_reverse_contract() {
        let mut g = [1.0, -2.0, 0.5];
        grad_reverse(&mut g, 0.0);
        assert_eq!(g, [0.0, -0.0, 0.0]);

        let mut g = [1.0, -2.0, 0.5];
        grad_reverse(&mut g, 1.0);
        assert_eq!(g, [-1.0, 2.0, -0.5]);
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        // Scalar probe: L = sum(sin(forward(x))).
        let model = ModelParams::init(&tiny_shape(), 21, 10.0);
        let layer = model.encoder.hidden.clone();
        let x = [0.3, -0.5, 0.9, 0.1];
        let probe = |l: &LayerParams, input: &[f64]| -> f64 {
            l.forward(input).iter().map(|&o| o.sin()).sum()
        };

        let dout: Vec<f64> = layer.forward(&x).iter().map(|&o| o.cos()).collect();
        let mut grad = LayerParams::zeros(layer.out_dim, layer.in_dim);
        let dx = layer.backward(&x, &dout, &mut grad);

        let h = 1e-6;
        for idx in 0..layer.weight.len() {
            let mut lp = layer.clone();
            lp.weight[idx] += h;
            let mut lm = layer.clone();
            lm.weight[idx] -= h;
            let fd = (probe(&lp, &x) - probe(&lm, &x)) / (2.0 * h);
            assert!((fd - grad.weight[idx]).abs() < 1e-8, "weight {idx}");
        }
        for (i, &dxi) in dx.iter().enumerate() {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (probe(&layer, &xp) - probe(&layer, &xm)) / (2.0 * h);
            assert!((fd - dxi).abs() < 1e-8, "input {i}");
        }
    }

    #[test]
    fn param_and_grad_array_orders_match() {
        let model = ModelParams::init(&tiny_shape(), 2, 10.0);
        let mut grads = ModelGrads::zeros_like(&model);
        let pnames: Vec<_> = model
            .param_arrays()
            .iter()
            .map(|(n, a)| (*n, a.len()))
            .collect();
        let gnames: Vec<_> = grads
            .grad_arrays_mut()
            .iter()
            .map(|(n, a)| (*n, a.len()))
            .collect();
        assert_eq!(pnames, gnames);
    }
}
