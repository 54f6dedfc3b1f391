//! Training objectives: the two-class VAE loss, the adversarial domain
//! classification loss, the two importance-weight estimators with their
//! stabilizing clamp, and the stratum-weighted objectives that combine them.
//!
//! The total objective is `-l_vae + lambda_dom * l_dom`, minimized by the
//! encoder and decoder and maximized by the domain classifier. Gradients for
//! all three players are produced in a single backward sweep: the classifier
//! accumulates the negated gradient (ascent as descent) and the encoder
//! receives the domain-loss gradient through [`grad_reverse`]. Importance
//! weights are constants during differentiation; no gradient flows through
//! them.
//!
//! Expectations over the posterior use a single draw per datum per step. The
//! draw source is abstracted by [`LatentDraw`] so tests can freeze and replay
//! the sampled angle/tangent pairs while perturbing parameters.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::data::{ClassLabel, DomainLabel, LabeledSample};
use crate::distributions::{
    compose_from_parts, sample_vmf_parts, vmf_log_norm_const, vmf_mean_resultant,
    vmf_mean_resultant_deriv, UnitVector, VmfDist,
};
use crate::math::{dot, exp, log, softplus};
use crate::networks::{grad_reverse, ModelGrads, ModelParams};

/// Floor/ceiling applied to the domain-classifier probability before forming
/// the odds ratio.
pub const PROB_CLAMP_EPS: f64 = 1e-7;

/// Log-density differences are clamped to this magnitude before
/// exponentiating inside the class-ratio weight.
pub const LOG_RATIO_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    MissingDomainClassifier,
    NegativeLambda(f64),
    /// Provided weight arrays must match the stratum sizes.
    ProvidedWeightLength {
        expected: usize,
        got: usize,
    },
    InvalidClassPriors,
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingDomainClassifier => {
                write!(f, "objective requires a domain classifier but the model has none")
            }
            Self::NegativeLambda(l) => write!(f, "lambda_dom {l} is negative"),
            Self::ProvidedWeightLength { expected, got } => {
                write!(f, "provided weight array has length {got}, stratum has {expected}")
            }
            Self::InvalidClassPriors => write!(f, "class priors must be positive and sum to 1"),
        }
    }
}

impl core::error::Error for LossError {}

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

/// Class marginals p(c), estimated once from source training counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPriors {
    p_normal: f64,
    p_anomaly: f64,
}

impl ClassPriors {
    pub fn new(p_anomaly: f64) -> Result<Self, LossError> {
        if !(p_anomaly > 0.0 && p_anomaly < 1.0) {
            return Err(LossError::InvalidClassPriors);
        }
        Ok(Self {
            p_normal: 1.0 - p_anomaly,
            p_anomaly,
        })
    }

    /// Estimate from source-domain training counts.
    pub fn from_counts(n_normal: usize, n_anomaly: usize) -> Result<Self, LossError> {
        if n_normal == 0 || n_anomaly == 0 {
            return Err(LossError::InvalidClassPriors);
        }
        let total = (n_normal + n_anomaly) as f64;
        Self::new(n_anomaly as f64 / total)
    }

    pub fn p_normal(&self) -> f64 {
        self.p_normal
    }

    pub fn p_anomaly(&self) -> f64 {
        self.p_anomaly
    }

    pub fn prob(&self, c: ClassLabel) -> f64 {
        match c {
            ClassLabel::Normal => self.p_normal,
            ClassLabel::Anomaly => self.p_anomaly,
        }
    }
}

/// The two class-conditional latent priors p(z | c).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPriors {
    pub normal: VmfDist,
    pub anomaly: VmfDist,
}

impl LatentPriors {
    /// Default configuration: antipodal mean directions on the first axis
    /// with a shared concentration.
    pub fn antipodal(latent_dim: usize, kappa: f64) -> Self {
        let e1 = UnitVector::basis(latent_dim, 0);
        Self {
            anomaly: VmfDist::new(e1.negated(), kappa).expect("valid prior"),
            normal: VmfDist::new(e1, kappa).expect("valid prior"),
        }
    }

    pub fn for_class(&self, c: ClassLabel) -> &VmfDist {
        match c {
            ClassLabel::Normal => &self.normal,
            ClassLabel::Anomaly => &self.anomaly,
        }
    }

    pub fn dim(&self) -> usize {
        self.normal.dim()
    }
}

// ---------------------------------------------------------------------------
// Posterior draws
// ---------------------------------------------------------------------------

/// Source of the per-datum posterior draw, decomposed as the angle `w` and
/// the unit tangent `v` so that `z = w mu + sqrt(1 - w^2) v`. Gradients flow
/// through `mu` only; `w` and `v` are constants of the backward pass.
pub trait LatentDraw {
    fn draw(&mut self, mu: &[f64], kappa: f64) -> (f64, Vec<f64>);
}

/// Fresh draws from an RNG.
pub struct RngDraw<'r, R: Rng + ?Sized>(pub &'r mut R);

impl<R: Rng + ?Sized> LatentDraw for RngDraw<'_, R> {
    fn draw(&mut self, mu: &[f64], kappa: f64) -> (f64, Vec<f64>) {
        sample_vmf_parts(mu, kappa, self.0)
    }
}

/// Draws recorded in call order, for replay under parameter perturbation.
#[derive(Debug, Clone, Default)]
pub struct RecordedDraws(pub Vec<(f64, Vec<f64>)>);

/// Records while sampling from an RNG.
pub struct RecordingDraw<'r, R: Rng + ?Sized> {
    pub rng: &'r mut R,
    pub recorded: RecordedDraws,
}

impl<'r, R: Rng + ?Sized> RecordingDraw<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Self {
            rng,
            recorded: RecordedDraws::default(),
        }
    }
}

impl<R: Rng + ?Sized> LatentDraw for RecordingDraw<'_, R> {
    fn draw(&mut self, mu: &[f64], kappa: f64) -> (f64, Vec<f64>) {
        let parts = sample_vmf_parts(mu, kappa, self.rng);
        self.recorded.0.push(parts.clone());
        parts
    }
}

/// Replays a recorded sequence, ignoring the (possibly perturbed) posterior.
pub struct ReplayDraw<'a> {
    parts: &'a RecordedDraws,
    pos: usize,
}

impl<'a> ReplayDraw<'a> {
    pub fn new(parts: &'a RecordedDraws) -> Self {
        Self { parts, pos: 0 }
    }
}

impl LatentDraw for ReplayDraw<'_> {
    fn draw(&mut self, _mu: &[f64], _kappa: f64) -> (f64, Vec<f64>) {
        let p = self.parts.0[self.pos].clone();
        self.pos += 1;
        p
    }
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Stabilizing clamp applied to importance weights during training:
/// `w_tilde = 1/2 min(w, 2)`.
pub fn clamp_weight(w: f64) -> f64 {
    0.5 * w.min(2.0)
}

/// Domain density ratio estimate `w_vae = p(d=T | x) / p(d=S | x)` from the
/// classifier probability, clamped away from 0 and 1.
pub fn w_vae_from_prob(prob_target: f64) -> f64 {
    let p = prob_target.clamp(PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS);
    p / (1.0 - p)
}

/// Class density ratio estimate `w_dom = p(c=A | x) / p(c=N | x)` evaluated
/// at a posterior draw via the two latent priors (the latent marginal p(z)
/// cancels between numerator and denominator); the log-density difference is
/// clamped to +/-[`LOG_RATIO_CLAMP`] before exponentiating.
pub fn w_dom_from_latent(z: &[f64], priors: &LatentPriors, class_priors: &ClassPriors) -> f64 {
    let m = priors.dim();
    let log_a = vmf_log_norm_const(m, priors.anomaly.concentration()).expect("valid prior")
        + priors.anomaly.concentration() * dot(priors.anomaly.mean_direction().as_slice(), z)
        + log(class_priors.p_anomaly());
    let log_n = vmf_log_norm_const(m, priors.normal.concentration()).expect("valid prior")
        + priors.normal.concentration() * dot(priors.normal.mean_direction().as_slice(), z)
        + log(class_priors.p_normal());
    exp((log_a - log_n).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
}

/// `w_vae` for a single input, drawing one posterior sample. No gradient
/// flows through the result (it is a plain value).
pub fn compute_w_vae(
    x: &[f64],
    model: &ModelParams,
    draw: &mut dyn LatentDraw,
) -> Result<f64, LossError> {
    let clf = model
        .domain_clf
        .as_ref()
        .ok_or(LossError::MissingDomainClassifier)?;
    let enc = model.encoder.forward(x);
    let (w, v) = draw.draw(&enc.mu, enc.kappa);
    let z = compose_from_parts(&enc.mu, w, &v);
    Ok(w_vae_from_prob(clf.forward(&z).prob_target))
}

/// `w_dom` for a single input, drawing one posterior sample.
pub fn compute_w_dom(
    x: &[f64],
    model: &ModelParams,
    priors: &LatentPriors,
    class_priors: &ClassPriors,
    draw: &mut dyn LatentDraw,
) -> f64 {
    let enc = model.encoder.forward(x);
    let (w, v) = draw.draw(&enc.mu, enc.kappa);
    let z = compose_from_parts(&enc.mu, w, &v);
    w_dom_from_latent(&z, priors, class_priors)
}

/// How the stratum objectives obtain their importance weights.
#[derive(Debug, Clone, Copy)]
pub enum WeightPlan<'a> {
    /// Both weights identically zero (the unweighted objective).
    Zero,
    /// Model estimates; `clamp` applies the `1/2 min(w, 2)` stabilization.
    Model { clamp: bool },
    /// Externally supplied raw weights (oracle tests): `w_vae` indexed by the
    /// anomaly-source batch order, `w_dom` by the normal-target batch order.
    Provided { w_vae: &'a [f64], w_dom: &'a [f64] },
}

// ---------------------------------------------------------------------------
// Per-sample losses (contract-level API)
// ---------------------------------------------------------------------------

/// Reconstruction log-likelihood under the unit-variance Gaussian decoder
/// convention, additive constant dropped: `-1/2 ||x - xhat||^2`.
pub fn recon_log_lik(x: &[f64], xhat: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (xi, yi) in x.iter().zip(xhat) {
        let d = xi - yi;
        acc += d * d;
    }
    -0.5 * acc
}

/// Domain log-likelihood `log p(d | z)` from the classifier logit.
fn domain_log_lik(logit: f64, d: DomainLabel) -> f64 {
    let y = match d {
        DomainLabel::Target => 1.0,
        DomainLabel::Source => 0.0,
    };
    y * logit - softplus(logit)
}

/// One-sample ELBO `E_q[log p(x | z, d)] - KL[q(z|x) || p(z|c)]`, the
/// expectation approximated with a single posterior draw. Higher is better.
pub fn vae_loss(
    x: &[f64],
    class: ClassLabel,
    domain: DomainLabel,
    model: &ModelParams,
    priors: &LatentPriors,
    draw: &mut dyn LatentDraw,
) -> f64 {
    let enc = model.encoder.forward(x);
    let (w, v) = draw.draw(&enc.mu, enc.kappa);
    let z = compose_from_parts(&enc.mu, w, &v);
    let dec = model.decoder.forward(&z, domain);
    let posterior =
        VmfDist::new(UnitVector::normalize(enc.mu.clone()), enc.kappa).expect("valid posterior");
    let kl = posterior.kl(priors.for_class(class)).expect("same dimension");
    recon_log_lik(x, &dec.xhat) - kl
}

/// One-sample domain log-likelihood `E_q[log p(d | z)]` with a single draw.
pub fn domain_loss(
    x: &[f64],
    domain: DomainLabel,
    model: &ModelParams,
    draw: &mut dyn LatentDraw,
) -> Result<f64, LossError> {
    let clf = model
        .domain_clf
        .as_ref()
        .ok_or(LossError::MissingDomainClassifier)?;
    let enc = model.encoder.forward(x);
    let (w, v) = draw.draw(&enc.mu, enc.kappa);
    let z = compose_from_parts(&enc.mu, w, &v);
    Ok(domain_log_lik(clf.forward(&z).logit, domain))
}

// ---------------------------------------------------------------------------
// Batch objective
// ---------------------------------------------------------------------------

/// One batch: index views into the three training strata.
#[derive(Debug, Clone, Copy)]
pub struct StratumBatch<'a> {
    pub samples: &'a [LabeledSample],
    pub indices: &'a [usize],
}

impl<'a> StratumBatch<'a> {
    pub fn new(samples: &'a [LabeledSample], indices: &'a [usize]) -> Self {
        Self { samples, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn iter(&self) -> impl Iterator<Item = &'a LabeledSample> + '_ {
        self.indices.iter().map(move |&i| &self.samples[i])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub normal_source: StratumBatch<'a>,
    pub anomaly_source: StratumBatch<'a>,
    pub normal_target: StratumBatch<'a>,
}

/// Per-batch loss components. `recon` and `domain` are weighted mean
/// log-likelihoods (higher is better), `kl` the weighted mean divergence, and
/// `total = -(recon - kl) + lambda_dom * domain` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub domain: f64,
    pub w_vae_mean: f64,
    pub w_dom_mean: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn zeros() -> Self {
        Self {
            recon: 0.0,
            kl: 0.0,
            domain: 0.0,
            w_vae_mean: 0.0,
            w_dom_mean: 0.0,
            total: 0.0,
        }
    }
}

/// Batch evaluation result: the loss breakdown plus weight-clamp telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEval {
    pub breakdown: LossBreakdown,
    /// Raw model-estimated weights at or above the clamp saturation point.
    pub clamp_hits: usize,
    /// Raw model-estimated weights computed in this batch.
    pub weight_count: usize,
    /// False when some stratum was empty; such a batch contributes zero for
    /// the missing stratum and should be resampled by the caller.
    pub complete: bool,
}

/// Per-batch constants of the closed-form KL that depend only on the shared
/// posterior concentration.
struct KlTerms {
    a: f64,
    a_deriv: f64,
    log_c_q: f64,
}

impl KlTerms {
    fn new(m: usize, kappa: f64) -> Self {
        Self {
            a: vmf_mean_resultant(m, kappa).expect("valid posterior"),
            a_deriv: vmf_mean_resultant_deriv(m, kappa).expect("valid posterior"),
            log_c_q: vmf_log_norm_const(m, kappa).expect("valid posterior"),
        }
    }
}

struct PriorTerms {
    kappa: f64,
    mu: Vec<f64>,
    log_c: f64,
}

impl PriorTerms {
    fn new(p: &VmfDist) -> Self {
        Self {
            kappa: p.concentration(),
            mu: p.mean_direction().as_slice().to_vec(),
            log_c: vmf_log_norm_const(p.dim(), p.concentration()).expect("valid prior"),
        }
    }
}

/// Precomputed pieces shared by every sample of a batch.
struct BatchCtx {
    kappa: f64,
    kl_terms: KlTerms,
    prior_n: PriorTerms,
    prior_a: PriorTerms,
    /// `log w_dom(z) = w_dom_base + w_dom_dir . z` before clamping.
    w_dom_base: f64,
    w_dom_dir: Vec<f64>,
    lambda_dom: f64,
}

/// How the surrogate VAE weight resolves for one anomaly-source sample.
enum SurrogateWeight {
    None,
    FromModel { clamp: bool },
    Given(f64),
}

/// How the (1 + w_dom) domain factor resolves for one normal-target sample.
enum DomainFactor {
    One,
    FromModel { clamp: bool },
    Given(f64),
}

/// Scalar accumulators for the weighted objective.
#[derive(Default)]
struct Acc {
    recon: f64,
    kl: f64,
    domain: f64,
    w_vae_sum: f64,
    w_vae_n: usize,
    w_dom_sum: f64,
    w_dom_n: usize,
    clamp_hits: usize,
    weight_count: usize,
}

/// The full two-class objective over one stratified batch:
///
/// * VAE part: `(p_N/2) mean_(N,S) l_vae + (p_A/2) mean_(A,S) [l_vae(., S) +
///   w_vae l_vae(., T-decoder)] + (p_N/2) mean_(N,T) l_vae`, where the
///   surrogate term feeds the decoder the target label on source-anomaly
///   inputs and reuses the same posterior draw.
/// * Domain part: the same stratum weighting with `(1 + w_dom)` on the
///   normal-target term.
/// * `total = -vae_part + lambda_dom * domain_part`.
///
/// When `grads` is given it accumulates `d total / d theta` for encoder and
/// decoder and `-d total / d theta` for the domain classifier, so one descent
/// step moves every player in its own direction of the min-max problem.
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    model: &ModelParams,
    batch: &Batch,
    priors: &LatentPriors,
    class_priors: &ClassPriors,
    lambda_dom: f64,
    weights: &WeightPlan,
    draw: &mut dyn LatentDraw,
    mut grads: Option<&mut ModelGrads>,
) -> Result<BatchEval, LossError> {
    if lambda_dom < 0.0 {
        return Err(LossError::NegativeLambda(lambda_dom));
    }
    if let WeightPlan::Model { .. } = weights {
        if model.domain_clf.is_none() {
            return Err(LossError::MissingDomainClassifier);
        }
    }
    if let WeightPlan::Provided { w_vae, w_dom } = weights {
        if w_vae.len() != batch.anomaly_source.len() {
            return Err(LossError::ProvidedWeightLength {
                expected: batch.anomaly_source.len(),
                got: w_vae.len(),
            });
        }
        if w_dom.len() != batch.normal_target.len() {
            return Err(LossError::ProvidedWeightLength {
                expected: batch.normal_target.len(),
                got: w_dom.len(),
            });
        }
    }

    let prior_n = PriorTerms::new(&priors.normal);
    let prior_a = PriorTerms::new(&priors.anomaly);
    let w_dom_base = prior_a.log_c - prior_n.log_c
        + log(class_priors.p_anomaly() / class_priors.p_normal());
    let w_dom_dir: Vec<f64> = prior_a
        .mu
        .iter()
        .zip(&prior_n.mu)
        .map(|(&a, &n)| prior_a.kappa * a - prior_n.kappa * n)
        .collect();
    let kappa = softplus(model.encoder.log_kappa);
    let ctx = BatchCtx {
        kappa,
        kl_terms: KlTerms::new(model.latent_dim(), kappa),
        prior_n,
        prior_a,
        w_dom_base,
        w_dom_dir,
        lambda_dom,
    };

    let mut acc = Acc::default();
    let complete = !batch.normal_source.is_empty()
        && !batch.anomaly_source.is_empty()
        && !batch.normal_target.is_empty();

    // (N, S)
    let coef = stratum_coef(class_priors.p_normal(), batch.normal_source.len());
    for sample in batch.normal_source.iter() {
        eval_sample(
            model,
            sample,
            coef,
            true,
            SurrogateWeight::None,
            DomainFactor::One,
            &ctx,
            &mut acc,
            draw,
            grads.as_deref_mut(),
        );
    }

    // (A, S) with the weighted (A, T-decoder) surrogate
    let coef = stratum_coef(class_priors.p_anomaly(), batch.anomaly_source.len());
    for (k, sample) in batch.anomaly_source.iter().enumerate() {
        let surrogate = match weights {
            WeightPlan::Zero => SurrogateWeight::None,
            WeightPlan::Model { clamp } => SurrogateWeight::FromModel { clamp: *clamp },
            WeightPlan::Provided { w_vae, .. } => SurrogateWeight::Given(w_vae[k]),
        };
        eval_sample(
            model,
            sample,
            coef,
            false,
            surrogate,
            DomainFactor::One,
            &ctx,
            &mut acc,
            draw,
            grads.as_deref_mut(),
        );
    }

    // (N, T) with the (1 + w_dom) domain-loss factor
    let coef = stratum_coef(class_priors.p_normal(), batch.normal_target.len());
    for (k, sample) in batch.normal_target.iter().enumerate() {
        let dom_factor = match weights {
            WeightPlan::Zero => DomainFactor::One,
            WeightPlan::Model { clamp } => DomainFactor::FromModel { clamp: *clamp },
            WeightPlan::Provided { w_dom, .. } => DomainFactor::Given(w_dom[k]),
        };
        eval_sample(
            model,
            sample,
            coef,
            true,
            SurrogateWeight::None,
            dom_factor,
            &ctx,
            &mut acc,
            draw,
            grads.as_deref_mut(),
        );
    }

    let breakdown = LossBreakdown {
        recon: acc.recon,
        kl: acc.kl,
        domain: acc.domain,
        w_vae_mean: mean_or_zero(acc.w_vae_sum, acc.w_vae_n),
        w_dom_mean: mean_or_zero(acc.w_dom_sum, acc.w_dom_n),
        total: -(acc.recon - acc.kl) + lambda_dom * acc.domain,
    };
    Ok(BatchEval {
        breakdown,
        clamp_hits: acc.clamp_hits,
        weight_count: acc.weight_count,
        complete,
    })
}

/// Plain single-prior ELBO over one stratum, mean over the batch: the
/// unsupervised baseline objective. `total = -(recon - kl)`.
pub fn plain_vae_objective(
    model: &ModelParams,
    samples: &StratumBatch,
    prior: &VmfDist,
    draw: &mut dyn LatentDraw,
    mut grads: Option<&mut ModelGrads>,
) -> BatchEval {
    let kappa = softplus(model.encoder.log_kappa);
    let kl_terms = KlTerms::new(model.latent_dim(), kappa);
    let prior_terms = PriorTerms::new(prior);
    let coef = if samples.is_empty() {
        0.0
    } else {
        1.0 / samples.len() as f64
    };

    let mut acc = Acc::default();
    for sample in samples.iter() {
        let x = &sample.x;
        let enc = model.encoder.forward(x);
        let (w_angle, v) = draw.draw(&enc.mu, enc.kappa);
        let z = compose_from_parts(&enc.mu, w_angle, &v);

        let align = dot(&prior_terms.mu, &enc.mu);
        let kl_val =
            (kappa - prior_terms.kappa * align) * kl_terms.a + kl_terms.log_c_q - prior_terms.log_c;
        acc.kl += coef * kl_val;

        let dec = model.decoder.forward(&z, sample.domain);
        acc.recon += coef * recon_log_lik(x, &dec.xhat);

        if let Some(g) = grads.as_deref_mut() {
            let d_xhat: Vec<f64> = x
                .iter()
                .zip(&dec.xhat)
                .map(|(&xi, &yi)| -coef * (xi - yi))
                .collect();
            let d_z = model.decoder.backward(&dec, &d_xhat, &mut g.decoder);
            let mut d_mu: Vec<f64> = d_z.iter().map(|&dz| w_angle * dz).collect();
            for (dm, &mp) in d_mu.iter_mut().zip(&prior_terms.mu) {
                *dm += coef * (-prior_terms.kappa * kl_terms.a * mp);
            }
            let d_kappa = coef * (kappa - prior_terms.kappa * align) * kl_terms.a_deriv;
            model.encoder.backward(x, &enc, &d_mu, d_kappa, &mut g.encoder);
        }
    }

    BatchEval {
        breakdown: LossBreakdown {
            recon: acc.recon,
            kl: acc.kl,
            domain: 0.0,
            w_vae_mean: 0.0,
            w_dom_mean: 0.0,
            total: -(acc.recon - acc.kl),
        },
        clamp_hits: 0,
        weight_count: 0,
        complete: !samples.is_empty(),
    }
}

fn stratum_coef(class_prob: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        class_prob / 2.0 / n as f64
    }
}

fn mean_or_zero(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Evaluates one sample end to end and accumulates values and gradients.
#[allow(clippy::too_many_arguments)]
#[inline]
fn eval_sample(
    model: &ModelParams,
    sample: &LabeledSample,
    coef: f64,
    is_normal_prior: bool,
    surrogate: SurrogateWeight,
    dom_factor: DomainFactor,
    ctx: &BatchCtx,
    acc: &mut Acc,
    draw: &mut dyn LatentDraw,
    grads: Option<&mut ModelGrads>,
) {
    let x = &sample.x;
    let enc = model.encoder.forward(x);
    let (w_angle, v) = draw.draw(&enc.mu, enc.kappa);
    let z = compose_from_parts(&enc.mu, w_angle, &v);

    // Classifier pass: needed for the domain loss and for w_vae.
    let clf_cache = model.domain_clf.as_ref().map(|clf| clf.forward(&z));

    // Resolve the surrogate VAE weight (stop-gradient).
    let w_vae_tilde = match surrogate {
        SurrogateWeight::None => None,
        SurrogateWeight::Given(w) => Some(w),
        SurrogateWeight::FromModel { clamp } => {
            let p = clf_cache
                .as_ref()
                .expect("weight estimation requires the classifier")
                .prob_target;
            let raw = w_vae_from_prob(p);
            acc.weight_count += 1;
            if raw >= 2.0 {
                acc.clamp_hits += 1;
            }
            Some(if clamp { clamp_weight(raw) } else { raw })
        }
    };
    if let Some(wt) = w_vae_tilde {
        acc.w_vae_sum += wt;
        acc.w_vae_n += 1;
    }

    // Resolve the (1 + w_dom) factor on the domain term (stop-gradient).
    let dom_scale = match dom_factor {
        DomainFactor::One => 1.0,
        DomainFactor::Given(w) => {
            acc.w_dom_sum += w;
            acc.w_dom_n += 1;
            1.0 + w
        }
        DomainFactor::FromModel { clamp } => {
            let log_raw = (ctx.w_dom_base + dot(&ctx.w_dom_dir, &z))
                .clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
            let raw = exp(log_raw);
            acc.weight_count += 1;
            if raw >= 2.0 {
                acc.clamp_hits += 1;
            }
            let wt = if clamp { clamp_weight(raw) } else { raw };
            acc.w_dom_sum += wt;
            acc.w_dom_n += 1;
            1.0 + wt
        }
    };

    let prior = if is_normal_prior {
        &ctx.prior_n
    } else {
        &ctx.prior_a
    };

    // KL between the posterior and this sample's class prior; the surrogate
    // VAE term repeats it, so its effective coefficient is (1 + w_tilde).
    let align = dot(&prior.mu, &enc.mu);
    let kl_val = (ctx.kappa - prior.kappa * align) * ctx.kl_terms.a + ctx.kl_terms.log_c_q
        - prior.log_c;
    let kl_coef = coef * (1.0 + w_vae_tilde.unwrap_or(0.0));
    acc.kl += kl_coef * kl_val;

    // Reconstruction terms: the sample's own domain, plus the
    // target-conditioned surrogate for source anomalies.
    let mut d_z = vec![0.0; z.len()];
    let mut grads = grads;
    {
        let mut recon_term = |dlabel: DomainLabel, alpha: f64, grads: Option<&mut ModelGrads>| {
            let dec = model.decoder.forward(&z, dlabel);
            acc.recon += alpha * recon_log_lik(x, &dec.xhat);
            if let Some(g) = grads {
                let d_xhat: Vec<f64> = x
                    .iter()
                    .zip(&dec.xhat)
                    .map(|(&xi, &yi)| -alpha * (xi - yi))
                    .collect();
                let dz_term = model.decoder.backward(&dec, &d_xhat, &mut g.decoder);
                for (a, b) in d_z.iter_mut().zip(&dz_term) {
                    *a += b;
                }
            }
        };
        recon_term(sample.domain, coef, grads.as_deref_mut());
        if let Some(wt) = w_vae_tilde {
            recon_term(DomainLabel::Target, coef * wt, grads.as_deref_mut());
        }
    }

    // Domain classification term.
    if let (Some(clf), Some(cache)) = (model.domain_clf.as_ref(), clf_cache.as_ref()) {
        let beta = coef * dom_scale;
        acc.domain += beta * domain_log_lik(cache.logit, sample.domain);
        if let Some(g) = grads.as_deref_mut() {
            let y = match sample.domain {
                DomainLabel::Target => 1.0,
                DomainLabel::Source => 0.0,
            };
            // Ascent as descent for the classifier.
            let d_logit = -ctx.lambda_dom * beta * (y - cache.prob_target);
            let mut dz_dom = clf.backward(
                &z,
                cache,
                d_logit,
                g.domain_clf.as_mut().expect("grads match model shape"),
            );
            // The encoder sees the reversed gradient.
            grad_reverse(&mut dz_dom, 1.0);
            for (a, b) in d_z.iter_mut().zip(&dz_dom) {
                *a += b;
            }
        }
    }

    if let Some(g) = grads {
        // KL gradients: d total / d mu = kl_coef * (-kappa_p A mu_p);
        // d total / d kappa = kl_coef * (kappa - kappa_p t) A'(kappa).
        let mut d_mu: Vec<f64> = d_z.iter().map(|&dz| w_angle * dz).collect();
        for (dm, &mp) in d_mu.iter_mut().zip(&prior.mu) {
            *dm += kl_coef * (-prior.kappa * ctx.kl_terms.a * mp);
        }
        let d_kappa = kl_coef * (ctx.kappa - prior.kappa * align) * ctx.kl_terms.a_deriv;
        model.encoder.backward(x, &enc, &d_mu, d_kappa, &mut g.encoder);
    }
}
