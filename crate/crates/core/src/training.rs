//! Optimization of the five model variants: Adam, stratified batching, and
//! the per-variant wiring of architecture, data, and objective.
//!
//! A run is fully determined by its [`TrainConfig`]: initialization, batch
//! order, and posterior draws each consume a dedicated stream of one seeded
//! ChaCha generator, so identical configs reproduce loss series bit for bit
//! on one platform.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::TrainStrata;
use crate::losses::{
    plain_vae_objective, total_objective, Batch, ClassPriors, LatentPriors, LossBreakdown,
    LossError, RngDraw, StratumBatch, WeightPlan,
};
use crate::networks::{ModelGrads, ModelParams, ModelShape};

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    EmptyStratum(&'static str),
    StratumSmallerThanBatch {
        stratum: &'static str,
        len: usize,
        batch: usize,
    },
    InconsistentInputDim {
        expected: usize,
        got: usize,
    },
    Loss(LossError),
    UnknownVariant(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyStratum(name) => write!(f, "training stratum {name} is empty"),
            Self::StratumSmallerThanBatch { stratum, len, batch } => write!(
                f,
                "stratum {stratum} has {len} samples, fewer than the per-stratum batch size {batch}"
            ),
            Self::InconsistentInputDim { expected, got } => {
                write!(f, "sample dimension {got} does not match {expected}")
            }
            Self::Loss(e) => write!(f, "objective error: {e}"),
            Self::UnknownVariant(v) => write!(f, "unknown variant id '{v}'"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        Self::Loss(e)
    }
}

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

/// The five trained model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Unsupervised baseline: single-prior VAE on target-domain normals.
    Vae,
    /// Two-class vMF VAE on all available strata; no adversary, no decoder
    /// conditioning.
    TwoClassVmf,
    /// Two-class vMF VAE plus a domain-adversarial classifier, decoder not
    /// conditioned (the naive domain-adaptation wiring).
    TwoClassVmfDa,
    /// Full architecture (adversary + conditioned decoder), weights zero.
    PropNoWeights,
    /// Full architecture with estimated, clamped importance weights.
    PropWithWeights,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Vae,
        Variant::TwoClassVmf,
        Variant::TwoClassVmfDa,
        Variant::PropNoWeights,
        Variant::PropWithWeights,
    ];

    /// Stable identifier used in configs, run directories, and reports.
    pub fn id(&self) -> &'static str {
        match self {
            Variant::Vae => "vae",
            Variant::TwoClassVmf => "2c-vmf-vae",
            Variant::TwoClassVmfDa => "2c-vmf-vae-da",
            Variant::PropNoWeights => "prop-no-weights",
            Variant::PropWithWeights => "prop-weights",
        }
    }

    pub fn from_id(id: &str) -> Result<Self, TrainError> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.id() == id)
            .ok_or_else(|| TrainError::UnknownVariant(String::from(id)))
    }

    pub fn conditioned_decoder(&self) -> bool {
        matches!(self, Variant::PropNoWeights | Variant::PropWithWeights)
    }

    pub fn with_domain_clf(&self) -> bool {
        matches!(
            self,
            Variant::TwoClassVmfDa | Variant::PropNoWeights | Variant::PropWithWeights
        )
    }

    /// Only the unsupervised baseline trains on a single stratum.
    pub fn uses_all_strata(&self) -> bool {
        !matches!(self, Variant::Vae)
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda_dom: f64,
    pub batch_per_stratum: usize,
    pub latent_dim: usize,
    pub prior_kappa: f64,
    pub posterior_kappa_init: f64,
    pub hidden_units: usize,
    pub seed: u64,
    /// Apply the 1/2 min(w, 2) clamp to estimated weights.
    pub clamp_weights: bool,
    /// Diagnostic knob: run the weighted variant with both weights forced to
    /// zero; must reproduce the unweighted variant exactly.
    pub force_zero_weights: bool,
}

impl TrainConfig {
    /// Per-variant defaults: the unsupervised baseline trains 200 epochs at
    /// learning rate 0.01, every other variant 500 epochs at 0.0001 with
    /// lambda_dom = 0.01.
    pub fn defaults_for(variant: Variant, seed: u64) -> Self {
        let (epochs, learning_rate) = match variant {
            Variant::Vae => (200, 0.01),
            _ => (500, 1e-4),
        };
        Self {
            variant,
            epochs,
            learning_rate,
            lambda_dom: 0.01,
            batch_per_stratum: 32,
            latent_dim: 10,
            prior_kappa: 10.0,
            posterior_kappa_init: 10.0,
            hidden_units: 50,
            seed,
            clamp_weights: true,
            force_zero_weights: false,
        }
    }

    pub fn model_shape(&self, input_dim: usize) -> ModelShape {
        ModelShape {
            input_dim,
            latent_dim: self.latent_dim,
            hidden_units: self.hidden_units,
            conditioned_decoder: self.variant.conditioned_decoder(),
            with_domain_clf: self.variant.with_domain_clf(),
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, one slot per named parameter array.
#[derive(Debug, Clone)]
pub struct AdamState {
    t: u64,
    slots: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let slots = params
            .param_arrays()
            .into_iter()
            .map(|(name, arr)| (String::from(name), vec![0.0; arr.len()], vec![0.0; arr.len()]))
            .collect();
        Self { t: 0, slots }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.slots
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One Adam update over all parameter arrays. Gradient array names and shapes
/// must match the state built from the same model.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut AdamState,
    hp: &AdamHyper,
) {
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - crate::math::pow(hp.beta1, t as f64);
    let bias2 = 1.0 - crate::math::pow(hp.beta2, t as f64);
    let garrs = grads.grad_arrays();
    for (slot, (pname, parr)) in state.slots.iter_mut().zip(params.param_arrays_mut()) {
        let (sname, m, v) = slot;
        debug_assert_eq!(sname.as_str(), pname);
        let (gname, garr) = garrs
            .iter()
            .find(|(n, _)| *n == pname)
            .expect("gradient array missing");
        debug_assert_eq!(*gname, pname);
        assert_eq!(garr.len(), parr.len(), "shape mismatch for {pname}");
        for i in 0..parr.len() {
            let g = garr[i];
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            parr[i] -= hp.learning_rate * m_hat / (crate::math::sqrt(v_hat) + hp.epsilon);
        }
    }
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Index sets of one stratified batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchIndices {
    pub normal_source: Vec<usize>,
    pub anomaly_source: Vec<usize>,
    pub normal_target: Vec<usize>,
}

/// Per-stratum shuffled batches with exactly `per_stratum` samples from each
/// stratum; the trailing partial batch is dropped, so one epoch has
/// `floor(min stratum size / per_stratum)` batches.
pub fn make_batches(
    strata: &TrainStrata,
    per_stratum: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BatchIndices>, TrainError> {
    let sizes = [
        ("normal_source", strata.normal_source.len()),
        ("anomaly_source", strata.anomaly_source.len()),
        ("normal_target", strata.normal_target.len()),
    ];
    for (name, len) in sizes {
        if len == 0 {
            return Err(TrainError::EmptyStratum(name));
        }
        if len < per_stratum {
            return Err(TrainError::StratumSmallerThanBatch {
                stratum: name,
                len,
                batch: per_stratum,
            });
        }
    }
    let n_batches = strata.min_stratum_len() / per_stratum;
    let mut shuffled = |n: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx
    };
    let ns = shuffled(strata.normal_source.len());
    let asrc = shuffled(strata.anomaly_source.len());
    let nt = shuffled(strata.normal_target.len());
    Ok((0..n_batches)
        .map(|b| {
            let lo = b * per_stratum;
            let hi = lo + per_stratum;
            BatchIndices {
                normal_source: ns[lo..hi].to_vec(),
                anomaly_source: asrc[lo..hi].to_vec(),
                normal_target: nt[lo..hi].to_vec(),
            }
        })
        .collect())
}

/// Single-stratum batches for the unsupervised baseline.
fn make_single_batches(
    n: usize,
    per_batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>, TrainError> {
    if n == 0 {
        return Err(TrainError::EmptyStratum("normal_target"));
    }
    if n < per_batch {
        return Err(TrainError::StratumSmallerThanBatch {
            stratum: "normal_target",
            len: n,
            batch: per_batch,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok(idx.chunks_exact(per_batch).map(|c| c.to_vec()).collect())
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Everything a finished run carries back to the caller. Wall-clock and file
/// serialization are the companion crate's concern.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: TrainConfig,
    /// Mean loss breakdown per epoch.
    pub epoch_losses: Vec<LossBreakdown>,
    /// Fraction of raw estimated weights at or past the clamp threshold,
    /// per epoch (0 when the variant estimates no weights).
    pub clamp_fraction: Vec<f64>,
    pub final_params: ModelParams,
    pub priors: LatentPriors,
    pub class_priors: ClassPriors,
}

fn input_dim_of(strata: &TrainStrata, variant: Variant) -> Result<usize, TrainError> {
    let probe = if variant.uses_all_strata() {
        strata.normal_source.first()
    } else {
        strata.normal_target.first()
    };
    let dim = probe
        .map(|s| s.x.len())
        .ok_or(TrainError::EmptyStratum("normal_target"))?;
    let all = strata
        .normal_source
        .iter()
        .chain(&strata.anomaly_source)
        .chain(&strata.normal_target);
    for s in all {
        if s.x.len() != dim {
            return Err(TrainError::InconsistentInputDim {
                expected: dim,
                got: s.x.len(),
            });
        }
    }
    Ok(dim)
}

/// Trains one variant on the given strata. The unsupervised baseline touches
/// only the normal-target stratum; every other variant consumes all three.
pub fn train(strata: &TrainStrata, config: &TrainConfig) -> Result<RunRecord, TrainError> {
    let input_dim = input_dim_of(strata, config.variant)?;
    let shape = config.model_shape(input_dim);
    let mut model = ModelParams::init(&shape, config.seed, config.posterior_kappa_init);
    let priors = LatentPriors::antipodal(config.latent_dim, config.prior_kappa);
    // Estimated once from source training counts; the unsupervised baseline
    // never reads it, any valid placeholder works there.
    let class_priors = if config.variant.uses_all_strata() {
        ClassPriors::from_counts(strata.normal_source.len(), strata.anomaly_source.len())?
    } else {
        ClassPriors::new(0.5)?
    };

    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    batch_rng.set_stream(1);
    let mut draw_rng = ChaCha8Rng::seed_from_u64(config.seed);
    draw_rng.set_stream(2);

    let weight_plan = match config.variant {
        Variant::PropWithWeights if !config.force_zero_weights => WeightPlan::Model {
            clamp: config.clamp_weights,
        },
        _ => WeightPlan::Zero,
    };

    let mut adam = AdamState::new(&model);
    let hp = AdamHyper::with_learning_rate(config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut clamp_fraction = Vec::with_capacity(config.epochs);

    for _epoch in 0..config.epochs {
        let mut sum = LossBreakdown::zeros();
        let mut n_batches = 0usize;
        let mut clamp_hits = 0usize;
        let mut weight_count = 0usize;

        if config.variant.uses_all_strata() {
            let batches = make_batches(strata, config.batch_per_stratum, &mut batch_rng)?;
            for b in &batches {
                let batch = Batch {
                    normal_source: StratumBatch::new(&strata.normal_source, &b.normal_source),
                    anomaly_source: StratumBatch::new(&strata.anomaly_source, &b.anomaly_source),
                    normal_target: StratumBatch::new(&strata.normal_target, &b.normal_target),
                };
                let mut grads = ModelGrads::zeros_like(&model);
                let mut draw = RngDraw(&mut draw_rng);
                let eval = total_objective(
                    &model,
                    &batch,
                    &priors,
                    &class_priors,
                    config.lambda_dom,
                    &weight_plan,
                    &mut draw,
                    Some(&mut grads),
                )?;
                adam_step(&mut model, &grads, &mut adam, &hp);
                accumulate(&mut sum, &eval.breakdown);
                clamp_hits += eval.clamp_hits;
                weight_count += eval.weight_count;
                n_batches += 1;
            }
        } else {
            let batches =
                make_single_batches(strata.normal_target.len(), config.batch_per_stratum, &mut batch_rng)?;
            for idx in &batches {
                let stratum = StratumBatch::new(&strata.normal_target, idx);
                let mut grads = ModelGrads::zeros_like(&model);
                let mut draw = RngDraw(&mut draw_rng);
                let eval = plain_vae_objective(&model, &stratum, &priors.normal, &mut draw, Some(&mut grads));
                adam_step(&mut model, &grads, &mut adam, &hp);
                accumulate(&mut sum, &eval.breakdown);
                n_batches += 1;
            }
        }

        let scale = 1.0 / n_batches.max(1) as f64;
        epoch_losses.push(LossBreakdown {
            recon: sum.recon * scale,
            kl: sum.kl * scale,
            domain: sum.domain * scale,
            w_vae_mean: sum.w_vae_mean * scale,
            w_dom_mean: sum.w_dom_mean * scale,
            total: sum.total * scale,
        });
        clamp_fraction.push(if weight_count == 0 {
            0.0
        } else {
            clamp_hits as f64 / weight_count as f64
        });
    }

    Ok(RunRecord {
        config: config.clone(),
        epoch_losses,
        clamp_fraction,
        final_params: model,
        priors,
        class_priors,
    })
}

fn accumulate(sum: &mut LossBreakdown, b: &LossBreakdown) {
    sum.recon += b.recon;
    sum.kl += b.kl;
    sum.domain += b.domain;
    sum.w_vae_mean += b.w_vae_mean;
    sum.w_dom_mean += b.w_dom_mean;
    sum.total += b.total;
}
