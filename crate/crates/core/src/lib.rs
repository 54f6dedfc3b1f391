//! Core numerics for domain-adapted semi-supervised anomaly detection.
//!
//! The model is a two-prior variational auto-encoder on the unit hypersphere:
//! the encoder emits a von Mises-Fisher posterior, normal and anomalous data
//! are tied to two antipodal vMF priors, a domain classifier trained
//! adversarially makes the latent domain-invariant, the decoder is conditioned
//! on the domain label, and importance weights estimated from the model fill
//! in the loss contribution of the missing (anomalous, target) stratum.
//!
//! This crate is `no_std` (with `alloc`) and contains no file or terminal IO;
//! the companion `ssadapt` crate carries dataset files, run directories, and
//! the command-line interface.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bessel;
pub mod data;
pub mod distributions;
pub mod evaluation;
pub mod losses;
pub mod math;
pub mod networks;
pub mod training;

pub use data::{CaseDataset, CaseSplit, ClassLabel, DomainLabel, LabeledSample, Role, TrainStrata};
pub use distributions::{GaussianDiag, UnitVector, VmfDist};
pub use evaluation::{EvalSummary, ScoreKind, ScoreRecord};
pub use losses::{ClassPriors, LatentPriors, LossBreakdown};
pub use networks::{ModelParams, ModelShape};
pub use training::{RunRecord, TrainConfig, Variant};
