//! Anomaly scoring and AUC computation.
//!
//! Three anomaly scores per test sample, each oriented so that larger means
//! more anomalous:
//! * `rl`: reconstruction loss `1/2 ||x - xhat||^2` at the posterior-mean
//!   latent (decoder conditioned on the target domain where applicable),
//! * `kl`: closed-form KL from the posterior to the normal-class prior,
//! * `elbo`: `rl + kl`, the negated evidence lower bound w.r.t. the normal
//!   prior with additive constants dropped.
//!
//! AUC is the Mann-Whitney statistic (ties counted half) computed from
//! average ranks in O(n log n); an exhaustive pairwise oracle in the test
//! suite pins the two down against each other.

use alloc::vec::Vec;
use core::fmt;

use crate::data::{DomainLabel, LabeledSample, Role};
use crate::losses::LatentPriors;
use crate::math::dot;
use crate::networks::ModelParams;
use crate::distributions::{vmf_log_norm_const, vmf_mean_resultant};

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    /// AUC needs at least one positive and one negative.
    SingleClass,
    NonFiniteScore,
    LengthMismatch { scores: usize, labels: usize },
    MissingRole(Role),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SingleClass => write!(f, "AUC needs both label values present"),
            Self::NonFiniteScore => write!(f, "non-finite score"),
            Self::LengthMismatch { scores, labels } => {
                write!(f, "{scores} scores vs {labels} labels")
            }
            Self::MissingRole(r) => write!(f, "test set has no {r:?} samples"),
        }
    }
}

impl core::error::Error for EvalError {}

/// Per-sample anomaly scores; `index` is the position in the evaluated set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub index: usize,
    pub role: Role,
    pub rl: f64,
    pub kl: f64,
    pub elbo: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    Rl,
    Kl,
    Elbo,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::Rl, ScoreKind::Kl, ScoreKind::Elbo];

    pub fn id(&self) -> &'static str {
        match self {
            ScoreKind::Rl => "rl",
            ScoreKind::Kl => "kl",
            ScoreKind::Elbo => "elbo",
        }
    }

    pub fn of(&self, r: &ScoreRecord) -> f64 {
        match self {
            ScoreKind::Rl => r.rl,
            ScoreKind::Kl => r.kl,
            ScoreKind::Elbo => r.elbo,
        }
    }
}

/// Scores one sample at the posterior mean (no sampling, deterministic).
/// Test data is target-domain, so a conditioned decoder receives the target
/// label.
pub fn score_sample(
    sample: &LabeledSample,
    index: usize,
    model: &ModelParams,
    priors: &LatentPriors,
) -> ScoreRecord {
    let enc = model.encoder.forward(&sample.x);
    let dec = model.decoder.forward(&enc.mu, DomainLabel::Target);
    let rl = -crate::losses::recon_log_lik(&sample.x, &dec.xhat);

    // KL[q || p(z | c=N)] in closed form, directly from the cached pieces.
    let m = model.latent_dim();
    let prior = &priors.normal;
    let a = vmf_mean_resultant(m, enc.kappa).expect("valid posterior");
    let align = dot(prior.mean_direction().as_slice(), &enc.mu);
    let kl = (enc.kappa - prior.concentration() * align) * a
        + vmf_log_norm_const(m, enc.kappa).expect("valid posterior")
        - vmf_log_norm_const(m, prior.concentration()).expect("valid prior");

    ScoreRecord {
        index,
        role: sample.role,
        rl,
        kl,
        elbo: rl + kl,
    }
}

/// Scores a whole test set in order.
pub fn score_test_set(
    test: &[LabeledSample],
    model: &ModelParams,
    priors: &LatentPriors,
) -> Vec<ScoreRecord> {
    test.iter()
        .enumerate()
        .map(|(i, s)| score_sample(s, i, model, priors))
        .collect()
}

/// Mann-Whitney U for the positive class plus the class counts. Ties get
/// average ranks, so `u_pos + u_neg == n_pos * n_neg` exactly.
pub fn mann_whitney_u(scores: &[f64], labels: &[bool]) -> Result<(f64, usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Average ranks over tie runs (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u_pos = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok((u_pos, n_pos, n_neg))
}

/// AUC in [0, 1]: the probability that a random positive scores above a
/// random negative, ties counted one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (u, n_pos, n_neg) = mann_whitney_u(scores, labels)?;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUC per score kind, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTriple {
    pub rl: f64,
    pub kl: f64,
    pub elbo: f64,
}

impl ScoreTriple {
    pub fn get(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::Rl => self.rl,
            ScoreKind::Kl => self.kl,
            ScoreKind::Elbo => self.elbo,
        }
    }
}

/// Seen/unseen AUC summary of one run on one test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub seen: ScoreTriple,
    pub unseen: ScoreTriple,
}

fn auc_against_normals(
    records: &[ScoreRecord],
    kind: ScoreKind,
    anomaly_role: Role,
) -> Result<f64, EvalError> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        if r.role == Role::Normal {
            scores.push(kind.of(r));
            labels.push(false);
        } else if r.role == anomaly_role {
            scores.push(kind.of(r));
            labels.push(true);
        }
    }
    auc(&scores, &labels)
}

/// Scores the test set and computes the seen-vs-normal and unseen-vs-normal
/// AUC for each score kind. Deterministic given parameters and test set.
pub fn evaluate_run(
    model: &ModelParams,
    priors: &LatentPriors,
    test: &[LabeledSample],
) -> Result<(Vec<ScoreRecord>, EvalSummary), EvalError> {
    for role in [Role::Normal, Role::SeenAnomaly, Role::UnseenAnomaly] {
        if !test.iter().any(|s| s.role == role) {
            return Err(EvalError::MissingRole(role));
        }
    }
    let records = score_test_set(test, model, priors);
    let triple = |role: Role| -> Result<ScoreTriple, EvalError> {
        Ok(ScoreTriple {
            rl: auc_against_normals(&records, ScoreKind::Rl, role)?,
            kl: auc_against_normals(&records, ScoreKind::Kl, role)?,
            elbo: auc_against_normals(&records, ScoreKind::Elbo, role)?,
        })
    };
    let summary = EvalSummary {
        seen: triple(Role::SeenAnomaly)?,
        unseen: triple(Role::UnseenAnomaly)?,
    };
    Ok((records, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassLabel;
    use crate::networks::ModelShape;
    use alloc::vec;

    #[test]
    fn auc_matches_known_pairwise_value() {
        // Two negatives (0.1, 0.4), two positives (0.35, 0.8): of the four
        // pairs, three rank the positive higher.
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert!((auc(&scores, &labels).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auc_endpoints() {
        let scores = [0.0, 0.1, 0.9, 1.0];
        let labels = [false, false, true, true];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        let labels_flipped = [true, true, false, false];
        assert_eq!(auc(&scores, &labels_flipped).unwrap(), 0.0);
        // All ties.
        let flat = [0.5; 6];
        let labels = [true, false, true, false, true, false];
        assert_eq!(auc(&flat, &labels).unwrap(), 0.5);
    }

    #[test]
    fn auc_flip_symmetry_is_exact() {
        let scores = [0.3, 0.3, 0.7, 0.2, 0.9, 0.7, 0.1];
        let labels = [true, false, true, false, true, false, true];
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let (u_pos, n_pos, n_neg) = mann_whitney_u(&scores, &labels).unwrap();
        let (u_neg, ..) = mann_whitney_u(&scores, &flipped).unwrap();
        assert_eq!(u_pos + u_neg, (n_pos * n_neg) as f64);
    }

    #[test]
    fn auc_error_paths() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClass)
        ));
        assert!(matches!(
            auc(&[f64::NAN, 0.2], &[true, false]),
            Err(EvalError::NonFiniteScore)
        ));
        assert!(matches!(
            auc(&[0.1], &[true, false]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    fn toy_model(seed: u64) -> (ModelParams, LatentPriors) {
        let model = ModelParams::init(
            &ModelShape {
                input_dim: 4,
                latent_dim: 3,
                hidden_units: 4,
                conditioned_decoder: true,
                with_domain_clf: true,
            },
            seed,
            9.0,
        );
        (model, LatentPriors::antipodal(3, 10.0))
    }

    fn test_sample(x: Vec<f64>, role: Role) -> LabeledSample {
        LabeledSample {
            x,
            class: if role == Role::Normal {
                ClassLabel::Normal
            } else {
                ClassLabel::Anomaly
            },
            domain: DomainLabel::Target,
            digit: 0,
            role,
        }
    }

    #[test]
    fn scoring_is_deterministic_and_elbo_decomposes() {
        let (model, priors) = toy_model(5);
        let s = test_sample(vec![0.1, 0.8, 0.3, 0.6], Role::Normal);
        let a = score_sample(&s, 0, &model, &priors);
        let b = score_sample(&s, 0, &model, &priors);
        assert_eq!(a, b);
        assert_eq!(a.elbo, a.rl + a.kl);
        assert!(a.kl >= 0.0);
        assert!(a.rl >= 0.0);
    }

    #[test]
    fn rigged_posterior_zeroes_the_kl_score() {
        // Priors built from the encoder's own posterior at this input.
        let (model, _) = toy_model(6);
        let s = test_sample(vec![0.9, 0.2, 0.4, 0.7], Role::Normal);
        let enc = model.encoder.forward(&s.x);
        let posterior = crate::distributions::VmfDist::new(
            crate::distributions::UnitVector::normalize(enc.mu.clone()),
            enc.kappa,
        )
        .unwrap();
        let priors = LatentPriors {
            normal: posterior.clone(),
            anomaly: posterior,
        };
        let rec = score_sample(&s, 0, &model, &priors);
        assert!(rec.kl.abs() < 1e-9);
        assert!((rec.elbo - rec.rl).abs() < 1e-9);
    }

    #[test]
    fn score_matches_hand_computation_on_tiny_model() {
        // Zero decoder: xhat = 0.5 everywhere, so rl = 1/2 sum (x - 0.5)^2.
        let (mut model, priors) = toy_model(7);
        model.decoder.hidden = crate::networks::LayerParams::zeros(4, 5);
        model.decoder.head = crate::networks::LayerParams::zeros(4, 4);
        let x = vec![0.0, 1.0, 0.25, 0.5];
        let s = test_sample(x.clone(), Role::Normal);
        let rec = score_sample(&s, 0, &model, &priors);
        let want_rl: f64 = 0.5 * x.iter().map(|&v: &f64| (v - 0.5) * (v - 0.5)).sum::<f64>();
        assert!((rec.rl - want_rl).abs() < 1e-12);

        // KL recomputed through the distribution-level closed form.
        let enc = model.encoder.forward(&x);
        let posterior = crate::distributions::VmfDist::new(
            crate::distributions::UnitVector::normalize(enc.mu.clone()),
            enc.kappa,
        )
        .unwrap();
        let want_kl = posterior.kl(&priors.normal).unwrap();
        assert!((rec.kl - want_kl).abs() < 1e-9);
    }

    #[test]
    fn evaluate_run_separates_roles_and_validates_presence() {
        let (model, priors) = toy_model(8);
        let mut test = vec![
            test_sample(vec![0.1, 0.2, 0.3, 0.4], Role::Normal),
            test_sample(vec![0.2, 0.1, 0.4, 0.3], Role::Normal),
            test_sample(vec![0.9, 0.8, 0.7, 0.6], Role::SeenAnomaly),
        ];
        assert!(matches!(
            evaluate_run(&model, &priors, &test),
            Err(EvalError::MissingRole(Role::UnseenAnomaly))
        ));
        test.push(test_sample(vec![0.8, 0.9, 0.6, 0.7], Role::UnseenAnomaly));
        let (records, summary) = evaluate_run(&model, &priors, &test).unwrap();
        assert_eq!(records.len(), 4);
        for kind in ScoreKind::ALL {
            assert!((0.0..=1.0).contains(&summary.seen.get(kind)));
            assert!((0.0..=1.0).contains(&summary.unseen.get(kind)));
        }
    }

    #[test]
    fn perfectly_separating_model_hits_auc_one() {
        // Synthetic records: every anomaly above every normal on all scores.
        let records: Vec<ScoreRecord> = (0..10)
            .map(|i| {
                let role = match i % 3 {
                    0 => Role::Normal,
                    1 => Role::SeenAnomaly,
                    _ => Role::UnseenAnomaly,
                };
                let base = if role == Role::Normal { 0.0 } else { 10.0 };
                ScoreRecord {
                    index: i,
                    role,
                    rl: base + i as f64 * 0.01,
                    kl: base + i as f64 * 0.02,
                    elbo: base + i as f64 * 0.03,
                }
            })
            .collect();
        for kind in ScoreKind::ALL {
            for role in [Role::SeenAnomaly, Role::UnseenAnomaly] {
                assert_eq!(auc_against_normals(&records, kind, role).unwrap(), 1.0);
            }
        }
    }
}
