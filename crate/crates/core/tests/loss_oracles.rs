//! Loss-level oracle: on synthetic data where the covariate-shift-under-
//! class-shift condition holds by construction, the three-stratum weighted
//! objectives with true density-ratio weights must match the ideal
//! four-stratum objectives computed on held-out (anomaly, target) samples.
//!
//! The ideal side is evaluated here, per sample, through the contract-level
//! ops and plain arithmetic; the estimate side goes through the production
//! batch objective. The two share no aggregation code.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ssadapt_core::data::{gen_synthetic, ClassLabel, DomainLabel, SyntheticSpec};
use ssadapt_core::losses::{
    domain_loss, total_objective, vae_loss, Batch, ClassPriors, LatentPriors, RngDraw,
    StratumBatch, WeightPlan,
};
use ssadapt_core::networks::{ModelParams, ModelShape};

fn oracle_spec() -> SyntheticSpec {
    // Class axis e1, domain shift along e2, moderate overlap so the true
    // ratios stay in a well-conditioned range.
    SyntheticSpec {
        mean_normal: vec![0.40, 0.50, 0.45, 0.55],
        mean_anomaly: vec![0.62, 0.50, 0.45, 0.55],
        cov_diag: vec![0.012, 0.012, 0.012, 0.012],
        shift: vec![0.0, 0.09, 0.0, 0.0],
        class_prior_anomaly: 0.5,
    }
}

fn oracle_model(with_clf: bool, seed: u64) -> ModelParams {
    ModelParams::init(
        &ModelShape {
            input_dim: 4,
            latent_dim: 5,
            hidden_units: 8,
            conditioned_decoder: true,
            with_domain_clf: with_clf,
        },
        seed,
        12.0,
    )
}

#[test]
fn weighted_vae_loss_matches_ideal_four_stratum_loss() {
    let spec = oracle_spec();
    let n = 10_000;
    let data = gen_synthetic(&spec, n, 42).unwrap();
    let model = oracle_model(true, 7);
    let priors = LatentPriors::antipodal(5, 10.0);
    let class_priors = ClassPriors::new(spec.class_prior_anomaly).unwrap();
    let (pn, pa) = (class_priors.p_normal(), class_priors.p_anomaly());

    // Ideal Eq.-10-style loss: all four strata, the missing one from the
    // held-out block, each term through the one-sample contract op.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draw = RngDraw(&mut rng);
    let mean_vae = |samples: &[ssadapt_core::data::LabeledSample],
                    c: ClassLabel,
                    d: DomainLabel,
                    draw: &mut RngDraw<ChaCha8Rng>| {
        samples
            .iter()
            .map(|s| vae_loss(&s.x, c, d, &model, &priors, draw))
            .sum::<f64>()
            / samples.len() as f64
    };
    let ideal = pn / 2.0
        * mean_vae(
            &data.strata.normal_source,
            ClassLabel::Normal,
            DomainLabel::Source,
            &mut draw,
        )
        + pa / 2.0
            * mean_vae(
                &data.strata.anomaly_source,
                ClassLabel::Anomaly,
                DomainLabel::Source,
                &mut draw,
            )
        + pn / 2.0
            * mean_vae(
                &data.strata.normal_target,
                ClassLabel::Normal,
                DomainLabel::Target,
                &mut draw,
            )
        + pa / 2.0
            * mean_vae(
                &data.heldout_anomaly_target,
                ClassLabel::Anomaly,
                DomainLabel::Target,
                &mut draw,
            );

    // Estimate: three available strata with true density-ratio weights,
    // through the production batch objective.
    let w_vae: Vec<f64> = data
        .strata
        .anomaly_source
        .iter()
        .map(|s| spec.true_domain_ratio(&s.x))
        .collect();
    let w_dom: Vec<f64> = data
        .strata
        .normal_target
        .iter()
        .map(|s| spec.true_class_ratio(&s.x))
        .collect();
    let idx: Vec<usize> = (0..n).collect();
    let batch = Batch {
        normal_source: StratumBatch::new(&data.strata.normal_source, &idx),
        anomaly_source: StratumBatch::new(&data.strata.anomaly_source, &idx),
        normal_target: StratumBatch::new(&data.strata.normal_target, &idx),
    };
    let mut rng2 = ChaCha8Rng::seed_from_u64(2);
    let mut draw2 = RngDraw(&mut rng2);
    let eval = total_objective(
        &model,
        &batch,
        &priors,
        &class_priors,
        0.0,
        &WeightPlan::Provided {
            w_vae: &w_vae,
            w_dom: &w_dom,
        },
        &mut draw2,
        None,
    )
    .unwrap();
    let estimate = eval.breakdown.recon - eval.breakdown.kl;

    let rel = (estimate - ideal).abs() / ideal.abs();
    assert!(
        rel < 0.05,
        "ideal {ideal}, estimate {estimate}, relative gap {rel}"
    );
}

#[test]
fn weighted_domain_loss_matches_ideal_four_stratum_loss() {
    let spec = oracle_spec();
    let n = 10_000;
    let data = gen_synthetic(&spec, n, 43).unwrap();
    let model = oracle_model(true, 8);
    let priors = LatentPriors::antipodal(5, 10.0);
    let class_priors = ClassPriors::new(spec.class_prior_anomaly).unwrap();
    let (pn, pa) = (class_priors.p_normal(), class_priors.p_anomaly());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draw = RngDraw(&mut rng);
    let mean_dom = |samples: &[ssadapt_core::data::LabeledSample],
                    d: DomainLabel,
                    draw: &mut RngDraw<ChaCha8Rng>| {
        samples
            .iter()
            .map(|s| domain_loss(&s.x, d, &model, draw).unwrap())
            .sum::<f64>()
            / samples.len() as f64
    };
    let ideal = pn / 2.0 * mean_dom(&data.strata.normal_source, DomainLabel::Source, &mut draw)
        + pa / 2.0 * mean_dom(&data.strata.anomaly_source, DomainLabel::Source, &mut draw)
        + pn / 2.0 * mean_dom(&data.strata.normal_target, DomainLabel::Target, &mut draw)
        + pa / 2.0 * mean_dom(&data.heldout_anomaly_target, DomainLabel::Target, &mut draw);

    let w_vae: Vec<f64> = data
        .strata
        .anomaly_source
        .iter()
        .map(|s| spec.true_domain_ratio(&s.x))
        .collect();
    let w_dom: Vec<f64> = data
        .strata
        .normal_target
        .iter()
        .map(|s| spec.true_class_ratio(&s.x))
        .collect();
    let idx: Vec<usize> = (0..n).collect();
    let batch = Batch {
        normal_source: StratumBatch::new(&data.strata.normal_source, &idx),
        anomaly_source: StratumBatch::new(&data.strata.anomaly_source, &idx),
        normal_target: StratumBatch::new(&data.strata.normal_target, &idx),
    };
    let mut rng2 = ChaCha8Rng::seed_from_u64(4);
    let mut draw2 = RngDraw(&mut rng2);
    let eval = total_objective(
        &model,
        &batch,
        &priors,
        &class_priors,
        1.0,
        &WeightPlan::Provided {
            w_vae: &w_vae,
            w_dom: &w_dom,
        },
        &mut draw2,
        None,
    )
    .unwrap();
    let estimate = eval.breakdown.domain;

    let rel = (estimate - ideal).abs() / ideal.abs();
    assert!(
        rel < 0.05,
        "ideal {ideal}, estimate {estimate}, relative gap {rel}"
    );
}

#[test]
fn zero_weights_reduce_to_the_unweighted_objective() {
    // With every weight at zero the weighted objective must equal the plain
    // three-stratum objective bit for bit.
    let spec = oracle_spec();
    let data = gen_synthetic(&spec, 64, 9).unwrap();
    let model = oracle_model(true, 11);
    let priors = LatentPriors::antipodal(5, 10.0);
    let class_priors = ClassPriors::new(0.5).unwrap();
    let idx: Vec<usize> = (0..64).collect();
    let batch = Batch {
        normal_source: StratumBatch::new(&data.strata.normal_source, &idx),
        anomaly_source: StratumBatch::new(&data.strata.anomaly_source, &idx),
        normal_target: StratumBatch::new(&data.strata.normal_target, &idx),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rec = ssadapt_core::losses::RecordingDraw::new(&mut rng);
    let zero = total_objective(
        &model,
        &batch,
        &priors,
        &class_priors,
        0.01,
        &WeightPlan::Zero,
        &mut rec,
        None,
    )
    .unwrap();

    let zeros_a = vec![0.0; 64];
    let zeros_b = vec![0.0; 64];
    let mut replay = ssadapt_core::losses::ReplayDraw::new(&rec.recorded);
    let provided = total_objective(
        &model,
        &batch,
        &priors,
        &class_priors,
        0.01,
        &WeightPlan::Provided {
            w_vae: &zeros_a,
            w_dom: &zeros_b,
        },
        &mut replay,
        None,
    )
    .unwrap();
    assert_eq!(zero.breakdown.total, provided.breakdown.total);
    assert_eq!(zero.breakdown.recon, provided.breakdown.recon);
    assert_eq!(zero.breakdown.kl, provided.breakdown.kl);
    assert_eq!(zero.breakdown.domain, provided.breakdown.domain);
}
