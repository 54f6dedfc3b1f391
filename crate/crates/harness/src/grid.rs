//! Grid execution: the case x variant x seed training runs and their
//! evaluation, on a shared worker pool. Workers share nothing but the
//! read-only dataset caches; each run writes only its own directory, so
//! partial failures stay isolated.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use ssadapt_core::data::CaseDataset;
use ssadapt_core::evaluation::evaluate_run;
use ssadapt_core::losses::LatentPriors;
use ssadapt_core::training::train;

use crate::config::ExperimentConfig;
use crate::dataio::read_cache;
use crate::rundir::{
    is_done, read_run_config, score_kinds_for, scores_csv, write_run, RunKey, RunSummary,
};

/// All grid cells of the config, in deterministic order.
pub fn plan_runs(cfg: &ExperimentConfig) -> Vec<RunKey> {
    let mut keys = Vec::new();
    for &case_id in &cfg.experiment.cases {
        for variant in cfg.variants() {
            for &seed in &cfg.experiment.seeds {
                keys.push(RunKey {
                    case_id,
                    variant,
                    seed,
                });
            }
        }
    }
    keys
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers())
        .build()
        .context("building worker pool")
}

fn load_cases(cfg: &ExperimentConfig) -> Result<BTreeMap<u8, Arc<CaseDataset>>> {
    let mut map = BTreeMap::new();
    for &case_id in &cfg.experiment.cases {
        let ds = read_cache(cfg, case_id).with_context(|| {
            format!("loading dataset cache for case {case_id}; run `ssadapt prepare` first")
        })?;
        map.insert(case_id, Arc::new(ds));
    }
    Ok(map)
}

/// Outcome of one grid pass.
#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    pub executed: Vec<RunKey>,
    pub skipped: Vec<RunKey>,
    pub failed: Vec<(RunKey, String)>,
}

impl GridOutcome {
    pub fn ok(&self) -> bool {
        self.failed.is_empty()
    }
}

fn source_checksums(cfg: &ExperimentConfig) -> [String; 4] {
    [
        cfg.data.sha256_train_images.clone(),
        cfg.data.sha256_train_labels.clone(),
        cfg.data.sha256_test_images.clone(),
        cfg.data.sha256_test_labels.clone(),
    ]
}

/// Trains every planned run that has no completion marker yet.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<GridOutcome> {
    let cases = load_cases(cfg)?;
    let keys = plan_runs(cfg);
    let root = cfg.experiment.output_root.clone();
    let shas = source_checksums(cfg);

    let results: Vec<(RunKey, Result<bool>)> = pool(cfg)?.install(|| {
        keys.par_iter()
            .map(|key| {
                let dir = key.dir(&root);
                if is_done(&dir) {
                    return (*key, Ok(false));
                }
                let ds = Arc::clone(&cases[&key.case_id]);
                let train_cfg = cfg.train_config(key.variant, key.seed);
                let started = Instant::now();
                let out = train(&ds.train, &train_cfg)
                    .map_err(|e| anyhow::anyhow!("training failed: {e}"))
                    .and_then(|record| {
                        write_run(
                            &dir,
                            key,
                            &record,
                            shas.clone(),
                            started.elapsed().as_secs_f64(),
                        )
                    })
                    .map(|()| true);
                (*key, out)
            })
            .collect()
    });

    let mut outcome = GridOutcome::default();
    for (key, r) in results {
        match r {
            Ok(true) => outcome.executed.push(key),
            Ok(false) => outcome.skipped.push(key),
            Err(e) => outcome.failed.push((key, format!("{e:#}"))),
        }
    }
    Ok(outcome)
}

/// Scores the test set and writes `scores.csv` and `summary.json` for every
/// completed run.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<GridOutcome> {
    let cases = load_cases(cfg)?;
    let keys = plan_runs(cfg);
    let root = cfg.experiment.output_root.clone();

    let results: Vec<(RunKey, Result<bool>)> = pool(cfg)?.install(|| {
        keys.par_iter()
            .map(|key| {
                let dir = key.dir(&root);
                if !is_done(&dir) {
                    return (
                        *key,
                        Err(anyhow::anyhow!(
                            "run not trained yet: {} (run `ssadapt train`)",
                            dir.display()
                        )),
                    );
                }
                let out = evaluate_one(cfg, key, &dir, &cases[&key.case_id]);
                (*key, out)
            })
            .collect()
    });

    let mut outcome = GridOutcome::default();
    for (key, r) in results {
        match r {
            Ok(true) => outcome.executed.push(key),
            Ok(false) => outcome.skipped.push(key),
            Err(e) => outcome.failed.push((key, format!("{e:#}"))),
        }
    }
    Ok(outcome)
}

fn evaluate_one(
    cfg: &ExperimentConfig,
    key: &RunKey,
    dir: &Path,
    ds: &CaseDataset,
) -> Result<bool> {
    let run_cfg = read_run_config(dir)?;
    let train_cfg = run_cfg.train.to_core()?;
    let (model, _seed) = crate::checkpoint::load(dir)?;
    let priors = LatentPriors::antipodal(train_cfg.latent_dim, train_cfg.prior_kappa);
    let (records, summary) =
        evaluate_run(&model, &priors, &ds.test).map_err(|e| anyhow::anyhow!("{e}"))?;
    std::fs::write(dir.join("scores.csv"), scores_csv(&records))?;

    let mut seen = BTreeMap::new();
    let mut unseen = BTreeMap::new();
    for kind in score_kinds_for(key.variant) {
        seen.insert(kind.id().to_string(), 100.0 * summary.seen.get(*kind));
        unseen.insert(kind.id().to_string(), 100.0 * summary.unseen.get(*kind));
    }
    let summary_file = RunSummary {
        case_id: key.case_id,
        variant: key.variant.id().to_string(),
        seed: key.seed,
        seen_auc_percent: seen,
        unseen_auc_percent: unseen,
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary_file)?,
    )?;
    let _ = cfg;
    Ok(true)
}

/// Fails loudly when any run in the grid failed, naming each.
pub fn require_ok(outcome: &GridOutcome, what: &str) -> Result<()> {
    if !outcome.ok() {
        let mut msg = format!("{what}: {} run(s) failed:", outcome.failed.len());
        for (key, err) in &outcome.failed {
            msg.push_str(&format!(
                "\n  case{} {} seed{}: {err}",
                key.case_id,
                key.variant.id(),
                key.seed
            ));
        }
        bail!(msg);
    }
    Ok(())
}
