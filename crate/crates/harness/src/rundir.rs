//! Run-directory layout and serialization: per-run config, the loss series
//! as CSV, clamp telemetry, metadata, completion markers, and evaluation
//! outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ssadapt_core::evaluation::{ScoreKind, ScoreRecord};
use ssadapt_core::losses::LossBreakdown;
use ssadapt_core::training::{RunRecord, TrainConfig, Variant};
use ssadapt_core::Role;

/// One cell of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RunKey {
    pub case_id: u8,
    pub variant: Variant,
    pub seed: u64,
}

impl RunKey {
    pub fn dir(&self, output_root: &Path) -> PathBuf {
        output_root
            .join("runs")
            .join(format!("case{}", self.case_id))
            .join(self.variant.id())
            .join(format!("seed{}", self.seed))
    }
}

/// Serializable mirror of the core training config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfigFile {
    pub variant: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda_dom: f64,
    pub batch_per_stratum: usize,
    pub latent_dim: usize,
    pub prior_kappa: f64,
    pub posterior_kappa_init: f64,
    pub hidden_units: usize,
    pub seed: u64,
    pub clamp_weights: bool,
    pub force_zero_weights: bool,
}

impl From<&TrainConfig> for TrainConfigFile {
    fn from(c: &TrainConfig) -> Self {
        Self {
            variant: c.variant.id().to_string(),
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            lambda_dom: c.lambda_dom,
            batch_per_stratum: c.batch_per_stratum,
            latent_dim: c.latent_dim,
            prior_kappa: c.prior_kappa,
            posterior_kappa_init: c.posterior_kappa_init,
            hidden_units: c.hidden_units,
            seed: c.seed,
            clamp_weights: c.clamp_weights,
            force_zero_weights: c.force_zero_weights,
        }
    }
}

impl TrainConfigFile {
    pub fn to_core(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            variant: Variant::from_id(&self.variant).map_err(|e| anyhow::anyhow!("{e}"))?,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            lambda_dom: self.lambda_dom,
            batch_per_stratum: self.batch_per_stratum,
            latent_dim: self.latent_dim,
            prior_kappa: self.prior_kappa,
            posterior_kappa_init: self.posterior_kappa_init,
            hidden_units: self.hidden_units,
            seed: self.seed,
            clamp_weights: self.clamp_weights,
            force_zero_weights: self.force_zero_weights,
        })
    }
}

/// `config.json` of a run directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfigFile {
    pub case_id: u8,
    pub train: TrainConfigFile,
    /// SHA-256 of the four dataset source payloads.
    pub source_sha256: [String; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub git_hash: String,
    pub os: String,
    pub arch: String,
    pub wall_clock_seconds: f64,
}

pub fn git_hash() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

pub fn role_id(role: Role) -> &'static str {
    match role {
        Role::Normal => "normal",
        Role::SeenAnomaly => "seen_anomaly",
        Role::UnseenAnomaly => "unseen_anomaly",
    }
}

pub fn losses_csv(series: &[LossBreakdown]) -> String {
    let mut out = String::from("epoch,recon,kl,domain,w_vae_mean,w_dom_mean,total\n");
    for (i, b) in series.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i + 1,
            b.recon,
            b.kl,
            b.domain,
            b.w_vae_mean,
            b.w_dom_mean,
            b.total
        ));
    }
    out
}

pub fn clamp_csv(fractions: &[f64]) -> String {
    let mut out = String::from("epoch,clamp_fraction\n");
    for (i, f) in fractions.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, f));
    }
    out
}

pub fn scores_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from("sample_id,role,rl,kl,elbo\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.index,
            role_id(r.role),
            r.rl,
            r.kl,
            r.elbo
        ));
    }
    out
}

/// `summary.json` of an evaluated run: AUC percentages per score kind. Only
/// the reconstruction score is defined for the unsupervised baseline.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub case_id: u8,
    pub variant: String,
    pub seed: u64,
    pub seen_auc_percent: std::collections::BTreeMap<String, f64>,
    pub unseen_auc_percent: std::collections::BTreeMap<String, f64>,
}

pub fn score_kinds_for(variant: Variant) -> &'static [ScoreKind] {
    match variant {
        Variant::Vae => &[ScoreKind::Rl],
        _ => &[ScoreKind::Rl, ScoreKind::Kl, ScoreKind::Elbo],
    }
}

/// Persists a finished training run. The completion marker is written last.
pub fn write_run(
    dir: &Path,
    key: &RunKey,
    record: &RunRecord,
    source_sha256: [String; 4],
    wall_clock_seconds: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cfgf = RunConfigFile {
        case_id: key.case_id,
        train: TrainConfigFile::from(&record.config),
        source_sha256,
    };
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&cfgf)?,
    )?;
    std::fs::write(dir.join("losses.csv"), losses_csv(&record.epoch_losses))?;
    std::fs::write(dir.join("clamp.csv"), clamp_csv(&record.clamp_fraction))?;
    crate::checkpoint::save(dir, &record.final_params, record.config.seed)?;
    let meta = RunMetadata {
        git_hash: git_hash(),
        os: std::env::consts::OS.to_string(),
        arch: std::env::consts::ARCH.to_string(),
        wall_clock_seconds,
    };
    std::fs::write(
        dir.join("metadata.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    std::fs::write(dir.join("done.marker"), b"ok\n")?;
    Ok(())
}

pub fn is_done(dir: &Path) -> bool {
    dir.join("done.marker").exists()
}

pub fn read_run_config(dir: &Path) -> Result<RunConfigFile> {
    let text = std::fs::read_to_string(dir.join("config.json"))
        .with_context(|| format!("reading run config in {}", dir.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(dir.join("summary.json"))
        .with_context(|| format!("reading summary in {}", dir.display()))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_headers_match_the_run_log_contract() {
        let series = vec![LossBreakdown {
            recon: -1.5,
            kl: 0.25,
            domain: -0.7,
            w_vae_mean: 0.5,
            w_dom_mean: 0.75,
            total: 1.743,
        }];
        let csv = losses_csv(&series);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,recon,kl,domain,w_vae_mean,w_dom_mean,total"
        );
        assert_eq!(lines.next().unwrap(), "1,-1.5,0.25,-0.7,0.5,0.75,1.743");
    }

    #[test]
    fn run_key_layout() {
        let key = RunKey {
            case_id: 2,
            variant: Variant::PropWithWeights,
            seed: 7,
        };
        let dir = key.dir(Path::new("/tmp/out"));
        assert_eq!(dir, Path::new("/tmp/out/runs/case2/prop-weights/seed7"));
    }

    #[test]
    fn vae_reports_reconstruction_only() {
        assert_eq!(score_kinds_for(Variant::Vae), &[ScoreKind::Rl]);
        assert_eq!(score_kinds_for(Variant::TwoClassVmf).len(), 3);
    }
}
