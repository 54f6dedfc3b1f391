//! Experiment configuration: one TOML file fully determines data sources,
//! case/variant/seed grid, training hyperparameters, and output layout. A
//! stored config re-runs the identical experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ssadapt_core::training::{TrainConfig, Variant};

/// Environment variable overriding `output_root`.
pub const OUTPUT_ROOT_ENV: &str = "SSADAPT_OUTPUT_ROOT";

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub dataset: DatasetConfig,
    pub experiment: GridConfig,
    pub train: TrainOverrides,
}

/// Source dataset files (gzipped or raw IDX) and their expected SHA-256
/// checksums, taken over the decompressed byte stream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub sha256_train_images: String,
    pub sha256_train_labels: String,
    pub sha256_test_images: String,
    pub sha256_test_labels: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/mnist"),
            train_images: "train-images-idx3-ubyte.gz".into(),
            train_labels: "train-labels-idx1-ubyte.gz".into(),
            test_images: "t10k-images-idx3-ubyte.gz".into(),
            test_labels: "t10k-labels-idx1-ubyte.gz".into(),
            sha256_train_images: "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"
                .into(),
            sha256_train_labels: "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"
                .into(),
            sha256_test_images: "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"
                .into(),
            sha256_test_labels: "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"
                .into(),
        }
    }
}

impl DataConfig {
    pub fn file_specs(&self) -> [(PathBuf, &str, &str); 4] {
        [
            (
                self.dir.join(&self.train_images),
                self.sha256_train_images.as_str(),
                "train images",
            ),
            (
                self.dir.join(&self.train_labels),
                self.sha256_train_labels.as_str(),
                "train labels",
            ),
            (
                self.dir.join(&self.test_images),
                self.sha256_test_images.as_str(),
                "test images",
            ),
            (
                self.dir.join(&self.test_labels),
                self.sha256_test_labels.as_str(),
                "test labels",
            ),
        ]
    }
}

/// Case-dataset construction knobs (desk-scale subsampling included).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub rotation_degrees: f64,
    pub train_cap_per_group: usize,
    pub test_cap_per_group: usize,
    pub prepare_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            rotation_degrees: 45.0,
            train_cap_per_group: 1500,
            test_cap_per_group: 750,
            prepare_seed: 0,
        }
    }
}

/// Which (case, variant, seed) runs the grid executes and where results go.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub cases: Vec<u8>,
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    pub output_root: PathBuf,
    /// Worker pool size; 0 means one worker per CPU.
    pub workers: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cases: vec![1, 2, 3],
            variants: Variant::ALL.iter().map(|v| v.id().to_string()).collect(),
            seeds: vec![1, 2, 3],
            output_root: PathBuf::from("runs"),
            workers: 0,
        }
    }
}

/// Overrides applied on top of the per-variant training defaults. `epochs`
/// and `learning_rate` keep the variant defaults (200 at 0.01 for the
/// unsupervised baseline, 500 at 0.0001 otherwise) when absent.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda_dom: f64,
    pub batch_per_stratum: usize,
    pub latent_dim: usize,
    pub prior_kappa: f64,
    pub posterior_kappa_init: f64,
    pub hidden_units: usize,
    pub clamp_weights: bool,
    pub force_zero_weights: bool,
}

impl Default for TrainOverrides {
    fn default() -> Self {
        let d = TrainConfig::defaults_for(Variant::PropWithWeights, 0);
        Self {
            epochs: None,
            learning_rate: None,
            lambda_dom: d.lambda_dom,
            batch_per_stratum: d.batch_per_stratum,
            latent_dim: d.latent_dim,
            prior_kappa: d.prior_kappa,
            posterior_kappa_init: d.posterior_kappa_init,
            hidden_units: d.hidden_units,
            clamp_weights: d.clamp_weights,
            force_zero_weights: d.force_zero_weights,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.apply_env();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => {
                let mut cfg = Self::default();
                cfg.apply_env();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    fn apply_env(&mut self) {
        if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            if !root.is_empty() {
                self.experiment.output_root = PathBuf::from(root);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.cases.is_empty() {
            bail!("config lists no cases");
        }
        for c in &self.experiment.cases {
            if !(1..=3).contains(c) {
                bail!("unknown case id {c}");
            }
        }
        if self.experiment.variants.is_empty() {
            bail!("config lists no variants");
        }
        for v in &self.experiment.variants {
            Variant::from_id(v).map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        if self.experiment.seeds.is_empty() {
            bail!("config lists no seeds");
        }
        if self.train.batch_per_stratum == 0 {
            bail!("batch_per_stratum must be positive");
        }
        if self.train.latent_dim < 2 {
            bail!("latent_dim must be at least 2");
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<Variant> {
        self.experiment
            .variants
            .iter()
            .map(|v| Variant::from_id(v).expect("validated"))
            .collect()
    }

    /// Effective per-run training config.
    pub fn train_config(&self, variant: Variant, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::defaults_for(variant, seed);
        if let Some(e) = self.train.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.train.learning_rate {
            cfg.learning_rate = lr;
        }
        cfg.lambda_dom = self.train.lambda_dom;
        cfg.batch_per_stratum = self.train.batch_per_stratum;
        cfg.latent_dim = self.train.latent_dim;
        cfg.prior_kappa = self.train.prior_kappa;
        cfg.posterior_kappa_init = self.train.posterior_kappa_init;
        cfg.hidden_units = self.train.hidden_units;
        cfg.clamp_weights = self.train.clamp_weights;
        cfg.force_zero_weights = self.train.force_zero_weights;
        cfg
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn workers(&self) -> usize {
        if self.experiment.workers == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            self.experiment.workers
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.cases = vec![7];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.experiment.variants = vec!["bogus".into()];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.train.batch_per_stratum = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn per_variant_defaults_survive_unless_overridden() {
        let cfg = ExperimentConfig::default();
        let vae = cfg.train_config(Variant::Vae, 1);
        assert_eq!(vae.epochs, 200);
        assert_eq!(vae.learning_rate, 0.01);
        let prop = cfg.train_config(Variant::PropWithWeights, 1);
        assert_eq!(prop.epochs, 500);
        assert_eq!(prop.learning_rate, 1e-4);

        let mut over = ExperimentConfig::default();
        over.train.epochs = Some(150);
        assert_eq!(over.train_config(Variant::Vae, 1).epochs, 150);
        assert_eq!(over.train_config(Variant::Vae, 1).learning_rate, 0.01);
    }
}
