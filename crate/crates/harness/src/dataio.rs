//! Dataset file handling: reading (optionally gzipped) IDX files with
//! checksum verification, building per-case datasets, and caching them as a
//! binary archive with a JSON sidecar.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ssadapt_core::data::{
    build_case, parse_idx, CaseBuildOptions, CaseDataset, CaseSplit, ClassLabel, DomainLabel,
    ImageSet, LabeledSample, Role, TrainStrata,
};

use crate::config::ExperimentConfig;

/// Reads a file, transparently gunzipping when the name ends in `.gz`, and
/// returns the payload bytes.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .with_context(|| format!("decompressing {}", path.display()))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads and checksum-verifies the four IDX source files.
pub fn load_verified_sources(cfg: &ExperimentConfig) -> Result<(ImageSet, ImageSet)> {
    let mut payloads = Vec::new();
    for (path, want_sha, label) in cfg.data.file_specs() {
        if !path.exists() {
            bail!(
                "{label} file missing: {} (set [data] in the config or run `ssadapt fetch`)",
                path.display()
            );
        }
        let bytes = read_maybe_gz(&path)?;
        let got = sha256_hex(&bytes);
        if got != want_sha {
            bail!(
                "checksum mismatch for {label} ({}): got {got}, expected {want_sha}; \
                 re-download the file or update the checksum in the config",
                path.display()
            );
        }
        payloads.push(bytes);
    }
    let [ti, tl, vi, vl]: [Vec<u8>; 4] = payloads.try_into().expect("four files");
    let train = ImageSet::from_idx(
        parse_idx(&ti).map_err(|e| anyhow::anyhow!("train images: {e}"))?,
        parse_idx(&tl).map_err(|e| anyhow::anyhow!("train labels: {e}"))?,
    )
    .map_err(|e| anyhow::anyhow!("train split: {e}"))?;
    let test = ImageSet::from_idx(
        parse_idx(&vi).map_err(|e| anyhow::anyhow!("test images: {e}"))?,
        parse_idx(&vl).map_err(|e| anyhow::anyhow!("test labels: {e}"))?,
    )
    .map_err(|e| anyhow::anyhow!("test split: {e}"))?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Case-dataset cache (binary archive + JSON sidecar)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CacheSidecar {
    pub case_id: u8,
    pub normal_digits: [u8; 3],
    pub seen_digits: [u8; 3],
    pub unseen_digits: [u8; 3],
    pub seed: u64,
    pub rotation_degrees: f64,
    pub input_dim: usize,
    pub counts: CacheCounts,
    /// SHA-256 of the four source payloads, in config order.
    pub source_sha256: [String; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CacheCounts {
    pub normal_source: usize,
    pub anomaly_source: usize,
    pub normal_target: usize,
    pub test_normal: usize,
    pub test_seen: usize,
    pub test_unseen: usize,
}

pub fn cache_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.experiment.output_root.join("cache")
}

pub fn cache_paths(cfg: &ExperimentConfig, case_id: u8) -> (PathBuf, PathBuf) {
    let dir = cache_dir(cfg);
    (
        dir.join(format!("case{case_id}.bin")),
        dir.join(format!("case{case_id}.json")),
    )
}

fn expected_sidecar(cfg: &ExperimentConfig, case_id: u8, ds: Option<&CaseDataset>) -> CacheSidecar {
    let counts = match ds {
        Some(ds) => CacheCounts {
            normal_source: ds.train.normal_source.len(),
            anomaly_source: ds.train.anomaly_source.len(),
            normal_target: ds.train.normal_target.len(),
            test_normal: ds.test.iter().filter(|s| s.role == Role::Normal).count(),
            test_seen: ds
                .test
                .iter()
                .filter(|s| s.role == Role::SeenAnomaly)
                .count(),
            test_unseen: ds
                .test
                .iter()
                .filter(|s| s.role == Role::UnseenAnomaly)
                .count(),
        },
        None => CacheCounts {
            normal_source: 0,
            anomaly_source: 0,
            normal_target: 0,
            test_normal: 0,
            test_seen: 0,
            test_unseen: 0,
        },
    };
    let case = CaseSplit::from_id(case_id).expect("valid case id");
    CacheSidecar {
        case_id,
        normal_digits: case.normal_digits,
        seen_digits: case.seen_digits,
        unseen_digits: case.unseen_digits,
        seed: cfg.dataset.prepare_seed,
        rotation_degrees: cfg.dataset.rotation_degrees,
        input_dim: ds.map(|d| d.train.normal_source[0].x.len()).unwrap_or(0),
        counts,
        source_sha256: [
            cfg.data.sha256_train_images.clone(),
            cfg.data.sha256_train_labels.clone(),
            cfg.data.sha256_test_images.clone(),
            cfg.data.sha256_test_labels.clone(),
        ],
    }
}

/// True when a cache entry exists and matches the config (same sources,
/// seed, rotation, and caps are implied by counts).
pub fn cache_is_current(cfg: &ExperimentConfig, case_id: u8) -> bool {
    let (bin, json) = cache_paths(cfg, case_id);
    if !bin.exists() || !json.exists() {
        return false;
    }
    let Ok(text) = fs::read_to_string(&json) else {
        return false;
    };
    let Ok(side): std::result::Result<CacheSidecar, _> = serde_json::from_str(&text) else {
        return false;
    };
    let want = expected_sidecar(cfg, case_id, None);
    side.case_id == want.case_id
        && side.seed == want.seed
        && side.rotation_degrees == want.rotation_degrees
        && side.source_sha256 == want.source_sha256
        && side.counts.normal_source <= cfg.dataset.train_cap_per_group
        && side.counts.normal_source > 0
        && cache_caps_match(cfg, &side)
}

fn cache_caps_match(cfg: &ExperimentConfig, side: &CacheSidecar) -> bool {
    // Caps bind exactly when the source pool is bigger than the cap, so the
    // cached counts must equal min(cap, pool). The pool size is unknown here;
    // accept any count at or below the cap but refuse a cache built with a
    // different cap when both were capped.
    side.counts.normal_source <= cfg.dataset.train_cap_per_group
        && side.counts.test_normal <= cfg.dataset.test_cap_per_group
}

fn write_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn push_section(out: &mut Vec<u8>, digits: &mut Vec<u8>, samples: &[LabeledSample]) {
    for s in samples {
        write_f64s(out, &s.x);
        digits.push(s.digit);
    }
}

/// Serializes one case dataset: pixel blocks (f64 little-endian) in stratum
/// order (train NS, AS, NT; test normal, seen, unseen), then one digit byte
/// per sample in the same order.
pub fn write_cache(cfg: &ExperimentConfig, ds: &CaseDataset) -> Result<CacheSidecar> {
    let (bin_path, json_path) = cache_paths(cfg, ds.case.case_id);
    fs::create_dir_all(bin_path.parent().unwrap())?;

    let mut bin = Vec::new();
    let mut digits = Vec::new();
    push_section(&mut bin, &mut digits, &ds.train.normal_source);
    push_section(&mut bin, &mut digits, &ds.train.anomaly_source);
    push_section(&mut bin, &mut digits, &ds.train.normal_target);
    let by_role = |role: Role| ds.test.iter().filter(move |s| s.role == role);
    for role in [Role::Normal, Role::SeenAnomaly, Role::UnseenAnomaly] {
        for s in by_role(role) {
            write_f64s(&mut bin, &s.x);
            digits.push(s.digit);
        }
    }
    bin.extend_from_slice(&digits);

    let sidecar = expected_sidecar(cfg, ds.case.case_id, Some(ds));
    fs::write(&bin_path, &bin)?;
    fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(sidecar)
}

fn read_f64s(bytes: &[u8], offset: &mut usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[*offset..*offset + 8]);
        out.push(f64::from_le_bytes(buf));
        *offset += 8;
    }
    out
}

/// Loads a cached case dataset.
pub fn read_cache(cfg: &ExperimentConfig, case_id: u8) -> Result<CaseDataset> {
    let (bin_path, json_path) = cache_paths(cfg, case_id);
    let side: CacheSidecar = serde_json::from_str(
        &fs::read_to_string(&json_path)
            .with_context(|| format!("reading cache sidecar {}", json_path.display()))?,
    )?;
    let bytes = fs::read(&bin_path)
        .with_context(|| format!("reading cache archive {}", bin_path.display()))?;

    let dim = side.input_dim;
    let n_total = side.counts.normal_source
        + side.counts.anomaly_source
        + side.counts.normal_target
        + side.counts.test_normal
        + side.counts.test_seen
        + side.counts.test_unseen;
    let expected = n_total * dim * 8 + n_total;
    if bytes.len() != expected {
        bail!(
            "cache archive {} has {} bytes, expected {expected}",
            bin_path.display(),
            bytes.len()
        );
    }
    let digits = &bytes[n_total * dim * 8..];
    let mut offset = 0usize;
    let mut digit_idx = 0usize;
    let mut section = |n: usize, class: ClassLabel, domain: DomainLabel, role: Role| {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let x = read_f64s(&bytes, &mut offset, dim);
            v.push(LabeledSample {
                x,
                class,
                domain,
                digit: digits[digit_idx],
                role,
            });
            digit_idx += 1;
        }
        v
    };

    let train = TrainStrata {
        normal_source: section(
            side.counts.normal_source,
            ClassLabel::Normal,
            DomainLabel::Source,
            Role::Normal,
        ),
        anomaly_source: section(
            side.counts.anomaly_source,
            ClassLabel::Anomaly,
            DomainLabel::Source,
            Role::SeenAnomaly,
        ),
        normal_target: section(
            side.counts.normal_target,
            ClassLabel::Normal,
            DomainLabel::Target,
            Role::Normal,
        ),
    };
    let mut test = section(
        side.counts.test_normal,
        ClassLabel::Normal,
        DomainLabel::Target,
        Role::Normal,
    );
    test.extend(section(
        side.counts.test_seen,
        ClassLabel::Anomaly,
        DomainLabel::Target,
        Role::SeenAnomaly,
    ));
    test.extend(section(
        side.counts.test_unseen,
        ClassLabel::Anomaly,
        DomainLabel::Target,
        Role::UnseenAnomaly,
    ));

    Ok(CaseDataset {
        case: CaseSplit::from_id(case_id).map_err(|e| anyhow::anyhow!("{e}"))?,
        train,
        test,
    })
}

/// Builds (or reuses) the case caches; returns the sidecars in case order.
pub fn prepare(cfg: &ExperimentConfig, force: bool) -> Result<Vec<(u8, CacheSidecar, bool)>> {
    let mut sources: Option<(ImageSet, ImageSet)> = None;
    let mut out = Vec::new();
    for &case_id in &cfg.experiment.cases {
        if !force && cache_is_current(cfg, case_id) {
            let (_, json_path) = cache_paths(cfg, case_id);
            let side: CacheSidecar = serde_json::from_str(&fs::read_to_string(json_path)?)?;
            out.push((case_id, side, false));
            continue;
        }
        if sources.is_none() {
            sources = Some(load_verified_sources(cfg)?);
        }
        let (train, test) = sources.as_ref().unwrap();
        let case = CaseSplit::from_id(case_id).map_err(|e| anyhow::anyhow!("{e}"))?;
        let opts = CaseBuildOptions {
            rotation_degrees: cfg.dataset.rotation_degrees,
            train_cap_per_group: cfg.dataset.train_cap_per_group,
            test_cap_per_group: cfg.dataset.test_cap_per_group,
            seed: cfg.dataset.prepare_seed,
        };
        let ds = build_case(&case, train, test, &opts).map_err(|e| anyhow::anyhow!("{e}"))?;
        let side = write_cache(cfg, &ds)?;
        out.push((case_id, side, true));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(root: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.output_root = root.to_path_buf();
        cfg
    }

    fn tiny_dataset() -> CaseDataset {
        let mk = |n: usize, class, domain, role, digit: u8| -> Vec<LabeledSample> {
            (0..n)
                .map(|k| LabeledSample {
                    x: vec![k as f64 * 0.25, 0.5, 1.0 / (k + 1) as f64],
                    class,
                    domain,
                    digit,
                    role,
                })
                .collect()
        };
        CaseDataset {
            case: CaseSplit::from_id(1).unwrap(),
            train: TrainStrata {
                normal_source: mk(3, ClassLabel::Normal, DomainLabel::Source, Role::Normal, 1),
                anomaly_source: mk(2, ClassLabel::Anomaly, DomainLabel::Source, Role::SeenAnomaly, 4),
                normal_target: mk(4, ClassLabel::Normal, DomainLabel::Target, Role::Normal, 2),
            },
            test: [
                mk(2, ClassLabel::Normal, DomainLabel::Target, Role::Normal, 3),
                mk(2, ClassLabel::Anomaly, DomainLabel::Target, Role::SeenAnomaly, 5),
                mk(1, ClassLabel::Anomaly, DomainLabel::Target, Role::UnseenAnomaly, 8),
            ]
            .concat(),
        }
    }

    #[test]
    fn cache_roundtrip_is_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        let ds = tiny_dataset();
        write_cache(&cfg, &ds).unwrap();
        let back = read_cache(&cfg, 1).unwrap();
        assert_eq!(back.train.normal_source, ds.train.normal_source);
        assert_eq!(back.train.anomaly_source, ds.train.anomaly_source);
        assert_eq!(back.train.normal_target, ds.train.normal_target);
        assert_eq!(back.test, ds.test);
    }

    #[test]
    fn truncated_cache_is_rejected_with_lengths() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        write_cache(&cfg, &tiny_dataset()).unwrap();
        let (bin, _) = cache_paths(&cfg, 1);
        let mut bytes = fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&bin, bytes).unwrap();
        let err = read_cache(&cfg, 1).unwrap_err().to_string();
        assert!(err.contains("expected"), "{err}");
    }

    #[test]
    fn gz_and_raw_reads_agree() {
        let tmp = tempfile::tempdir().unwrap();
        let raw_path = tmp.path().join("blob.bin");
        let gz_path = tmp.path().join("blob.bin.gz");
        let payload: Vec<u8> = (0..=255).collect();
        fs::write(&raw_path, &payload).unwrap();
        let mut enc =
            flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        use std::io::Write;
        enc.write_all(&payload).unwrap();
        fs::write(&gz_path, enc.finish().unwrap()).unwrap();
        assert_eq!(read_maybe_gz(&raw_path).unwrap(), payload);
        assert_eq!(read_maybe_gz(&gz_path).unwrap(), payload);
    }
}
