//! Dataset download with checksum verification. The repository ships the
//! gzipped IDX files, so this is only needed when starting from a bare
//! config pointing at an empty data directory.

use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::config::ExperimentConfig;
use crate::dataio::{read_maybe_gz, sha256_hex};

const MIRROR: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";

/// Downloads any missing source file and verifies all checksums. Existing
/// valid files are left untouched.
pub fn cmd_fetch(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.data.dir)
        .with_context(|| format!("creating {}", cfg.data.dir.display()))?;
    for (path, want_sha, label) in cfg.data.file_specs() {
        if path.exists() && verify(&path, want_sha).is_ok() {
            println!("{label}: already present and valid ({})", path.display());
            continue;
        }
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .context("data file name")?;
        let url = format!("{MIRROR}/{name}");
        println!("{label}: downloading {url}");
        let resp = reqwest::blocking::get(&url)
            .with_context(|| format!("downloading {url}"))?
            .error_for_status()
            .with_context(|| format!("downloading {url}"))?;
        let mut bytes = Vec::new();
        let mut reader = resp;
        reader.read_to_end(&mut bytes)?;
        std::fs::write(&path, &bytes)?;
        verify(&path, want_sha)?;
        println!("{label}: saved {} ({} bytes)", path.display(), bytes.len());
    }
    Ok(())
}

fn verify(path: &Path, want_sha: &str) -> Result<()> {
    let payload = read_maybe_gz(path)?;
    let got = sha256_hex(&payload);
    if got != want_sha {
        bail!(
            "checksum mismatch for {}: got {got}, expected {want_sha}",
            path.display()
        );
    }
    Ok(())
}
