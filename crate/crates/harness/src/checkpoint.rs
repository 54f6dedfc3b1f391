//! Model checkpoints: a flat key-to-array archive (raw little-endian f64)
//! described by a JSON manifest carrying names, shapes, dtype, and the run
//! seed.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ssadapt_core::networks::{
    DecoderParams, DomainClfParams, EncoderParams, LayerParams, ModelParams,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub seed: u64,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the archive, in elements (not bytes).
    pub offset: usize,
    pub len: usize,
}

fn shape_of(model: &ModelParams, name: &str, len: usize) -> Vec<usize> {
    let layer_shape = |l: &LayerParams, kind: &str| -> Vec<usize> {
        if kind == "weight" {
            vec![l.out_dim, l.in_dim]
        } else {
            vec![l.out_dim]
        }
    };
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["encoder", "hidden", k] => layer_shape(&model.encoder.hidden, k),
        ["encoder", "head_dir", k] => layer_shape(&model.encoder.head_dir, k),
        ["encoder", "log_kappa"] => vec![1],
        ["decoder", "hidden", k] => layer_shape(&model.decoder.hidden, k),
        ["decoder", "head", k] => layer_shape(&model.decoder.head, k),
        ["domain_clf", "hidden", k] => {
            layer_shape(&model.domain_clf.as_ref().unwrap().hidden, k)
        }
        ["domain_clf", "head", k] => layer_shape(&model.domain_clf.as_ref().unwrap().head, k),
        _ => vec![len],
    }
}

/// Writes `checkpoint.bin` and `checkpoint.json` into `dir`.
pub fn save(dir: &Path, model: &ModelParams, seed: u64) -> Result<()> {
    let mut blob = Vec::new();
    let mut arrays = Vec::new();
    let mut offset = 0usize;
    for (name, arr) in model.param_arrays() {
        arrays.push(ArrayEntry {
            name: name.to_string(),
            shape: shape_of(model, name, arr.len()),
            offset,
            len: arr.len(),
        });
        for v in arr {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += arr.len();
    }
    let manifest = CheckpointManifest {
        dtype: "f64".into(),
        seed,
        arrays,
    };
    std::fs::write(dir.join("checkpoint.bin"), &blob)?;
    std::fs::write(
        dir.join("checkpoint.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn entry<'a>(manifest: &'a CheckpointManifest, name: &str) -> Result<&'a ArrayEntry> {
    manifest
        .arrays
        .iter()
        .find(|a| a.name == name)
        .with_context(|| format!("checkpoint manifest missing array {name}"))
}

fn read_array(blob: &[f64], e: &ArrayEntry) -> Vec<f64> {
    blob[e.offset..e.offset + e.len].to_vec()
}

fn load_layer(manifest: &CheckpointManifest, blob: &[f64], prefix: &str) -> Result<LayerParams> {
    let w = entry(manifest, &format!("{prefix}.weight"))?;
    let b = entry(manifest, &format!("{prefix}.bias"))?;
    if w.shape.len() != 2 || w.shape[0] * w.shape[1] != w.len {
        bail!("bad weight shape for {prefix}");
    }
    Ok(LayerParams {
        weight: read_array(blob, w),
        bias: read_array(blob, b),
        out_dim: w.shape[0],
        in_dim: w.shape[1],
    })
}

/// Reads a checkpoint back into model parameters.
pub fn load(dir: &Path) -> Result<(ModelParams, u64)> {
    let manifest: CheckpointManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.join("checkpoint.json"))
            .with_context(|| format!("reading checkpoint manifest in {}", dir.display()))?,
    )?;
    if manifest.dtype != "f64" {
        bail!("unsupported checkpoint dtype {}", manifest.dtype);
    }
    let bytes = std::fs::read(dir.join("checkpoint.bin"))?;
    if bytes.len() % 8 != 0 {
        bail!("checkpoint archive length not a multiple of 8");
    }
    let total: usize = manifest.arrays.iter().map(|a| a.len).sum();
    if bytes.len() / 8 != total {
        bail!(
            "checkpoint archive holds {} values, manifest expects {total}",
            bytes.len() / 8
        );
    }
    let blob: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let encoder = EncoderParams {
        hidden: load_layer(&manifest, &blob, "encoder.hidden")?,
        head_dir: load_layer(&manifest, &blob, "encoder.head_dir")?,
        log_kappa: read_array(&blob, entry(&manifest, "encoder.log_kappa")?)[0],
    };
    let dec_hidden = load_layer(&manifest, &blob, "decoder.hidden")?;
    let latent_dim = encoder.head_dir.out_dim;
    let decoder = DecoderParams {
        domain_conditioned: dec_hidden.in_dim == latent_dim + 2,
        hidden: dec_hidden,
        head: load_layer(&manifest, &blob, "decoder.head")?,
    };
    let domain_clf = if manifest.arrays.iter().any(|a| a.name.starts_with("domain_clf")) {
        Some(DomainClfParams {
            hidden: load_layer(&manifest, &blob, "domain_clf.hidden")?,
            head: load_layer(&manifest, &blob, "domain_clf.head")?,
        })
    } else {
        None
    };
    Ok((
        ModelParams {
            encoder,
            decoder,
            domain_clf,
        },
        manifest.seed,
    ))
}
