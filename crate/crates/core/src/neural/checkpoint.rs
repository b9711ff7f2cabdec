use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Param;
use crate::error::{FwicError, Result};
use crate::io::{decode_f32, read_framed, write_framed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Header of a parameter checkpoint; the payload holds every listed
/// parameter in order as little-endian f32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    pub layers: Vec<ParamEntry>,
}

pub fn save_checkpoint(
    path: &Path,
    architecture: &str,
    config: serde_json::Value,
    seed: u64,
    step: u64,
    params: &[&Param],
) -> Result<()> {
    let manifest = CheckpointManifest {
        architecture: architecture.to_string(),
        config,
        seed,
        step,
        layers: params.iter().map(|p| ParamEntry { name: p.name.clone(), shape: p.shape.clone() }).collect(),
    };
    write_framed(path, &manifest, params.iter().flat_map(|p| p.value.iter().copied()))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointManifest, Vec<Vec<f32>>)> {
    let (manifest, payload): (CheckpointManifest, _) = read_framed("checkpoint", path)?;
    let total: usize = manifest.layers.iter().map(|l| l.shape.iter().product::<usize>()).sum();
    let flat = decode_f32("checkpoint", path, &payload, total)?;
    let mut out = Vec::with_capacity(manifest.layers.len());
    let mut at = 0;
    for l in &manifest.layers {
        let n: usize = l.shape.iter().product();
        out.push(flat[at..at + n].to_vec());
        at += n;
    }
    Ok((manifest, out))
}

/// Copy loaded values into `params`, checking names and shapes.
pub fn assign(params: Vec<&mut Param>, manifest: &CheckpointManifest, values: Vec<Vec<f32>>) -> Result<()> {
    if params.len() != manifest.layers.len() {
        return Err(FwicError::dims("checkpoint parameter count", &[params.len()], &[manifest.layers.len()]));
    }
    for ((p, entry), v) in params.into_iter().zip(&manifest.layers).zip(values) {
        if p.name != entry.name || p.shape != entry.shape {
            return Err(FwicError::param(format!(
                "checkpoint entry {} {:?} does not match parameter {} {:?}",
                entry.name, entry.shape, p.name, p.shape
            )));
        }
        p.value = v;
        p.zero_grad();
    }
    Ok(())
}
