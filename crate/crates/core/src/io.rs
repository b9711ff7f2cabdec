//! On-disk formats.
//!
//! Binary containers share one framing: a 4-byte little-endian header length,
//! a UTF-8 JSON header of that length, then a little-endian `f32` payload.
//!
//! * `.vmod` velocity grids: header `{nx, nz, dx_m, dtype, order}`, payload
//!   `nz * nx` values, depth-major (row = depth). A JSON header plus a raw
//!   `.bin` sidecar with the same payload is also supported.
//! * `.sgz` shot gathers: header `{shot_index, n_receivers, n_samples, dt_s,
//!   source_x_m}`, payload receiver-major `n_receivers * n_samples`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{FwicError, Result};
use crate::geomodel::{GridSpec, VelocityModel};
use crate::wavesim::ShotGather;

const DTYPE: &str = "f32le";
const GRID_ORDER: &str = "row-major, z-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub nx: usize,
    pub nz: usize,
    pub dx_m: f64,
    pub dtype: String,
    pub order: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatherHeader {
    pub shot_index: usize,
    pub n_receivers: usize,
    pub n_samples: usize,
    pub dt_s: f64,
    pub source_x_m: f64,
}

fn format_err(kind: &'static str, path: &Path, reason: impl Into<String>) -> FwicError {
    FwicError::Format { kind, path: path.to_path_buf(), reason: reason.into() }
}

fn encode_f32(values: impl Iterator<Item = f32>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn decode_f32(kind: &'static str, path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() != expected * 4 {
        return Err(format_err(
            kind,
            path,
            format!("payload has {} bytes, expected {}", bytes.len(), expected * 4),
        ));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_framed<H: Serialize>(path: &Path, header: &H, payload: impl Iterator<Item = f32>) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(4 + header.len());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    encode_f32(payload, &mut buf);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Returns the parsed header and the raw payload bytes.
pub fn read_framed<H: DeserializeOwned>(kind: &'static str, path: &Path) -> Result<(H, Vec<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 4 {
        return Err(format_err(kind, path, "file shorter than its length prefix"));
    }
    let hlen = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if bytes.len() < 4 + hlen {
        return Err(format_err(kind, path, format!("header length {hlen} exceeds file size")));
    }
    let header: H = serde_json::from_slice(&bytes[4..4 + hlen])
        .map_err(|e| format_err(kind, path, format!("bad header: {e}")))?;
    Ok((header, bytes[4 + hlen..].to_vec()))
}

fn grid_header(spec: &GridSpec) -> GridHeader {
    GridHeader { nx: spec.nx, nz: spec.nz, dx_m: spec.dx, dtype: DTYPE.into(), order: GRID_ORDER.into() }
}

fn model_from_parts(path: &Path, header: &GridHeader, payload: &[u8]) -> Result<VelocityModel> {
    if header.dtype != DTYPE {
        return Err(format_err("velocity model", path, format!("unsupported dtype {:?}", header.dtype)));
    }
    let spec = GridSpec::new(header.nx, header.nz, header.dx_m)?;
    let values = decode_f32("velocity model", path, payload, spec.nx * spec.nz)?;
    let values = Array2::from_shape_vec(spec.shape(), values.into_iter().map(f64::from).collect())
        .expect("payload length checked");
    VelocityModel::new(spec, values)
}

pub fn write_vmod(path: &Path, model: &VelocityModel) -> Result<()> {
    write_framed(path, &grid_header(&model.spec), model.values.iter().map(|&v| v as f32))
}

pub fn read_vmod(path: &Path) -> Result<VelocityModel> {
    let (header, payload): (GridHeader, _) = read_framed("velocity model", path)?;
    model_from_parts(path, &header, &payload)
}

/// JSON header at `json_path`, raw payload at `json_path` with a `.bin` extension.
pub fn write_grid_pair(json_path: &Path, model: &VelocityModel) -> Result<PathBuf> {
    let bin = json_path.with_extension("bin");
    fs::write(json_path, serde_json::to_vec_pretty(&grid_header(&model.spec))?)?;
    let mut buf = Vec::new();
    encode_f32(model.values.iter().map(|&v| v as f32), &mut buf);
    fs::write(&bin, buf)?;
    Ok(bin)
}

pub fn read_grid_pair(json_path: &Path) -> Result<VelocityModel> {
    let header: GridHeader = serde_json::from_slice(&fs::read(json_path)?)
        .map_err(|e| format_err("velocity model", json_path, format!("bad header: {e}")))?;
    let bin = json_path.with_extension("bin");
    let payload = fs::read(&bin)?;
    model_from_parts(&bin, &header, &payload)
}

/// Read a model from either a `.vmod` container or a JSON header with `.bin` sidecar.
pub fn read_model(path: &Path) -> Result<VelocityModel> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_grid_pair(path),
        _ => read_vmod(path),
    }
}

pub fn write_gather(path: &Path, gather: &ShotGather) -> Result<()> {
    let header = GatherHeader {
        shot_index: gather.shot_index,
        n_receivers: gather.n_receivers(),
        n_samples: gather.n_samples(),
        dt_s: gather.dt_s,
        source_x_m: gather.source_x_m,
    };
    write_framed(path, &header, gather.data.iter().copied())
}

pub fn read_gather(path: &Path) -> Result<ShotGather> {
    let (h, payload): (GatherHeader, _) = read_framed("shot gather", path)?;
    let values = decode_f32("shot gather", path, &payload, h.n_receivers * h.n_samples)?;
    Ok(ShotGather {
        shot_index: h.shot_index,
        source_x_m: h.source_x_m,
        dt_s: h.dt_s,
        data: Array2::from_shape_vec((h.n_receivers, h.n_samples), values).expect("payload length checked"),
    })
}

pub fn gather_file_name(shot: usize) -> String {
    format!("shot_{shot:03}.sgz")
}

/// Write one `.sgz` per shot into `dir`.
pub fn write_survey(dir: &Path, gathers: &[ShotGather]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for g in gathers {
        write_gather(&dir.join(gather_file_name(g.shot_index)), g)?;
    }
    Ok(())
}

/// Read every `.sgz` in `dir`, ordered by shot index.
pub fn read_survey(dir: &Path) -> Result<Vec<ShotGather>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("sgz"))
        .collect();
    paths.sort();
    let mut gathers = paths.iter().map(|p| read_gather(p)).collect::<Result<Vec<_>>>()?;
    gathers.sort_by_key(|g| g.shot_index);
    for (i, g) in gathers.iter().enumerate() {
        if g.shot_index != i {
            return Err(format_err("survey", dir, format!("shot indices not contiguous at {i}")));
        }
    }
    if gathers.is_empty() {
        return Err(format_err("survey", dir, "no .sgz files"));
    }
    Ok(gathers)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> VelocityModel {
        let spec = GridSpec::new(10, 8, 6.99).unwrap();
        VelocityModel::new(spec, Array2::from_shape_fn((8, 10), |(z, x)| 2.0 + 0.01 * (z * 10 + x) as f64)).unwrap()
    }

    #[test]
    fn vmod_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vmod");
        let m = model();
        write_vmod(&path, &m).unwrap();
        let bytes = fs::read(&path).unwrap();
        let hlen = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[4..4 + hlen]).unwrap();
        assert_eq!(header["nx"], 10);
        assert_eq!(header["nz"], 8);
        assert_eq!(header["dtype"], "f32le");
        assert_eq!(bytes.len(), 4 + hlen + 80 * 4);
        // second value on the first (shallowest) row
        let off = 4 + hlen + 4;
        assert_eq!(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()), 2.01f32);
        let back = read_vmod(&path).unwrap();
        assert!((&back.values - &m.values).iter().all(|e| e.abs() < 1e-6));
    }

    #[test]
    fn sidecar_pair_matches_container() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        let json = dir.path().join("m.json");
        let bin = write_grid_pair(&json, &m).unwrap();
        assert_eq!(fs::read(&bin).unwrap().len(), 80 * 4);
        let back = read_model(&json).unwrap();
        assert!((&back.values - &m.values).iter().all(|e| e.abs() < 1e-6));
    }

    #[test]
    fn truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vmod");
        write_vmod(&path, &model()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_vmod(&path), Err(FwicError::Format { .. })));
        fs::write(&path, [1u8, 0]).unwrap();
        assert!(read_vmod(&path).is_err());
    }

    #[test]
    fn gather_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = ShotGather {
            shot_index: 2,
            source_x_m: 100.5,
            dt_s: 0.002,
            data: Array2::from_shape_fn((3, 5), |(r, t)| (r as f32) - 0.25 * t as f32),
        };
        write_survey(dir.path(), std::slice::from_ref(&g)).unwrap();
        let back = read_gather(&dir.path().join("shot_002.sgz")).unwrap();
        assert_eq!(back, g);
        // non-contiguous indices are a format error
        assert!(read_survey(dir.path()).is_err());
    }
}
