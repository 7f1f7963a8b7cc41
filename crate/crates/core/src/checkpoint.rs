//! Model checkpoints: a magic-tagged container holding the experiment
//! config and every parameter tensor as little-endian f32.
//!
//! Layout: 8-byte magic `SAECKPT1`, 4-byte little-endian header
//! length, UTF-8 TOML header (config plus tensor directory with name,
//! shape, dtype, and byte offset), then the contiguous payload.
//!
//! Container damage (magic, truncation, unparseable header) is a
//! format error; a header that parses but disagrees with the model it
//! claims to describe (wrong tensor set, shapes, or sizes) is a
//! consistency error.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{io_context, Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SAECKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ExperimentConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save(path: &Path, model: &Model<f32>, cfg: &ExperimentConfig) -> Result<()> {
    let names = model.param_names();
    let values = model.param_values();
    let mut tensors = Vec::with_capacity(names.len());
    let mut offset = 0u64;
    for (name, value) in names.iter().zip(&values) {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            dtype: "f32".into(),
            offset,
        });
        offset += (value.data().len() * 4) as u64;
    }
    let header = Header {
        config: cfg.clone(),
        tensors,
    };
    let header_text = toml::to_string(&header)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut bytes = Vec::with_capacity(12 + header_text.len() + offset as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_text.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header_text.as_bytes());
    for value in &values {
        for &v in value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)
        .map_err(|e| io_context(&path, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model<f32>, ExperimentConfig)> {
    let bytes = std::fs::read(path)
        .map_err(|e| io_context(&path, e))?;
    let name = path.display();
    if bytes.len() < 12 {
        return Err(Error::Format(format!(
            "{name}: {} bytes is too short for a checkpoint",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format(format!(
            "{name}: bad magic {:?} at byte 0",
            &bytes[..8]
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::Format(format!(
            "{name}: header claims {header_len} bytes but only {} remain",
            bytes.len() - 12
        )));
    }
    let header_text = std::str::from_utf8(&bytes[12..12 + header_len])
        .map_err(|e| Error::Format(format!("{name}: header is not UTF-8: {e}")))?;
    let header: Header = toml::from_str(header_text)
        .map_err(|e| Error::Format(format!("{name}: header: {e}")))?;
    let cfg = header.config;
    cfg.validate()?;

    // the header config must describe exactly the tensors on disk
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model: Model<f32> = cfg.build_model(&mut rng)?;
    let expected_names = model.param_names();
    let expected_shapes: Vec<Vec<usize>> =
        model.param_shapes().iter().map(|s| s.to_vec()).collect();
    if header.tensors.len() != expected_names.len() {
        return Err(Error::Data(format!(
            "{name}: checkpoint lists {} tensors but a {} model with n_z={} has {}",
            header.tensors.len(),
            cfg.family,
            cfg.n_z,
            expected_names.len()
        )));
    }
    let payload = &bytes[12 + header_len..];
    let mut offset = 0u64;
    for (entry, (expected_name, expected_shape)) in header
        .tensors
        .iter()
        .zip(expected_names.iter().zip(&expected_shapes))
    {
        if entry.name != *expected_name {
            return Err(Error::Data(format!(
                "{name}: tensor {:?} where the model expects {expected_name:?}",
                entry.name
            )));
        }
        if &entry.shape != expected_shape {
            return Err(Error::Data(format!(
                "{name}: {} has shape {:?} but the header config implies {expected_shape:?}",
                entry.name, entry.shape
            )));
        }
        if entry.dtype != "f32" {
            return Err(Error::Format(format!(
                "{name}: unsupported dtype {:?} for {}",
                entry.dtype, entry.name
            )));
        }
        if entry.offset != offset {
            return Err(Error::Format(format!(
                "{name}: {} at offset {} but tensors are contiguous from {offset}",
                entry.name, entry.offset
            )));
        }
        offset += (entry.shape.iter().product::<usize>() * 4) as u64;
    }
    if payload.len() as u64 != offset {
        return Err(Error::Format(format!(
            "{name}: payload is {} bytes, directory implies {offset}",
            payload.len()
        )));
    }

    for (entry, expected_shape) in header.tensors.iter().zip(&expected_shapes) {
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let data: Vec<f32> = payload[start..start + count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.load_param(&entry.name, Tensor::from_vec(expected_shape, data)?)?;
    }
    Ok((model, cfg))
}
