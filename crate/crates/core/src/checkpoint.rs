//! Checkpoint container: magic, header length, TOML header, f32 payload.
//!
//! ```text
//! b"VMBCKPT\0" | u64 LE header_len | header (TOML, UTF-8) | payload (f32 LE)
//! ```
//!
//! The header carries the full run configuration, the seeds, training
//! progress and a `[[params]]` manifest of `name`, `shape` and element
//! `offset` into the payload. Extra tensors (optimiser moments) live in the
//! same manifest under the `optim.` prefix.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Variant, VmBeautyNet};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"VMBCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Tensors keyed by parameter name, in file order.
pub type NamedTensors<F> = Vec<(String, Tensor<F>)>;

/// Everything in a checkpoint except the tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub config: RunConfig,
    pub variant: Variant,
    pub test_fold: Option<usize>,
    pub epoch: usize,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct SeedRecord {
    root: String,
    data: String,
    init: String,
    augment: String,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    variant: String,
    test_fold: Option<usize>,
    epoch: usize,
    step: u64,
    seeds: SeedRecord,
    config: RunConfig,
    params: Vec<ParamRecord>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::CheckpointFormat(msg.into())
}

/// Writes named tensors with `meta` to `path`, converting values to f32.
pub fn write<F: Scalar>(path: &Path, meta: &CheckpointMeta, tensors: &[(String, Tensor<F>)]) -> Result<()> {
    let root = meta.config.train.seed;
    let mut offset = 0u64;
    let params = tensors
        .iter()
        .map(|(name, t)| {
            let rec = ParamRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.numel() as u64;
            rec
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        variant: meta.variant.name().to_string(),
        test_fold: meta.test_fold,
        epoch: meta.epoch,
        step: meta.step,
        seeds: SeedRecord {
            root: root.to_string(),
            data: seed::derive(root, "data").to_string(),
            init: seed::derive(root, "init").to_string(),
            augment: seed::derive(root, "augment").to_string(),
        },
        config: meta.config.clone(),
        params,
    };
    let text = toml::to_string(&header).map_err(|e| format_err(e.to_string()))?;

    let mut buf = Vec::with_capacity(16 + text.len() + 4 * offset as usize);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    for (_, t) in tensors {
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint, returning its metadata and tensors in file order.
pub fn read<F: Scalar>(path: &Path) -> Result<(CheckpointMeta, NamedTensors<F>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(format_err(format!("{} is not a checkpoint file", path.display())));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if header_len > body.len() {
        return Err(format_err("header length exceeds file size"));
    }
    let text = std::str::from_utf8(&body[..header_len]).map_err(|e| format_err(e.to_string()))?;

    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: u32,
    }
    let probe: VersionProbe = toml::from_str(text).map_err(|e| format_err(e.to_string()))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = toml::from_str(text).map_err(|e| format_err(e.to_string()))?;
    header.config.validate()?;

    let payload = &body[header_len..];
    if payload.len() % 4 != 0 {
        return Err(format_err("payload is not a whole number of f32 values"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut tensors = Vec::with_capacity(header.params.len());
    for rec in header.params {
        let n: usize = rec.shape.iter().product();
        let start = rec.offset as usize;
        let Some(slice) = values.get(start..start + n) else {
            return Err(format_err(format!("parameter {} extends past the payload", rec.name)));
        };
        let data = slice.iter().map(|v| F::of(*v as f64)).collect();
        tensors.push((rec.name, Tensor::new(rec.shape, data)?));
    }
    let meta = CheckpointMeta {
        config: header.config,
        variant: Variant::parse(&header.variant)
            .map_err(|_| format_err(format!("unknown variant {}", header.variant)))?,
        test_fold: header.test_fold,
        epoch: header.epoch,
        step: header.step,
    };
    Ok((meta, tensors))
}

/// Saves model parameters plus `extra` tensors.
pub fn save_model<F: Scalar>(
    path: &Path,
    model: &VmBeautyNet<F>,
    meta: &CheckpointMeta,
    extra: &[(String, Tensor<F>)],
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor<F>)> = model.store.iter().map(|e| (e.name.clone(), e.value.clone())).collect();
    tensors.extend(extra.iter().cloned());
    write(path, meta, &tensors)
}

/// Rebuilds the model described by a checkpoint. Tensors that are not model
/// parameters are returned separately.
pub fn load_model<F: Scalar>(path: &Path) -> Result<(VmBeautyNet<F>, CheckpointMeta, NamedTensors<F>)> {
    let (meta, tensors) = read::<F>(path)?;
    let mut rng = seed::rng(meta.config.train.seed, "init");
    let mut model = VmBeautyNet::<F>::new(&meta.config.model, &mut rng)?;
    let mut seen = vec![false; model.store.len()];
    let mut extra = Vec::new();
    for (name, t) in tensors {
        if name.starts_with("optim.") {
            extra.push((name, t));
            continue;
        }
        let id = model.store.id(&name).map_err(|_| Error::UnknownParam(name.clone()))?;
        let expected = model.store.value(id).shape().to_vec();
        if t.shape() != expected {
            return Err(Error::CheckpointShape {
                name,
                stored: t.shape().to_vec(),
                expected,
            });
        }
        model.store.set(id, t)?;
        seen[id.index()] = true;
    }
    if let Some(missing) = model.store.iter().zip(&seen).find(|(_, s)| !**s) {
        return Err(format_err(format!("parameter {} missing", missing.0.name)));
    }
    meta.variant.apply_trainable(&mut model);
    Ok((model, meta, extra))
}
