//! Model checkpoints: a JSON manifest (dims plus named tensor table) next
//! to a binary blob of little-endian f64 tensor data.
//!
//! Loading rebuilds the expected parameter layout from the manifest dims and
//! requires the tensor table to match it exactly — name for name, shape for
//! shape — which is the parameter-count invariant.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{ModelDims, ScorerModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDims {
    walk_length: usize,
    d_pos: usize,
    d_edge: usize,
    d_time: usize,
    mixer_blocks: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the blob.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    dims: ManifestDims,
    tensors: Vec<TensorMeta>,
}

/// `prefix.json` and `prefix.bin`.
pub fn checkpoint_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let mut json = prefix.as_os_str().to_owned();
    json.push(".json");
    let mut bin = prefix.as_os_str().to_owned();
    bin.push(".bin");
    (PathBuf::from(json), PathBuf::from(bin))
}

pub fn write_checkpoint(model: &ScorerModel) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    model.for_each_param_named(|name, t| {
        tensors.push(TensorMeta {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    });
    let d = model.dims;
    let manifest = Manifest {
        dims: ManifestDims {
            walk_length: d.walk_length,
            d_pos: d.d_pos,
            d_edge: d.d_edge,
            d_time: d.d_time,
            mixer_blocks: d.mixer_blocks,
            seed: d.seed,
        },
        tensors,
    };
    Ok((serde_json::to_vec(&manifest)?, blob))
}

pub fn save_checkpoint(model: &ScorerModel, prefix: &Path) -> Result<()> {
    let (manifest, blob) = write_checkpoint(model)?;
    let (json_path, bin_path) = checkpoint_paths(prefix);
    let mut w = BufWriter::new(File::create(json_path)?);
    w.write_all(&manifest)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(bin_path)?);
    w.write_all(&blob)?;
    w.flush()?;
    Ok(())
}

/// Parses a checkpoint from raw manifest and blob bytes.
pub fn parse_checkpoint(manifest_bytes: &[u8], blob: &[u8]) -> Result<ScorerModel> {
    let manifest: Manifest = serde_json::from_slice(manifest_bytes)
        .map_err(|e| Error::parse(1, format!("bad manifest: {e}")))?;
    let d = manifest.dims;
    let dims = ModelDims {
        walk_length: d.walk_length,
        d_pos: d.d_pos,
        d_edge: d.d_edge,
        d_time: d.d_time,
        mixer_blocks: d.mixer_blocks,
        seed: d.seed,
    };
    dims.validate()?;
    if dims.d_pos > 4096 || dims.d_edge > 4096 || dims.d_time > 4096 || dims.mixer_blocks > 256 {
        return Err(Error::Data("checkpoint dims exceed supported limits".into()));
    }
    if dims.walk_length > 4096 {
        return Err(Error::Data("checkpoint dims exceed supported limits".into()));
    }

    let mut expected: Vec<(String, usize, usize)> = Vec::new();
    let mut model = ScorerModel::init(dims);
    model.for_each_param_named(|name, t| expected.push((name.to_string(), t.rows(), t.cols())));
    if manifest.tensors.len() != expected.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} tensors, dims imply {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut tensors: Vec<Tensor> = Vec::with_capacity(expected.len());
    for (meta, (name, rows, cols)) in manifest.tensors.iter().zip(&expected) {
        if &meta.name != name || meta.rows != *rows || meta.cols != *cols {
            return Err(Error::Data(format!(
                "tensor `{}` ({}x{}) does not match expected `{name}` ({rows}x{cols})",
                meta.name, meta.rows, meta.cols
            )));
        }
        let n_bytes = (rows * cols) as u64 * 8;
        let end = meta
            .offset
            .checked_add(n_bytes)
            .ok_or_else(|| Error::Data("tensor offset overflow".into()))?;
        if end > blob.len() as u64 {
            return Err(Error::Data(format!(
                "tensor `{}` extends to byte {end}, blob is {} bytes",
                meta.name,
                blob.len()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for chunk in blob[meta.offset as usize..end as usize].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("tensor `{}` contains non-finite values", meta.name)));
        }
        tensors.push(Tensor::from_vec(*rows, *cols, data));
    }
    let total: usize = expected.iter().map(|(_, r, c)| r * c * 8).sum();
    if blob.len() != total {
        return Err(Error::Data(format!(
            "blob is {} bytes, parameter count implies {total}",
            blob.len()
        )));
    }

    let mut it = tensors.into_iter();
    model.for_each_param_mut(|t| *t = it.next().expect("tensor count checked above"));
    Ok(model)
}

pub fn load_checkpoint(prefix: &Path) -> Result<ScorerModel> {
    let (json_path, bin_path) = checkpoint_paths(prefix);
    let mut manifest = Vec::new();
    BufReader::new(File::open(json_path)?).read_to_end(&mut manifest)?;
    let mut blob = Vec::new();
    BufReader::new(File::open(bin_path)?).read_to_end(&mut blob)?;
    parse_checkpoint(&manifest, &blob)
}
