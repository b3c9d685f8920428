//! Single-file checkpoint format.
//!
//! Layout (documented in `docs/formats.md` and stable across versions):
//!
//! ```text
//! bytes 0..8    magic "SLIMCKPT"
//! bytes 8..12   u32 LE manifest length M
//! bytes 12..12+M  JSON manifest
//! trailing      blob data: for every manifest blob in order, the tensor in
//!               row-major little-endian float32
//! ```
//!
//! The manifest records depth, init seed, epoch counter, active filter
//! masks, the compact plan (when the file holds a compact model), the named
//! blob list, and the number of trailing optimizer-velocity blobs.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{extract_compact, CompactPlan, ModelSpec, ResNet};
use crate::prune::FilterMask;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SLIMCKPT";

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct MaskEntry {
    path: String,
    keep: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    depth: usize,
    init_seed: u64,
    epoch: usize,
    masks: Option<Vec<MaskEntry>>,
    compact: Option<CompactPlan>,
    blobs: Vec<BlobEntry>,
    velocity_count: usize,
}

/// A fully resolved checkpoint.
pub struct Checkpoint {
    pub model: ResNet<f32>,
    pub epoch: usize,
    pub masks: Option<Vec<FilterMask>>,
    pub velocity: Option<Vec<Tensor<f32>>>,
    /// Present when the file holds a compact model.
    pub compact: Option<CompactPlan>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &ResNet<f32>,
    epoch: usize,
    masks: Option<&[FilterMask]>,
    velocity: Option<&[Tensor<f32>]>,
    compact: Option<&CompactPlan>,
) -> Result<()> {
    let state = model.named_state();
    let mut blobs: Vec<BlobEntry> =
        state.iter().map(|(name, t)| BlobEntry { name: name.clone(), shape: t.shape().to_vec() }).collect();
    if let Some(vel) = velocity {
        for (i, v) in vel.iter().enumerate() {
            blobs.push(BlobEntry { name: format!("velocity.{i}"), shape: v.shape().to_vec() });
        }
    }
    let manifest = Manifest {
        format: "slimnet-checkpoint".to_string(),
        version: 1,
        depth: model.spec.depth,
        init_seed: model.init_seed,
        epoch,
        masks: masks.map(|ms| {
            ms.iter().map(|m| MaskEntry { path: m.path.clone(), keep: m.keep.clone() }).collect()
        }),
        compact: compact.cloned(),
        blobs,
        velocity_count: velocity.map_or(0, |v| v.len()),
    };
    let manifest_json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Ingestion(format!("manifest serialization failed: {e}")))?;

    let io_err = |e| Error::io(path.display().to_string(), e);
    let mut file = File::create(path).map_err(io_err)?;
    file.write_all(MAGIC).map_err(io_err)?;
    file.write_all(&(manifest_json.len() as u32).to_le_bytes()).map_err(io_err)?;
    file.write_all(&manifest_json).map_err(io_err)?;
    let mut write_tensor = |t: &Tensor<f32>| -> Result<()> {
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes).map_err(|e| Error::io(path.display().to_string(), e))
    };
    for (_, t) in &state {
        write_tensor(t)?;
    }
    if let Some(vel) = velocity {
        for v in vel {
            write_tensor(v)?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let io_err = |e| Error::io(path.display().to_string(), e);
    let mut file = File::open(path).map_err(io_err)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Ingestion(format!("{} is not a slimnet checkpoint", path.display())));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes).map_err(io_err)?;
    let manifest_len = u32::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    file.read_exact(&mut manifest_bytes).map_err(io_err)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Ingestion(format!("corrupt checkpoint manifest: {e}")))?;
    if manifest.format != "slimnet-checkpoint" || manifest.version != 1 {
        return Err(Error::Ingestion(format!(
            "unsupported checkpoint format {}/{}",
            manifest.format, manifest.version
        )));
    }

    let spec = ModelSpec::new(manifest.depth)?;
    let mut model: ResNet<f32> = ResNet::build(spec, manifest.init_seed);
    if let Some(plan) = &manifest.compact {
        // Rebuild the compact topology by replaying the plan as masks, then
        // overwrite all state from the blobs below.
        let masks = plan_to_masks(&model, plan);
        model = extract_compact(&model, &masks)?.model;
    }

    let mut read_tensor = |shape: &[usize]| -> Result<Tensor<f32>> {
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        file.read_exact(&mut bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::from_vec(shape, data)
    };

    let param_blob_count = manifest.blobs.len() - manifest.velocity_count;
    {
        let mut state = model.named_state_mut();
        if param_blob_count != state.len() {
            return Err(Error::Ingestion(format!(
                "checkpoint has {param_blob_count} state blobs, model expects {}",
                state.len()
            )));
        }
        for (entry, (name, tensor)) in manifest.blobs.iter().zip(state.iter_mut()) {
            if &entry.name != name || entry.shape != tensor.shape() {
                return Err(Error::Ingestion(format!(
                    "checkpoint blob {} {:?} does not match model state {} {:?}",
                    entry.name,
                    entry.shape,
                    name,
                    tensor.shape()
                )));
            }
        }
        for (entry, (_, tensor)) in manifest.blobs.iter().zip(state.iter_mut()) {
            **tensor = read_tensor(&entry.shape)?;
        }
    }

    let velocity = if manifest.velocity_count > 0 {
        let mut vel = Vec::with_capacity(manifest.velocity_count);
        for entry in &manifest.blobs[param_blob_count..] {
            vel.push(read_tensor(&entry.shape)?);
        }
        Some(vel)
    } else {
        None
    };

    let masks = manifest
        .masks
        .map(|ms| ms.into_iter().map(|m| FilterMask { path: m.path, keep: m.keep }).collect());

    Ok(Checkpoint { model, epoch: manifest.epoch, masks, velocity, compact: manifest.compact })
}

fn plan_to_masks(model: &ResNet<f32>, plan: &CompactPlan) -> Vec<FilterMask> {
    let mut masks = Vec::new();
    let mut mask_for = |path: &str, total: usize, kept: &[usize]| {
        if kept.len() != total {
            let mut keep = vec![false; total];
            for &i in kept {
                keep[i] = true;
            }
            masks.push(FilterMask { path: path.to_string(), keep });
        }
    };
    mask_for(&model.stem_conv.path, model.stem_conv.out_channels(), &plan.stem_kept);
    for (block, kept) in model.blocks.iter().zip(&plan.conv1_kept) {
        mask_for(&block.conv1.path, block.conv1.out_channels(), kept);
    }
    masks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    #[test]
    fn round_trip_preserves_all_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 9);
        // Perturb some running stats so they differ from init.
        model.stem_bn.running_mean.data_mut()[0] = 0.25;
        save_checkpoint(&path, &model, 17, None, None, None).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epoch, 17);
        assert!(loaded.masks.is_none());
        let a = model.named_state();
        let b = loaded.model.named_state();
        for ((n1, t1), (n2, t2)) in a.iter().zip(b.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data(), "blob {n1} differs");
        }
    }

    #[test]
    fn rejects_non_checkpoint_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
