//! Checkpoints: parameters and buffers in a safetensors container, plus a
//! JSON sidecar (`<file>.meta.json`) echoing the configuration, epoch,
//! seed, and tool version. Optimizer state rides along as extra tensors
//! under an `optim.` prefix.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::u2netp::{NetworkConfig, U2NetPlus};

/// Little-endian byte conversion for checkpointed scalar types.
pub trait TensorBytes: Scalar {
    const DTYPE: Dtype;
    fn write_le(values: &[Self], out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Vec<Self>;
}

impl TensorBytes for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn write_le(values: &[Self], out: &mut Vec<u8>) {
        out.reserve(values.len() * 4);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Vec<Self> {
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
    }
}

impl TensorBytes for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn write_le(values: &[Self], out: &mut Vec<u8>) {
        out.reserve(values.len() * 8);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect()
    }
}

/// Sidecar metadata; `extra` carries the caller's full run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub tool_version: String,
    pub network: NetworkConfig,
    pub epoch: usize,
    pub seed: u64,
    pub best_val_miou: Option<f64>,
    pub adam_step: Option<u64>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(network: NetworkConfig, epoch: usize, seed: u64) -> Self {
        Self {
            format_version: 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            network,
            epoch,
            seed,
            best_val_miou: None,
            adam_step: None,
            extra: serde_json::Value::Null,
        }
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes model parameters, buffers, and extra tensors to `path`, and the
/// metadata sidecar next to it.
pub fn save_checkpoint<T: TensorBytes>(
    path: &Path,
    model: &U2NetPlus<T>,
    extra_tensors: &[(String, Vec<usize>, Vec<T>)],
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for p in model.params().params() {
        let mut bytes = Vec::new();
        T::write_le(p.value.as_slice().expect("standard layout"), &mut bytes);
        buffers.push((p.name.clone(), p.value.shape().to_vec(), bytes));
    }
    for b in model.params().buffers() {
        let mut bytes = Vec::new();
        T::write_le(b.value.as_slice().expect("standard layout"), &mut bytes);
        buffers.push((b.name.clone(), b.value.shape().to_vec(), bytes));
    }
    for (name, shape, values) in extra_tensors {
        let mut bytes = Vec::new();
        T::write_le(values, &mut bytes);
        buffers.push((name.clone(), shape.clone(), bytes));
    }

    let views: Vec<(String, TensorView)> = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            let view = TensorView::new(T::DTYPE, shape.clone(), bytes)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e:?}")))?;
            Ok((name.clone(), view))
        })
        .collect::<Result<_>>()?;

    let meta_json =
        serde_json::to_string_pretty(meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let mut st_meta = HashMap::new();
    st_meta.insert("meta".to_string(), meta_json.clone());

    let data = safetensors::serialize(views, &Some(st_meta))
        .map_err(|e| Error::Checkpoint(format!("serialize: {e:?}")))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, data)?;
    std::fs::write(sidecar_path(path), meta_json)?;
    Ok(())
}

/// Reads back a checkpoint: the rebuilt model, any extra tensors (e.g.
/// optimizer state), and the metadata.
#[allow(clippy::type_complexity)]
pub fn load_checkpoint<T: TensorBytes>(
    path: &Path,
) -> Result<(U2NetPlus<T>, HashMap<String, (Vec<usize>, Vec<T>)>, CheckpointMeta)> {
    let data = std::fs::read(path)?;
    let st = SafeTensors::deserialize(&data).map_err(|e| Error::Checkpoint(format!("{e:?}")))?;

    let meta: CheckpointMeta = {
        let sidecar = sidecar_path(path);
        let json = if sidecar.is_file() {
            std::fs::read_to_string(&sidecar)?
        } else {
            let (_, st_meta) = SafeTensors::read_metadata(&data).map_err(|e| Error::Checkpoint(format!("{e:?}")))?;
            st_meta
                .metadata()
                .as_ref()
                .and_then(|m| m.get("meta").cloned())
                .ok_or_else(|| Error::Checkpoint("checkpoint carries no metadata".into()))?
        };
        serde_json::from_str(&json).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?
    };

    let mut model = U2NetPlus::<T>::new(meta.network, meta.seed)?;
    let mut consumed: std::collections::HashSet<String> = std::collections::HashSet::new();

    {
        let store = model.params_mut();
        for p in store.params_mut() {
            let view = st
                .tensor(&p.name)
                .map_err(|_| Error::Checkpoint(format!("missing parameter tensor {}", p.name)))?;
            if view.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} shape {:?} != stored {:?}",
                    p.name,
                    p.value.shape(),
                    view.shape()
                )));
            }
            let values = T::read_le(view.data());
            p.value.as_slice_mut().unwrap().copy_from_slice(&values);
            consumed.insert(p.name.clone());
        }
        for b in store.buffers_mut() {
            let view = st
                .tensor(&b.name)
                .map_err(|_| Error::Checkpoint(format!("missing buffer tensor {}", b.name)))?;
            let values = T::read_le(view.data());
            b.value.as_slice_mut().unwrap().copy_from_slice(&values);
            consumed.insert(b.name.clone());
        }
    }

    let mut extra = HashMap::new();
    for name in st.names() {
        if consumed.contains(name.as_str()) {
            continue;
        }
        let view = st.tensor(name).map_err(|e| Error::Checkpoint(format!("{e:?}")))?;
        extra.insert(name.to_string(), (view.shape().to_vec(), T::read_le(view.data())));
    }
    Ok((model, extra, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mode;
    use crate::tensor::Tensor4;
    use rand::Rng;

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.safetensors");
        let mut model = U2NetPlus::<f32>::new(NetworkConfig::toy(), 11).unwrap();

        let mut rng = crate::rng::stream(12, "ckpt-test", 0, 0);
        let x = Tensor4::from_shape_fn((1, 3, 64, 64), |_| rng.gen::<f32>());
        // Run one train-mode pass so running statistics are nontrivial.
        model.forward(&x, Mode::Train).unwrap();
        let before = model.forward(&x, Mode::Eval).unwrap().outputs();

        let mut meta = CheckpointMeta::new(model.config, 3, 11);
        meta.best_val_miou = Some(0.5);
        let extra = vec![("optim.step".to_string(), vec![1], vec![42.0f32])];
        save_checkpoint(&path, &model, &extra, &meta).unwrap();
        assert!(path.with_file_name("model.safetensors.meta.json").is_file());

        let (mut loaded, extra_out, meta_out) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(meta_out.epoch, 3);
        assert_eq!(meta_out.best_val_miou, Some(0.5));
        assert_eq!(extra_out["optim.step"].1, vec![42.0f32]);

        let after = loaded.forward(&x, Mode::Eval).unwrap().outputs();
        assert_eq!(before.fused_probs, after.fused_probs);
        for (a, b) in before.side_probs.iter().zip(&after.side_probs) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.safetensors");
        let model = U2NetPlus::<f32>::new(NetworkConfig::toy(), 1).unwrap();
        let meta = CheckpointMeta::new(model.config, 0, 1);
        save_checkpoint(&path, &model, &[], &meta).unwrap();

        // Corrupt: rewrite with an incompatible architecture in metadata.
        let mut bad_meta = meta.clone();
        bad_meta.network.base_channels = 16;
        let json = serde_json::to_string_pretty(&bad_meta).unwrap();
        std::fs::write(path.with_file_name("model.safetensors.meta.json"), json).unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());
    }
}
