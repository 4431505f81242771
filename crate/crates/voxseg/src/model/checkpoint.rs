//! Checkpoint container: magic + version + JSON tensor directory + f32
//! little-endian payload. Carries model parameters, optimizer moments, and
//! enough bookkeeping to resume training.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::net::{Model, ModelConfig};
use super::params::{AdamState, ParamStore};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MSEGCKPT";
const VERSION: u32 = 1;
/// Fixed prefix: magic, version (u32 LE), header length (u64 LE).
const PREFIX_LEN: usize = 8 + 4 + 8;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the payload, in f32 units.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    best_dsc: f64,
    lr: f64,
    adam_step: u64,
    tensors: Vec<TensorMeta>,
}

/// A saved training state. `best_dsc` must be finite (JSON cannot carry NaN).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub best_dsc: f64,
    /// Learning rate in effect when saved, so resumed runs continue the
    /// schedule.
    pub lr: f64,
    pub params: ParamStore,
    /// Optimizer moments; a never-stepped state serializes the same as none.
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn into_model(self) -> (Model, Option<AdamState>) {
        (Model { config: self.config, params: self.params }, self.adam)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: BTreeMap<String, &Array2<f64>> = BTreeMap::new();
        for (name, value) in self.params.iter() {
            tensors.insert(name.to_string(), value);
        }
        if let Some(adam) = &self.adam {
            for (name, value) in &adam.m {
                tensors.insert(format!("{ADAM_M}{name}"), value);
            }
            for (name, value) in &adam.v {
                tensors.insert(format!("{ADAM_V}{name}"), value);
            }
        }
        let mut metas = Vec::with_capacity(tensors.len());
        let mut offset = 0u64;
        for (name, value) in &tensors {
            let (rows, cols) = value.dim();
            metas.push(TensorMeta { name: name.clone(), rows, cols, offset });
            offset += (rows * cols) as u64;
        }
        let header = Header {
            config: self.config,
            epoch: self.epoch,
            best_dsc: self.best_dsc,
            lr: self.lr,
            adam_step: self.adam.as_ref().map(|a| a.step).unwrap_or(0),
            tensors: metas,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + offset as usize * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for value in tensors.values() {
            for &x in value.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < PREFIX_LEN {
            return Err(Error::CorruptData("checkpoint shorter than its fixed prefix".into()));
        }
        if &bytes[0..8] != MAGIC {
            return Err(Error::CorruptData("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedFormat(format!("checkpoint version {version}")));
        }
        let json_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let json_end = (json_len as usize)
            .checked_add(PREFIX_LEN)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::CorruptData("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..json_end])?;
        header.config.validate()?;
        let payload = &bytes[json_end..];
        if payload.len() % 4 != 0 {
            return Err(Error::CorruptData("payload is not a whole number of f32s".into()));
        }
        let float_count = payload.len() / 4;
        let declared: usize = header
            .tensors
            .iter()
            .map(|t| t.rows.checked_mul(t.cols))
            .try_fold(0usize, |acc, n| n.and_then(|n| acc.checked_add(n)))
            .ok_or_else(|| Error::CorruptData("tensor sizes overflow".into()))?;
        if declared != float_count {
            return Err(Error::CorruptData(format!(
                "payload holds {float_count} floats, directory declares {declared}"
            )));
        }
        let mut tensors: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        for meta in &header.tensors {
            let count = meta.rows * meta.cols;
            let start = usize::try_from(meta.offset)
                .ok()
                .and_then(|o| o.checked_mul(4))
                .filter(|&s| s + count * 4 <= payload.len())
                .ok_or_else(|| {
                    Error::CorruptData(format!("tensor {} outside payload", meta.name))
                })?;
            let floats: Vec<f64> = payload[start..start + count * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            let array = Array2::from_shape_vec((meta.rows, meta.cols), floats)
                .map_err(|e| Error::CorruptData(e.to_string()))?;
            if tensors.insert(meta.name.clone(), array).is_some() {
                return Err(Error::CorruptData(format!("duplicate tensor {}", meta.name)));
            }
        }
        let mut params = ParamStore::new();
        let mut adam_m = BTreeMap::new();
        let mut adam_v = BTreeMap::new();
        for (name, value) in tensors {
            if let Some(base) = name.strip_prefix(ADAM_M) {
                adam_m.insert(base.to_string(), value);
            } else if let Some(base) = name.strip_prefix(ADAM_V) {
                adam_v.insert(base.to_string(), value);
            } else {
                params.insert(&name, value);
            }
        }
        // The parameter inventory must match the architecture the config
        // describes, and any optimizer moments must mirror it.
        let reference = Model::init(header.config, 0)?.params;
        for (name, value) in reference.iter() {
            let got = params.try_get(name).ok_or_else(|| {
                Error::ConfigMismatch(format!("checkpoint is missing tensor {name}"))
            })?;
            if got.dim() != value.dim() {
                return Err(Error::ConfigMismatch(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    got.dim(),
                    value.dim()
                )));
            }
        }
        if params.len() != reference.len() {
            let extra: Vec<&str> =
                params.names().into_iter().filter(|n| reference.try_get(n).is_none()).collect();
            return Err(Error::ConfigMismatch(format!("unexpected tensors: {extra:?}")));
        }
        let adam = if adam_m.is_empty() && adam_v.is_empty() {
            None
        } else {
            for (map, kind) in [(&adam_m, "adam.m"), (&adam_v, "adam.v")] {
                for (name, value) in map {
                    let base = params.try_get(name).ok_or_else(|| {
                        Error::ConfigMismatch(format!("{kind}.{name} has no matching parameter"))
                    })?;
                    if base.dim() != value.dim() {
                        return Err(Error::ConfigMismatch(format!(
                            "{kind}.{name} shape {:?} differs from parameter {:?}",
                            value.dim(),
                            base.dim()
                        )));
                    }
                }
            }
            if adam_m.len() != adam_v.len() {
                return Err(Error::ConfigMismatch(
                    "optimizer first/second moments do not pair up".into(),
                ));
            }
            Some(AdamState { step: header.adam_step, m: adam_m, v: adam_v })
        };
        Ok(Checkpoint {
            config: header.config,
            epoch: header.epoch,
            best_dsc: header.best_dsc,
            lr: header.lr,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::adam_step;
    use crate::rng::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            slice_size: 16,
            patch: 4,
            embed_dim: 8,
            heads: 2,
            encoder_blocks: 1,
            decoder_blocks: 1,
            memory_capacity: 4,
            num_classes: 3,
        }
    }

    fn stepped_checkpoint() -> Checkpoint {
        let mut model = Model::init(tiny_config(), 11).unwrap();
        let mut state = AdamState::new();
        let mut rng = Rng::from_tags(11, &[1]);
        for _ in 0..3 {
            let grads: BTreeMap<String, Array2<f64>> = model
                .params
                .iter()
                .map(|(n, v)| {
                    (n.to_string(), Array2::from_shape_fn(v.dim(), |_| rng.normal() * 0.01))
                })
                .collect();
            adam_step(&mut model.params, &grads, &mut state, 1e-3).unwrap();
        }
        Checkpoint {
            config: model.config,
            epoch: 7,
            best_dsc: 0.8125,
            lr: 5e-5,
            params: model.params,
            adam: Some(state),
        }
    }

    fn assert_f32_equal(a: &Array2<f64>, b: &Array2<f64>) {
        assert_eq!(a.dim(), b.dim());
        for (&x, &y) in a.iter().zip(b.iter()) {
            assert_eq!((x as f32) as f64, y);
        }
    }

    #[test]
    fn round_trip_preserves_state_to_f32() {
        let original = stepped_checkpoint();
        let bytes = original.to_bytes().unwrap();
        assert_eq!(&bytes[0..8], MAGIC);
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.config, original.config);
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.best_dsc, 0.8125);
        assert_eq!(loaded.lr, 5e-5);
        assert_eq!(loaded.params.names(), original.params.names());
        for (name, value) in original.params.iter() {
            assert_f32_equal(value, loaded.params.get(name));
        }
        let (orig_adam, loaded_adam) = (original.adam.unwrap(), loaded.adam.unwrap());
        assert_eq!(loaded_adam.step, orig_adam.step);
        assert_eq!(loaded_adam.m.len(), orig_adam.m.len());
        for (name, value) in &orig_adam.m {
            assert_f32_equal(value, &loaded_adam.m[name]);
        }
        for (name, value) in &orig_adam.v {
            assert_f32_equal(value, &loaded_adam.v[name]);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let original = stepped_checkpoint();
        original.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.epoch, original.epoch);
        assert_eq!(loaded.params.len(), original.params.len());
    }

    #[test]
    fn checkpoint_without_optimizer_loads_none() {
        let model = Model::init(tiny_config(), 12).unwrap();
        let ckpt = Checkpoint {
            config: model.config,
            epoch: 0,
            best_dsc: 0.0,
            lr: 1e-4,
            params: model.params,
            adam: None,
        };
        let loaded = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert!(loaded.adam.is_none());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = stepped_checkpoint().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CorruptData(_))));
    }

    #[test]
    fn unknown_version_rejected() {
        let mut bytes = stepped_checkpoint().to_bytes().unwrap();
        bytes[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = stepped_checkpoint().to_bytes().unwrap();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).unwrap_err();
        assert!(matches!(err, Error::CorruptData(_)));
    }

    #[test]
    fn header_length_beyond_file_rejected() {
        let mut bytes = stepped_checkpoint().to_bytes().unwrap();
        bytes[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CorruptData(_))));
    }

    #[test]
    fn missing_tensor_is_config_mismatch() {
        let mut ckpt = stepped_checkpoint();
        ckpt.adam = None;
        // Serialize with one tensor renamed so the inventory no longer
        // matches the architecture.
        let value = ckpt.params.get("head.w").clone();
        let mut store = ParamStore::new();
        for (name, v) in ckpt.params.iter() {
            if name != "head.w" {
                store.insert(name, v.clone());
            }
        }
        store.insert("head.weight", value);
        ckpt.params = store;
        let bytes = ckpt.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn wrong_shape_is_config_mismatch() {
        let mut ckpt = stepped_checkpoint();
        ckpt.adam = None;
        ckpt.params.insert("head.w", Array2::zeros((3, 3)));
        let bytes = ckpt.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn random_bytes_never_panic() {
        let mut rng = Rng::from_tags(99, &[0xF022]);
        for _ in 0..300 {
            let len = rng.below(200);
            let mut bytes: Vec<u8> = (0..len).map(|_| rng.below(256) as u8).collect();
            // Half the time, plant a valid magic so parsing goes deeper.
            if rng.coin(0.5) && bytes.len() >= 8 {
                bytes[0..8].copy_from_slice(MAGIC);
            }
            assert!(Checkpoint::from_bytes(&bytes).is_err());
        }
    }
}
