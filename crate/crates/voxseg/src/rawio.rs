//! Raw little-endian payloads with a JSON sidecar describing geometry.
//!
//! Sidecar schema:
//! `{"dims":[z,y,x],"spacing":[sz,sy,sx],"dtype":"u8|i16|f32","byte_order":"le",
//!   "label":bool,"class_names":[...]}`

use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dtype, LabelMask, Volume, VolumeBundle};

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct RawSidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: Dtype,
    pub byte_order: String,
    #[serde(default)]
    pub label: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
}

/// Parse raw payload + sidecar already loaded into memory.
///
/// With `label: true` the payload is validated against `class_names` and the
/// bundle carries both the mask and its f32 view as the image.
pub fn read_raw_bytes(data: &[u8], sidecar: &[u8]) -> Result<VolumeBundle> {
    let sc: RawSidecar = serde_json::from_slice(sidecar)?;
    if sc.byte_order != "le" {
        return Err(Error::UnsupportedFormat(format!("byte_order {:?}", sc.byte_order)));
    }
    let [nz, ny, nx] = sc.dims;
    let n_elems = nz
        .checked_mul(ny)
        .and_then(|p| p.checked_mul(nx))
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::DimensionError(format!("bad dims {:?}", sc.dims)))?;
    let expected = n_elems
        .checked_mul(sc.dtype.size())
        .ok_or_else(|| Error::CorruptData("payload size overflow".into()))?;
    if data.len() != expected {
        return Err(Error::SizeMismatch { expected, actual: data.len() });
    }
    let mut values = Vec::with_capacity(n_elems);
    match sc.dtype {
        Dtype::U8 => values.extend(data.iter().map(|&b| b as f32)),
        Dtype::I16 => {
            values.extend(data.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32))
        }
        Dtype::F32 => values.extend(
            data.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        ),
    }
    let arr = Array3::from_shape_vec((nz, ny, nx), values)
        .map_err(|e| Error::DimensionError(e.to_string()))?;
    let volume = Volume::new(arr, sc.spacing, [0.0; 3], sc.dtype)?;
    if sc.label {
        let names = if sc.class_names.is_empty() {
            // No declared classes: accept labels as-is up to the observed max.
            let max = volume.data.iter().fold(0.0f32, |m, &v| m.max(v)) as usize;
            (0..=max).map(|i| format!("class_{i}")).collect()
        } else {
            sc.class_names.clone()
        };
        let mask = volume.to_label_mask(names)?;
        VolumeBundle::new(volume).with_mask(mask)
    } else {
        Ok(VolumeBundle::new(volume))
    }
}

pub fn read_raw<P: AsRef<Path>, Q: AsRef<Path>>(data_path: P, sidecar_path: Q) -> Result<VolumeBundle> {
    read_raw_bytes(&std::fs::read(data_path)?, &std::fs::read(sidecar_path)?)
}

fn payload_bytes(vol: &Volume) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(vol.data.len() * vol.dtype_hint.size());
    match vol.dtype_hint {
        Dtype::U8 => {
            for &v in vol.data.iter() {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(Error::UnrepresentableValue(v, "u8"));
                }
                out.push(v as u8);
            }
        }
        Dtype::I16 => {
            for &v in vol.data.iter() {
                if v.fract() != 0.0 || !(-32768.0..=32767.0).contains(&v) {
                    return Err(Error::UnrepresentableValue(v, "i16"));
                }
                out.extend_from_slice(&(v as i16).to_le_bytes());
            }
        }
        Dtype::F32 => {
            for &v in vol.data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Write a volume as raw payload + sidecar.
pub fn write_raw<P: AsRef<Path>, Q: AsRef<Path>>(
    vol: &Volume,
    data_path: P,
    sidecar_path: Q,
) -> Result<()> {
    let sc = RawSidecar {
        dims: vol.dims(),
        spacing: vol.spacing,
        dtype: vol.dtype_hint,
        byte_order: "le".into(),
        label: false,
        class_names: vec![],
    };
    std::fs::write(data_path, payload_bytes(vol)?)?;
    std::fs::write(sidecar_path, serde_json::to_vec_pretty(&sc)?)?;
    Ok(())
}

/// Write a label mask as raw payload + sidecar (`label: true`).
pub fn write_raw_mask<P: AsRef<Path>, Q: AsRef<Path>>(
    mask: &LabelMask,
    data_path: P,
    sidecar_path: Q,
) -> Result<()> {
    let vol = mask.to_volume();
    let sc = RawSidecar {
        dims: vol.dims(),
        spacing: vol.spacing,
        dtype: Dtype::U8,
        byte_order: "le".into(),
        label: true,
        class_names: mask.class_names.clone(),
    };
    std::fs::write(data_path, payload_bytes(&vol)?)?;
    std::fs::write(sidecar_path, serde_json::to_vec_pretty(&sc)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn sidecar(dims: [usize; 3], dtype: &str, label: bool, names: &[&str]) -> Vec<u8> {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        serde_json::to_vec(&serde_json::json!({
            "dims": dims, "spacing": [1.0, 1.0, 1.0], "dtype": dtype,
            "byte_order": "le", "label": label, "class_names": names,
        }))
        .unwrap()
    }

    #[test]
    fn f32_ones_round_trip() {
        let data: Vec<u8> = std::iter::repeat(1.0f32.to_le_bytes()).take(8).flatten().collect();
        let b = read_raw_bytes(&data, &sidecar([2, 2, 2], "f32", false, &[])).unwrap();
        assert!(b.image.data.iter().all(|&v| v == 1.0));
        assert_eq!(b.image.dims(), [2, 2, 2]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let data = vec![0u8; 16];
        let err = read_raw_bytes(&data, &sidecar([2, 2, 2], "f32", false, &[])).unwrap_err();
        assert!(matches!(err, Error::SizeMismatch { expected: 32, actual: 16 }));
    }

    #[test]
    fn labels_validated_against_class_list() {
        let names = ["bg", "a", "b", "c", "d", "e"];
        let data = vec![5u8; 8];
        let b = read_raw_bytes(&data, &sidecar([2, 2, 2], "u8", true, &names)).unwrap();
        assert_eq!(b.mask.unwrap().labels[[0, 0, 0]], 5);
        let data = vec![9u8; 8];
        assert!(read_raw_bytes(&data, &sidecar([2, 2, 2], "u8", true, &names)).is_err());
    }

    #[test]
    fn unknown_dtype_rejected() {
        let err = read_raw_bytes(&[0u8; 8], &sidecar([2, 2, 2], "f64", false, &[])).unwrap_err();
        assert!(matches!(err, Error::Json(_)));
    }

    #[test]
    fn big_endian_rejected() {
        let sc = serde_json::to_vec(&serde_json::json!({
            "dims": [1,1,1], "spacing": [1.0,1.0,1.0], "dtype": "u8", "byte_order": "be",
        }))
        .unwrap();
        assert!(matches!(read_raw_bytes(&[0u8], &sc), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn file_round_trip_mask() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = Array3::zeros((2, 3, 4));
        l[[1, 2, 3]] = 2;
        let names: Vec<String> = ["bg", "a", "b"].map(String::from).to_vec();
        let m = LabelMask::new(l, [1.0, 1.0, 1.0], [0.0; 3], names).unwrap();
        let (d, s) = (dir.path().join("m.raw"), dir.path().join("m.json"));
        write_raw_mask(&m, &d, &s).unwrap();
        let back = read_raw(&d, &s).unwrap().mask.unwrap();
        assert_eq!(back.labels, m.labels);
        assert_eq!(back.class_names, m.class_names);
    }
}
