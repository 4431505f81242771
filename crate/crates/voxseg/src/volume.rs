//! Volume and label-mask types.
//!
//! Axis convention throughout the crate: arrays are indexed `(z, y, x)` with
//! x fastest in memory; `spacing` and `origin` follow the same `(z, y, x)`
//! order, in millimetres.

use std::collections::BTreeMap;

use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage scalar type of a volume on disk. In memory everything is f32.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "i16")]
    I16,
    #[serde(rename = "f32")]
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::F32 => 4,
        }
    }
}

/// A scalar image grid.
#[derive(Clone, Debug)]
pub struct Volume {
    /// Values indexed (z, y, x).
    pub data: Array3<f32>,
    /// Voxel spacing (sz, sy, sx) in mm, all > 0.
    pub spacing: [f64; 3],
    /// Position of voxel (0,0,0) centre, (oz, oy, ox) in mm.
    pub origin: [f64; 3],
    /// Scalar type used when this volume is written back to disk.
    pub dtype_hint: Dtype,
}

impl Volume {
    pub fn new(
        data: Array3<f32>,
        spacing: [f64; 3],
        origin: [f64; 3],
        dtype_hint: Dtype,
    ) -> Result<Self> {
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::CorruptData(format!("non-positive spacing {spacing:?}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptData("non-finite voxel value".into()));
        }
        Ok(Volume { data, spacing, origin, dtype_hint })
    }

    /// (nz, ny, nx).
    pub fn dims(&self) -> [usize; 3] {
        let d = self.data.dim();
        [d.0, d.1, d.2]
    }

    pub fn slice_xy(&self, z: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), z)
    }

    /// Reinterpret as a label mask, validating that every value is an
    /// integer below the class count.
    pub fn to_label_mask(&self, class_names: Vec<String>) -> Result<LabelMask> {
        let n = class_names.len();
        let mut labels = Array3::<u8>::zeros(self.data.dim());
        for (dst, &v) in labels.iter_mut().zip(self.data.iter()) {
            if v.fract() != 0.0 || v < 0.0 || v > 255.0 {
                return Err(Error::CorruptData(format!("label value {v} is not a small integer")));
            }
            let l = v as u8;
            if (l as usize) >= n {
                return Err(Error::CorruptData(format!(
                    "label value {l} out of range for {n} classes"
                )));
            }
            *dst = l;
        }
        Ok(LabelMask { labels, spacing: self.spacing, origin: self.origin, class_names })
    }
}

/// Integer segmentation labels over the same grid as a paired [`Volume`].
#[derive(Clone, Debug)]
pub struct LabelMask {
    /// Labels indexed (z, y, x); 0 is background.
    pub labels: Array3<u8>,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// Class names; index 0 is reserved for background.
    pub class_names: Vec<String>,
}

impl LabelMask {
    pub fn new(
        labels: Array3<u8>,
        spacing: [f64; 3],
        origin: [f64; 3],
        class_names: Vec<String>,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::InvalidArg("class_names must include background".into()));
        }
        let n = class_names.len() as u8;
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::CorruptData(format!("label {bad} out of range for {n} classes")));
        }
        Ok(LabelMask { labels, spacing, origin, class_names })
    }

    pub fn dims(&self) -> [usize; 3] {
        let d = self.labels.dim();
        [d.0, d.1, d.2]
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn slice_xy(&self, z: usize) -> ArrayView2<'_, u8> {
        self.labels.index_axis(Axis(0), z)
    }

    /// Binary mask of one class over the whole volume.
    pub fn class_volume(&self, class_id: u8) -> Array3<u8> {
        self.labels.mapv(|l| u8::from(l == class_id))
    }

    /// Binary mask of one class on one slice.
    pub fn class_slice(&self, z: usize, class_id: u8) -> ndarray::Array2<u8> {
        self.slice_xy(z).mapv(|l| u8::from(l == class_id))
    }

    /// Ascending z indices of slices where `class_id` has any voxel.
    pub fn present_slices(&self, class_id: u8) -> Vec<usize> {
        (0..self.dims()[0])
            .filter(|&z| self.slice_xy(z).iter().any(|&l| l == class_id))
            .collect()
    }

    /// View the labels as an f32 volume (for writing with the image codecs).
    pub fn to_volume(&self) -> Volume {
        Volume {
            data: self.labels.mapv(|l| l as f32),
            spacing: self.spacing,
            origin: self.origin,
            dtype_hint: Dtype::U8,
        }
    }

    pub(crate) fn geometry_matches(&self, vol: &Volume) -> bool {
        self.dims() == vol.dims() && self.spacing == vol.spacing
    }
}

/// An image and its optional annotations, moved through the pipeline as one
/// unit.
#[derive(Clone, Debug)]
pub struct VolumeBundle {
    pub image: Volume,
    pub mask: Option<LabelMask>,
    /// Binary bone mask used by morphometry.
    pub bone: Option<LabelMask>,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl VolumeBundle {
    pub fn new(image: Volume) -> Self {
        VolumeBundle { image, mask: None, bone: None, meta: BTreeMap::new() }
    }

    pub fn with_mask(mut self, mask: LabelMask) -> Result<Self> {
        if !mask.geometry_matches(&self.image) {
            return Err(Error::DimensionError("mask geometry differs from image".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn with_bone(mut self, bone: LabelMask) -> Result<Self> {
        if !bone.geometry_matches(&self.image) {
            return Err(Error::DimensionError("bone geometry differs from image".into()));
        }
        self.bone = Some(bone);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn vol(vals: f32) -> Volume {
        Volume::new(Array3::from_elem((2, 2, 2), vals), [1.0; 3], [0.0; 3], Dtype::F32).unwrap()
    }

    #[test]
    fn rejects_nonfinite() {
        let mut d = Array3::zeros((2, 2, 2));
        d[[0, 0, 0]] = f32::NAN;
        assert!(Volume::new(d, [1.0; 3], [0.0; 3], Dtype::F32).is_err());
    }

    #[test]
    fn rejects_bad_spacing() {
        let d = Array3::zeros((2, 2, 2));
        assert!(Volume::new(d, [1.0, 0.0, 1.0], [0.0; 3], Dtype::F32).is_err());
    }

    #[test]
    fn label_mask_range_check() {
        let mut l = Array3::zeros((2, 2, 2));
        l[[0, 0, 0]] = 5;
        let names: Vec<String> = ["background", "a", "b", "c", "d"].map(String::from).to_vec();
        assert!(LabelMask::new(l.clone(), [1.0; 3], [0.0; 3], names.clone()).is_err());
        l[[0, 0, 0]] = 4;
        assert!(LabelMask::new(l, [1.0; 3], [0.0; 3], names).is_ok());
    }

    #[test]
    fn to_label_mask_validates_integrality() {
        let v = vol(1.5);
        assert!(v.to_label_mask(vec!["bg".into(), "fg".into()]).is_err());
        let v = vol(1.0);
        let m = v.to_label_mask(vec!["bg".into(), "fg".into()]).unwrap();
        assert_eq!(m.labels[[0, 0, 0]], 1);
    }

    #[test]
    fn bundle_geometry_check() {
        let v = vol(0.0);
        let m = LabelMask::new(Array3::zeros((3, 2, 2)), [1.0; 3], [0.0; 3], vec!["bg".into()])
            .unwrap();
        assert!(VolumeBundle::new(v).with_mask(m).is_err());
    }

    #[test]
    fn present_slices_finds_class() {
        let mut l = Array3::zeros((4, 2, 2));
        l[[1, 0, 0]] = 1;
        l[[3, 1, 1]] = 1;
        let m = LabelMask::new(l, [1.0; 3], [0.0; 3], vec!["bg".into(), "fg".into()]).unwrap();
        assert_eq!(m.present_slices(1), vec![1, 3]);
        assert_eq!(m.present_slices(0), vec![0, 1, 2, 3]);
    }
}
