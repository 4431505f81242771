//! Geometric standardization: fix the physical field of view first (symmetric
//! center crop or zero pad on the source grid), then resample to the target
//! grid. Images interpolate trilinearly, label masks nearest-neighbor.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::volume::{Dtype, LabelMask, Volume, VolumeBundle};

/// Crop or zero-pad `arr` symmetrically to `m` voxels per axis.
fn crop_pad<T: Copy + Default>(arr: &Array3<T>, m: [usize; 3]) -> Array3<T> {
    let n = arr.dim();
    let n = [n.0, n.1, n.2];
    let mut out = Array3::from_elem((m[0], m[1], m[2]), T::default());
    // Offset of the output grid inside the source grid; negative means padding.
    let off: Vec<i64> = (0..3).map(|a| (n[a] as i64 - m[a] as i64).div_euclid(2)).collect();
    let lo: Vec<usize> = (0..3).map(|a| off[a].max(0) as usize).collect();
    let hi: Vec<usize> = (0..3).map(|a| (off[a] + m[a] as i64).min(n[a] as i64) as usize).collect();
    for z in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for x in lo[2]..hi[2] {
                out[[
                    (z as i64 - off[0]) as usize,
                    (y as i64 - off[1]) as usize,
                    (x as i64 - off[2]) as usize,
                ]] = arr[[z, y, x]];
            }
        }
    }
    out
}

/// Source coordinate of output voxel centre `i` when resampling `m` -> `n`.
#[inline]
fn src_coord(i: usize, m: usize, n: usize) -> f64 {
    (i as f64 + 0.5) * (m as f64 / n as f64) - 0.5
}

fn resample_trilinear(arr: &Array3<f32>, dims: [usize; 3]) -> Array3<f32> {
    let m = arr.dim();
    let m = [m.0, m.1, m.2];
    let mut out = Array3::zeros((dims[0], dims[1], dims[2]));
    for z in 0..dims[0] {
        let fz = src_coord(z, m[0], dims[0]).clamp(0.0, (m[0] - 1) as f64);
        let z0 = fz.floor() as usize;
        let z1 = (z0 + 1).min(m[0] - 1);
        let wz = fz - z0 as f64;
        for y in 0..dims[1] {
            let fy = src_coord(y, m[1], dims[1]).clamp(0.0, (m[1] - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(m[1] - 1);
            let wy = fy - y0 as f64;
            for x in 0..dims[2] {
                let fx = src_coord(x, m[2], dims[2]).clamp(0.0, (m[2] - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(m[2] - 1);
                let wx = fx - x0 as f64;
                let mut acc = 0.0f64;
                for (zi, wz_) in [(z0, 1.0 - wz), (z1, wz)] {
                    for (yi, wy_) in [(y0, 1.0 - wy), (y1, wy)] {
                        for (xi, wx_) in [(x0, 1.0 - wx), (x1, wx)] {
                            acc += wz_ * wy_ * wx_ * arr[[zi, yi, xi]] as f64;
                        }
                    }
                }
                out[[z, y, x]] = acc as f32;
            }
        }
    }
    out
}

fn resample_nearest(arr: &Array3<u8>, dims: [usize; 3]) -> Array3<u8> {
    let m = arr.dim();
    let m = [m.0, m.1, m.2];
    let nearest =
        |i: usize, a: usize| src_coord(i, m[a], dims[a]).round().clamp(0.0, (m[a] - 1) as f64) as usize;
    let mut out = Array3::zeros((dims[0], dims[1], dims[2]));
    for z in 0..dims[0] {
        let zi = nearest(z, 0);
        for y in 0..dims[1] {
            let yi = nearest(y, 1);
            for x in 0..dims[2] {
                out[[z, y, x]] = arr[[zi, yi, nearest(x, 2)]];
            }
        }
    }
    out
}

/// Standardize a bundle to a physical field of view and grid size.
///
/// `target_fov_mm` and `target_dims` are (z, y, x). Output spacing is exactly
/// `fov / dims` per axis.
pub fn standardize_fov(
    bundle: &VolumeBundle,
    target_fov_mm: [f64; 3],
    target_dims: [usize; 3],
) -> Result<VolumeBundle> {
    if target_fov_mm.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::InvalidArg(format!("non-positive target FoV {target_fov_mm:?}")));
    }
    if target_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArg("zero target dims".into()));
    }
    let img = &bundle.image;
    let n_src = img.dims();
    // Physical FoV is fixed on the source grid: m voxels of source spacing.
    let m: [usize; 3] = std::array::from_fn(|a| {
        ((target_fov_mm[a] / img.spacing[a]).round() as i64).max(1) as usize
    });
    let spacing_out: [f64; 3] = std::array::from_fn(|a| target_fov_mm[a] / target_dims[a] as f64);
    let origin_out: [f64; 3] = std::array::from_fn(|a| {
        let off = (n_src[a] as i64 - m[a] as i64).div_euclid(2) as f64;
        img.origin[a] + (off + src_coord(0, m[a], target_dims[a])) * img.spacing[a]
    });

    let cropped = crop_pad(&img.data, m);
    let data = resample_trilinear(&cropped, target_dims);
    let image = Volume::new(data, spacing_out, origin_out, Dtype::F32)?;

    let map_mask = |mask: &LabelMask| -> LabelMask {
        let cropped = crop_pad(&mask.labels, m);
        LabelMask {
            labels: resample_nearest(&cropped, target_dims),
            spacing: spacing_out,
            origin: origin_out,
            class_names: mask.class_names.clone(),
        }
    };
    let mut out = VolumeBundle::new(image);
    out.meta = bundle.meta.clone();
    if let Some(mask) = &bundle.mask {
        out = out.with_mask(map_mask(mask))?;
    }
    if let Some(bone) = &bundle.bone {
        out = out.with_bone(map_mask(bone))?;
    }
    Ok(out)
}
