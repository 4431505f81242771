//! NIfTI-1 reader/writer for a declared subset: single-file, uncompressed,
//! little-endian, datatypes u8/i16/f32, no orientation handling (axes are
//! taken as stored). The subset is enough to round-trip every volume this
//! crate produces, bit-exactly.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::volume::{Dtype, Volume, VolumeBundle};

const HDR_LEN: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

fn get_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn get_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn put_i16(b: &mut [u8], off: usize, v: i16) {
    b[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(b: &mut [u8], off: usize, v: i32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(b: &mut [u8], off: usize, v: f32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

/// Parse a NIfTI-1 file already loaded into memory.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<VolumeBundle> {
    if bytes.len() < HDR_LEN {
        return Err(Error::UnsupportedFormat(format!(
            "file too short for a NIfTI-1 header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[344..348] != MAGIC {
        return Err(Error::UnsupportedFormat("bad magic (want \"n+1\\0\")".into()));
    }
    let ndim = get_i16(bytes, 40);
    if ndim != 3 {
        return Err(Error::DimensionError(format!("dim[0] = {ndim}, only 3-D supported")));
    }
    let nx = get_i16(bytes, 42);
    let ny = get_i16(bytes, 44);
    let nz = get_i16(bytes, 46);
    if nx <= 0 || ny <= 0 || nz <= 0 {
        return Err(Error::DimensionError(format!("non-positive dims ({nx}, {ny}, {nz})")));
    }
    let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
    let dtype = match get_i16(bytes, 70) {
        2 => Dtype::U8,
        4 => Dtype::I16,
        16 => Dtype::F32,
        other => return Err(Error::UnsupportedDatatype(format!("NIfTI datatype code {other}"))),
    };
    let bitpix = get_i16(bytes, 72);
    if bitpix as usize != dtype.size() * 8 {
        return Err(Error::CorruptData(format!("bitpix {bitpix} inconsistent with datatype")));
    }
    let sx = get_f32(bytes, 80) as f64;
    let sy = get_f32(bytes, 84) as f64;
    let sz = get_f32(bytes, 88) as f64;
    if ![sx, sy, sz].iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::CorruptData(format!("bad pixdim ({sx}, {sy}, {sz})")));
    }
    let vox_offset = get_f32(bytes, 108);
    if !vox_offset.is_finite() || vox_offset < HDR_LEN as f32 || vox_offset.fract() != 0.0 {
        return Err(Error::CorruptData(format!("bad vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let scl_slope = get_f32(bytes, 112);
    let scl_inter = get_f32(bytes, 116);
    let origin =
        [get_f32(bytes, 276) as f64, get_f32(bytes, 272) as f64, get_f32(bytes, 268) as f64];

    let n_elems = nx
        .checked_mul(ny)
        .and_then(|p| p.checked_mul(nz))
        .ok_or_else(|| Error::CorruptData("dim product overflow".into()))?;
    let payload_len = n_elems
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::CorruptData("payload size overflow".into()))?;
    let expected = offset
        .checked_add(payload_len)
        .ok_or_else(|| Error::CorruptData("file size overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch { expected, actual: bytes.len() });
    }
    let payload = &bytes[offset..];

    let mut values = Vec::with_capacity(n_elems);
    match dtype {
        Dtype::U8 => values.extend(payload.iter().map(|&b| b as f32)),
        Dtype::I16 => values.extend(
            payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32),
        ),
        Dtype::F32 => values.extend(
            payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        ),
    }
    if scl_slope != 0.0 {
        for v in &mut values {
            *v = *v * scl_slope + scl_inter;
        }
    }
    // File order is x-fastest, which is exactly C order for a (z, y, x) array.
    let data = Array3::from_shape_vec((nz, ny, nx), values)
        .map_err(|e| Error::DimensionError(e.to_string()))?;
    let volume = Volume::new(data, [sz, sy, sx], origin, dtype)?;
    Ok(VolumeBundle::new(volume))
}

pub fn read_nifti<P: AsRef<Path>>(path: P) -> Result<VolumeBundle> {
    read_nifti_bytes(&std::fs::read(path)?)
}

/// Serialize a volume to NIfTI-1 bytes using its `dtype_hint`.
///
/// Integer dtypes require every value to be an in-range integer; values read
/// through `scl_slope` scaling must therefore still be representable, or the
/// volume should be re-hinted to `F32` first.
pub fn write_nifti_bytes(vol: &Volume) -> Result<Vec<u8>> {
    let [nz, ny, nx] = vol.dims();
    if nx > i16::MAX as usize || ny > i16::MAX as usize || nz > i16::MAX as usize {
        return Err(Error::DimensionError("dims exceed NIfTI i16 range".into()));
    }
    let n_elems = nz * ny * nx;
    let mut out = vec![0u8; VOX_OFFSET + n_elems * vol.dtype_hint.size()];
    {
        let h = &mut out[..HDR_LEN];
        put_i32(h, 0, HDR_LEN as i32);
        put_i16(h, 40, 3);
        put_i16(h, 42, nx as i16);
        put_i16(h, 44, ny as i16);
        put_i16(h, 46, nz as i16);
        for off in (48..56).step_by(2) {
            put_i16(h, off, 1); // unused trailing dims
        }
        let code = match vol.dtype_hint {
            Dtype::U8 => 2,
            Dtype::I16 => 4,
            Dtype::F32 => 16,
        };
        put_i16(h, 70, code);
        put_i16(h, 72, (vol.dtype_hint.size() * 8) as i16);
        put_f32(h, 76, 1.0); // pixdim[0] (qfac)
        put_f32(h, 80, vol.spacing[2] as f32);
        put_f32(h, 84, vol.spacing[1] as f32);
        put_f32(h, 88, vol.spacing[0] as f32);
        put_f32(h, 108, VOX_OFFSET as f32);
        // Values are stored as-is: slope/intercept were folded in at read time.
        put_f32(h, 112, 0.0);
        put_f32(h, 116, 0.0);
        let descrip = b"voxseg";
        h[148..148 + descrip.len()].copy_from_slice(descrip);
        put_f32(h, 268, vol.origin[2] as f32);
        put_f32(h, 272, vol.origin[1] as f32);
        put_f32(h, 276, vol.origin[0] as f32);
        h[344..348].copy_from_slice(MAGIC);
    }
    let payload = &mut out[VOX_OFFSET..];
    match vol.dtype_hint {
        Dtype::U8 => {
            for (dst, &v) in payload.iter_mut().zip(vol.data.iter()) {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(Error::UnrepresentableValue(v, "u8"));
                }
                *dst = v as u8;
            }
        }
        Dtype::I16 => {
            for (dst, &v) in payload.chunks_exact_mut(2).zip(vol.data.iter()) {
                if v.fract() != 0.0 || !(-32768.0..=32767.0).contains(&v) {
                    return Err(Error::UnrepresentableValue(v, "i16"));
                }
                dst.copy_from_slice(&(v as i16).to_le_bytes());
            }
        }
        Dtype::F32 => {
            for (dst, &v) in payload.chunks_exact_mut(4).zip(vol.data.iter()) {
                dst.copy_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_nifti<P: AsRef<Path>>(vol: &Volume, path: P) -> Result<()> {
    std::fs::write(path, write_nifti_bytes(vol)?)?;
    Ok(())
}
