//! Stochastic training-time augmentation.
//!
//! Each transform fires independently with its configured probability, from
//! an RNG stream derived from (seed, sample_index) so augmentation is
//! per-sample deterministic and safe to run concurrently. Spatial transforms
//! (flip, rotation, elastic warp) apply identically to the image (trilinear)
//! and any masks (nearest); intensity transforms (noise, bias field) touch
//! the image only. Application order is fixed: flip, rotate, elastic, noise,
//! bias.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::volume::VolumeBundle;

const AUGMENT_TAG: u64 = 0xA06;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_flip_z: f64,
    pub p_rotate: f64,
    /// Max in-plane rotation, degrees (about the z axis).
    pub max_deg_xy: f64,
    /// Max out-of-plane rotation, degrees (about the y and x axes).
    pub max_deg_xz_yz: f64,
    pub p_noise: f64,
    /// Additive Gaussian sigma as a fraction of the image intensity std.
    pub noise_sigma_rel: f64,
    pub p_bias: f64,
    /// Polynomial order of the multiplicative bias field.
    pub bias_order: usize,
    /// Peak relative amplitude of the bias field.
    pub bias_amp: f64,
    pub p_elastic: f64,
    /// Control points per axis of the elastic displacement grid.
    pub elastic_grid: usize,
    /// Std of control-point displacements, mm.
    pub elastic_sigma_mm: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_flip_z: 0.5,
            p_rotate: 0.7,
            max_deg_xy: 15.0,
            max_deg_xz_yz: 9.0,
            p_noise: 0.5,
            noise_sigma_rel: 0.05,
            p_bias: 0.2,
            bias_order: 3,
            bias_amp: 0.3,
            p_elastic: 0.5,
            elastic_grid: 4,
            elastic_sigma_mm: 2.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// All transforms off; useful as a base for selective overrides.
    pub fn disabled(seed: u64) -> Self {
        AugmentConfig {
            p_flip_z: 0.0,
            p_rotate: 0.0,
            p_noise: 0.0,
            p_bias: 0.0,
            p_elastic: 0.0,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_flip_z, self.p_rotate, self.p_noise, self.p_bias, self.p_elastic];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArg("augment probabilities must lie in [0,1]".into()));
        }
        let scales =
            [self.max_deg_xy, self.max_deg_xz_yz, self.noise_sigma_rel, self.bias_amp, self.elastic_sigma_mm];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArg("augment scales must be non-negative".into()));
        }
        if self.elastic_grid < 2 {
            return Err(Error::InvalidArg("elastic grid needs at least 2 control points".into()));
        }
        Ok(())
    }
}

/// Apply the configured augmentation chain to one training sample.
pub fn augment(bundle: &VolumeBundle, config: &AugmentConfig, sample_index: u64) -> Result<VolumeBundle> {
    config.validate()?;
    let mut rng = Rng::from_tags(config.seed, &[AUGMENT_TAG, sample_index]);
    let mut out = bundle.clone();
    if rng.coin(config.p_flip_z) {
        out = flip_z(&out);
    }
    if rng.coin(config.p_rotate) {
        let angles = [
            rng.range_f64(-config.max_deg_xy, config.max_deg_xy),
            rng.range_f64(-config.max_deg_xz_yz, config.max_deg_xz_yz),
            rng.range_f64(-config.max_deg_xz_yz, config.max_deg_xz_yz),
        ];
        out = rotate(&out, angles);
    }
    if rng.coin(config.p_elastic) {
        out = elastic(&out, config.elastic_grid, config.elastic_sigma_mm, &mut rng);
    }
    if rng.coin(config.p_noise) {
        add_noise(&mut out, config.noise_sigma_rel, &mut rng);
    }
    if rng.coin(config.p_bias) {
        apply_bias(&mut out, config.bias_order, config.bias_amp, &mut rng);
    }
    Ok(out)
}

/// Reverse the slice order along z (an involution).
pub fn flip_z(bundle: &VolumeBundle) -> VolumeBundle {
    let mut out = bundle.clone();
    out.image.data.invert_axis(Axis(0));
    if let Some(mask) = &mut out.mask {
        mask.labels.invert_axis(Axis(0));
    }
    if let Some(bone) = &mut out.bone {
        bone.labels.invert_axis(Axis(0));
    }
    out
}

fn sample_trilinear(data: &Array3<f32>, p: [f64; 3]) -> f32 {
    let (nz, ny, nx) = data.dim();
    let dims = [nz as i64, ny as i64, nx as i64];
    let f = [p[0].floor(), p[1].floor(), p[2].floor()];
    let w = [p[0] - f[0], p[1] - f[1], p[2] - f[2]];
    let mut acc = 0.0f64;
    for corner in 0..8 {
        let mut weight = 1.0f64;
        let mut idx = [0i64; 3];
        let mut inside = true;
        for a in 0..3 {
            let hi = (corner >> a) & 1 == 1;
            weight *= if hi { w[a] } else { 1.0 - w[a] };
            idx[a] = f[a] as i64 + hi as i64;
            inside &= idx[a] >= 0 && idx[a] < dims[a];
        }
        if inside && weight != 0.0 {
            acc += weight * data[[idx[0] as usize, idx[1] as usize, idx[2] as usize]] as f64;
        }
    }
    acc as f32
}

fn sample_nearest(data: &Array3<u8>, p: [f64; 3]) -> u8 {
    let (nz, ny, nx) = data.dim();
    let dims = [nz as i64, ny as i64, nx as i64];
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let i = p[a].round() as i64;
        if i < 0 || i >= dims[a] {
            return 0;
        }
        idx[a] = i as usize;
    }
    data[idx]
}

/// Resample the bundle through `map`, which takes an output position in mm to
/// its source position in mm (inverse warp). Zero fill outside the volume.
fn warp<F: Fn([f64; 3]) -> [f64; 3]>(bundle: &VolumeBundle, map: F) -> VolumeBundle {
    let spacing = bundle.image.spacing;
    let mut out = bundle.clone();
    let to_index = |q: [f64; 3]| -> [f64; 3] {
        [q[0] / spacing[0], q[1] / spacing[1], q[2] / spacing[2]]
    };
    let mut image = Array3::<f32>::zeros(bundle.image.data.dim());
    for ((z, y, x), v) in image.indexed_iter_mut() {
        let p = [z as f64 * spacing[0], y as f64 * spacing[1], x as f64 * spacing[2]];
        let q = to_index(map(p));
        *v = sample_trilinear(&bundle.image.data, q);
    }
    out.image.data = image;
    let warp_mask = |labels: &Array3<u8>| -> Array3<u8> {
        let mut m = Array3::<u8>::zeros(labels.dim());
        for ((z, y, x), v) in m.indexed_iter_mut() {
            let p = [z as f64 * spacing[0], y as f64 * spacing[1], x as f64 * spacing[2]];
            *v = sample_nearest(labels, to_index(map(p)));
        }
        m
    };
    if let Some(mask) = &mut out.mask {
        mask.labels = warp_mask(&bundle.mask.as_ref().unwrap().labels);
    }
    if let Some(bone) = &mut out.bone {
        bone.labels = warp_mask(&bundle.bone.as_ref().unwrap().labels);
    }
    out
}

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: Mat3, b: Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn mat_apply(m: Mat3, v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|k| m[i][k] * v[k]).sum())
}

fn transpose(m: Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| m[j][i]))
}

/// Rotation matrix in (z, y, x) coordinates for plane angles in degrees:
/// xy (about z), xz (about y), yz (about x), composed in that order.
fn rotation_matrix(angles_deg: [f64; 3]) -> Mat3 {
    let [a_xy, a_xz, a_yz] = angles_deg.map(f64::to_radians);
    let (sz, cz) = a_xy.sin_cos();
    let about_z = [[1.0, 0.0, 0.0], [0.0, cz, -sz], [0.0, sz, cz]];
    let (sy, cy) = a_xz.sin_cos();
    let about_y = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let (sx, cx) = a_yz.sin_cos();
    let about_x = [[cx, -sx, 0.0], [sx, cx, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(about_z, mat_mul(about_y, about_x))
}

/// Rotate image and masks by the given plane angles (degrees) about the
/// volume centre, zero fill.
pub fn rotate(bundle: &VolumeBundle, angles_deg: [f64; 3]) -> VolumeBundle {
    let spacing = bundle.image.spacing;
    let dims = bundle.image.dims();
    let center: [f64; 3] = std::array::from_fn(|a| (dims[a] as f64 - 1.0) / 2.0 * spacing[a]);
    // Inverse of a rotation is its transpose: map output mm -> source mm.
    let inv = transpose(rotation_matrix(angles_deg));
    warp(bundle, move |p| {
        let rel = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
        let q = mat_apply(inv, rel);
        [q[0] + center[0], q[1] + center[1], q[2] + center[2]]
    })
}

/// Smooth random warp: a grid of control-point displacement vectors (std
/// `sigma_mm` per component) trilinearly interpolated across the volume.
pub fn elastic(bundle: &VolumeBundle, grid: usize, sigma_mm: f64, rng: &mut Rng) -> VolumeBundle {
    let dims = bundle.image.dims();
    let spacing = bundle.image.spacing;
    let extent: [f64; 3] = std::array::from_fn(|a| (dims[a] as f64 - 1.0) * spacing[a]);
    let mut field = vec![[0.0f64; 3]; grid * grid * grid];
    for v in &mut field {
        *v = [rng.normal() * sigma_mm, rng.normal() * sigma_mm, rng.normal() * sigma_mm];
    }
    let g = grid;
    let displacement = move |p: [f64; 3]| -> [f64; 3] {
        // Position in control-grid coordinates.
        let gc: [f64; 3] = std::array::from_fn(|a| {
            if extent[a] > 0.0 { p[a] / extent[a] * (g as f64 - 1.0) } else { 0.0 }
        });
        let f: [usize; 3] = std::array::from_fn(|a| (gc[a].floor() as usize).min(g - 2));
        let w: [f64; 3] = std::array::from_fn(|a| (gc[a] - f[a] as f64).clamp(0.0, 1.0));
        let mut d = [0.0f64; 3];
        for corner in 0..8 {
            let mut weight = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let hi = (corner >> a) & 1 == 1;
                weight *= if hi { w[a] } else { 1.0 - w[a] };
                idx[a] = f[a] + hi as usize;
            }
            let cp = field[(idx[0] * g + idx[1]) * g + idx[2]];
            for a in 0..3 {
                d[a] += weight * cp[a];
            }
        }
        d
    };
    warp(bundle, move |p| {
        let d = displacement(p);
        [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
    })
}

/// Noise scale: relative to intensity std, falling back to |mean| then 1.0
/// for (near-)constant images so the transform never degenerates to a no-op.
fn noise_scale(bundle: &VolumeBundle, rel: f64) -> f64 {
    let data = &bundle.image.data;
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let base = if var.sqrt() > 0.0 {
        var.sqrt()
    } else if mean.abs() > 0.0 {
        mean.abs()
    } else {
        1.0
    };
    rel * base
}

fn add_noise(bundle: &mut VolumeBundle, sigma_rel: f64, rng: &mut Rng) {
    let sigma = noise_scale(bundle, sigma_rel);
    for v in bundle.image.data.iter_mut() {
        *v += (sigma * rng.normal()) as f32;
    }
}

/// Multiplicative polynomial bias field: 1 + amp * P(u,v,w) with P a random
/// polynomial of total order `order` over [-1,1]³, normalized so
/// |P| ≤ 1 (field stays within [1-amp, 1+amp]).
fn apply_bias(bundle: &mut VolumeBundle, order: usize, amp: f64, rng: &mut Rng) {
    let mut monomials = Vec::new();
    for i in 0..=order {
        for j in 0..=order - i {
            for k in 0..=order - i - j {
                monomials.push((i as i32, j as i32, k as i32, rng.range_f64(-1.0, 1.0)));
            }
        }
    }
    let norm: f64 = monomials.iter().map(|&(.., c)| c.abs()).sum::<f64>().max(1e-12);
    let dims = bundle.image.dims();
    let unit = |i: usize, n: usize| -> f64 {
        if n > 1 { 2.0 * i as f64 / (n as f64 - 1.0) - 1.0 } else { 0.0 }
    };
    for ((z, y, x), v) in bundle.image.data.indexed_iter_mut() {
        let (u0, u1, u2) = (unit(z, dims[0]), unit(y, dims[1]), unit(x, dims[2]));
        let p: f64 = monomials
            .iter()
            .map(|&(i, j, k, c)| c * u0.powi(i) * u1.powi(j) * u2.powi(k))
            .sum::<f64>()
            / norm;
        *v = (*v as f64 * (1.0 + amp * p)) as f32;
    }
}
