//! Synthetic volumes with analytic ground truth.
//!
//! Phantoms give every pipeline stage an oracle: labels are derived from
//! closed-form geometry (ball or half-space bone, radial shell sectors or
//! slabs of declared thickness), intensities are per-tissue means plus seeded
//! Gaussian noise, and the true thickness of every structure is recorded in
//! the bundle metadata.
//!
//! Conventions: voxel `i` has its centre at `i * spacing` mm per axis, and a
//! voxel belongs to a region iff its centre does. Slab boundaries are placed
//! on voxel centres so the centre-to-centre thickness convention is exact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::volume::{Dtype, LabelMask, Volume, VolumeBundle};

pub const CLASS_NAMES: [&str; 5] =
    ["background", "femoral_cartilage", "tibial_cartilage", "patellar_cartilage", "meniscus"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum BoneShape {
    /// Bone occupies voxel centres with z <= top_mm.
    HalfSpace { top_mm: f64 },
    /// Bone occupies voxel centres within radius_mm of center_mm (z, y, x).
    Ball { center_mm: [f64; 3], radius_mm: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum StructureShape {
    /// Radial band [R, R + t] around a ball bone, over an azimuth window
    /// (radians, wrap allowed via lo > hi) and a z window in mm.
    ShellSector { thickness_mm: f64, azimuth: [f64; 2], z_mm: [f64; 2] },
    /// Full radial band [R, R + t] around a ball bone.
    Shell { thickness_mm: f64 },
    /// Slab of voxel layers directly above a half-space bone, full lateral
    /// extent; spans round(t / sz) + 1 layers so centre-to-centre thickness
    /// equals t exactly when t is a multiple of sz.
    Slab { thickness_mm: f64 },
}

impl StructureShape {
    pub fn thickness_mm(&self) -> f64 {
        match self {
            StructureShape::ShellSector { thickness_mm, .. }
            | StructureShape::Shell { thickness_mm }
            | StructureShape::Slab { thickness_mm } => *thickness_mm,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureSpec {
    pub name: String,
    pub shape: StructureShape,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntensityParams {
    pub background_mean: f32,
    pub bone_mean: f32,
    /// One mean per structure, in structure order.
    pub structure_means: Vec<f32>,
    pub noise_sigma: f32,
}

impl Default for IntensityParams {
    fn default() -> Self {
        IntensityParams {
            background_mean: 0.05,
            bone_mean: 0.30,
            structure_means: vec![0.55, 0.70, 0.85, 1.00],
            noise_sigma: 0.03,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub bone: BoneShape,
    pub structures: Vec<StructureSpec>,
    pub intensity: IntensityParams,
    pub seed: u64,
}

fn validate(spec: &PhantomSpec) -> Result<()> {
    if spec.structures.is_empty() || spec.structures.len() > 4 {
        return Err(Error::SpecError("1 to 4 structures supported".into()));
    }
    if spec.intensity.structure_means.len() != spec.structures.len() {
        return Err(Error::SpecError("one intensity mean per structure required".into()));
    }
    for (i, s) in spec.structures.iter().enumerate() {
        let t = s.shape.thickness_mm();
        let max_sp = spec.spacing.iter().cloned().fold(0.0, f64::max);
        if t < max_sp {
            return Err(Error::SpecError(format!(
                "structure {i} thickness {t} mm is below one voxel ({max_sp} mm)"
            )));
        }
        let needs_ball = matches!(
            s.shape,
            StructureShape::Shell { .. } | StructureShape::ShellSector { .. }
        );
        match (&spec.bone, needs_ball) {
            (BoneShape::Ball { .. }, true) | (BoneShape::HalfSpace { .. }, false) => {}
            _ => {
                return Err(Error::SpecError(format!(
                    "structure {i} shape incompatible with bone geometry"
                )))
            }
        }
    }
    Ok(())
}

fn in_azimuth(phi: f64, window: [f64; 2]) -> bool {
    let tau = std::f64::consts::TAU;
    let norm = |a: f64| a.rem_euclid(tau);
    let (p, lo, hi) = (norm(phi), norm(window[0]), norm(window[1]));
    if lo <= hi {
        p >= lo && p < hi
    } else {
        p >= lo || p < hi
    }
}

/// Generate a phantom bundle: image + labels + bone mask + metadata with the
/// analytic thickness of every structure.
pub fn generate(spec: &PhantomSpec) -> Result<VolumeBundle> {
    validate(spec)?;
    let [nz, ny, nx] = spec.dims;
    let [sz, sy, sx] = spec.spacing;
    let mut labels = Array3::<u8>::zeros((nz, ny, nx));
    let mut bone = Array3::<u8>::zeros((nz, ny, nx));

    // Slab layer bookkeeping (half-space bone): first cartilage layer is the
    // first voxel-centre layer above the bone top.
    let slab_first_layer = match spec.bone {
        BoneShape::HalfSpace { top_mm } => (top_mm / sz).floor() as i64 + 1,
        _ => 0,
    };

    for z in 0..nz {
        let zc = z as f64 * sz;
        for y in 0..ny {
            let yc = y as f64 * sy;
            for x in 0..nx {
                let xc = x as f64 * sx;
                let in_bone = match spec.bone {
                    BoneShape::HalfSpace { top_mm } => zc <= top_mm,
                    BoneShape::Ball { center_mm: c, radius_mm: r } => {
                        let d = [zc - c[0], yc - c[1], xc - c[2]];
                        d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r
                    }
                };
                if in_bone {
                    bone[[z, y, x]] = 1;
                    continue;
                }
                for (k, s) in spec.structures.iter().enumerate() {
                    let hit = match (&spec.bone, &s.shape) {
                        (
                            BoneShape::Ball { center_mm: c, radius_mm: r },
                            StructureShape::Shell { thickness_mm },
                        ) => {
                            let d = [zc - c[0], yc - c[1], xc - c[2]];
                            let rr = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                            rr > *r && rr <= r + thickness_mm
                        }
                        (
                            BoneShape::Ball { center_mm: c, radius_mm: r },
                            StructureShape::ShellSector { thickness_mm, azimuth, z_mm },
                        ) => {
                            let d = [zc - c[0], yc - c[1], xc - c[2]];
                            let rr = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                            rr > *r
                                && rr <= r + thickness_mm
                                && zc >= z_mm[0]
                                && zc <= z_mm[1]
                                && in_azimuth(d[1].atan2(d[2]), *azimuth)
                        }
                        (BoneShape::HalfSpace { .. }, StructureShape::Slab { thickness_mm }) => {
                            let layers = (thickness_mm / sz).round() as i64;
                            let zi = z as i64;
                            zi >= slab_first_layer && zi <= slab_first_layer + layers
                        }
                        _ => false,
                    };
                    if hit {
                        if labels[[z, y, x]] != 0 {
                            return Err(Error::SpecError(format!(
                                "structures {} and {k} overlap at voxel ({z},{y},{x})",
                                labels[[z, y, x]] - 1
                            )));
                        }
                        labels[[z, y, x]] = (k + 1) as u8;
                    }
                }
            }
        }
    }

    let mut rng = Rng::from_tags(spec.seed, &[0x9A07]);
    let mut image = Array3::<f32>::zeros((nz, ny, nx));
    for ((idx, v), &l) in image.indexed_iter_mut().zip(labels.iter()) {
        let mean = if bone[idx] != 0 {
            spec.intensity.bone_mean
        } else if l != 0 {
            spec.intensity.structure_means[(l - 1) as usize]
        } else {
            spec.intensity.background_mean
        };
        *v = mean + spec.intensity.noise_sigma * rng.normal() as f32;
    }

    let spacing = spec.spacing;
    let class_names: Vec<String> = std::iter::once("background".to_string())
        .chain(spec.structures.iter().map(|s| s.name.clone()))
        .collect();
    let mask = LabelMask::new(labels, spacing, [0.0; 3], class_names)?;
    let bone = LabelMask::new(bone, spacing, [0.0; 3], vec!["background".into(), "bone".into()])?;
    let image = Volume::new(image, spacing, [0.0; 3], Dtype::F32)?;

    let mut expected = serde_json::Map::new();
    for s in &spec.structures {
        let t = match s.shape {
            // Slab thickness snaps to whole layers (centre-to-centre).
            StructureShape::Slab { thickness_mm } => (thickness_mm / sz).round() * sz,
            _ => s.shape.thickness_mm(),
        };
        expected.insert(s.name.clone(), serde_json::json!(t));
    }
    let mut bundle = VolumeBundle::new(image).with_mask(mask)?.with_bone(bone)?;
    bundle.meta.insert("expected_thickness".into(), serde_json::Value::Object(expected));
    Ok(bundle)
}

/// Half-space bone + full-extent slab of thickness `t_mm`: the morphometry
/// exactness fixture.
pub fn slab_phantom(dims: [usize; 3], spacing: [f64; 3], t_mm: f64, seed: u64) -> Result<VolumeBundle> {
    let bone_top = (dims[0] as f64 / 4.0).floor() * spacing[0];
    generate(&PhantomSpec {
        dims,
        spacing,
        bone: BoneShape::HalfSpace { top_mm: bone_top },
        structures: vec![StructureSpec {
            name: "femoral_cartilage".into(),
            shape: StructureShape::Slab { thickness_mm: t_mm },
        }],
        intensity: IntensityParams {
            structure_means: vec![0.8],
            noise_sigma: 0.0,
            ..Default::default()
        },
        seed,
    })
}

/// Ball bone + full shell of thickness `t_mm`.
pub fn shell_phantom(
    dims: [usize; 3],
    spacing: [f64; 3],
    radius_mm: f64,
    t_mm: f64,
    seed: u64,
) -> Result<VolumeBundle> {
    let center: [f64; 3] =
        std::array::from_fn(|a| (dims[a] as f64 - 1.0) * spacing[a] / 2.0);
    generate(&PhantomSpec {
        dims,
        spacing,
        bone: BoneShape::Ball { center_mm: center, radius_mm },
        structures: vec![StructureSpec {
            name: "femoral_cartilage".into(),
            shape: StructureShape::Shell { thickness_mm: t_mm },
        }],
        intensity: IntensityParams {
            structure_means: vec![0.8],
            noise_sigma: 0.0,
            ..Default::default()
        },
        seed,
    })
}

/// Randomization ranges for corpus generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusParams {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub radius_mm: [f64; 2],
    pub thickness_mm: [f64; 2],
    pub center_jitter_mm: f64,
    /// Azimuth gap between adjacent sectors, radians.
    pub azimuth_gap: f64,
    /// Structure z half-extent as a fraction of the bone radius, [lo, hi].
    pub z_half_extent: [f64; 2],
    pub noise_sigma: f32,
    /// Structure intensity means are a per-volume random permutation of this
    /// palette, so intensity alone never identifies a class.
    pub intensity_palette: [f32; 4],
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            dims: [64, 64, 64],
            spacing: [0.5, 0.5, 0.5],
            radius_mm: [6.5, 8.5],
            thickness_mm: [4.0, 5.5],
            center_jitter_mm: 1.0,
            azimuth_gap: 0.6,
            z_half_extent: [0.45, 0.70],
            noise_sigma: 0.03,
            intensity_palette: [0.55, 0.70, 0.85, 1.00],
        }
    }
}

/// Draw one randomized four-structure knee-like spec.
pub fn random_spec(params: &CorpusParams, seed: u64, index: u64) -> PhantomSpec {
    let mut rng = Rng::from_tags(seed, &[0xC0 + index]);
    let tau = std::f64::consts::TAU;
    let center: [f64; 3] = std::array::from_fn(|a| {
        (params.dims[a] as f64 - 1.0) * params.spacing[a] / 2.0
            + rng.range_f64(-params.center_jitter_mm, params.center_jitter_mm)
    });
    let radius = rng.range_f64(params.radius_mm[0], params.radius_mm[1]);
    let phi0 = rng.range_f64(0.0, tau);
    let mut structures = Vec::new();
    for k in 0..4 {
        let lo = phi0 + k as f64 * tau / 4.0 + params.azimuth_gap / 2.0;
        let hi = phi0 + (k as f64 + 1.0) * tau / 4.0 - params.azimuth_gap / 2.0;
        let t = rng.range_f64(params.thickness_mm[0], params.thickness_mm[1]);
        let up = rng.range_f64(params.z_half_extent[0], params.z_half_extent[1]) * radius;
        let down = rng.range_f64(params.z_half_extent[0], params.z_half_extent[1]) * radius;
        structures.push(StructureSpec {
            name: CLASS_NAMES[k + 1].to_string(),
            shape: StructureShape::ShellSector {
                thickness_mm: t,
                azimuth: [lo, hi],
                z_mm: [center[0] - down, center[0] + up],
            },
        });
    }
    let mut means = params.intensity_palette.to_vec();
    rng.shuffle(&mut means);
    PhantomSpec {
        dims: params.dims,
        spacing: params.spacing,
        bone: BoneShape::Ball { center_mm: center, radius_mm: radius },
        structures,
        intensity: IntensityParams {
            structure_means: means,
            noise_sigma: params.noise_sigma,
            ..Default::default()
        },
        seed: crate::rng::derive(seed, &[0xF00D, index]),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub paths: BTreeMap<String, PathBuf>,
    pub split: String,
    pub expected_thickness: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub volumes: Vec<ManifestEntry>,
    pub seed: u64,
}

impl Manifest {
    pub fn from_json(bytes: &[u8]) -> Result<Manifest> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Load from disk; relative volume paths resolve against the manifest's
    /// directory, so a corpus can move as a unit.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Manifest> {
        let path = path.as_ref();
        let mut manifest = Self::from_json(&std::fs::read(path)?)?;
        if let Some(base) = path.parent() {
            manifest.resolve_paths(base);
        }
        Ok(manifest)
    }

    /// Rebase every relative volume path onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for entry in &mut self.volumes {
            for p in entry.paths.values_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn ids(&self, split: Option<&str>) -> Vec<&str> {
        self.volumes
            .iter()
            .filter(|v| split.is_none_or(|s| v.split == s))
            .map(|v| v.id.as_str())
            .collect()
    }
}

/// Generate an n-volume corpus on disk with an 80/20 split manifest.
pub fn generate_corpus<P: AsRef<Path>>(
    out_dir: P,
    n: usize,
    params: &CorpusParams,
    seed: u64,
) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::SpecError("corpus needs at least one volume".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let n_train = (n * 4) / 5;
    let mut volumes = Vec::new();
    for i in 0..n {
        let id = format!("case_{i:03}");
        let spec = random_spec(params, seed, i as u64);
        let bundle = generate(&spec)?;
        let dir = out_dir.join(&id);
        std::fs::create_dir_all(&dir)?;
        // Manifest paths stay relative to the corpus directory.
        let mut paths = BTreeMap::new();
        let image_rel = PathBuf::from(&id).join("image.nii");
        crate::nifti::write_nifti(&bundle.image, dir.join("image.nii"))?;
        paths.insert("image".to_string(), image_rel);
        let mask_rel = PathBuf::from(&id).join("mask.nii");
        crate::nifti::write_nifti(&bundle.mask.as_ref().unwrap().to_volume(), dir.join("mask.nii"))?;
        paths.insert("mask".to_string(), mask_rel);
        let bone_rel = PathBuf::from(&id).join("bone.nii");
        crate::nifti::write_nifti(&bundle.bone.as_ref().unwrap().to_volume(), dir.join("bone.nii"))?;
        paths.insert("bone".to_string(), bone_rel);
        let expected_thickness = bundle
            .meta
            .get("expected_thickness")
            .and_then(|v| v.as_object())
            .map(|m| {
                m.iter().map(|(k, v)| (k.clone(), v.as_f64().unwrap_or(f64::NAN))).collect()
            })
            .unwrap_or_default();
        volumes.push(ManifestEntry {
            id,
            paths,
            split: if i < n_train { "train" } else { "val" }.to_string(),
            expected_thickness,
        });
    }
    let mut manifest = Manifest { volumes, seed };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    // The returned copy is ready to load from the caller's working directory.
    manifest.resolve_paths(out_dir);
    Ok(manifest)
}

/// Load one corpus volume back as a bundle (image + labels + bone).
pub fn load_entry(entry: &ManifestEntry) -> Result<VolumeBundle> {
    let image = crate::nifti::read_nifti(
        entry.paths.get("image").ok_or_else(|| Error::DatasetError("missing image path".into()))?,
    )?
    .image;
    let class_names: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    let mask = crate::nifti::read_nifti(
        entry.paths.get("mask").ok_or_else(|| Error::DatasetError("missing mask path".into()))?,
    )?
    .image
    .to_label_mask(class_names)?;
    let mut bundle = VolumeBundle::new(image).with_mask(mask)?;
    if let Some(p) = entry.paths.get("bone") {
        let bone =
            crate::nifti::read_nifti(p)?.image.to_label_mask(vec!["background".into(), "bone".into()])?;
        bundle = bundle.with_bone(bone)?;
    }
    bundle.meta.insert("id".into(), serde_json::json!(entry.id));
    Ok(bundle)
}
