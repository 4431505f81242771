//! Path checks, volume IO by extension, and corpus loading shared by the
//! subcommands.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use voxseg::error::{Error, Result};
use voxseg::phantom::{self, Manifest, CLASS_NAMES};
use voxseg::train::{TrainCase, TrainSet};
use voxseg::volume::{LabelMask, Volume};
use voxseg::{nifti, rawio};

/// Named-input existence check; missing user-named paths are usage errors.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArg(format!("{what} {} does not exist", path.display())))
    }
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::InvalidArg(format!("{what} {} is not a directory", path.display())))
    }
}

/// Sidecar path for a raw volume: the same stem with a .json extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Read a volume: .nii directly, .raw via its JSON sidecar.
pub fn read_volume(path: &Path) -> Result<Volume> {
    require_file(path, "input volume")?;
    match extension(path).as_str() {
        "nii" => Ok(nifti::read_nifti(path)?.image),
        "raw" => {
            let sidecar = sidecar_path(path);
            require_file(&sidecar, "raw sidecar")?;
            Ok(rawio::read_raw(path, &sidecar)?.image)
        }
        other => Err(Error::InvalidArg(format!(
            "unrecognized volume extension {other:?} for {} (expected .nii or .raw)",
            path.display()
        ))),
    }
}

/// Write a volume, picking the format from the output extension.
pub fn write_volume(vol: &Volume, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    match extension(path).as_str() {
        "nii" => nifti::write_nifti(vol, path),
        "raw" => rawio::write_raw(vol, path, sidecar_path(path)),
        other => Err(Error::InvalidArg(format!(
            "unrecognized volume extension {other:?} for {} (expected .nii or .raw)",
            path.display()
        ))),
    }
}

/// Class names for an n-class problem: the knee palette when it fits,
/// otherwise generic numbered names.
pub fn class_names_for(num_classes: usize) -> Vec<String> {
    if num_classes == CLASS_NAMES.len() {
        CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..num_classes)
            .map(|i| if i == 0 { "background".to_string() } else { format!("class_{i}") })
            .collect()
    }
}

/// Read a label volume as a mask with at least `min_classes` classes.
pub fn read_mask(path: &Path, min_classes: usize) -> Result<LabelMask> {
    let vol = read_volume(path)?;
    let max_label = vol.data.iter().fold(0.0f32, |m, &v| m.max(v));
    let n = (max_label as usize + 1).max(min_classes).max(2);
    vol.to_label_mask(class_names_for(n))
}

/// Load the manifest of a corpus directory.
pub fn load_manifest(corpus: &Path) -> Result<Manifest> {
    require_dir(corpus, "corpus")?;
    let path = corpus.join("manifest.json");
    require_file(&path, "corpus manifest")?;
    Manifest::load(&path)
}

/// Materialize a manifest's train/val split as loaded cases.
pub fn load_split(manifest: &Manifest) -> Result<TrainSet> {
    let mut set = TrainSet::default();
    for entry in &manifest.volumes {
        let bundle = phantom::load_entry(entry)?;
        let mask = bundle
            .mask
            .ok_or_else(|| Error::DatasetError(format!("volume {} has no mask", entry.id)))?;
        let case = TrainCase { id: entry.id.clone(), image: bundle.image, mask };
        match entry.split.as_str() {
            "train" => set.train.push(case),
            "val" => set.val.push(case),
            other => {
                return Err(Error::DatasetError(format!(
                    "volume {} has unknown split {other:?}",
                    entry.id
                )));
            }
        }
    }
    Ok(set)
}

/// Load every case of one split as (id, image, mask) triples.
pub fn load_cases(manifest: &Manifest, split: &str) -> Result<Vec<(String, Volume, LabelMask)>> {
    let mut cases = Vec::new();
    for entry in manifest.volumes.iter().filter(|e| e.split == split) {
        let bundle = phantom::load_entry(entry)?;
        let mask = bundle
            .mask
            .ok_or_else(|| Error::DatasetError(format!("volume {} has no mask", entry.id)))?;
        cases.push((entry.id.clone(), bundle.image, mask));
    }
    if cases.is_empty() {
        return Err(Error::DatasetError(format!("corpus has no volumes in split {split:?}")));
    }
    Ok(cases)
}

/// Parse "Z,Y,X" into a fixed triple.
pub fn parse_triple<T: FromStr + Copy>(text: &str, what: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArg(format!("{what} expects three comma-separated values")));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|_| Error::InvalidArg(format!("{what}: cannot parse {p:?}")))?,
        );
    }
    Ok([out[0], out[1], out[2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triples_parse_and_reject() {
        assert_eq!(parse_triple::<usize>("64, 64,64", "dims").unwrap(), [64, 64, 64]);
        assert_eq!(parse_triple::<f64>("0.5,0.5,0.5", "spacing").unwrap(), [0.5; 3]);
        assert!(parse_triple::<usize>("64,64", "dims").is_err());
        assert!(parse_triple::<usize>("a,b,c", "dims").is_err());
    }

    #[test]
    fn class_names_match_problem_size() {
        assert_eq!(class_names_for(5)[1], "femoral_cartilage");
        assert_eq!(class_names_for(3), ["background", "class_1", "class_2"]);
    }

    #[test]
    fn unknown_extension_is_a_usage_error() {
        let err = read_volume(Path::new("/tmp/x.dcm")).unwrap_err();
        assert!(matches!(err, Error::InvalidArg(_)));
    }
}
