//! Corpus manifest parser must never panic on arbitrary bytes; accepted
//! manifests must survive path resolution against any base directory.

#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use voxseg::phantom::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(mut manifest) = Manifest::from_json(data) {
        manifest.resolve_paths(Path::new("/some/base"));
        for vol in &manifest.volumes {
            for path in vol.paths.values() {
                let _ = path.display().to_string();
            }
        }
    }
});
