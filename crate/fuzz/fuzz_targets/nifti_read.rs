//! NIfTI-1 parser must never panic or overflow on arbitrary bytes; accepted
//! volumes must round-trip bit-exactly.

#![no_main]

use libfuzzer_sys::fuzz_target;
use voxseg::nifti::{read_nifti_bytes, write_nifti_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(bundle) = read_nifti_bytes(data) {
        let written = write_nifti_bytes(&bundle.image).expect("accepted volume must serialize");
        let back = read_nifti_bytes(&written).expect("own output must parse");
        assert_eq!(bundle.image.dims(), back.image.dims());
        // Bit-level compare so NaN payloads still count as equal.
        assert_eq!(
            bundle.image.data.mapv(f32::to_bits),
            back.image.data.mapv(f32::to_bits)
        );
    }
});
