//! Checkpoint decoder must never panic on arbitrary bytes; accepted
//! checkpoints must re-serialize to bytes that parse back equal.

#![no_main]

use libfuzzer_sys::fuzz_target;
use voxseg::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let bytes = ckpt.to_bytes().expect("accepted checkpoint must serialize");
        let back = Checkpoint::from_bytes(&bytes).expect("own output must parse");
        assert_eq!(ckpt.epoch, back.epoch);
        assert_eq!(ckpt.config, back.config);
    }
});
