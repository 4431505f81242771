//! Click-log JSONL parser must never panic; accepted logs must round-trip
//! through the serializer.

#![no_main]

use libfuzzer_sys::fuzz_target;
use voxseg::prompt::{clicks_from_jsonl, clicks_to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(clicks) = clicks_from_jsonl(text) {
        let rendered = clicks_to_jsonl(&clicks);
        let back = clicks_from_jsonl(&rendered).expect("own output must parse");
        assert_eq!(clicks.len(), back.len());
    }
});
