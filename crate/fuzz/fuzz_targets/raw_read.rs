//! Raw+sidecar reader must never panic on arbitrary input. The fuzz input
//! is framed as: u16 LE sidecar length, sidecar bytes, then the payload.

#![no_main]

use libfuzzer_sys::fuzz_target;
use voxseg::rawio::read_raw_bytes;

fuzz_target!(|input: &[u8]| {
    if input.len() < 2 {
        return;
    }
    let split = u16::from_le_bytes([input[0], input[1]]) as usize;
    let rest = &input[2..];
    if split > rest.len() {
        return;
    }
    let (sidecar, data) = rest.split_at(split);
    let _ = read_raw_bytes(data, sidecar);
});
