//! Flat dotted-key config parser must never panic on arbitrary bytes, and
//! every typed getter must stay total on whatever it accepted.

#![no_main]

use libfuzzer_sys::fuzz_target;
use voxseg_cli::config::FlatConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = FlatConfig::from_slice(data) {
        for key in ["seed", "deterministic", "train.lr0", "model.embed_dim"] {
            let _ = cfg.get_u64(key);
            let _ = cfg.get_f64(key);
            let _ = cfg.get_bool(key);
            let _ = cfg.get_str(key);
            let _ = cfg.get_usize(key);
        }
    }
});
