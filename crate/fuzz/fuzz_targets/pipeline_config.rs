#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::eval::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut cfg = PipelineConfig::default();
    if cfg.apply_json(text).is_ok() {
        let _ = cfg.validate();
        let _ = cfg.to_flat();
    }
});
