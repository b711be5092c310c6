#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::kg::parse_relations;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_relations(text, "fuzz");
    }
});
