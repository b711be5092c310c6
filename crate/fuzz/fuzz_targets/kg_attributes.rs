#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::kg::parse_attributes;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_attributes(text, "fuzz");
    }
});
