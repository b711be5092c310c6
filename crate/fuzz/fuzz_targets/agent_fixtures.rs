#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::agents::parse_fixtures;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_fixtures(text, "fuzz");
    }
});
