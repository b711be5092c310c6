#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::retrieval::{decode_candidate_dump, encode_candidate_dump};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = decode_candidate_dump(text) {
        let _ = decode_candidate_dump(&encode_candidate_dump(&map)).expect("re-encoded dump decodes");
    }
});
