#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::corpus::{parse_corpus, serialize_corpus};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_corpus(text) {
        assert_eq!(parse_corpus(&serialize_corpus(&records)).unwrap(), records);
    }
});
