#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::embedding::{decode_jsonl, encode_jsonl};
use kgalign_core::kg::Side;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(store) = decode_jsonl(text, Side::Target) {
        let again = decode_jsonl(&encode_jsonl(&store), Side::Target).expect("re-encoded store decodes");
        assert_eq!(again.entries().len(), store.entries().len());
    }
});
