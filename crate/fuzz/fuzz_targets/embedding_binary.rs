#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::embedding::{decode_binary, encode_binary};
use kgalign_core::kg::Side;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = decode_binary(data, Side::Source) {
        let again = decode_binary(&encode_binary(&store), Side::Source).expect("re-encoded store decodes");
        assert_eq!(again.entries().len(), store.entries().len());
    }
});
