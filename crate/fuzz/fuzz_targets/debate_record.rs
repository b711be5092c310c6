#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::debate::{DebateTranscript, LdvOutcome};

// One line of transcripts.jsonl or ldv.jsonl.
fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<DebateTranscript>(data);
    let _ = serde_json::from_slice::<LdvOutcome>(data);
});
