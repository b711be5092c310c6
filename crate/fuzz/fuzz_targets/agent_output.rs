#![no_main]

use libfuzzer_sys::fuzz_target;

use kgalign_core::agents::{parse_verdicts, Role};
use kgalign_core::kg::EntityId;

// First byte picks the role, the rest is the model reply.
fuzz_target!(|data: &[u8]| {
    let Some((&sel, rest)) = data.split_first() else { return };
    let role = Role::ALL[sel as usize % Role::ALL.len()];
    let expected = [EntityId(1), EntityId(2), EntityId(3)];
    if let Ok(p) = parse_verdicts(&String::from_utf8_lossy(rest), &expected, role) {
        let _ = serde_json::to_string(&p).unwrap();
    }
});
