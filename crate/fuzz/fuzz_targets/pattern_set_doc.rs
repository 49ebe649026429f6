#![no_main]

use libfuzzer_sys::fuzz_target;
use ptoda::coordinate_model::{parse_pattern_set, pattern_set_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(a) = parse_pattern_set(text) else { return };
    let again = parse_pattern_set(&pattern_set_to_json(&a)).expect("emitted pattern set re-parses");
    assert_eq!(again, a);
    if a.space.pattern_count() <= 1 << 16 {
        let _ = a.classify_topology();
        let _ = a.complement();
    }
});
