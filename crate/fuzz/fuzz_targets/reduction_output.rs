#![no_main]

use libfuzzer_sys::fuzz_target;
use ptoda::reduction_compiler::{parse_reduction, reduction_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(r) = parse_reduction(text) else { return };
    let again = parse_reduction(&reduction_to_json(&r)).expect("emitted reduction re-parses");
    assert_eq!(again, r);
});
