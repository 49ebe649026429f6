#![no_main]

use libfuzzer_sys::fuzz_target;
use ptoda::homology_oracle::{parse_response, response_to_value};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(r) = parse_response(text) else { return };
    let again = parse_response(&response_to_value(&r).to_string()).expect("emitted response re-parses");
    assert_eq!(again, r);
});
