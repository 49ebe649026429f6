#![no_main]

use libfuzzer_sys::fuzz_target;
use ptoda::homology_oracle::{answer_line, parse_request, request_to_value};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_request(text) {
        let again = parse_request(&request_to_value(&r).to_string()).expect("emitted request re-parses");
        assert_eq!(again, r);
    }
    if text.len() <= 512 && !text.contains('\n') {
        // The protocol handler answers every line with a JSON object.
        let out: serde_json::Value = serde_json::from_str(&answer_line(text)).expect("answer is JSON");
        assert!(out.is_object());
    }
});
