//! Formula documents: parsing never panics, accepted documents round-trip,
//! and small ones survive validation and compilation without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use ptoda::formula_ir::{formula_to_value, parse_formula, validate_multihomogeneous};
use ptoda::reduction_compiler::compile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(f) = parse_formula(text) else { return };
    let again = parse_formula(&formula_to_value(&f).to_string()).expect("emitted formula re-parses");
    assert_eq!(again, f);
    if f.core.atom_count() <= 16 && f.omega() <= 2 {
        let _ = validate_multihomogeneous(&f);
        let _ = compile(&f.zero_completed());
    }
});
